//! Test allocation by constrained grid search.
//!
//! The candidate allocation for weights `(p1, p2)` gives neighborhood `i`
//! the share
//!
//! ```text
//! s_i = p1 * x_i + p2 * y_i,      v2_i = s_i / sum_j s_j
//! ```
//!
//! where `x` is the current testing share and `y` the share of citywide
//! cases over a trailing window. The projected change in detected cases at a
//! fixed citywide total `T` is
//!
//! ```text
//! delta = T * sum_i R_i * (v2_i - x_i)
//! ```
//!
//! with `R_i` the neighborhood's case rate (cases per test). Every lattice
//! point is evaluated; points with a negative score or a violated constraint
//! are skipped, never repaired.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GeoId, NeighborhoodPanel, Year};

/// Default trailing window for cases shares and rates.
pub const DEFAULT_WINDOW: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("window of {window} year(s) ending {target_year} is not available: {detail}")]
    WindowUnavailable {
        target_year: Year,
        window: usize,
        detail: String,
    },
    #[error("no tests recorded citywide in {0}")]
    ZeroCityTests(Year),
    #[error("no cases recorded citywide over the window")]
    ZeroCityCases,
    #[error("weights (p1={p1}, p2={p2}) give a negative or zero score")]
    InfeasibleWeights { p1: f64, p2: f64 },
    #[error("share vectors misaligned: {0}")]
    ShareMismatch(String),
    #[error("no feasible point among {evaluated} grid combinations")]
    NoFeasiblePoint { evaluated: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),
    #[error("malformed plan: {0}")]
    Format(String),
}

/// How per-neighborhood case rates are pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateBasis {
    /// Cases over tests pooled across the trailing window.
    #[default]
    TrailingWindow,
    /// Cases over tests of the target year only.
    TargetYear,
}

/// Baseline testing shares, recent cases shares and case rates, aligned on
/// `geo_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareVectors {
    pub geo_ids: Vec<GeoId>,
    /// Current testing share in the target year.
    pub x: Vec<f64>,
    /// Share of citywide cases over the window.
    pub y: Vec<f64>,
    /// Cases per test.
    pub rates: Vec<f64>,
    pub target_year: Year,
    pub window_years: Vec<Year>,
}

pub fn compute_shares(
    panel: &NeighborhoodPanel,
    target_year: Year,
    window: usize,
) -> Result<ShareVectors, OptimizeError> {
    compute_shares_with(panel, target_year, window, RateBasis::default())
}

pub fn compute_shares_with(
    panel: &NeighborhoodPanel,
    target_year: Year,
    window: usize,
    basis: RateBasis,
) -> Result<ShareVectors, OptimizeError> {
    let unavailable = |detail: String| OptimizeError::WindowUnavailable {
        target_year,
        window,
        detail,
    };
    if window == 0 {
        return Err(unavailable("window must be at least 1 year".into()));
    }
    let window_years: Vec<Year> = (0..window as Year)
        .rev()
        .map(|back| target_year - back)
        .collect();
    if let Some(missing) = window_years.iter().find(|y| !panel.years().contains(y)) {
        let span = match (panel.years().first(), panel.years().last()) {
            (Some(a), Some(b)) => format!("panel covers {a}..={b}"),
            _ => "panel is empty".to_string(),
        };
        return Err(unavailable(format!("year {missing} missing; {span}")));
    }

    let geo_ids = panel.geo_ids().to_vec();
    let tests_in = |g: GeoId, y: Year| panel.get(g, y).map_or(0, |r| r.tests);
    let cases_in = |g: GeoId, y: Year| panel.get(g, y).map_or(0, |r| r.cases_5plus);

    let target_tests: Vec<u64> = geo_ids.iter().map(|&g| tests_in(g, target_year)).collect();
    let city_tests: u64 = target_tests.iter().sum();
    if city_tests == 0 {
        return Err(OptimizeError::ZeroCityTests(target_year));
    }
    let window_cases: Vec<u64> = geo_ids
        .iter()
        .map(|&g| window_years.iter().map(|&y| cases_in(g, y)).sum())
        .collect();
    let city_cases: u64 = window_cases.iter().sum();
    if city_cases == 0 {
        return Err(OptimizeError::ZeroCityCases);
    }
    let rate_years: &[Year] = match basis {
        RateBasis::TrailingWindow => &window_years,
        RateBasis::TargetYear => std::slice::from_ref(&target_year),
    };
    let rates = geo_ids
        .iter()
        .map(|&g| {
            let t: u64 = rate_years.iter().map(|&y| tests_in(g, y)).sum();
            let c: u64 = rate_years.iter().map(|&y| cases_in(g, y)).sum();
            // no tests means no observed rate; such a geo cannot move ΔC
            if t == 0 {
                0.0
            } else {
                c as f64 / t as f64
            }
        })
        .collect();

    Ok(ShareVectors {
        x: target_tests
            .iter()
            .map(|&t| t as f64 / city_tests as f64)
            .collect(),
        y: window_cases
            .iter()
            .map(|&c| c as f64 / city_cases as f64)
            .collect(),
        rates,
        geo_ids,
        target_year,
        window_years,
    })
}

/// Candidate share vector for weights `(p1, p2)`.
///
/// `x` and `y` each sum to one, so the scores sum to `p1 + p2`; that is the
/// normalizer, which makes `(1, 0)` return `x` and `(0, 1)` return `y`
/// bit for bit.
pub fn v2_share(shares: &ShareVectors, p1: f64, p2: f64) -> Result<Vec<f64>, OptimizeError> {
    let infeasible = OptimizeError::InfeasibleWeights { p1, p2 };
    let total = p1 + p2;
    if total.is_nan() || total <= 0.0 {
        return Err(infeasible);
    }
    let mut out = Vec::with_capacity(shares.x.len());
    for (xi, yi) in shares.x.iter().zip(&shares.y) {
        let s = xi * p1 + yi * p2;
        if s < 0.0 {
            return Err(infeasible);
        }
        out.push(s / total);
    }
    Ok(out)
}

/// `T * sum_i R_i * (rho2_i - rho1_i)`.
pub fn case_difference(
    total_tests: f64,
    rates: &[f64],
    rho1: &[f64],
    rho2: &[f64],
) -> Result<f64, OptimizeError> {
    if rates.len() != rho1.len() || rho1.len() != rho2.len() {
        return Err(OptimizeError::ShareMismatch(format!(
            "lengths {} / {} / {}",
            rates.len(),
            rho1.len(),
            rho2.len()
        )));
    }
    for (name, v) in [("rho1", rho1), ("rho2", rho2)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(OptimizeError::ShareMismatch(format!("{name} sums to {sum}")));
        }
    }
    Ok(case_difference_unchecked(total_tests, rates, rho1, rho2))
}

fn case_difference_unchecked(total_tests: f64, rates: &[f64], rho1: &[f64], rho2: &[f64]) -> f64 {
    total_tests
        * rates
            .iter()
            .zip(rho1.iter().zip(rho2))
            .map(|(r, (a, b))| r * (b - a))
            .sum::<f64>()
}

fn projected_cases(total_tests: f64, rates: &[f64], share: &[f64]) -> f64 {
    total_tests * rates.iter().zip(share).map(|(r, s)| r * s).sum::<f64>()
}

/// Integer test counts summing exactly to `total` (largest remainder).
///
/// Each entry gets `floor(share * total)`; leftover units go to the largest
/// fractional parts, ties to the lower index.
pub fn finalize_tests(shares: &[f64], total: u64) -> Vec<u64> {
    let exact: Vec<f64> = shares.iter().map(|s| s.max(0.0) * total as f64).collect();
    let mut counts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    if counts.is_empty() {
        return counts;
    }
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    match assigned.cmp(&total) {
        Ordering::Less => {
            for &i in order.iter().cycle().take((total - assigned) as usize) {
                counts[i] += 1;
            }
        }
        Ordering::Greater => {
            // only reachable when shares overshoot 1; trim smallest remainders
            let mut excess = assigned - total;
            for &i in order.iter().rev().cycle() {
                if excess == 0 {
                    break;
                }
                if counts[i] > 0 {
                    counts[i] -= 1;
                    excess -= 1;
                }
            }
        }
        Ordering::Equal => {}
    }
    counts
}

/// Per-neighborhood allocation for one `(p1, p2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub p1: f64,
    pub p2: f64,
    pub target_year: Year,
    pub total_tests: u64,
    pub geo_ids: Vec<GeoId>,
    pub baseline_share: Vec<f64>,
    pub v2_share: Vec<f64>,
    /// Baseline share apportioned at `total_tests`.
    pub v1_tests: Vec<u64>,
    pub v2_tests: Vec<u64>,
    pub rates: Vec<f64>,
    pub projected_cases_v1: f64,
    pub projected_cases_v2: f64,
    pub delta_cases: f64,
}

#[derive(Debug, Serialize)]
struct PlanRow {
    geo_id: GeoId,
    baseline_share: f64,
    v2_share: f64,
    v1_tests: u64,
    v2_tests: u64,
    pct_of_former: Option<f64>,
}

impl AllocationPlan {
    pub fn new(
        shares: &ShareVectors,
        p1: f64,
        p2: f64,
        total_tests: u64,
    ) -> Result<Self, OptimizeError> {
        let v2 = v2_share(shares, p1, p2)?;
        Ok(Self::from_share(shares, p1, p2, v2, total_tests))
    }

    /// The status-quo plan at `(1, 0)`.
    pub fn baseline(shares: &ShareVectors, total_tests: u64) -> Self {
        Self::from_share(shares, 1.0, 0.0, shares.x.clone(), total_tests)
    }

    fn from_share(
        shares: &ShareVectors,
        p1: f64,
        p2: f64,
        v2: Vec<f64>,
        total_tests: u64,
    ) -> Self {
        let t = total_tests as f64;
        AllocationPlan {
            p1,
            p2,
            target_year: shares.target_year,
            total_tests,
            geo_ids: shares.geo_ids.clone(),
            v1_tests: finalize_tests(&shares.x, total_tests),
            v2_tests: finalize_tests(&v2, total_tests),
            projected_cases_v1: projected_cases(t, &shares.rates, &shares.x),
            projected_cases_v2: projected_cases(t, &shares.rates, &v2),
            delta_cases: case_difference_unchecked(t, &shares.rates, &shares.x, &v2),
            baseline_share: shares.x.clone(),
            rates: shares.rates.clone(),
            v2_share: v2,
        }
    }

    /// `100 * v2_tests / v1_tests` per neighborhood; `None` where `v1_tests`
    /// is zero.
    pub fn pct_of_former(&self) -> Vec<Option<f64>> {
        self.v1_tests
            .iter()
            .zip(&self.v2_tests)
            .map(|(&v1, &v2)| (v1 > 0).then(|| 100.0 * v2 as f64 / v1 as f64))
            .collect()
    }

    /// CSV with columns
    /// `geo_id,baseline_share,v2_share,v1_tests,v2_tests,pct_of_former`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), OptimizeError> {
        let fmt_err = |e: csv::Error| OptimizeError::Format(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        for (i, pct) in self.pct_of_former().into_iter().enumerate() {
            w.serialize(PlanRow {
                geo_id: self.geo_ids[i],
                baseline_share: self.baseline_share[i],
                v2_share: self.v2_share[i],
                v1_tests: self.v1_tests[i],
                v2_tests: self.v2_tests[i],
                pct_of_former: pct,
            })
            .map_err(fmt_err)?;
        }
        w.flush().map_err(|e| OptimizeError::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, OptimizeError> {
        serde_json::from_str(s).map_err(|e| OptimizeError::Format(e.to_string()))
    }
}

/// Fairness floor, population cap and optional non-negative ΔC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintConfig {
    /// Minimum v2 share as a fraction of the baseline share.
    pub floor_fraction: f64,
    /// Allocated tests may not exceed the child population.
    pub population_cap: bool,
    pub require_nonnegative_delta: bool,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            floor_fraction: 0.25,
            population_cap: true,
            require_nonnegative_delta: false,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return Err(OptimizeError::InvalidConstraints(format!(
                "floor_fraction {} outside [0, 1]",
                self.floor_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum ConstraintViolation {
    Floor {
        geo_id: GeoId,
        share: f64,
        minimum: f64,
    },
    PopulationCap {
        geo_id: GeoId,
        tests: u64,
        population: u64,
    },
    NegativeDelta {
        delta_cases: f64,
    },
}

/// Every violated clause; empty means feasible.
pub fn check_constraints(
    plan: &AllocationPlan,
    panel: &NeighborhoodPanel,
    config: &ConstraintConfig,
) -> Vec<ConstraintViolation> {
    let populations = populations(panel, &plan.geo_ids, plan.target_year);
    violations(
        &plan.geo_ids,
        &plan.baseline_share,
        &plan.v2_share,
        &plan.v2_tests,
        plan.delta_cases,
        &populations,
        config,
    )
}

fn populations(panel: &NeighborhoodPanel, geo_ids: &[GeoId], year: Year) -> Vec<Option<u64>> {
    geo_ids
        .iter()
        .map(|&g| panel.child_population(g, year))
        .collect()
}

fn violations(
    geo_ids: &[GeoId],
    baseline: &[f64],
    v2: &[f64],
    v2_tests: &[u64],
    delta_cases: f64,
    populations: &[Option<u64>],
    config: &ConstraintConfig,
) -> Vec<ConstraintViolation> {
    let mut out = Vec::new();
    for (i, &geo_id) in geo_ids.iter().enumerate() {
        let minimum = config.floor_fraction * baseline[i];
        if v2[i] < minimum {
            out.push(ConstraintViolation::Floor {
                geo_id,
                share: v2[i],
                minimum,
            });
        }
        if config.population_cap {
            if let Some(population) = populations[i] {
                if v2_tests[i] > population {
                    out.push(ConstraintViolation::PopulationCap {
                        geo_id,
                        tests: v2_tests[i],
                        population,
                    });
                }
            }
        }
    }
    if config.require_nonnegative_delta && delta_cases < 0.0 {
        out.push(ConstraintViolation::NegativeDelta { delta_cases });
    }
    out
}

/// Inclusive lattice `lo, lo + step, ..., <= hi` for one weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self, OptimizeError> {
        let r = AxisRange { lo, hi, step };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(OptimizeError::InvalidGrid("non-finite bound".into()));
        }
        if self.lo > self.hi {
            return Err(OptimizeError::InvalidGrid(format!(
                "lo {} above hi {}",
                self.lo, self.hi
            )));
        }
        if self.step <= 0.0 {
            return Err(OptimizeError::InvalidGrid(format!(
                "step {} must be positive",
                self.step
            )));
        }
        Ok(())
    }

    /// Lattice values, snapped to 1e-9 so that e.g. `-10 + 110 * 0.1` is
    /// exactly `1.0`.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                let v = self.lo + i as f64 * self.step;
                let snapped = (v * 1e9).round() / 1e9;
                if snapped == 0.0 {
                    0.0
                } else {
                    snapped
                }
            })
            .collect()
    }
}

impl fmt::Display for AxisRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.step)
    }
}

impl FromStr for AxisRange {
    type Err = OptimizeError;

    /// Parses `lo:hi:step`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || OptimizeError::InvalidGrid(format!("expected lo:hi:step, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
        AxisRange::new(num(parts[0])?, num(parts[1])?, num(parts[2])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub p1: AxisRange,
    pub p2: AxisRange,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::wide()
    }
}

impl GridConfig {
    /// [-10, 10] at 0.1 on both weights (40,401 points).
    pub fn wide() -> Self {
        let axis = AxisRange {
            lo: -10.0,
            hi: 10.0,
            step: 0.1,
        };
        GridConfig { p1: axis, p2: axis }
    }

    /// [-1, 1] at 0.01 on both weights (40,401 points).
    pub fn narrow() -> Self {
        let axis = AxisRange {
            lo: -1.0,
            hi: 1.0,
            step: 0.01,
        };
        GridConfig { p1: axis, p2: axis }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        self.p1.validate()?;
        self.p2.validate()
    }

    /// All `(p1, p2)` pairs, sorted lexicographically.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let p2s = self.p2.values();
        self.p1
            .values()
            .into_iter()
            .flat_map(|a| p2s.iter().map(move |&b| (a, b)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Feasible,
    InfeasibleWeights,
    ConstraintViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub p1: f64,
    pub p2: f64,
    pub status: PointStatus,
    /// Absent for infeasible weights.
    pub delta_cases: Option<f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: AllocationPlan,
    /// One entry per lattice point, sorted by `(p1, p2)`.
    pub trace: Vec<TraceEntry>,
}

impl SearchOutcome {
    pub fn feasible_count(&self) -> usize {
        self.trace
            .iter()
            .filter(|t| t.status == PointStatus::Feasible)
            .count()
    }

    /// CSV with columns `p1,p2,status,delta_cases,violations`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<(), OptimizeError> {
        let mut w = csv::Writer::from_writer(writer);
        for t in &self.trace {
            w.serialize(t)
                .map_err(|e| OptimizeError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| OptimizeError::Format(e.to_string()))
    }
}

/// Evaluates every lattice point and returns the feasible plan with the
/// largest ΔC (ties: smallest `(p1, p2)`), plus the full trace.
pub fn grid_search(
    panel: &NeighborhoodPanel,
    shares: &ShareVectors,
    total_tests: u64,
    grid: &GridConfig,
    constraints: &ConstraintConfig,
) -> Result<SearchOutcome, OptimizeError> {
    grid.validate()?;
    constraints.validate()?;
    let populations = populations(panel, &shares.geo_ids, shares.target_year);
    let t = total_tests as f64;

    let evaluate = |&(p1, p2): &(f64, f64)| -> TraceEntry {
        let v2 = match v2_share(shares, p1, p2) {
            Ok(v2) => v2,
            Err(_) => {
                return TraceEntry {
                    p1,
                    p2,
                    status: PointStatus::InfeasibleWeights,
                    delta_cases: None,
                    violations: 0,
                }
            }
        };
        let delta = case_difference_unchecked(t, &shares.rates, &shares.x, &v2);
        let v2_tests = finalize_tests(&v2, total_tests);
        let broken = violations(
            &shares.geo_ids,
            &shares.x,
            &v2,
            &v2_tests,
            delta,
            &populations,
            constraints,
        )
        .len();
        TraceEntry {
            p1,
            p2,
            status: if broken == 0 {
                PointStatus::Feasible
            } else {
                PointStatus::ConstraintViolated
            },
            delta_cases: Some(delta),
            violations: broken,
        }
    };

    let trace: Vec<TraceEntry> = grid.points().par_iter().map(evaluate).collect();

    let mut best: Option<&TraceEntry> = None;
    for entry in trace.iter().filter(|e| e.status == PointStatus::Feasible) {
        if best.is_none_or(|b| entry.delta_cases > b.delta_cases) {
            best = Some(entry);
        }
    }
    let best = best.ok_or(OptimizeError::NoFeasiblePoint {
        evaluated: trace.len(),
    })?;
    let plan = AllocationPlan::new(shares, best.p1, best.p2, total_tests)?;
    Ok(SearchOutcome { best: plan, trace })
}
