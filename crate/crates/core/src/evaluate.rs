//! Baseline vs optimized comparison: significance of the change in detected
//! cases, per-profile case totals, reallocation percentages and paired
//! neighborhood comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterAssignment, RiskLabel};
use crate::ingest::{GeoId, NeighborhoodPanel, Year};
use crate::optimize::AllocationPlan;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluateError {
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("pooled proportion is {0}; z is undefined")]
    DegeneratePooled(f64),
    #[error("geo_id {0} has no risk label")]
    UnassignedGeo(GeoId),
    #[error("unknown geo_id {0}")]
    UnknownGeo(GeoId),
    #[error("year {0} not in panel")]
    MissingYear(Year),
    #[error("no record for geo_id {geo_id} in {year}")]
    MissingCell { geo_id: GeoId, year: Year },
    #[error("write error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Two-sided tail probability of the standard normal.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Complementary error function, absolute error below 1e-15.
///
/// Below 3 it uses `erf(x) = 2/sqrt(pi) * exp(-x^2) * sum 2^n x^(2n+1) / (2n+1)!!`,
/// whose terms are all positive. From 3 up it evaluates the continued
/// fraction `exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
    if x < 3.0 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > sum * 1e-17 {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
        }
        return 1.0 - 2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum;
    }
    if x > 27.0 {
        return 0.0;
    }
    // modified Lentz on b0 + a1/(b1 + a2/(b2 + ...)), b_k = x, a_k = k/2
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    FRAC_1_SQRT_PI * (-x * x).exp() / f
}

/// Pooled two-proportion z-test of `c2/n2` against `c1/n1`.
///
/// Counts may be fractional (projected cases are reals).
pub fn two_proportion_ztest(c1: f64, n1: f64, c2: f64, n2: f64) -> Result<ZTest, EvaluateError> {
    for (c, n) in [(c1, n1), (c2, n2)] {
        if !(c.is_finite() && n.is_finite()) || n <= 0.0 || c < 0.0 || c > n {
            return Err(EvaluateError::InvalidCounts(format!(
                "need 0 <= c <= n and n > 0, got c={c}, n={n}"
            )));
        }
    }
    let pooled = (c1 + c2) / (n1 + n2);
    if pooled <= 0.0 || pooled >= 1.0 {
        return Err(EvaluateError::DegeneratePooled(pooled));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
    let z = (c2 / n2 - c1 / n1) / se;
    Ok(ZTest {
        z,
        p_value: normal_two_sided_p(z),
    })
}

/// Projected cases of one risk profile before and after reallocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterCases {
    pub cases_v1: f64,
    pub cases_v2: f64,
}

impl ClusterCases {
    pub fn delta(&self) -> f64 {
        self.cases_v2 - self.cases_v1
    }
}

/// `T * share_k(i) * R_i` summed within each profile, for both plans.
pub fn cluster_case_deltas(
    plan: &AllocationPlan,
    assignment: &ClusterAssignment,
) -> Result<BTreeMap<RiskLabel, ClusterCases>, EvaluateError> {
    let t = plan.total_tests as f64;
    let mut out: BTreeMap<RiskLabel, ClusterCases> = assignment
        .medoids
        .keys()
        .map(|&l| {
            (
                l,
                ClusterCases {
                    cases_v1: 0.0,
                    cases_v2: 0.0,
                },
            )
        })
        .collect();
    for (i, &geo_id) in plan.geo_ids.iter().enumerate() {
        let label = assignment
            .label(geo_id)
            .ok_or(EvaluateError::UnassignedGeo(geo_id))?;
        let entry = out.entry(label).or_insert(ClusterCases {
            cases_v1: 0.0,
            cases_v2: 0.0,
        });
        entry.cases_v1 += t * plan.baseline_share[i] * plan.rates[i];
        entry.cases_v2 += t * plan.v2_share[i] * plan.rates[i];
    }
    Ok(out)
}

/// Percent of former tests now allocated; `None` where there were none.
pub fn reallocation_percentages(plan: &AllocationPlan) -> BTreeMap<GeoId, Option<f64>> {
    plan.geo_ids
        .iter()
        .copied()
        .zip(plan.pct_of_former())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyRow {
    pub geo_id: GeoId,
    pub geo_name: String,
    pub year: Year,
    pub tests: u64,
    pub cases: u64,
    pub rate: Option<f64>,
    /// Share of the citywide child population that year.
    pub population_share: f64,
}

/// Side-by-side metrics of named neighborhoods in one year.
pub fn neighborhood_case_study(
    panel: &NeighborhoodPanel,
    geo_ids: &[GeoId],
    year: Year,
) -> Result<Vec<CaseStudyRow>, EvaluateError> {
    if !panel.years().contains(&year) {
        return Err(EvaluateError::MissingYear(year));
    }
    let city_pop: u64 = panel.year_records(year).map(|r| r.child_population).sum();
    geo_ids
        .iter()
        .map(|&geo_id| {
            if !panel.geo_ids().contains(&geo_id) {
                return Err(EvaluateError::UnknownGeo(geo_id));
            }
            let r = panel
                .get(geo_id, year)
                .ok_or(EvaluateError::MissingCell { geo_id, year })?;
            Ok(CaseStudyRow {
                geo_id,
                geo_name: r.geo_name.clone(),
                year,
                tests: r.tests,
                cases: r.cases_5plus,
                rate: r.rate_5plus(),
                population_share: if city_pop == 0 {
                    0.0
                } else {
                    r.child_population as f64 / city_pop as f64
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total_tests: u64,
    pub p1: f64,
    pub p2: f64,
    pub cases_v1: f64,
    pub cases_v2: f64,
    pub delta_cases: f64,
    /// `None` when the baseline projects no cases.
    pub improvement_pct: Option<f64>,
    /// `None` when the pooled proportion is degenerate.
    pub z_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub cluster_deltas: BTreeMap<RiskLabel, ClusterCases>,
    pub reallocation_pct: BTreeMap<GeoId, Option<f64>>,
}

/// Half-up rounding used for every human-facing count.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

pub fn evaluate_plan(
    plan: &AllocationPlan,
    assignment: &ClusterAssignment,
) -> Result<EvaluationReport, EvaluateError> {
    let t = plan.total_tests as f64;
    let (z_statistic, p_value) = if plan.total_tests == 0 {
        (None, None)
    } else {
        match two_proportion_ztest(plan.projected_cases_v1, t, plan.projected_cases_v2, t) {
            Ok(zt) => (Some(zt.z), Some(zt.p_value)),
            Err(EvaluateError::DegeneratePooled(_)) => (None, None),
            Err(e) => return Err(e),
        }
    };
    Ok(EvaluationReport {
        total_tests: plan.total_tests,
        p1: plan.p1,
        p2: plan.p2,
        cases_v1: plan.projected_cases_v1,
        cases_v2: plan.projected_cases_v2,
        delta_cases: plan.delta_cases,
        improvement_pct: (plan.projected_cases_v1 > 0.0).then(|| {
            100.0 * (plan.projected_cases_v2 - plan.projected_cases_v1) / plan.projected_cases_v1
        }),
        z_statistic,
        p_value,
        cluster_deltas: cluster_case_deltas(plan, assignment)?,
        reallocation_pct: reallocation_percentages(plan),
    })
}

#[derive(Serialize)]
struct ClusterRow {
    label: RiskLabel,
    cases_v1: f64,
    cases_v2: f64,
    delta: f64,
}

#[derive(Serialize)]
struct ReallocationRow {
    geo_id: GeoId,
    pct_of_former: Option<f64>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, EvaluateError> {
        serde_json::from_str(s).map_err(|e| EvaluateError::Format(e.to_string()))
    }

    /// CSV `label,cases_v1,cases_v2,delta`.
    pub fn write_cluster_csv<W: Write>(&self, writer: W) -> Result<(), EvaluateError> {
        let mut w = csv::Writer::from_writer(writer);
        for (&label, c) in &self.cluster_deltas {
            w.serialize(ClusterRow {
                label,
                cases_v1: c.cases_v1,
                cases_v2: c.cases_v2,
                delta: c.delta(),
            })
            .map_err(|e| EvaluateError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| EvaluateError::Format(e.to_string()))
    }

    /// CSV `geo_id,pct_of_former`.
    pub fn write_reallocation_csv<W: Write>(&self, writer: W) -> Result<(), EvaluateError> {
        let mut w = csv::Writer::from_writer(writer);
        for (&geo_id, &pct_of_former) in &self.reallocation_pct {
            w.serialize(ReallocationRow {
                geo_id,
                pct_of_former,
            })
            .map_err(|e| EvaluateError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| EvaluateError::Format(e.to_string()))
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>, prec: usize| match v {
            Some(v) => format!("{v:.prec$}"),
            None => "undefined".to_string(),
        };
        let _ = writeln!(s, "total tests          {}", self.total_tests);
        let _ = writeln!(s, "weights (p1, p2)     ({}, {})", self.p1, self.p2);
        let _ = writeln!(s, "cases, current       {}", round_half_up(self.cases_v1));
        let _ = writeln!(s, "cases, optimized     {}", round_half_up(self.cases_v2));
        let _ = writeln!(s, "difference           {:.1}", self.delta_cases);
        let _ = writeln!(s, "improvement (%)      {}", opt(self.improvement_pct, 1));
        let _ = writeln!(s, "z statistic          {}", opt(self.z_statistic, 4));
        let _ = writeln!(s, "p-value (two-sided)  {}", opt(self.p_value, 6));
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10}", "profile", "current", "optimized", "change");
        for (label, c) in &self.cluster_deltas {
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>10} {:>10.1}",
                label.as_str(),
                round_half_up(c.cases_v1),
                round_half_up(c.cases_v2),
                c.delta()
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<8} {:>14}", "geo_id", "% of former");
        for (geo, pct) in &self.reallocation_pct {
            let _ = writeln!(s, "{:<8} {:>14}", geo, opt(*pct, 1));
        }
        s
    }
}
