//! Risk profiling of neighborhoods by k-medoids over normalized rate series.
//!
//! Seeds are chosen by explicit criteria (highest mean level, lowest mean
//! level, closest to the citywide average, steepest rise, steepest decline)
//! and the alternating assign/update procedure then refines them. A
//! cluster keeps the label of the seed it started from even if its medoid
//! later moves to another neighborhood.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::GeoId;
use crate::normalize::{trend_slope, NormalizedPanel};

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no series to cluster")]
    EmptyInput,
    #[error("k = {k} exceeds the number of series ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("at most {max} risk profiles are defined, got k = {k}")]
    TooManyProfiles { k: usize, max: usize },
    #[error("need at least {needed} neighborhoods to seed, got {got}")]
    InsufficientNeighborhoods { needed: usize, got: usize },
    #[error("initial medoids must be {k} distinct members of the input")]
    InvalidSeeds { k: usize },
    #[error("geo_id {0} appears more than once")]
    DuplicateGeo(GeoId),
    #[error("geo_id {0} has no defined values")]
    EmptySeries(GeoId),
    #[error("malformed cluster file: {0}")]
    Format(String),
}

/// The five risk profiles, in seeding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLabel {
    High,
    Low,
    Average,
    Rising,
    Declining,
}

impl RiskLabel {
    pub const ALL: [RiskLabel; 5] = [
        RiskLabel::High,
        RiskLabel::Low,
        RiskLabel::Average,
        RiskLabel::Rising,
        RiskLabel::Declining,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RiskLabel::High => "High",
            RiskLabel::Low => "Low",
            RiskLabel::Average => "Average",
            RiskLabel::Rising => "Rising",
            RiskLabel::Declining => "Declining",
        }
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLabel {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RiskLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ClusterError::Format(format!("unknown risk label {s:?}")))
    }
}

/// A neighborhood's gap-free normalized series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesVector {
    pub geo_id: GeoId,
    pub values: Vec<f64>,
}

/// Linear interpolation inside, nearest-value extension at the ends.
/// `None` when nothing is defined.
pub fn fill_gaps(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (known.first()?, known.last()?);
    let mut out = Vec::with_capacity(values.len());
    let mut next = 0;
    for i in 0..values.len() {
        if i <= first_i {
            out.push(first_v);
            continue;
        }
        if i >= last_i {
            out.push(last_v);
            continue;
        }
        while known[next + 1].0 < i {
            next += 1;
        }
        let (li, lv) = known[next];
        let (ri, rv) = known[next + 1];
        if ri == i {
            out.push(rv);
        } else {
            let t = (i - li) as f64 / (ri - li) as f64;
            out.push(lv + t * (rv - lv));
        }
    }
    Some(out)
}

/// Gap-filled series for every neighborhood in the panel, in geo_id order.
pub fn build_series(panel: &NormalizedPanel) -> Result<Vec<SeriesVector>, ClusterError> {
    panel
        .geo_ids()
        .iter()
        .map(|&geo_id| {
            fill_gaps(&panel.series(geo_id))
                .map(|values| SeriesVector { geo_id, values })
                .ok_or(ClusterError::EmptySeries(geo_id))
        })
        .collect()
}

/// Euclidean distance between two equally long series.
pub fn series_distance(a: &SeriesVector, b: &SeriesVector) -> Result<f64, ClusterError> {
    euclidean(&a.values, &b.values)
}

fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Result of the alternating k-medoids procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct KMedoidsOutcome {
    /// Medoid geo_id per cluster, in seed order.
    pub medoids: Vec<GeoId>,
    /// Cluster index per geo_id.
    pub membership: BTreeMap<GeoId, usize>,
    pub total_cost: f64,
    /// Number of update steps that moved at least one medoid.
    pub iterations: usize,
    /// Cost after every assignment step, first entry is the seeded cost.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

/// Alternating k-medoids: assign every series to its nearest medoid, then
/// move each medoid to the member with the smallest summed distance to the
/// rest of its cluster, until the medoid set stops changing.
///
/// Without `initial_medoids` the greedy BUILD initialization is used. Ties
/// resolve to the lower cluster index on assignment, and to the current
/// medoid (then the smaller geo_id) on update, so the outcome does not
/// depend on input order.
pub fn k_medoids(
    series: &[SeriesVector],
    k: usize,
    initial_medoids: Option<&[GeoId]>,
    max_iter: usize,
) -> Result<KMedoidsOutcome, ClusterError> {
    if series.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if k == 0 {
        return Err(ClusterError::KZero);
    }
    if k > series.len() {
        return Err(ClusterError::KTooLarge {
            k,
            n: series.len(),
        });
    }
    let mut sorted: Vec<&SeriesVector> = series.iter().collect();
    sorted.sort_by_key(|s| s.geo_id);
    for w in sorted.windows(2) {
        if w[0].geo_id == w[1].geo_id {
            return Err(ClusterError::DuplicateGeo(w[0].geo_id));
        }
    }
    let n = sorted.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&sorted[i].values, &sorted[j].values)?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let d = |i: usize, j: usize| dist[i * n + j];

    let mut medoids: Vec<usize> = match initial_medoids {
        Some(seeds) => {
            let idx: Option<Vec<usize>> = seeds
                .iter()
                .map(|g| sorted.iter().position(|s| s.geo_id == *g))
                .collect();
            let idx = idx.ok_or(ClusterError::InvalidSeeds { k })?;
            let distinct: BTreeSet<usize> = idx.iter().copied().collect();
            if idx.len() != k || distinct.len() != k {
                return Err(ClusterError::InvalidSeeds { k });
            }
            idx
        }
        None => build_init(n, k, &d),
    };

    let mut assignment = vec![0usize; n];
    let mut cost_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        for (i, slot) in assignment.iter_mut().enumerate() {
            *slot = match medoids.iter().position(|&m| m == i) {
                Some(c) => c,
                None => {
                    let mut best = 0;
                    for c in 1..k {
                        if d(i, medoids[c]) < d(i, medoids[best]) {
                            best = c;
                        }
                    }
                    best
                }
            };
        }
        cost_history.push((0..n).map(|i| d(i, medoids[assignment[i]])).sum());
        if iterations == max_iter {
            break;
        }

        let mut updated = medoids.clone();
        for (c, slot) in updated.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            let within = |cand: usize| members.iter().map(|&j| d(cand, j)).sum::<f64>();
            let mut best = medoids[c];
            let mut best_cost = within(best);
            for &cand in &members {
                let cost = within(cand);
                if cost < best_cost {
                    best = cand;
                    best_cost = cost;
                }
            }
            *slot = best;
        }
        if updated == medoids {
            converged = true;
            break;
        }
        medoids = updated;
        iterations += 1;
    }

    Ok(KMedoidsOutcome {
        medoids: medoids.iter().map(|&m| sorted[m].geo_id).collect(),
        membership: sorted
            .iter()
            .zip(&assignment)
            .map(|(s, &c)| (s.geo_id, c))
            .collect(),
        total_cost: *cost_history.last().expect("at least one assignment"),
        iterations,
        cost_history,
        converged,
    })
}

/// Greedy BUILD: start from the most central point, then repeatedly add the
/// point that reduces total distance the most.
fn build_init(n: usize, k: usize, d: &impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let first = (0..n)
        .map(|i| (i, (0..n).map(|j| d(i, j)).sum::<f64>()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0;
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|j| d(first, j)).collect();
    while medoids.len() < k {
        let mut best = None;
        let mut best_gain = f64::NEG_INFINITY;
        for i in (0..n).filter(|i| !medoids.contains(i)) {
            let gain: f64 = (0..n).map(|j| (nearest[j] - d(i, j)).max(0.0)).sum();
            if gain > best_gain {
                best_gain = gain;
                best = Some(i);
            }
        }
        let pick = best.expect("k <= n leaves a candidate");
        medoids.push(pick);
        for (j, near) in nearest.iter_mut().enumerate() {
            *near = near.min(d(pick, j));
        }
    }
    medoids
}

/// Seeds for the first `k` risk profiles, in [`RiskLabel::ALL`] order.
///
/// Each profile takes the not-yet-chosen series maximizing its criterion;
/// ties go to the smaller geo_id.
pub fn seed_profiles(series: &[SeriesVector], k: usize) -> Result<Vec<GeoId>, ClusterError> {
    if k > RiskLabel::ALL.len() {
        return Err(ClusterError::TooManyProfiles {
            k,
            max: RiskLabel::ALL.len(),
        });
    }
    if series.len() < k {
        return Err(ClusterError::InsufficientNeighborhoods {
            needed: k,
            got: series.len(),
        });
    }
    let mut sorted: Vec<&SeriesVector> = series.iter().collect();
    sorted.sort_by_key(|s| s.geo_id);
    let features: Vec<(f64, f64, f64)> = sorted
        .iter()
        .map(|s| {
            let mean = s.values.iter().sum::<f64>() / s.values.len().max(1) as f64;
            let off_average: f64 = s.values.iter().map(|v| (v - 1.0) * (v - 1.0)).sum();
            (mean, off_average, trend_slope(&s.values))
        })
        .collect();

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for label in RiskLabel::ALL.into_iter().take(k) {
        let score = |f: &(f64, f64, f64)| match label {
            RiskLabel::High => f.0,
            RiskLabel::Low => -f.0,
            RiskLabel::Average => -f.1,
            RiskLabel::Rising => f.2,
            RiskLabel::Declining => -f.2,
        };
        let mut best: Option<usize> = None;
        for i in (0..sorted.len()).filter(|i| !chosen.contains(i)) {
            if best.is_none_or(|b| score(&features[i]) > score(&features[b])) {
                best = Some(i);
            }
        }
        chosen.push(best.expect("enough series remain"));
    }
    Ok(chosen.into_iter().map(|i| sorted[i].geo_id).collect())
}

/// The five profile seeds (High, Low, Average, Rising, Declining).
pub fn seed_medoids(panel: &NormalizedPanel) -> Result<[GeoId; 5], ClusterError> {
    let series = build_series(panel)?;
    let seeds = seed_profiles(&series, 5)?;
    Ok([seeds[0], seeds[1], seeds[2], seeds[3], seeds[4]])
}

/// Risk label per neighborhood and the medoid of every labeled cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<GeoId, RiskLabel>,
    pub medoids: BTreeMap<RiskLabel, GeoId>,
    pub total_cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterRow {
    geo_id: GeoId,
    label: String,
    is_medoid: bool,
}

impl ClusterAssignment {
    pub fn label(&self, geo_id: GeoId) -> Option<RiskLabel> {
        self.labels.get(&geo_id).copied()
    }

    pub fn members(&self, label: RiskLabel) -> impl Iterator<Item = GeoId> + '_ {
        self.labels
            .iter()
            .filter(move |(_, l)| **l == label)
            .map(|(g, _)| *g)
    }

    /// CSV with columns `geo_id,label,is_medoid`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ClusterError> {
        let mut w = csv::Writer::from_writer(writer);
        let medoid_set: BTreeSet<GeoId> = self.medoids.values().copied().collect();
        for (&geo_id, label) in &self.labels {
            w.serialize(ClusterRow {
                geo_id,
                label: label.to_string(),
                is_medoid: medoid_set.contains(&geo_id),
            })
            .map_err(|e| ClusterError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| ClusterError::Format(e.to_string()))
    }

    /// Reads the CSV form. It carries membership only, so `total_cost` and
    /// `iterations` come back as zero.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ClusterError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut labels = BTreeMap::new();
        let mut medoids = BTreeMap::new();
        for row in rdr.deserialize::<ClusterRow>() {
            let row = row.map_err(|e| ClusterError::Format(e.to_string()))?;
            let label: RiskLabel = row.label.parse()?;
            labels.insert(row.geo_id, label);
            if row.is_medoid && medoids.insert(label, row.geo_id).is_some() {
                return Err(ClusterError::Format(format!("two medoids for {label}")));
            }
        }
        Ok(ClusterAssignment {
            labels,
            medoids,
            total_cost: 0.0,
            iterations: 0,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("assignment serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ClusterError> {
        serde_json::from_str(s).map_err(|e| ClusterError::Format(e.to_string()))
    }
}

/// Seeds `k` profiles (5 by default) on the normalized panel, runs k-medoids
/// from those seeds and labels clusters by the seed they grew from.
pub fn assign_risk_profiles(
    panel: &NormalizedPanel,
    k: usize,
    max_iter: usize,
) -> Result<ClusterAssignment, ClusterError> {
    let series = build_series(panel)?;
    let seeds = seed_profiles(&series, k)?;
    let outcome = k_medoids(&series, k, Some(&seeds), max_iter)?;
    Ok(ClusterAssignment {
        labels: outcome
            .membership
            .iter()
            .map(|(&g, &c)| (g, RiskLabel::ALL[c]))
            .collect(),
        medoids: outcome
            .medoids
            .iter()
            .enumerate()
            .map(|(c, &g)| (RiskLabel::ALL[c], g))
            .collect(),
        total_cost: outcome.total_cost,
        iterations: outcome.iterations,
    })
}
