//! Year-wise mean normalization and descriptive regressions.
//!
//! Each year's defined rates are divided by that year's mean, so a value of
//! 1 means "at the citywide average", 2 means twice the average, and so on.
//! Cells without a defined rate stay absent; nothing is imputed here.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GeoId, NeighborhoodPanel, Year};

#[derive(Debug, Error, PartialEq)]
pub enum NormalizeError {
    #[error("cannot normalize an empty vector")]
    Empty,
    #[error("mean of rates is zero{}", .0.map(|y| format!(" in year {y}")).unwrap_or_default())]
    ZeroMean(Option<Year>),
    #[error("non-finite or negative rate {0}")]
    InvalidRate(f64),
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for NormalizeError {
    fn from(e: csv::Error) -> Self {
        NormalizeError::Csv(e.to_string())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    InsufficientData(usize),
    #[error("x has zero variance")]
    DegenerateInput,
    #[error("{which} shares sum to {sum}, expected 1")]
    NotShares { which: &'static str, sum: f64 },
}

/// Divides every value by the vector's mean.
pub fn mean_normalize_year(rates: &[f64]) -> Result<Vec<f64>, NormalizeError> {
    if rates.is_empty() {
        return Err(NormalizeError::Empty);
    }
    if let Some(&bad) = rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
        return Err(NormalizeError::InvalidRate(bad));
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    if mean <= 0.0 {
        return Err(NormalizeError::ZeroMean(None));
    }
    Ok(rates.iter().map(|r| r / mean).collect())
}

/// Mean-normalized rate per (geo, year), centered on 1 within each year.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPanel {
    values: BTreeMap<(GeoId, Year), f64>,
    years: Vec<Year>,
    geo_ids: Vec<GeoId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NormalizedRow {
    geo_id: GeoId,
    year: Year,
    normalized_rate: f64,
}

impl NormalizedPanel {
    /// Wraps already-computed values. Years and geo_ids are taken from the keys.
    pub fn from_values(values: BTreeMap<(GeoId, Year), f64>) -> Self {
        let mut years: Vec<Year> = values.keys().map(|k| k.1).collect();
        years.sort_unstable();
        years.dedup();
        let geo_ids: Vec<GeoId> = {
            let mut g: Vec<GeoId> = values.keys().map(|k| k.0).collect();
            g.dedup();
            g
        };
        NormalizedPanel {
            values,
            years,
            geo_ids,
        }
    }

    /// Builds a panel from per-geo series laid on consecutive `years`.
    pub fn from_series(years: &[Year], series: &[(GeoId, Vec<Option<f64>>)]) -> Self {
        let mut values = BTreeMap::new();
        for (geo, vals) in series {
            for (&year, v) in years.iter().zip(vals) {
                if let Some(v) = v {
                    values.insert((*geo, year), *v);
                }
            }
        }
        let mut panel = Self::from_values(values);
        panel.years = years.to_vec();
        let mut geos: Vec<GeoId> = series.iter().map(|s| s.0).collect();
        geos.sort_unstable();
        geos.dedup();
        panel.geo_ids = geos;
        panel
    }

    pub fn get(&self, geo_id: GeoId, year: Year) -> Option<f64> {
        self.values.get(&(geo_id, year)).copied()
    }

    pub fn years(&self) -> &[Year] {
        &self.years
    }

    pub fn geo_ids(&self) -> &[GeoId] {
        &self.geo_ids
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One entry per panel year; `None` where the rate was undefined.
    pub fn series(&self, geo_id: GeoId) -> Vec<Option<f64>> {
        self.years.iter().map(|&y| self.get(geo_id, y)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (GeoId, Year, f64)> + '_ {
        self.values.iter().map(|(&(g, y), &v)| (g, y, v))
    }

    /// CSV with columns `geo_id,year,normalized_rate`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), NormalizeError> {
        let mut w = csv::Writer::from_writer(writer);
        for (geo_id, year, normalized_rate) in self.iter() {
            w.serialize(NormalizedRow {
                geo_id,
                year,
                normalized_rate,
            })?;
        }
        w.flush().map_err(|e| NormalizeError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, NormalizeError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut values = BTreeMap::new();
        for row in rdr.deserialize::<NormalizedRow>() {
            let row = row?;
            values.insert((row.geo_id, row.year), row.normalized_rate);
        }
        Ok(Self::from_values(values))
    }
}

/// Normalizes each year of the panel independently.
pub fn normalize_panel(panel: &NeighborhoodPanel) -> Result<NormalizedPanel, NormalizeError> {
    let mut values = BTreeMap::new();
    for &year in panel.years() {
        let defined: Vec<(GeoId, f64)> = panel
            .year_records(year)
            .filter_map(|r| r.rate_5plus().map(|rate| (r.geo_id, rate)))
            .collect();
        if defined.is_empty() {
            continue;
        }
        let rates: Vec<f64> = defined.iter().map(|d| d.1).collect();
        let normalized = mean_normalize_year(&rates).map_err(|e| match e {
            NormalizeError::ZeroMean(_) => NormalizeError::ZeroMean(Some(year)),
            other => other,
        })?;
        for ((geo, _), v) in defined.iter().zip(normalized) {
            values.insert((*geo, year), v);
        }
    }
    Ok(NormalizedPanel {
        values,
        years: panel.years().to_vec(),
        geo_ids: panel.geo_ids().to_vec(),
    })
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn fit_ols(x: &[f64], y: &[f64]) -> Result<RegressionFit, RegressionError> {
    if x.len() != y.len() {
        return Err(RegressionError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(RegressionError::InsufficientData(n));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(RegressionError::DegenerateInput);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // constant y is fit perfectly by a flat line
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

/// Regresses testing shares on child-population shares.
pub fn fit_share_regression(
    population_share: &[f64],
    testing_share: &[f64],
) -> Result<RegressionFit, RegressionError> {
    for (which, v) in [("population", population_share), ("testing", testing_share)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(RegressionError::NotShares { which, sum });
        }
    }
    fit_ols(population_share, testing_share)
}

/// Child-population and testing shares of one year, in geo_id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearShares {
    pub year: Year,
    pub geo_ids: Vec<GeoId>,
    pub population_share: Vec<f64>,
    pub testing_share: Vec<f64>,
}

/// Shares for the population-vs-testing comparison. Missing cells are skipped.
pub fn year_shares(panel: &NeighborhoodPanel, year: Year) -> Option<YearShares> {
    let rows: Vec<_> = panel.year_records(year).collect();
    let pop: u64 = rows.iter().map(|r| r.child_population).sum();
    let tests: u64 = rows.iter().map(|r| r.tests).sum();
    if pop == 0 || tests == 0 {
        return None;
    }
    Some(YearShares {
        year,
        geo_ids: rows.iter().map(|r| r.geo_id).collect(),
        population_share: rows
            .iter()
            .map(|r| r.child_population as f64 / pop as f64)
            .collect(),
        testing_share: rows.iter().map(|r| r.tests as f64 / tests as f64).collect(),
    })
}

/// Linear-trend forecast of next year's citywide test total.
///
/// Fits OLS on `(index, total)` and evaluates at the next index. With
/// `last_k`, only the trailing `k` totals are used.
pub fn forecast_total_tests(
    yearly_totals: &[f64],
    last_k: Option<usize>,
) -> Result<u64, RegressionError> {
    let window = match last_k {
        Some(k) if k < yearly_totals.len() => &yearly_totals[yearly_totals.len() - k..],
        _ => yearly_totals,
    };
    if window.len() < 2 {
        return Err(RegressionError::InsufficientData(window.len()));
    }
    let idx: Vec<f64> = (0..window.len()).map(|i| i as f64).collect();
    let fit = fit_ols(&idx, window)?;
    let next = fit.predict(window.len() as f64).round();
    Ok(if next > 0.0 { next as u64 } else { 0 })
}

/// Least-squares slope of a series against its index.
pub(crate) fn trend_slope(values: &[f64]) -> f64 {
    let idx: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    fit_ols(&idx, values).map(|f| f.slope).unwrap_or(0.0)
}
