//! Run configuration: defaults, then an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use leadalloc::cluster::DEFAULT_MAX_ITER;
use leadalloc::ingest::{SchemaConfig, Year};
use leadalloc::optimize::{
    AxisRange, ConstraintConfig, GridConfig, RateBasis, DEFAULT_WINDOW,
};
use serde::Deserialize;

use crate::pipeline::{PipelineError, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_path: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to the last year in the panel.
    pub target_year: Option<Year>,
    pub window: usize,
    pub rate_basis: RateBasis,
    pub grid: GridConfig,
    pub constraints: ConstraintConfig,
    pub k: usize,
    pub max_iter: usize,
    /// When absent, the linear-trend forecast supplies the total.
    pub total_tests_override: Option<u64>,
    /// Restrict the forecast to the last k yearly totals.
    pub forecast_last_k: Option<usize>,
    /// Year used for the population-vs-testing regression; defaults to the
    /// target year.
    pub share_regression_year: Option<Year>,
    pub emit_trace: bool,
    pub schema: SchemaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_path: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            target_year: None,
            window: DEFAULT_WINDOW,
            rate_basis: RateBasis::default(),
            grid: GridConfig::default(),
            constraints: ConstraintConfig::default(),
            k: 5,
            max_iter: DEFAULT_MAX_ITER,
            total_tests_override: None,
            forecast_last_k: None,
            share_regression_year: None,
            emit_trace: false,
            schema: SchemaConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::config(Stage::Config, m));
        if self.input_path.as_os_str().is_empty() {
            return fail("input path is empty".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return fail("output directory is empty".into());
        }
        if self.window == 0 {
            return fail("window must be at least 1".into());
        }
        if !(2..=5).contains(&self.k) {
            return fail(format!("k must be between 2 and 5, got {}", self.k));
        }
        if self.forecast_last_k.is_some_and(|k| k < 2) {
            return fail("forecast_last_k must be at least 2".into());
        }
        self.grid
            .validate()
            .and_then(|_| self.constraints.validate())
            .map_err(|e| PipelineError::config(Stage::Config, e.to_string()))
    }
}

/// Flat key-value configuration file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub year: Option<Year>,
    pub window: Option<usize>,
    pub rate_basis: Option<RateBasis>,
    pub p1_range: Option<String>,
    pub p2_range: Option<String>,
    pub floor: Option<f64>,
    pub population_cap: Option<bool>,
    pub require_nonnegative_delta: Option<bool>,
    pub total_tests: Option<u64>,
    pub forecast_last_k: Option<usize>,
    pub share_regression_year: Option<Year>,
    pub emit_trace: Option<bool>,
    pub k: Option<usize>,
    pub max_iter: Option<usize>,
    pub columns: Option<SchemaConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::config(Stage::Config, format!("{}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            PipelineError::config(Stage::Config, format!("{}: {e}", path.display()))
        })
    }

    pub fn apply(self, cfg: &mut RunConfig) -> Result<(), PipelineError> {
        let range = |s: &str| {
            s.parse::<AxisRange>()
                .map_err(|e| PipelineError::config(Stage::Config, e.to_string()))
        };
        if let Some(v) = self.input {
            cfg.input_path = v;
        }
        if let Some(v) = self.out {
            cfg.output_dir = v;
        }
        if let Some(v) = self.year {
            cfg.target_year = Some(v);
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.rate_basis {
            cfg.rate_basis = v;
        }
        if let Some(v) = self.p1_range {
            cfg.grid.p1 = range(&v)?;
        }
        if let Some(v) = self.p2_range {
            cfg.grid.p2 = range(&v)?;
        }
        if let Some(v) = self.floor {
            cfg.constraints.floor_fraction = v;
        }
        if let Some(v) = self.population_cap {
            cfg.constraints.population_cap = v;
        }
        if let Some(v) = self.require_nonnegative_delta {
            cfg.constraints.require_nonnegative_delta = v;
        }
        if let Some(v) = self.total_tests {
            cfg.total_tests_override = Some(v);
        }
        if let Some(v) = self.forecast_last_k {
            cfg.forecast_last_k = Some(v);
        }
        if let Some(v) = self.share_regression_year {
            cfg.share_regression_year = Some(v);
        }
        if let Some(v) = self.emit_trace {
            cfg.emit_trace = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.columns {
            cfg.schema = v;
        }
        Ok(())
    }
}
