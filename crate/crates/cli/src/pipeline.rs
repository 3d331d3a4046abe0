//! Stage drivers. Each stage reads its inputs, writes its artifacts into the
//! output directory and returns what later stages need, so `run` is just the
//! stages in sequence.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use leadalloc::cluster::{assign_risk_profiles, ClusterAssignment};
use leadalloc::evaluate::{evaluate_plan, EvaluationReport};
use leadalloc::ingest::{
    parse_panel, parse_panel_lenient, validate_panel_with, write_panel, IngestDiagnostics,
    NeighborhoodPanel, ValidationReport, Year,
};
use leadalloc::normalize::{
    fit_share_regression, forecast_total_tests, normalize_panel, year_shares, NormalizedPanel,
    RegressionFit,
};
use leadalloc::optimize::{
    compute_shares_with, grid_search, AllocationPlan, OptimizeError, SearchOutcome,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;

pub const VALIDATION_REPORT: &str = "validation_report.json";
pub const INGEST_DIAGNOSTICS: &str = "ingest_diagnostics.json";
pub const CLEAN_PANEL: &str = "panel.csv";
pub const NORMALIZED_PANEL: &str = "normalized_panel.csv";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const CLUSTERS_JSON: &str = "clusters.json";
pub const TESTING_DISTRIBUTION: &str = "testing_distribution.json";
pub const PLAN_CSV: &str = "allocation_plan.csv";
pub const PLAN_JSON: &str = "allocation_plan.json";
pub const SEARCH_TRACE: &str = "search_trace.csv";
pub const EVALUATION_JSON: &str = "evaluation_report.json";
pub const EVALUATION_TEXT: &str = "evaluation_summary.txt";
pub const CLUSTER_DELTAS: &str = "cluster_deltas.csv";
pub const REALLOCATION: &str = "reallocation.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Normalize,
    Cluster,
    Optimize,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Normalize => "normalize",
            Stage::Cluster => "cluster",
            Stage::Optimize => "optimize",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Config,
    Infeasible,
}

#[derive(Debug, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn data(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError {
            stage,
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn config(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError {
            stage,
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    /// 1 data error, 2 config error, 3 infeasible optimization.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Data => 1,
            ErrorKind::Config => 2,
            ErrorKind::Infeasible => 3,
        }
    }
}

fn optimize_error(e: OptimizeError) -> PipelineError {
    let kind = match e {
        OptimizeError::NoFeasiblePoint { .. } => ErrorKind::Infeasible,
        OptimizeError::WindowUnavailable { .. }
        | OptimizeError::InvalidGrid(_)
        | OptimizeError::InvalidConstraints(_) => ErrorKind::Config,
        _ => ErrorKind::Data,
    };
    PipelineError {
        stage: Stage::Optimize,
        kind,
        message: e.to_string(),
    }
}

struct Out<'a> {
    dir: &'a Path,
    stage: Stage,
    written: &'a mut Vec<PathBuf>,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, PipelineError> {
        fs::create_dir_all(self.dir).map_err(|e| self.io_error(self.dir, e))?;
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| self.io_error(&path, e))?;
        self.written.push(path);
        Ok(BufWriter::new(file))
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), PipelineError> {
        use std::io::Write;
        let mut w = self.create(name)?;
        w.write_all(body.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush())
            .map_err(|e| PipelineError::data(self.stage, e.to_string()))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), PipelineError> {
        let body = serde_json::to_string_pretty(value).expect("artifact serializes");
        self.text(name, &body)
    }

    fn io_error(&self, path: &Path, e: std::io::Error) -> PipelineError {
        PipelineError::data(self.stage, format!("{}: {e}", path.display()))
    }
}

fn stage_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::data(stage, e.to_string())
}

/// Outcome of the `ingest` subcommand.
#[derive(Debug)]
pub struct IngestOutcome {
    pub diagnostics: IngestDiagnostics,
    pub validation: ValidationReport,
    pub written: Vec<PathBuf>,
}

impl IngestOutcome {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.rejected.is_empty() && self.validation.is_clean()
    }
}

/// Lenient parse: writes diagnostics, the validation report and a cleaned
/// copy of the panel.
pub fn run_ingest(cfg: &RunConfig) -> Result<IngestOutcome, PipelineError> {
    let err = stage_err(Stage::Ingest);
    let parsed = parse_panel_lenient(&cfg.input_path, &cfg.schema).map_err(|e| err(&e))?;
    let diagnostics = parsed.diagnostics();
    let validation = validate_panel_with(&parsed.panel, cfg.schema.year_range);
    let mut written = Vec::new();
    let mut out = Out {
        dir: &cfg.output_dir,
        stage: Stage::Ingest,
        written: &mut written,
    };
    out.json(INGEST_DIAGNOSTICS, &diagnostics)?;
    out.json(VALIDATION_REPORT, &validation)?;
    write_panel(&parsed.panel, out.create(CLEAN_PANEL)?).map_err(|e| err(&e))?;
    Ok(IngestOutcome {
        diagnostics,
        validation,
        written,
    })
}

/// Strict load used by every later stage.
pub fn load_panel(cfg: &RunConfig) -> Result<NeighborhoodPanel, PipelineError> {
    let err = stage_err(Stage::Ingest);
    let panel = parse_panel(&cfg.input_path, &cfg.schema).map_err(|e| err(&e))?;
    if panel.is_empty() {
        return Err(PipelineError::data(Stage::Ingest, "panel has no records"));
    }
    let report = validate_panel_with(&panel, cfg.schema.year_range);
    if !report.is_clean() {
        return Err(PipelineError::data(
            Stage::Ingest,
            format!("{} validation violation(s)", report.violations.len()),
        ));
    }
    Ok(panel)
}

fn normalize_stage(
    panel: &NeighborhoodPanel,
    out: &mut Out<'_>,
) -> Result<NormalizedPanel, PipelineError> {
    let err = stage_err(Stage::Normalize);
    let normalized = normalize_panel(panel).map_err(|e| err(&e))?;
    normalized
        .write_csv(out.create(NORMALIZED_PANEL)?)
        .map_err(|e| err(&e))?;
    Ok(normalized)
}

pub fn run_normalize(cfg: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let panel = load_panel(cfg)?;
    let mut written = Vec::new();
    let mut out = Out {
        dir: &cfg.output_dir,
        stage: Stage::Normalize,
        written: &mut written,
    };
    normalize_stage(&panel, &mut out)?;
    Ok(written)
}

fn cluster_stage(
    cfg: &RunConfig,
    normalized: &NormalizedPanel,
    out: &mut Out<'_>,
) -> Result<ClusterAssignment, PipelineError> {
    let err = stage_err(Stage::Cluster);
    let assignment = assign_risk_profiles(normalized, cfg.k, cfg.max_iter).map_err(|e| err(&e))?;
    assignment
        .write_csv(out.create(CLUSTERS_CSV)?)
        .map_err(|e| err(&e))?;
    out.text(CLUSTERS_JSON, &assignment.to_json())?;
    Ok(assignment)
}

/// Clusters a previously written normalized panel, or the input panel.
pub fn run_cluster(
    cfg: &RunConfig,
    normalized_path: Option<&Path>,
) -> Result<Vec<PathBuf>, PipelineError> {
    let normalized = match normalized_path {
        Some(p) => {
            let file = File::open(p)
                .map_err(|e| PipelineError::config(Stage::Cluster, format!("{}: {e}", p.display())))?;
            NormalizedPanel::read_csv(file).map_err(|e| stage_err(Stage::Cluster)(&e))?
        }
        None => normalize_panel(&load_panel(cfg)?).map_err(|e| stage_err(Stage::Normalize)(&e))?,
    };
    let mut written = Vec::new();
    let mut out = Out {
        dir: &cfg.output_dir,
        stage: Stage::Cluster,
        written: &mut written,
    };
    cluster_stage(cfg, &normalized, &mut out)?;
    Ok(written)
}

/// Descriptive view of the current distribution and the total used for
/// planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestingDistribution {
    pub target_year: Year,
    pub window_years: Vec<Year>,
    pub yearly_test_totals: Vec<(Year, u64)>,
    pub forecast_total_tests: Option<u64>,
    pub total_tests: u64,
    pub total_tests_source: String,
    pub share_regression_year: Year,
    pub share_regression: Option<RegressionFit>,
}

fn optimize_stage(
    cfg: &RunConfig,
    panel: &NeighborhoodPanel,
    out: &mut Out<'_>,
) -> Result<(SearchOutcome, TestingDistribution), PipelineError> {
    let err = stage_err(Stage::Optimize);
    let target_year = cfg
        .target_year
        .or_else(|| panel.years().last().copied())
        .ok_or_else(|| PipelineError::data(Stage::Optimize, "panel has no years"))?;
    let shares = compute_shares_with(panel, target_year, cfg.window, cfg.rate_basis)
        .map_err(optimize_error)?;

    let totals = panel.yearly_test_totals();
    let upto: Vec<f64> = totals
        .iter()
        .filter(|(y, _)| *y <= target_year)
        .map(|(_, t)| *t as f64)
        .collect();
    let forecast = forecast_total_tests(&upto, cfg.forecast_last_k).ok();
    let (total_tests, source) = match (cfg.total_tests_override, forecast) {
        (Some(t), _) => (t, "override"),
        (None, Some(f)) => (f, "forecast"),
        (None, None) => {
            return Err(PipelineError::data(
                Stage::Optimize,
                "cannot forecast total tests from fewer than 2 years; pass --total-tests",
            ))
        }
    };
    let regression_year = cfg.share_regression_year.unwrap_or(target_year);
    let share_regression = year_shares(panel, regression_year)
        .and_then(|s| fit_share_regression(&s.population_share, &s.testing_share).ok());
    let distribution = TestingDistribution {
        target_year,
        window_years: shares.window_years.clone(),
        yearly_test_totals: totals,
        forecast_total_tests: forecast,
        total_tests,
        total_tests_source: source.to_string(),
        share_regression_year: regression_year,
        share_regression,
    };
    out.json(TESTING_DISTRIBUTION, &distribution)?;

    let outcome = grid_search(panel, &shares, total_tests, &cfg.grid, &cfg.constraints)
        .map_err(optimize_error)?;
    outcome
        .best
        .write_csv(out.create(PLAN_CSV)?)
        .map_err(|e| err(&e))?;
    out.text(PLAN_JSON, &outcome.best.to_json())?;
    if cfg.emit_trace {
        outcome
            .write_trace_csv(out.create(SEARCH_TRACE)?)
            .map_err(|e| err(&e))?;
    }
    Ok((outcome, distribution))
}

pub fn run_optimize(cfg: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let panel = load_panel(cfg)?;
    let mut written = Vec::new();
    let mut out = Out {
        dir: &cfg.output_dir,
        stage: Stage::Optimize,
        written: &mut written,
    };
    optimize_stage(cfg, &panel, &mut out)?;
    Ok(written)
}

fn evaluate_stage(
    plan: &AllocationPlan,
    assignment: &ClusterAssignment,
    out: &mut Out<'_>,
) -> Result<EvaluationReport, PipelineError> {
    let err = stage_err(Stage::Evaluate);
    let report = evaluate_plan(plan, assignment).map_err(|e| err(&e))?;
    out.text(EVALUATION_JSON, &report.to_json())?;
    out.text(EVALUATION_TEXT, report.summary().trim_end())?;
    report
        .write_cluster_csv(out.create(CLUSTER_DELTAS)?)
        .map_err(|e| err(&e))?;
    report
        .write_reallocation_csv(out.create(REALLOCATION)?)
        .map_err(|e| err(&e))?;
    Ok(report)
}

/// Evaluates a written plan against a written cluster assignment.
pub fn run_evaluate(
    cfg: &RunConfig,
    plan_path: &Path,
    clusters_path: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| {
            PipelineError::config(Stage::Evaluate, format!("{}: {e}", p.display()))
        })
    };
    let err = stage_err(Stage::Evaluate);
    let plan = AllocationPlan::from_json(&read(plan_path)?).map_err(|e| err(&e))?;
    let assignment = ClusterAssignment::from_json(&read(clusters_path)?).map_err(|e| err(&e))?;
    let mut written = Vec::new();
    let mut out = Out {
        dir: &cfg.output_dir,
        stage: Stage::Evaluate,
        written: &mut written,
    };
    evaluate_stage(&plan, &assignment, &mut out)?;
    Ok(written)
}

/// Everything the full pipeline produced.
#[derive(Debug)]
pub struct RunSummary {
    pub written: Vec<PathBuf>,
    pub distribution: TestingDistribution,
    pub plan: AllocationPlan,
    pub assignment: ClusterAssignment,
    pub report: EvaluationReport,
}

/// Ingest, normalize, cluster, optimize and evaluate in one pass.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let panel = load_panel(cfg)?;
    let mut written = Vec::new();

    let mut out = Out {
        dir: &cfg.output_dir,
        stage: Stage::Ingest,
        written: &mut written,
    };
    out.json(VALIDATION_REPORT, &validate_panel_with(&panel, cfg.schema.year_range))?;
    out.json(
        INGEST_DIAGNOSTICS,
        &IngestDiagnostics {
            data_rows: panel.len(),
            records: panel.len(),
            rejected: Vec::new(),
            gaps: panel.gaps().clone(),
        },
    )?;

    out.stage = Stage::Normalize;
    let normalized = normalize_stage(&panel, &mut out)?;
    out.stage = Stage::Cluster;
    let assignment = cluster_stage(cfg, &normalized, &mut out)?;
    out.stage = Stage::Optimize;
    let (outcome, distribution) = optimize_stage(cfg, &panel, &mut out)?;
    out.stage = Stage::Evaluate;
    let report = evaluate_stage(&outcome.best, &assignment, &mut out)?;

    Ok(RunSummary {
        written,
        distribution,
        plan: outcome.best,
        assignment,
        report,
    })
}
