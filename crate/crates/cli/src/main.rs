use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leadalloc::ingest::Year;
use leadalloc::optimize::AxisRange;
use leadalloc_cli::config::{FileConfig, RunConfig};
use leadalloc_cli::pipeline::{self, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "leadalloc", version, about = "Blood-lead test allocation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a panel, reporting rejected rows and gaps.
    Ingest(Common),
    /// Write year-normalized rates.
    Normalize(Common),
    /// Assign neighborhoods to risk profiles.
    Cluster {
        #[command(flatten)]
        common: Common,
        /// Reuse a normalized_panel.csv instead of the input panel.
        #[arg(long)]
        normalized: Option<PathBuf>,
    },
    /// Search the weight grid for the best allocation.
    Optimize(Common),
    /// Evaluate a written plan against a written cluster assignment.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/allocation_plan.json.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Defaults to <out>/clusters.json.
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Run every stage.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Target year (defaults to the last year in the panel).
    #[arg(long)]
    year: Option<Year>,
    /// Trailing window for positivity rates.
    #[arg(long)]
    window: Option<usize>,
    /// lo:hi:step
    #[arg(long, allow_hyphen_values = true)]
    p1_range: Option<AxisRange>,
    /// lo:hi:step
    #[arg(long, allow_hyphen_values = true)]
    p2_range: Option<AxisRange>,
    /// Minimum fraction of each baseline share.
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    no_population_cap: bool,
    /// Reject plans that find fewer cases than the baseline.
    #[arg(long)]
    require_nonnegative_delta: bool,
    /// Use this total instead of the trend forecast.
    #[arg(long)]
    total_tests: Option<u64>,
    #[arg(long)]
    emit_trace: bool,
    /// Number of risk profiles (2 to 5).
    #[arg(long)]
    k: Option<usize>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            FileConfig::load(path)?.apply(&mut cfg)?;
        }
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
        if let Some(v) = self.p1_range {
            cfg.grid.p1 = v;
        }
        if let Some(v) = self.p2_range {
            cfg.grid.p2 = v;
        }
        if let Some(v) = self.floor {
            cfg.constraints.floor_fraction = v;
        }
        if self.no_population_cap {
            cfg.constraints.population_cap = false;
        }
        if self.require_nonnegative_delta {
            cfg.constraints.require_nonnegative_delta = true;
        }
        if let Some(v) = self.total_tests {
            cfg.total_tests_override = Some(v);
        }
        if self.emit_trace {
            cfg.emit_trace = true;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(written: &[PathBuf]) {
    for path in written {
        println!("wrote {}", path.display());
    }
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest(c) => {
            let cfg = c.resolve()?;
            let outcome = pipeline::run_ingest(&cfg)?;
            report(&outcome.written);
            let d = &outcome.diagnostics;
            println!(
                "{} data rows, {} records, {} rejected, {} gaps, {} violations",
                d.data_rows,
                d.records,
                d.rejected.len(),
                d.gaps.gaps.len(),
                outcome.validation.violations.len()
            );
            if !outcome.is_clean() {
                return Err(PipelineError::data(
                    Stage::Ingest,
                    "panel has rejected rows or validation violations",
                ));
            }
        }
        Command::Normalize(c) => report(&pipeline::run_normalize(&c.resolve()?)?),
        Command::Cluster { common, normalized } => {
            let cfg = common.resolve()?;
            report(&pipeline::run_cluster(&cfg, normalized.as_deref())?);
        }
        Command::Optimize(c) => report(&pipeline::run_optimize(&c.resolve()?)?),
        Command::Evaluate {
            common,
            plan,
            clusters,
        } => {
            // evaluate works from artifacts, so the input panel is optional
            let mut common = common;
            if common.input.is_none() && common.config.is_none() {
                common.input = Some(PathBuf::from("-"));
            }
            let cfg = common.resolve()?;
            let plan = plan.unwrap_or_else(|| cfg.output_dir.join(pipeline::PLAN_JSON));
            let clusters = clusters.unwrap_or_else(|| cfg.output_dir.join(pipeline::CLUSTERS_JSON));
            report(&pipeline::run_evaluate(&cfg, &plan, &clusters)?);
        }
        Command::Run(c) => {
            let summary = pipeline::run_pipeline(&c.resolve()?)?;
            report(&summary.written);
            print!("{}", summary.report.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: stage {}: {}", e.stage, e.message);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
