//! `subgradfed`: generate synthetic problems, run the compressed subgradient
//! methods, tune stepsize factors, execute experiment matrices, and render
//! reports.
//!
//! Exit codes: 0 success, 2 configuration/schema error, 3 I/O error,
//! 4 divergence or degenerate oracle at run time.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use subgradfed::error::Error;
use subgradfed::harness::{
    default_factor_grid, run_matrix, tune, write_atomic, ExperimentMatrix, Manifest,
};
use subgradfed::metrics::MetricsLog;
use subgradfed::optim::{run, RunConfig};
use subgradfed::problem::{GenConfig, Problem};
use subgradfed::report::{render_svg, CurveInput, ReportSummary, YColumn};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "subgradfed",
    about = "Deterministic simulator of server-to-worker compressed subgradient methods",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem file and print its constants.
    #[command(after_help = GENERATE_HELP)]
    Generate(GenerateArgs),
    /// Run one method on a problem and write the per-round metrics CSV.
    #[command(after_help = RUN_HELP)]
    Run(RunArgs),
    /// Sweep the tuning-factor grid and report the winner.
    #[command(after_help = TUNE_HELP)]
    Tune(TuneArgs),
    /// Run a full experiment matrix (generate, tune, run, write manifest).
    #[command(after_help = MATRIX_HELP)]
    Matrix(MatrixArgs),
    /// Render an SVG of suboptimality vs bits/worker from CSVs or a manifest.
    #[command(after_help = REPORT_HELP)]
    Report(ReportArgs),
}

const GENERATE_HELP: &str = "\
Config file keys (strict JSON schema, unknown keys rejected):
  n            worker count (required, >= 1)
  d            dimension (required, >= 1)
  mu           minimum-eigenvalue target of the averaged matrix (default 1e-6)
  noise_scale  heterogeneity scale s >= 0 (required)
  seed         64-bit generation seed (required; --seed overrides)";

const RUN_HELP: &str = "\
Config file keys (strict JSON schema, unknown keys rejected):
  method                 \"sm\" | \"ef21p\" | \"marinap\" (required)
  compressor             object (required):
    kind                 \"topk\" | \"same_randk\" | \"ind_randk\" | \"permk\" | \"identity\"
    k                    kept coordinates per message (permk requires k = d/n)
    dim, n_workers       must match the problem file
  schedule               object (required):
    kind                 \"constant_optimal\" | \"decreasing\" | \"polyak_ef21p\" |
                         \"polyak_marina_p\" | \"sm_baseline\" | \"fixed_constant\"
    factor               tuning multiplier (default 1.0)
    horizon              stepsize horizon T (default: derived from the bit
                         budget, else max_rounds)
    f_star               optimal value for Polyak kinds (default 0.0)
    gamma0               base stepsize (required by fixed_constant; default
                         for decreasing is the log-optimal value)
  p_full                 full-round probability for marinap (default k/d)
  max_rounds             round cap (required, >= 1)
  bit_budget_per_worker  stop once cumulative bits reach this (default: none)
  seed                   64-bit run seed (required; --seed overrides)
  log_lyapunov           log the Lyapunov column (default false)
  log_every              log every k-th round (default 1)
  log_ergodic            append the iterate-average column (default false)";

const TUNE_HELP: &str = "\
Config file keys (strict JSON schema, unknown keys rejected):
  run          a full run config (see `subgradfed run --help`)
  factor_grid  factors to sweep (default {2^-9, ..., 2^7})";

const MATRIX_HELP: &str = "\
Config file keys (strict JSON schema, unknown keys rejected):
  dims          list of dimensions d
  node_counts   list of worker counts n (every d must be divisible by every n)
  noise_scales  list of heterogeneity scales s
  methods       list of {method, compressor, schedule} arms, schedule one of
                \"constant\" | \"decreasing\" | \"polyak\"
  factor_grid   tuning factors (default {2^-9, ..., 2^7})
  budgets       list of {n, bits} downlink budgets, one per node count
  seeds         list of replicate seeds
  mu            generation parameter (default 1e-6)
  log_every     CSV row granularity (default 10)
  max_rounds    per-run safety cap (default 10000000)

Presets: --preset desk (d=200, n=10, s in {0.1,1}, 1e7 bits)
         --preset paper (d=1000, n in {10,100}, s in {0.1,1,10},
                         3.5e8 / 3.5e7 bits)";

const REPORT_HELP: &str = "\
Inputs: either --manifest (plots every finished cell) or one or more --csv.
Writes the SVG to --out and a machine-readable summary (final suboptimality
per curve) to the same path with extension .summary.json.
  --y-column w   suboptimality at the theorem evaluation point (default)
  --y-column x   suboptimality at the server model";

#[derive(Args)]
struct GenerateArgs {
    /// Generation config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output problem JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Problem JSON produced by `generate`.
    #[arg(long)]
    problem: PathBuf,
    /// Run config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output metrics CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TuneArgs {
    /// Problem JSON produced by `generate`.
    #[arg(long)]
    problem: PathBuf,
    /// Tune config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output tune-result JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the winning run's metrics CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct MatrixArgs {
    /// Matrix config JSON (mutually exclusive with --preset).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in matrix preset.
    #[arg(long, value_enum)]
    preset: Option<MatrixPreset>,
    /// Output directory for CSVs and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixPreset {
    Desk,
    Paper,
}

#[derive(Args)]
struct ReportArgs {
    /// Manifest JSON from `matrix`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Metrics CSV (repeatable).
    #[arg(long)]
    csv: Vec<PathBuf>,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
    /// Which suboptimality column to plot.
    #[arg(long, value_enum, default_value_t = YAxis::W)]
    y_column: YAxis,
}

#[derive(Clone, Copy, ValueEnum)]
enum YAxis {
    W,
    X,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneConfig {
    run: RunConfig,
    #[serde(default = "default_factor_grid")]
    factor_grid: Vec<f64>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::DegenerateOracle { .. } | Error::AllDiverged(_) => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

/// Parse a strict-schema JSON config; schema violations exit 2 before any
/// output file is touched.
fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, (u8, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| (EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| (EXIT_CONFIG, format!("invalid config {}: {e}", path.display())))
}

fn configure_threads(threads: Option<usize>) -> Result<(), (u8, String)> {
    if let Some(t) = threads {
        if t == 0 {
            return Err((EXIT_CONFIG, "--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| (EXIT_CONFIG, format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), (u8, String)> {
    let mut cfg: GenConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let problem = Problem::generate(&cfg).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    problem
        .save_json(&args.out)
        .map_err(|e| (EXIT_IO, format!("writing {}: {e}", args.out.display())))?;
    let c = problem.constants();
    println!("problem written to {}", args.out.display());
    println!("n        = {}", problem.n());
    println!("d        = {}", problem.dim());
    println!("sigma_A  = {:.6}", c.sigma_a);
    println!("L0       = {:.6}", c.l0);
    println!("L_bar    = {:.6}", c.l_bar);
    println!("L_tilde  = {:.6}", c.l_tilde);
    println!("R0^2     = {:.6}", c.r0_sq);
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), (u8, String)> {
    configure_threads(args.threads)?;
    let mut cfg: RunConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let problem =
        Problem::load_json(&args.problem).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    cfg.validate(&problem).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let result = run(&problem, &cfg).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    write_atomic(&args.out, &result.metrics.to_csv_string())
        .map_err(|e| (EXIT_IO, format!("writing {}: {e}", args.out.display())))?;
    println!(
        "{} rounds, {:.0} bits/worker, final suboptimality {:e}",
        result.rounds,
        result.bits_per_worker,
        result.metrics.final_subopt_w().unwrap_or(f64::NAN)
    );
    if let Some(round) = result.diverged_at {
        return Err((EXIT_DIVERGED, format!("non-finite loss at round {round}")));
    }
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<(), (u8, String)> {
    configure_threads(args.threads)?;
    let mut cfg: TuneConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    let problem =
        Problem::load_json(&args.problem).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    cfg.run.validate(&problem).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let (result, best_run) = tune(&problem, &cfg.run, &cfg.factor_grid)
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let json = serde_json::to_string_pretty(&result)
        .map_err(|e| (EXIT_CONFIG, format!("serializing result: {e}")))?;
    write_atomic(&args.out, &json)
        .map_err(|e| (EXIT_IO, format!("writing {}: {e}", args.out.display())))?;
    if let Some(csv) = &args.csv {
        write_atomic(csv, &best_run.metrics.to_csv_string())
            .map_err(|e| (EXIT_IO, format!("writing {}: {e}", csv.display())))?;
    }
    println!("best factor {} final suboptimality {:e}", result.best_factor, result.final_subopt);
    Ok(())
}

fn cmd_matrix(args: MatrixArgs) -> Result<(), (u8, String)> {
    configure_threads(args.threads)?;
    let matrix: ExperimentMatrix = match (&args.config, args.preset) {
        (Some(path), None) => load_config(path)?,
        (None, Some(MatrixPreset::Desk)) => ExperimentMatrix::desk_scale(),
        (None, Some(MatrixPreset::Paper)) => ExperimentMatrix::paper_scale(),
        _ => return Err((EXIT_CONFIG, "need exactly one of --config / --preset".into())),
    };
    matrix.validate().map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let manifest =
        run_matrix(&matrix, &args.out).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    let failures = manifest.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{} cells, {} failed; manifest at {}",
        manifest.cells.len(),
        failures,
        args.out.join("manifest.json").display()
    );
    for cell in manifest.cells.iter().filter(|c| c.error.is_some()) {
        println!(
            "  failed: d{} n{} s{} seed{} {}_{}_{}: {}",
            cell.d,
            cell.n,
            cell.s,
            cell.seed,
            cell.method,
            cell.compressor,
            cell.schedule,
            cell.error.as_deref().unwrap_or("")
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), (u8, String)> {
    let mut curves = Vec::new();
    if let Some(manifest_path) = &args.manifest {
        let manifest: Manifest = load_config(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        for cell in &manifest.cells {
            if let Some(csv) = &cell.csv_path {
                let log = MetricsLog::read_csv(&base.join(csv))
                    .map_err(|e| (exit_code_for(&e), e.to_string()))?;
                curves.push(CurveInput {
                    label: format!(
                        "{}_{} {} d{} n{} s{} seed{}",
                        cell.method, cell.compressor, cell.schedule, cell.d, cell.n, cell.s,
                        cell.seed
                    ),
                    log,
                });
            }
        }
    }
    for csv in &args.csv {
        let log =
            MetricsLog::read_csv(csv).map_err(|e| (exit_code_for(&e), e.to_string()))?;
        let label = csv
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| csv.display().to_string());
        curves.push(CurveInput { label, log });
    }
    let y_column = match args.y_column {
        YAxis::W => YColumn::SuboptW,
        YAxis::X => YColumn::SuboptX,
    };
    let (svg, summary) =
        render_svg(&curves, y_column).map_err(|e| (exit_code_for(&e), e.to_string()))?;
    write_atomic(&args.out, &svg)
        .map_err(|e| (EXIT_IO, format!("writing {}: {e}", args.out.display())))?;
    let summary_path = args.out.with_extension("summary.json");
    let summary_json = serde_json::to_string_pretty::<ReportSummary>(&summary)
        .map_err(|e| (EXIT_CONFIG, format!("serializing summary: {e}")))?;
    write_atomic(&summary_path, &summary_json)
        .map_err(|e| (EXIT_IO, format!("writing {}: {e}", summary_path.display())))?;
    println!("wrote {} and {}", args.out.display(), summary_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
