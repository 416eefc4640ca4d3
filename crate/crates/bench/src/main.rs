//! `admm-bench`: run the block solvers on generated or stored instances,
//! evaluate certificates, sweep perturbation scales, and fit empirical
//! convergence rates. Data goes to files, logs to stderr; the exit code is
//! the only pass/fail channel (0 ok, 1 config, 2 solver, 3 certificate).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use admm_bench::commands::{self, RateQuantity};
use admm_bench::config::{GammaSpec, InstanceSel, ModeName, RunConfig};
use admm_bench::CliError;
use mbadmm::instances::InstanceRecipe;

#[derive(Parser)]
#[command(name = "admm-bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured solve and write its trace and summary.
    Run(RunArgs),
    /// Sweep perturbation scales and fit error against scale.
    Sweep(SweepArgs),
    /// Fit a log-log rate over a window of a recorded trace.
    Rate(RateArgs),
    /// Run (or replay) the full certificate suite.
    Certify(CertifyArgs),
    /// Emit an instance file from a named recipe.
    Gen(GenArgs),
}

#[derive(Args)]
struct CommonRunArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance file path (alternative to a config recipe).
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    /// Penalty parameter, a number or "auto".
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Starting-point seed; 0 starts from zeros.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated per-iteration certificates to evaluate.
    #[arg(long, value_delimiter = ',')]
    certificates: Option<Vec<String>>,
    /// Stop tolerance; 0 disables the stop test.
    #[arg(long)]
    stop_tol: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Exit 3 unless the run meets the stop tolerance.
    #[arg(long)]
    require_convergence: bool,
    /// Solve a reference oracle and emit the ergodic error series.
    #[arg(long)]
    compute_oracle: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Comma-separated perturbation scales.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Iteration rule constant: t = ceil(c / eps^2).
    #[arg(long)]
    sweep_c: Option<f64>,
}

#[derive(Args)]
struct RateArgs {
    /// Run output directory or a direct CSV path.
    #[arg(long)]
    trace: PathBuf,
    /// ergodic_gap | primal_res | aug_lag_gap
    #[arg(long)]
    quantity: String,
    /// Window "lo,hi" in iterations.
    #[arg(long, value_delimiter = ',')]
    window: Vec<usize>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Verify a previously written state file instead of running.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Recipe name: sharing | qp | divergence.
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    /// Comma-separated block dimensions.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Named scalar parameters, "key=value" pairs.
    #[arg(long, value_delimiter = ',')]
    param: Vec<String>,
    /// Solve and embed a reference solution.
    #[arg(long)]
    with_oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<ModeName, CliError> {
    match s {
        "plain" => Ok(ModeName::Plain),
        "perturbed" => Ok(ModeName::Perturbed),
        "scenario2" => Ok(ModeName::Scenario2),
        other => Err(CliError::Config(format!(
            "unknown mode {other:?} (plain | perturbed | scenario2)"
        ))),
    }
}

/// Loads the config file if given and lays CLI overrides on top.
fn materialize(common: &CommonRunArgs) -> Result<RunConfig, CliError> {
    let mut config = match (&common.config, &common.instance) {
        (Some(path), _) => RunConfig::from_path(path)?,
        (None, Some(instance)) => RunConfig {
            instance: InstanceSel::Path {
                path: instance.clone(),
            },
            mode: ModeName::Plain,
            gamma: GammaSpec::default(),
            epsilon: None,
            max_iter: 1000,
            inner_tol: 1e-10,
            seed: 0,
            output_dir: None,
            certificates: vec![],
            stop_tol: None,
            require_convergence: false,
            compute_oracle: false,
            record_states: true,
            eps_list: vec![],
            sweep_c: None,
            extra: BTreeMap::new(),
        },
        (None, None) => {
            return Err(CliError::Config(
                "need --config or --instance".to_string(),
            ))
        }
    };
    if let Some(path) = &common.instance {
        config.instance = InstanceSel::Path { path: path.clone() };
    }
    if let Some(mode) = &common.mode {
        config.mode = parse_mode(mode)?;
    }
    if let Some(gamma) = &common.gamma {
        config.gamma = match gamma.parse::<f64>() {
            Ok(v) => GammaSpec::Value(v),
            Err(_) => GammaSpec::Keyword(gamma.clone()),
        };
    }
    if let Some(v) = common.epsilon {
        config.epsilon = Some(v);
    }
    if let Some(v) = common.max_iter {
        config.max_iter = v;
    }
    if let Some(v) = common.inner_tol {
        config.inner_tol = v;
    }
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(dir) = &common.output_dir {
        config.output_dir = Some(dir.clone());
    }
    if let Some(certs) = &common.certificates {
        config.certificates = certs.clone();
    }
    if let Some(v) = common.stop_tol {
        config.stop_tol = Some(v);
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(args) => {
            let mut config = materialize(&args.common)?;
            config.require_convergence |= args.require_convergence;
            config.compute_oracle |= args.compute_oracle;
            let artifacts = commands::cmd_run(&config)?;
            eprintln!(
                "run finished: {} iterations, converged = {}, certificate failures = {}; outputs in {}",
                artifacts.summary.iterations,
                artifacts.converged,
                artifacts.certificate_failures,
                artifacts.out_dir.display()
            );
            Ok(artifacts.exit_code())
        }
        Command::Sweep(args) => {
            let mut config = materialize(&args.common)?;
            if let Some(eps) = &args.eps {
                config.eps_list = eps.clone();
            }
            if let Some(c) = args.sweep_c {
                config.sweep_c = Some(c);
            }
            let artifacts = commands::cmd_sweep(&config)?;
            Ok(artifacts.exit_code())
        }
        Command::Rate(args) => {
            let quantity: RateQuantity = args
                .quantity
                .parse()
                .map_err(CliError::Config)?;
            if args.window.len() != 2 {
                return Err(CliError::Config("window needs two entries: lo,hi".into()));
            }
            let report =
                commands::cmd_rate(&args.trace, quantity, (args.window[0], args.window[1]))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .map_err(|e| CliError::Config(e.to_string()))?
            );
            Ok(0)
        }
        Command::Certify(args) => {
            let config = materialize(&args.common)?;
            let artifacts = commands::cmd_certify(&config, args.replay.as_deref())?;
            eprintln!(
                "certified {} iterations: {} failures; report in {}",
                artifacts.report.iterations,
                artifacts.report.total_failures,
                artifacts.out_dir.display()
            );
            Ok(artifacts.exit_code())
        }
        Command::Gen(args) => {
            let mut parameters = BTreeMap::new();
            for pair in &args.param {
                let (key, value) = pair
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("bad --param entry {pair:?}")))?;
                let value: f64 = value
                    .parse()
                    .map_err(|e| CliError::Config(format!("bad --param value {pair:?}: {e}")))?;
                parameters.insert(key.to_string(), value);
            }
            let recipe = InstanceRecipe {
                name: args.name.clone(),
                n_blocks: args.blocks,
                dims: args.dims.clone(),
                p: args.p,
                seed: args.seed,
                parameters,
            };
            commands::cmd_gen(&recipe, &args.out, args.with_oracle)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
