//! Experiment runner: `run` executes one configured experiment, `verify`
//! runs the built-in oracle checks, and `sweep` fans a config out over
//! seeds and/or epsilon values.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otaffl::config::{apply_overrides, resolve, ExperimentConfig, Overrides, RawConfig};
use otaffl::fedsim::run_experiment;
use otaffl::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "otaffl",
    about = "Fair federated learning over a simulated fading multiple-access channel",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to a TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<String>,
    /// Weighting box radius override (ota-ffl only).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of communication rounds override.
    #[arg(long)]
    rounds: Option<usize>,
    /// Algorithm kind override (ota-ffl, ota-fedavg, ota-term, ota-qffl).
    #[arg(long)]
    algorithm: Option<String>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Path to a TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root output directory for the grid (default `sweep`).
    #[arg(long)]
    out: Option<String>,
    /// Number of communication rounds override.
    #[arg(long)]
    rounds: Option<usize>,
    /// Algorithm kind override applied to every grid point.
    #[arg(long)]
    algorithm: Option<String>,
    /// Comma-separated list of seeds, e.g. `1,2,3`.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated list of epsilon values, e.g. `0,0.3,1`.
    #[arg(long)]
    epsilon: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, summary.json, histogram.csv.
    Run(ConfigArgs),
    /// Run the built-in verification checks and print one line per check.
    Verify {
        /// Seed for the verification streams.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run a grid of experiments over seeds and/or epsilon values.
    Sweep(SweepArgs),
}

fn load_raw(path: &Option<PathBuf>) -> Result<RawConfig, Error> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        }
        None => Ok(RawConfig::default()),
    }
}

fn resolve_with_flags(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let mut raw = load_raw(&args.config)?;
    apply_overrides(
        &mut raw,
        &Overrides {
            seed: args.seed,
            out_dir: args.out.clone(),
            epsilon: args.epsilon,
            rounds: args.rounds,
            algorithm: args.algorithm.clone(),
        },
    );
    resolve(&raw)
}

fn print_summary(config: &ExperimentConfig, summary: &otaffl::metrics::EvalSummary) {
    println!(
        "algorithm={} scheduler={} model={} rounds={} seed={}",
        config.algorithm.kind(),
        config.scheduler.kind(),
        config.model.kind,
        config.rounds,
        config.seed
    );
    println!(
        "mean_acc={:.4} std_acc={:.4} std_loss={:.4} worst10={:.4} best10={:.4} worst5={:.4} best5={:.4}",
        summary.mean_acc,
        summary.std_acc,
        summary.std_loss,
        summary.worst10,
        summary.best10,
        summary.worst5,
        summary.best5
    );
}

fn cmd_run(args: &ConfigArgs) -> Result<(), (u8, Error)> {
    let config = resolve_with_flags(args).map_err(|e| (EXIT_VALIDATION, e))?;
    let output = run_experiment(&config).map_err(|e| (EXIT_RUNTIME, e))?;
    print_summary(&config, &output.summary);
    if let Some(out_dir) = &config.out_dir {
        println!("reports written to {out_dir}");
    }
    Ok(())
}

fn cmd_verify(seed: u64) -> Result<(), (u8, Error)> {
    let checks = otaffl::verify::run_all(seed);
    let mut all_passed = true;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {}; {}", check.name, check.detail);
        all_passed &= check.passed;
    }
    if all_passed {
        println!("{}/{} checks passed", checks.len(), checks.len());
        Ok(())
    } else {
        Err((
            EXIT_RUNTIME,
            Error::NumericFailure {
                what: "built-in verification".into(),
                residual: f64::NAN,
            },
        ))
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse `{s}` in --{what}")))
        })
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), (u8, Error)> {
    let seed_list: Vec<u64> = match &args.seeds {
        Some(text) => parse_list(text, "seeds").map_err(|e| (EXIT_VALIDATION, e))?,
        None => vec![],
    };
    let epsilon_list: Vec<f64> = match &args.epsilon {
        Some(text) => parse_list(text, "epsilon").map_err(|e| (EXIT_VALIDATION, e))?,
        None => vec![],
    };
    if seed_list.is_empty() && epsilon_list.is_empty() {
        return Err((
            EXIT_VALIDATION,
            Error::Config("sweep needs --seeds and/or --epsilon".into()),
        ));
    }
    let base = ConfigArgs {
        config: args.config.clone(),
        seed: None,
        out: None,
        epsilon: None,
        rounds: args.rounds,
        algorithm: args.algorithm.clone(),
    };
    let sweep_root = args.out.clone().unwrap_or_else(|| "sweep".into());
    let seeds_axis: Vec<Option<u64>> = if seed_list.is_empty() {
        vec![None]
    } else {
        seed_list.iter().copied().map(Some).collect()
    };
    let epsilon_axis: Vec<Option<f64>> = if epsilon_list.is_empty() {
        vec![None]
    } else {
        epsilon_list.iter().copied().map(Some).collect()
    };

    let mut aggregate =
        String::from("seed,epsilon,mean_acc,std_acc,std_loss,worst10,best10,worst5,best5\n");
    let mut rows = Vec::new();
    for &seed in &seeds_axis {
        for &epsilon in &epsilon_axis {
            let mut args = base.clone();
            if seed.is_some() {
                args.seed = seed;
            }
            if epsilon.is_some() {
                args.epsilon = epsilon;
            }
            let mut config = resolve_with_flags(&args).map_err(|e| (EXIT_VALIDATION, e))?;
            let label = format!(
                "seed{}_eps{}",
                config.seed,
                epsilon.map_or("base".to_string(), |e| format!("{e}"))
            );
            config.out_dir = Some(format!("{sweep_root}/{label}"));
            let output = run_experiment(&config).map_err(|e| (EXIT_RUNTIME, e))?;
            let s = &output.summary;
            println!(
                "{label}: mean_acc={:.4} std_acc={:.4} std_loss={:.4}",
                s.mean_acc, s.std_acc, s.std_loss
            );
            aggregate.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                config.seed,
                epsilon.map_or(String::new(), |e| format!("{e}")),
                s.mean_acc,
                s.std_acc,
                s.std_loss,
                s.worst10,
                s.best10,
                s.worst5,
                s.best5
            ));
            rows.push(serde_json::json!({
                "label": label,
                "seed": config.seed,
                "epsilon": epsilon,
                "mean_acc": s.mean_acc,
                "std_acc": s.std_acc,
                "std_loss": s.std_loss,
                "worst10": s.worst10,
                "best10": s.best10,
                "worst5": s.worst5,
                "best5": s.best5,
            }));
        }
    }
    std::fs::create_dir_all(&sweep_root)
        .map_err(|e| (EXIT_RUNTIME, Error::io(sweep_root.clone(), e)))?;
    let csv_path = format!("{sweep_root}/aggregate.csv");
    std::fs::write(&csv_path, aggregate).map_err(|e| (EXIT_RUNTIME, Error::io(csv_path, e)))?;
    let json_path = format!("{sweep_root}/aggregate.json");
    let body = serde_json::to_string_pretty(&rows).map_err(|e| {
        (
            EXIT_RUNTIME,
            Error::Config(format!("aggregate serialization failed: {e}")),
        )
    })?;
    std::fs::write(&json_path, body).map_err(|e| (EXIT_RUNTIME, Error::io(json_path, e)))?;
    println!("aggregate written to {sweep_root}/aggregate.csv");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not failures.
            if err.use_stderr() {
                eprintln!("{err}");
                return ExitCode::from(EXIT_VALIDATION);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify { seed } => cmd_verify(*seed),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
