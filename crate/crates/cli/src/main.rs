use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rectflow_cli::experiment::{coupling_metrics, read_couplings};
use rectflow_cli::output::{self, PENALTY_FILE, SCHEDULES_FILE};
use rectflow_cli::{compare_schedules, l2_penalty_sweep, preset, run, CliError, CliResult, ExperimentConfig, PRESETS};

#[derive(Parser)]
#[command(name = "rectflow", version, about = "Rectified-flow toy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rectify (and reflow) a coupling; writes config.json, metrics.json,
    /// couplings.csv, trajectories.csv and training_curve.csv.
    Run(ExperimentArgs),
    /// Endpoint distance and straightness per schedule and Euler grid.
    CompareSchedules(ExperimentArgs),
    /// Straightness and cost of neural flows trained with each L2 penalty.
    L2Sweep(ExperimentArgs),
    /// Recompute coupling metrics from a couplings.csv.
    Metrics {
        #[arg(long, value_name = "PATH")]
        couplings: PathBuf,
        /// Round to evaluate; defaults to the last one in the file.
        #[arg(long)]
        round: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        relative_cost_n: usize,
    },
    /// Print a preset as TOML, or list presets without a name.
    Preset { name: Option<String> },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> CliResult<(ExperimentConfig, PathBuf)> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(CliError::Config("pass --config PATH or --preset NAME".into())),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .ok_or_else(|| CliError::Config("no output directory: pass --out DIR or set output.dir".into()))?;
        cfg.validate()?;
        Ok((cfg, dir))
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn header_value(path: &Path, key: &str) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix(&format!("{key}=")).map(str::to_string))
}

fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run(args) => {
            let (cfg, dir) = args.resolve()?;
            let outcome = run(&cfg)?;
            report(&output::write_run(&outcome, &dir)?);
        }
        Command::CompareSchedules(args) => {
            let (cfg, dir) = args.resolve()?;
            let rows = compare_schedules(&cfg)?;
            report(&[output::write_table(&cfg, "compare-schedules", SCHEDULES_FILE, &rows, &dir)?]);
        }
        Command::L2Sweep(args) => {
            let (cfg, dir) = args.resolve()?;
            let rows = l2_penalty_sweep(&cfg)?;
            report(&[output::write_table(&cfg, "l2-sweep", PENALTY_FILE, &rows, &dir)?]);
        }
        Command::Metrics {
            couplings,
            round,
            relative_cost_n,
        } => {
            let all = read_couplings(&couplings)?;
            let (k, pairs) = match round {
                Some(k) => all
                    .into_iter()
                    .find(|(r, _)| *r == k)
                    .ok_or_else(|| CliError::Config(format!("round {k} not found in {}", couplings.display())))?,
                None => all
                    .into_iter()
                    .last()
                    .ok_or_else(|| CliError::Config(format!("{} has no rows", couplings.display())))?,
            };
            let metrics = coupling_metrics(&pairs, relative_cost_n.min(pairs.n()))?;
            let doc = serde_json::json!({
                "config_hash": header_value(&couplings, "config_hash"),
                "seed": header_value(&couplings, "seed").and_then(|s| s.parse::<u64>().ok()),
                "round": k,
                "metrics": metrics,
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
        }
        Command::Preset { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Command::Preset { name: Some(name) } => print!("{}", preset(&name)?.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
