//! Artifact files. Every file starts with the config hash and seed: CSVs as
//! `#` comment lines, JSON files as top-level keys.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rectflow::rng::{NORMAL_SAMPLER, RNG_ALGORITHM};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::experiment::{DistillSummary, RoundMetrics, RunOutcome};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const COUPLINGS_FILE: &str = "couplings.csv";
pub const TRAINING_CURVE_FILE: &str = "training_curve.csv";
pub const SCHEDULES_FILE: &str = "compare_schedules.csv";
pub const PENALTY_FILE: &str = "l2_sweep.csv";

#[derive(Serialize)]
struct ConfigEcho<'a> {
    config_hash: &'a str,
    seed: u64,
    command: &'a str,
    rng_algorithm: &'a str,
    normal_sampler: &'a str,
    version: &'a str,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    config_hash: &'a str,
    seed: u64,
    rounds: &'a [RoundMetrics],
    distill: Option<&'a DistillSummary>,
}

struct Target<'a> {
    dir: &'a Path,
    hash: &'a str,
    seed: u64,
}

impl Target<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut f = BufWriter::new(File::create(self.path(name))?);
        serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::from)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    /// CSV writer positioned after the comment header.
    fn csv(&self, name: &str) -> CliResult<csv::Writer<BufWriter<File>>> {
        let mut f = BufWriter::new(File::create(self.path(name))?);
        writeln!(f, "# config_hash={}", self.hash)?;
        writeln!(f, "# seed={}", self.seed)?;
        Ok(csv::Writer::from_writer(f))
    }

    fn rows<T: Serialize>(&self, name: &str, rows: &[T]) -> CliResult<()> {
        let mut w = self.csv(name)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn echo(&self, command: &str, config: &ExperimentConfig) -> CliResult<()> {
        self.json(
            CONFIG_FILE,
            &ConfigEcho {
                config_hash: self.hash,
                seed: self.seed,
                command,
                rng_algorithm: RNG_ALGORITHM,
                normal_sampler: NORMAL_SAMPLER,
                version: env!("CARGO_PKG_VERSION"),
                config,
            },
        )
    }
}

fn target<'a>(dir: &'a Path, cfg: &ExperimentConfig, hash: &'a str) -> CliResult<Target<'a>> {
    fs::create_dir_all(dir)?;
    Ok(Target {
        dir,
        hash,
        seed: cfg.seed,
    })
}

fn axis(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (0..d).map(move |k| format!("{prefix}{k}"))
}

/// Writes the artifacts of a `run` and returns the paths written.
pub fn write_run(out: &RunOutcome, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let t = target(dir, &out.config, &out.hash)?;
    let mut written = vec![t.path(CONFIG_FILE), t.path(METRICS_FILE), t.path(COUPLINGS_FILE), t.path(TRAJECTORIES_FILE)];
    t.echo("run", &out.config)?;
    t.json(
        METRICS_FILE,
        &MetricsFile {
            config_hash: &out.hash,
            seed: out.config.seed,
            rounds: &out.metrics,
            distill: out.distill.as_ref().map(|d| &d.0),
        },
    )?;

    let d = out.data.heldout.dim();
    let mut w = t.csv(COUPLINGS_FILE)?;
    let mut head = vec!["round".to_string(), "pair_id".to_string()];
    head.extend(axis("z0_", d).chain(axis("z1_", d)));
    w.write_record(&head)?;
    for k in 0..=out.rounds.len() {
        let c = out.coupling(k);
        for i in 0..c.n() {
            let (a, b) = c.pair(i);
            let mut rec = vec![k.to_string(), i.to_string()];
            rec.extend(a.iter().chain(b).map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut w = t.csv(TRAJECTORIES_FILE)?;
    let mut head = vec!["round".to_string(), "particle_id".into(), "step_index".into(), "t".into()];
    head.extend(axis("x_", d));
    w.write_record(&head)?;
    for (k, r) in out.rounds.iter().enumerate() {
        let traj = &r.trajectories;
        for p in 0..traj.first().n().min(out.config.output.trajectory_particles) {
            for (j, (time, cloud)) in traj.times.iter().zip(&traj.states).enumerate() {
                let mut rec = vec![(k + 1).to_string(), p.to_string(), j.to_string(), time.to_string()];
                rec.extend(cloud.row(p).iter().map(|x| x.to_string()));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;

    let has_curves = out.rounds.iter().any(|r| !r.training_curve.is_empty()) || out.distill.is_some();
    if has_curves {
        let mut w = t.csv(TRAINING_CURVE_FILE)?;
        w.write_record(["round", "iteration", "loss"])?;
        for (k, r) in out.rounds.iter().enumerate() {
            for c in &r.training_curve {
                w.write_record([(k + 1).to_string(), c.iteration.to_string(), c.loss.to_string()])?;
            }
        }
        if let Some((_, curve)) = &out.distill {
            for c in curve {
                w.write_record(["distill".to_string(), c.iteration.to_string(), c.loss.to_string()])?;
            }
        }
        w.flush()?;
        written.push(t.path(TRAINING_CURVE_FILE));
    }
    Ok(written)
}

/// Writes a sweep table plus the config echo.
pub fn write_table<T: Serialize>(cfg: &ExperimentConfig, command: &str, file: &str, rows: &[T], dir: &Path) -> CliResult<PathBuf> {
    let hash = cfg.hash();
    let t = target(dir, cfg, &hash)?;
    t.echo(command, cfg)?;
    t.rows(file, rows)?;
    Ok(t.path(file))
}
