//! Command-line front end: `sweep`, `run`, `schedule` and `validate`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::report::{
    compute_sweep, schedule_rows, to_json, write_schedule_csv, write_sweep_csv, CsvMeta, RunJson, ScheduleJson,
    SweepJson,
};
use crate::validation::run_oracle_suite;

#[derive(Debug, Parser)]
#[command(name = "qkdsim", version, about = "QKD link simulator for time-bin BB84, DPS and COW")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Key rate and QBER versus channel loss from the closed-form model.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Add Monte-Carlo columns.
        #[arg(long)]
        mc: bool,
        /// Loss values, "start:stop:step" or "a,b,c" (dB).
        #[arg(long)]
        losses: Option<String>,
    },
    /// One protocol and clock over [run] duration, one report per interval.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// The protocol/clock switching schedule.
    Schedule {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Oracle checks; exits non-zero if any fails.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides [output] dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub compression: Option<f64>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(c) = self.compression {
            cfg.compression = c;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Runs `cli`, printing progress to `out`. Returns `false` when a validation
/// check failed.
pub fn execute(cli: Cli, out: &mut impl Write) -> anyhow::Result<bool> {
    match cli.command {
        Command::Sweep { common, mc, losses } => {
            let mut cfg = common.load()?;
            if let Some(l) = losses {
                cfg.sweep.losses_db = l;
                cfg.validate().context("invalid loss range")?;
            }
            let rows = compute_sweep(&cfg, &cfg.sweep_losses()?, mc)?;
            let meta = CsvMeta::new("sweep", &cfg)?;
            let mut csv = Vec::new();
            write_sweep_csv(&mut csv, &meta, &rows)?;
            let dir = &cfg.output.dir;
            let a = write_file(dir, "sweep.csv", &csv)?;
            let b = write_file(dir, "sweep.json", to_json(&SweepJson { meta, rows })?.as_bytes())?;
            writeln!(out, "wrote {} and {}", a.display(), b.display())?;
            Ok(true)
        }
        Command::Run { common } => {
            let cfg = common.load()?;
            let pcfg = cfg.protocol_config(cfg.run.protocol, cfg.run.clock_rate_hz);
            let reports = cfg
                .simulator()?
                .run_segment(&pcfg, cfg.run.duration_s, cfg.run.report_interval_s, cfg.seed)?;
            for r in &reports {
                writeln!(
                    out,
                    "t={:>8.1} s  raw={:.4e}/s  qber={:.4}  skr={:.4e} bit/s",
                    r.timestamp, r.raw_rate, r.qber, r.skr
                )?;
            }
            let json = to_json(&RunJson {
                meta: CsvMeta::new("run", &cfg)?,
                reports,
            })?;
            let path = write_file(&cfg.output.dir, "run.json", json.as_bytes())?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(true)
        }
        Command::Schedule { common } => {
            let cfg = common.load()?;
            let result = cfg.simulator()?.run_schedule(&cfg.switching_schedule())?;
            let meta = CsvMeta::new("schedule", &cfg)?;
            let mut csv = Vec::new();
            write_schedule_csv(&mut csv, &meta, &schedule_rows(&result))?;
            let dir = &cfg.output.dir;
            let a = write_file(dir, "schedule.csv", &csv)?;
            let json = to_json(&ScheduleJson {
                meta,
                segment_boundaries: result.segment_boundaries,
                reports: result.reports,
            })?;
            let b = write_file(dir, "schedule.json", json.as_bytes())?;
            writeln!(out, "wrote {} and {}", a.display(), b.display())?;
            Ok(true)
        }
        Command::Validate { common } => {
            let cfg = common.load()?;
            let checks = run_oracle_suite(&cfg)?;
            for c in &checks {
                writeln!(out, "{}", c.line())?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            writeln!(out, "{} checks, {failed} failed", checks.len())?;
            Ok(failed == 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_flags() {
        let cli = Cli::try_parse_from([
            "qkdsim", "sweep", "--config", "a.toml", "--seed", "3", "--out", "o", "--mc", "--compression", "1e-5",
            "--losses", "0:5:1",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep { common, mc, losses } => {
                assert!(mc);
                assert_eq!(losses.as_deref(), Some("0:5:1"));
                assert_eq!(common.seed, Some(3));
                assert_eq!(common.compression, Some(1e-5));
                assert_eq!(common.out, Some(PathBuf::from("o")));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["qkdsim", "run", "--mc"]).is_err());
        assert!(Cli::try_parse_from(["qkdsim", "bogus"]).is_err());
        assert!(Cli::try_parse_from(["qkdsim", "run", "--seed", "-1"]).is_err());
    }

    #[test]
    fn overrides_are_validated() {
        let args = CommonArgs {
            config: None,
            seed: Some(5),
            out: None,
            compression: Some(0.0),
        };
        assert!(args.load().is_err());
    }
}
