//! Sweep computation and the CSV/JSON result files.
//!
//! CSV files open with one comment line,
//! `# qkdsim <kind> schema=1 config_sha256=<16 hex> seed=<n>`, followed by a
//! header row. Floats are written in shortest round-trip form, so identical
//! inputs give identical bytes.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::keyrate::{predict_link, report_from_stats, KeyRateReport};
use crate::orchestrator::RunResult;
use crate::pulse::{IntensityClass, Protocol};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvMeta {
    pub kind: String,
    pub schema: u32,
    pub config_sha256: String,
    pub seed: u64,
}

impl CsvMeta {
    pub fn new(kind: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            kind: kind.into(),
            schema: SCHEMA_VERSION,
            config_sha256: cfg.fingerprint()?,
            seed: cfg.seed,
        })
    }

    pub fn header_line(&self) -> String {
        format!(
            "# qkdsim {} schema={} config_sha256={} seed={}",
            self.kind, self.schema, self.config_sha256, self.seed
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("malformed header comment {line:?}"));
        let mut words = line.strip_prefix('#').ok_or_else(bad)?.split_whitespace();
        if words.next() != Some("qkdsim") {
            return Err(bad());
        }
        let kind = words.next().ok_or_else(bad)?.to_string();
        let mut field = |key: &str| -> Result<String> {
            let word = words.next().ok_or_else(bad)?;
            word.strip_prefix(key)
                .and_then(|w| w.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(bad)
        };
        let schema = field("schema")?.parse().map_err(|_| bad())?;
        let config_sha256 = field("config_sha256")?;
        let seed = field("seed")?.parse().map_err(|_| bad())?;
        if words.next().is_some() {
            return Err(bad());
        }
        Ok(Self {
            kind,
            schema,
            config_sha256,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub clock_rate_hz: f64,
    pub channel_loss_db: f64,
    pub total_loss_db: f64,
    pub raw_rate: f64,
    pub gain: f64,
    pub qber: f64,
    pub skr: f64,
    #[serde(default)]
    pub mc_gain: Option<f64>,
    #[serde(default)]
    pub mc_qber: Option<f64>,
    #[serde(default)]
    pub mc_skr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub segment: usize,
    pub timestamp_s: f64,
    pub protocol: Protocol,
    pub clock_rate_hz: f64,
    pub raw_rate: f64,
    pub sifted_rate: f64,
    pub qber: f64,
    #[serde(default)]
    pub visibility: Option<f64>,
    pub skr: f64,
}

/// Analytic sweep over `cfg.sweep`, optionally with Monte-Carlo columns.
/// Rows are ordered by protocol, clock rate, then loss as listed.
pub fn compute_sweep(cfg: &RunConfig, losses: &[f64], with_mc: bool) -> Result<Vec<SweepRow>> {
    let mut points = Vec::new();
    for &protocol in &cfg.sweep.protocols {
        for &clock in &cfg.sweep.clock_rates_hz {
            for &loss in losses {
                points.push((protocol, clock, loss));
            }
        }
    }
    let sim = cfg.simulator()?;
    points
        .par_iter()
        .enumerate()
        .map(|(index, &(protocol, clock, loss))| {
            if loss < 0.0 || !loss.is_finite() {
                return Err(Error::NegativeLoss(loss));
            }
            let pcfg = cfg.protocol_config(protocol, clock);
            let testbed = cfg.link.with_channel_loss(loss);
            let budget = testbed.budget(clock)?;
            let pred = predict_link(&pcfg, &budget, cfg.error_correction_efficiency)?;
            let mut row = SweepRow {
                protocol,
                clock_rate_hz: clock,
                channel_loss_db: loss,
                total_loss_db: budget.total_loss_db(),
                raw_rate: pred.report.raw_rate,
                gain: pred.gain,
                qber: pred.qber,
                skr: pred.report.skr.max(0.0),
                mc_gain: None,
                mc_qber: None,
                mc_skr: None,
            };
            if with_mc {
                let mut point_sim = sim.clone();
                point_sim.testbed = testbed;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(index as u64);
                let m = point_sim.measure(&pcfg, cfg.sweep.mc_symbols, false, &mut rng)?;
                let dark_yield = 2.0 * budget.dark_click_probability(pcfg.bin_duration());
                let report = report_from_stats(&pcfg, &m.stats, m.elapsed, cfg.error_correction_efficiency, dark_yield)?;
                row.mc_gain = Some(m.stats.gain(IntensityClass::Signal).unwrap_or(0.0));
                row.mc_qber = Some(report.qber);
                row.mc_skr = Some(report.skr);
            }
            Ok(row)
        })
        .collect()
}

/// Schedule rows, tagged with the segment each report belongs to.
pub fn schedule_rows(result: &RunResult) -> Vec<ScheduleRow> {
    result
        .reports
        .iter()
        .map(|r| {
            let segment = result
                .segment_boundaries
                .iter()
                .rposition(|&b| b < r.timestamp)
                .unwrap_or(0);
            ScheduleRow {
                segment,
                timestamp_s: r.timestamp,
                protocol: r.protocol,
                clock_rate_hz: r.clock_rate,
                raw_rate: r.raw_rate,
                sifted_rate: r.sifted_rate,
                qber: r.qber,
                visibility: r.visibility,
                skr: r.skr,
            }
        })
        .collect()
}

fn num(v: f64) -> Result<String> {
    if v.is_finite() {
        Ok(format!("{v}"))
    } else {
        Err(Error::Parse(format!("refusing to write non-finite value {v}")))
    }
}

fn opt(v: Option<f64>) -> Result<String> {
    v.map_or(Ok(String::new()), num)
}

fn finish<W: Write>(mut out: W, meta: &CsvMeta, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    writeln!(out, "{}", meta.header_line())?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: W, meta: &CsvMeta, rows: &[SweepRow]) -> Result<()> {
    let with_mc = rows.iter().any(|r| r.mc_gain.is_some());
    let mut header = vec![
        "protocol",
        "clock_rate_hz",
        "channel_loss_db",
        "total_loss_db",
        "raw_rate",
        "gain",
        "qber",
        "skr",
    ];
    if with_mc {
        header.extend(["mc_gain", "mc_qber", "mc_skr"]);
    }
    let records = rows
        .iter()
        .map(|r| {
            let mut rec = vec![
                r.protocol.to_string(),
                num(r.clock_rate_hz)?,
                num(r.channel_loss_db)?,
                num(r.total_loss_db)?,
                num(r.raw_rate)?,
                num(r.gain)?,
                num(r.qber)?,
                num(r.skr)?,
            ];
            if with_mc {
                rec.extend([opt(r.mc_gain)?, opt(r.mc_qber)?, opt(r.mc_skr)?]);
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    finish(out, meta, &header, records)
}

pub fn write_schedule_csv<W: Write>(out: W, meta: &CsvMeta, rows: &[ScheduleRow]) -> Result<()> {
    let header = [
        "segment",
        "timestamp_s",
        "protocol",
        "clock_rate_hz",
        "raw_rate",
        "sifted_rate",
        "qber",
        "visibility",
        "skr",
    ];
    let records = rows
        .iter()
        .map(|r| {
            Ok(vec![
                r.segment.to_string(),
                num(r.timestamp_s)?,
                r.protocol.to_string(),
                num(r.clock_rate_hz)?,
                num(r.raw_rate)?,
                num(r.sifted_rate)?,
                num(r.qber)?,
                opt(r.visibility)?,
                num(r.skr)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    finish(out, meta, &header, records)
}

fn read_rows<R: Read, T: serde::de::DeserializeOwned>(input: R, required: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let headers = r.headers()?.clone();
    if let Some(missing) = required.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(Error::Parse(format!("missing column {missing:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::Parse(format!("non-finite value {v}"))),
        None => Ok(()),
    }
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let rows: Vec<SweepRow> = read_rows(
        input,
        &[
            "protocol",
            "clock_rate_hz",
            "channel_loss_db",
            "total_loss_db",
            "raw_rate",
            "gain",
            "qber",
            "skr",
        ],
    )?;
    for r in &rows {
        check_finite(&[r.clock_rate_hz, r.channel_loss_db, r.total_loss_db, r.raw_rate, r.gain, r.qber, r.skr])?;
        check_finite(&[r.mc_gain, r.mc_qber, r.mc_skr].into_iter().flatten().collect::<Vec<_>>())?;
    }
    Ok(rows)
}

pub fn read_schedule_csv<R: Read>(input: R) -> Result<Vec<ScheduleRow>> {
    let rows: Vec<ScheduleRow> = read_rows(
        input,
        &[
            "segment",
            "timestamp_s",
            "protocol",
            "clock_rate_hz",
            "raw_rate",
            "sifted_rate",
            "qber",
            "skr",
        ],
    )?;
    for r in &rows {
        check_finite(&[r.timestamp_s, r.clock_rate_hz, r.raw_rate, r.sifted_rate, r.qber, r.skr])?;
        check_finite(&r.visibility.into_iter().collect::<Vec<_>>())?;
    }
    Ok(rows)
}

/// Metadata from the first line of a result CSV.
pub fn read_csv_meta(text: &str) -> Result<CsvMeta> {
    CsvMeta::parse(text.lines().next().unwrap_or_default())
}

#[derive(Serialize, Deserialize)]
pub struct SweepJson {
    pub meta: CsvMeta,
    pub rows: Vec<SweepRow>,
}

#[derive(Serialize, Deserialize)]
pub struct RunJson {
    pub meta: CsvMeta,
    pub reports: Vec<KeyRateReport>,
}

#[derive(Serialize, Deserialize)]
pub struct ScheduleJson {
    pub meta: CsvMeta,
    pub segment_boundaries: Vec<f64>,
    pub reports: Vec<KeyRateReport>,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CsvMeta {
        CsvMeta {
            kind: "sweep".into(),
            schema: 1,
            config_sha256: "0123456789abcdef".into(),
            seed: 42,
        }
    }

    fn small_sweep(mc: bool) -> Vec<SweepRow> {
        let mut cfg = RunConfig::default();
        cfg.sweep.mc_symbols = 20_000;
        compute_sweep(&cfg, &[0.0, 10.0, 20.0], mc).unwrap()
    }

    #[test]
    fn header_round_trip() {
        let m = meta();
        assert_eq!(CsvMeta::parse(&m.header_line()).unwrap(), m);
        for bad in ["", "qkdsim sweep", "# other sweep schema=1 config_sha256=x seed=1", "# qkdsim sweep schema=x config_sha256=x seed=1", "# qkdsim sweep schema=1 seed=1 config_sha256=x", "# qkdsim sweep schema=1 config_sha256=x seed=1 extra"] {
            assert!(CsvMeta::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sweep_rows_are_ordered() {
        let rows = small_sweep(false);
        assert_eq!(rows.len(), 6);
        let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.clock_rate_hz, r.channel_loss_db)).collect();
        assert_eq!(keys[0], (2.0e9, 0.0));
        assert_eq!(keys[2], (2.0e9, 20.0));
        assert_eq!(keys[3], (2.5e9, 0.0));
        for r in &rows {
            assert!((r.total_loss_db - r.channel_loss_db - 0.5 - if r.clock_rate_hz == 2.0e9 { 6.7 } else { 10.1 }).abs() < 1e-12);
            assert!(r.mc_gain.is_none());
        }
    }

    #[test]
    fn sweep_csv_round_trip() {
        for mc in [false, true] {
            let rows = small_sweep(mc);
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &meta(), &rows).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert_eq!(read_csv_meta(&text).unwrap(), meta());
            assert_eq!(text.lines().nth(1).unwrap().contains("mc_skr"), mc);
            assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
        }
    }

    #[test]
    fn schedule_csv_round_trip() {
        let report = |t: f64, v: Option<f64>| KeyRateReport {
            timestamp: t,
            protocol: Protocol::Cow,
            clock_rate: 2.0e9,
            raw_rate: 1.5e6,
            sifted_rate: 1.0e6,
            qber: 0.007,
            visibility: v,
            skr: 0.1 + t,
        };
        let result = RunResult {
            reports: vec![report(30.0, None), report(60.0, Some(0.94)), report(90.0, Some(0.95))],
            segment_boundaries: vec![0.0, 60.0],
        };
        let rows = schedule_rows(&result);
        assert_eq!(rows.iter().map(|r| r.segment).collect::<Vec<_>>(), vec![0, 0, 1]);
        let mut buf = Vec::new();
        write_schedule_csv(&mut buf, &meta(), &rows).unwrap();
        assert_eq!(read_schedule_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn readers_report_missing_columns() {
        let text = "# qkdsim sweep schema=1 config_sha256=0 seed=0\nprotocol,clock_rate_hz\nBB84,2e9\n";
        let err = read_sweep_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("channel_loss_db"), "{err}");
        let err = read_schedule_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("segment"), "{err}");
        assert!(read_schedule_csv("".as_bytes()).is_err());
    }

    #[test]
    fn readers_reject_garbage() {
        let head = "protocol,clock_rate_hz,channel_loss_db,total_loss_db,raw_rate,gain,qber,skr\n";
        for row in ["XYZ,1,1,1,1,1,1,1", "BB84,1,1,1,1,1,1,x", "BB84,1,1,1,1,1,1,NaN", "BB84,1,1"] {
            assert!(read_sweep_csv(format!("{head}{row}\n").as_bytes()).is_err(), "{row}");
        }
        assert_eq!(read_sweep_csv(head.as_bytes()).unwrap(), vec![]);
    }

    #[test]
    fn non_finite_values_are_not_written() {
        let mut rows = small_sweep(false);
        rows[0].skr = f64::NAN;
        assert!(write_sweep_csv(Vec::new(), &meta(), &rows).is_err());
    }

    #[test]
    fn sweep_is_deterministic() {
        assert_eq!(small_sweep(true), small_sweep(true));
    }
}
