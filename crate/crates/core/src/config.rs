//! Run configuration: a TOML document with one table per concern.
//!
//! Every key is optional; missing keys take the values of
//! `configs/default.toml`, which `RunConfig::default()` reproduces.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keyrate::DEFAULT_F_EC;
use crate::optics::Testbed;
use crate::orchestrator::{MonteCarloSettings, ScheduleSegment, Simulator, SwitchingSchedule};
use crate::pulse::{Protocol, ProtocolConfig};

/// Upper bound on the number of points a loss range may expand to.
pub const MAX_LOSS_POINTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub compression: f64,
    pub error_correction_efficiency: f64,
    pub link: Testbed,
    pub monte_carlo: MonteCarloSettings,
    pub protocols: ProtocolTable,
    pub run: RunSection,
    pub schedule: ScheduleSection,
    pub sweep: SweepSection,
    pub validate: ValidateSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_101,
            compression: 1e-4,
            error_correction_efficiency: DEFAULT_F_EC,
            link: Testbed::default(),
            monte_carlo: MonteCarloSettings::default(),
            protocols: ProtocolTable::default(),
            run: RunSection::default(),
            schedule: ScheduleSection::default(),
            sweep: SweepSection::default(),
            validate: ValidateSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Per-protocol parameters; unset keys keep the protocol's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_signal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_decoy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_signal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_decoy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_vacuum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoy_sequence_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_error_offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extinction_ratio_db: Option<f64>,
}

impl ProtocolParams {
    /// Every key set, from the effective configuration.
    fn filled(cfg: &ProtocolConfig) -> Self {
        Self {
            mu_signal: Some(cfg.mu_signal),
            mu_decoy: Some(cfg.mu_decoy),
            prob_signal: Some(cfg.prob_signal),
            prob_decoy: Some(cfg.prob_decoy),
            prob_vacuum: Some(cfg.prob_vacuum),
            decoy_sequence_prob: Some(cfg.decoy_sequence_prob),
            phase_error_offset: Some(cfg.phase_error_offset),
            extinction_ratio_db: Some(cfg.extinction_ratio_db),
        }
    }

    fn apply(&self, cfg: &mut ProtocolConfig) {
        let fields = [
            (self.mu_signal, &mut cfg.mu_signal),
            (self.mu_decoy, &mut cfg.mu_decoy),
            (self.prob_signal, &mut cfg.prob_signal),
            (self.prob_decoy, &mut cfg.prob_decoy),
            (self.prob_vacuum, &mut cfg.prob_vacuum),
            (self.decoy_sequence_prob, &mut cfg.decoy_sequence_prob),
            (self.phase_error_offset, &mut cfg.phase_error_offset),
            (self.extinction_ratio_db, &mut cfg.extinction_ratio_db),
        ];
        for (value, slot) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolTable {
    pub bb84: ProtocolParams,
    pub dps: ProtocolParams,
    pub cow: ProtocolParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub protocol: Protocol,
    pub clock_rate_hz: f64,
    pub duration_s: f64,
    pub report_interval_s: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            protocol: Protocol::Bb84,
            clock_rate_hz: 2.0e9,
            duration_s: 300.0,
            report_interval_s: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub protocol: Protocol,
    pub clock_rate_hz: f64,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub settle_time_s: f64,
    pub report_interval_s: f64,
    pub segments: Vec<SegmentSpec>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let seg = |protocol, clock_rate_hz| SegmentSpec {
            protocol,
            clock_rate_hz,
            duration_s: 600.0,
        };
        Self {
            settle_time_s: 5.0,
            report_interval_s: 30.0,
            segments: vec![
                seg(Protocol::Bb84, 2.0e9),
                seg(Protocol::Bb84, 2.5e9),
                seg(Protocol::Dps, 2.0e9),
                seg(Protocol::Cow, 2.0e9),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub protocols: Vec<Protocol>,
    pub clock_rates_hz: Vec<f64>,
    /// `"start:stop:step"` (inclusive) or a comma-separated list, dB.
    pub losses_db: String,
    /// Symbols per point for the Monte-Carlo columns.
    pub mc_symbols: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            protocols: vec![Protocol::Bb84],
            clock_rates_hz: vec![2.0e9, 2.5e9],
            losses_db: "0:25:1".into(),
            mc_symbols: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    /// Symbols per protocol and clock in the analytic-vs-Monte-Carlo check.
    pub mc_symbols: u64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { mc_symbols: 2_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Protocol defaults for `protocol` overlaid with this file's table.
    pub fn protocol_config(&self, protocol: Protocol, clock_rate_hz: f64) -> ProtocolConfig {
        let mut cfg = ProtocolConfig::new(protocol, clock_rate_hz);
        let params = match protocol {
            Protocol::Bb84 => &self.protocols.bb84,
            Protocol::Dps => &self.protocols.dps,
            Protocol::Cow => &self.protocols.cow,
        };
        params.apply(&mut cfg);
        cfg
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(
            self.link.clone(),
            self.compression,
            self.error_correction_efficiency,
            self.monte_carlo.clone(),
        )
    }

    pub fn switching_schedule(&self) -> SwitchingSchedule {
        SwitchingSchedule {
            segments: self
                .schedule
                .segments
                .iter()
                .map(|s| ScheduleSegment {
                    config: self.protocol_config(s.protocol, s.clock_rate_hz),
                    duration_s: s.duration_s,
                })
                .collect(),
            settle_time_s: self.schedule.settle_time_s,
            report_interval_s: self.schedule.report_interval_s,
            seed: self.seed,
        }
    }

    pub fn sweep_losses(&self) -> Result<Vec<f64>> {
        parse_loss_range(&self.sweep.losses_db)
    }

    /// Checks every section, including each protocol at each clock it is
    /// used with.
    pub fn validate(&self) -> Result<()> {
        self.simulator()?;
        for p in Protocol::ALL {
            for chip in &self.link.chips {
                self.protocol_config(p, chip.clock_rate_hz).validate()?;
            }
        }
        let run = &self.run;
        self.link.chip(run.clock_rate_hz)?;
        if !(run.duration_s > 0.0 && run.duration_s.is_finite()) {
            return Err(Error::config("run.duration_s must be positive"));
        }
        if !(run.report_interval_s > 0.0 && run.report_interval_s <= run.duration_s) {
            return Err(Error::config("run.report_interval_s must be in (0, duration_s]"));
        }
        let schedule = self.switching_schedule();
        schedule.validate()?;
        for seg in &schedule.segments {
            self.link.chip(seg.config.clock_rate_hz)?;
        }
        if self.sweep.protocols.is_empty() || self.sweep.clock_rates_hz.is_empty() {
            return Err(Error::config("sweep needs at least one protocol and one clock rate"));
        }
        for &clock in &self.sweep.clock_rates_hz {
            self.link.chip(clock)?;
        }
        self.sweep_losses()?;
        if self.sweep.mc_symbols == 0 || self.validate.mc_symbols == 0 {
            return Err(Error::config("mc_symbols must be positive"));
        }
        Ok(())
    }

    /// The same configuration with every protocol key spelled out and the
    /// output location reset, so that documents producing the same results
    /// compare and hash equal.
    pub fn normalized(&self) -> Self {
        let clock = self.run.clock_rate_hz;
        let mut out = self.clone();
        out.output = OutputSection::default();
        out.protocols = ProtocolTable {
            bb84: ProtocolParams::filled(&self.protocol_config(Protocol::Bb84, clock)),
            dps: ProtocolParams::filled(&self.protocol_config(Protocol::Dps, clock)),
            cow: ProtocolParams::filled(&self.protocol_config(Protocol::Cow, clock)),
        };
        out
    }

    /// First 16 hex digits of the SHA-256 of the normalized TOML form.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.normalized().to_toml_string()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }
}

/// Parses `"start:stop:step"` (stop included when hit within rounding) or
/// `"a, b, c"` into loss values in dB.
pub fn parse_loss_range(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::Parse("empty loss range".into()));
    }
    let number = |s: &str| -> Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("not a number: {:?}", s.trim())))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!("loss must be finite, got {v}")));
        }
        if v < 0.0 {
            return Err(Error::NegativeLoss(v));
        }
        Ok(v)
    };
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("expected start:stop:step, got {text:?}")));
        }
        let (start, stop, step) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
        if step <= 0.0 {
            return Err(Error::Parse("loss step must be positive".into()));
        }
        if stop < start {
            return Err(Error::Parse(format!("loss range stop {stop} is below start {start}")));
        }
        let steps = ((stop - start) / step + 1e-9).floor();
        if steps >= MAX_LOSS_POINTS as f64 {
            return Err(Error::Parse(format!("loss range expands to more than {MAX_LOSS_POINTS} points")));
        }
        (0..=steps as usize).map(|i| start + i as f64 * step).collect()
    } else {
        let v = text.split(',').map(number).collect::<Result<Vec<_>>>()?;
        if v.len() > MAX_LOSS_POINTS {
            return Err(Error::Parse(format!("more than {MAX_LOSS_POINTS} loss values")));
        }
        v
    };
    Ok(values)
}
