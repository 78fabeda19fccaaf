//! Monte-Carlo run engine and the protocol/clock switching schedule.
//!
//! A reporting interval of `T` seconds at symbol rate `R` is represented by
//! `R · T · compression` simulated symbols. Those are drawn as fresh random
//! patterns of `pattern_symbols` symbols, each replayed `repetitions` times
//! into a cumulative histogram, so per-symbol statistics are those of the
//! full-rate link while the work stays desk-sized. Rates are reported in
//! real-time units.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::estimation::{sift, SiftedStats};
use crate::keyrate::{report_from_stats, KeyRateReport};
use crate::optics::{
    attenuate, interfere, monitor_straight, simulate_detection, DetectionSettings, PhaseMode, Testbed,
};
use crate::pulse::{
    encode_bb84, encode_cow, encode_dps, Basis, BlockId, IntensityClass, Phase, Protocol, ProtocolConfig, Pulse,
    PulseTrain,
};

/// Stream offset between consecutive schedule segments.
const SEGMENT_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSettings {
    pub pattern_symbols: usize,
    pub repetitions: u64,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        Self {
            pattern_symbols: 4096,
            repetitions: 16,
        }
    }
}

impl MonteCarloSettings {
    pub fn validate(&self) -> Result<()> {
        if self.pattern_symbols == 0 || self.repetitions == 0 {
            return Err(Error::config("pattern_symbols and repetitions must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub config: ProtocolConfig,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSchedule {
    pub segments: Vec<ScheduleSegment>,
    pub settle_time_s: f64,
    pub report_interval_s: f64,
    pub seed: u64,
}

impl SwitchingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::config("schedule has no segments"));
        }
        if !(self.settle_time_s >= 0.0 && self.settle_time_s.is_finite()) {
            return Err(Error::config("settle_time_s must be finite and >= 0"));
        }
        if !(self.report_interval_s > 0.0 && self.report_interval_s.is_finite()) {
            return Err(Error::config("report_interval_s must be positive"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            seg.config.validate()?;
            if !(seg.duration_s > self.settle_time_s && seg.duration_s.is_finite()) {
                return Err(Error::config(format!(
                    "segment {i}: duration {} s must exceed the settle time {} s",
                    seg.duration_s, self.settle_time_s
                )));
            }
            if self.report_interval_s > seg.duration_s {
                return Err(Error::config(format!(
                    "segment {i}: report interval exceeds duration"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub reports: Vec<KeyRateReport>,
    /// Start time of each segment, seconds.
    pub segment_boundaries: Vec<f64>,
}

/// Seed used for segment `index` of a schedule seeded with `seed`.
pub fn segment_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(SEGMENT_SEED_STRIDE.wrapping_mul(index as u64))
}

/// Symbols, histogram statistics and the simulated acquisition time.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub stats: SiftedStats,
    pub symbols: u64,
    pub elapsed: f64,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub testbed: Testbed,
    pub compression: f64,
    pub f_ec: f64,
    pub monte_carlo: MonteCarloSettings,
}

impl Simulator {
    pub fn new(testbed: Testbed, compression: f64, f_ec: f64, monte_carlo: MonteCarloSettings) -> Result<Self> {
        testbed.validate()?;
        monte_carlo.validate()?;
        if !(compression > 0.0 && compression <= 1.0) {
            return Err(Error::config(format!("compression must be in (0, 1], got {compression}")));
        }
        if !(f_ec >= 1.0 && f_ec.is_finite()) {
            return Err(Error::config(format!("error-correction efficiency must be >= 1, got {f_ec}")));
        }
        Ok(Self {
            testbed,
            compression,
            f_ec,
            monte_carlo,
        })
    }

    /// Sends `symbols` random symbols of `cfg` through the link.
    ///
    /// With `scrambled` the transmitter is unsettled: every pulse gets an
    /// independent random phase and an uncalibrated intensity, while sifting
    /// still compares against the intended encoding.
    pub fn measure(&self, cfg: &ProtocolConfig, symbols: u64, scrambled: bool, rng: &mut ChaCha8Rng) -> Result<Measurement> {
        cfg.validate()?;
        let budget = self.testbed.budget(cfg.clock_rate_hz)?;
        let rx = self.testbed.receiver(cfg.clock_rate_hz, cfg.phase_error_offset)?;
        let channel_loss = budget.channel_loss_db + budget.switch_loss_db;
        let mut stats = SiftedStats::default();
        let mut remaining = symbols;
        while remaining > 0 {
            let len = remaining.min(self.monte_carlo.pattern_symbols as u64);
            let reps = (remaining / len).clamp(1, self.monte_carlo.repetitions);
            let truth = random_pattern(cfg, len as usize, rng)?;
            let sent = if scrambled {
                scramble(&truth, cfg.mu_signal, rng)
            } else {
                truth.clone()
            };
            let arriving = attenuate(&sent, channel_loss)?;
            let levels = interfere(&arriving, &rx, PhaseMode::Sampled { seed: rng.next_u64() })?
                .combine(&monitor_straight(&arriving))?;
            let settings = DetectionSettings {
                bin_duration: cfg.bin_duration(),
                repetitions: reps,
            };
            let hist = simulate_detection(&levels, &budget, settings, rng.next_u64())?;
            stats.merge(&sift(&hist, &truth, cfg)?);
            remaining -= len * reps;
        }
        Ok(Measurement {
            stats,
            symbols,
            elapsed: symbols as f64 / cfg.symbol_rate(),
        })
    }

    fn interval_report(&self, cfg: &ProtocolConfig, span: f64, scrambled: bool, rng: &mut ChaCha8Rng) -> Result<KeyRateReport> {
        let symbols = ((cfg.symbol_rate() * span * self.compression).round() as u64).max(1);
        let m = self.measure(cfg, symbols, scrambled, rng)?;
        let budget = self.testbed.budget(cfg.clock_rate_hz)?;
        let dark_yield = 2.0 * budget.dark_click_probability(cfg.bin_duration());
        report_from_stats(cfg, &m.stats, m.elapsed, self.f_ec, dark_yield)
    }

    /// One report per `report_interval` over `duration` seconds of steady
    /// operation. Timestamps mark interval ends, relative to segment start.
    pub fn run_segment(&self, cfg: &ProtocolConfig, duration: f64, report_interval: f64, seed: u64) -> Result<Vec<KeyRateReport>> {
        self.run_segment_settling(cfg, duration, report_interval, seed, 0.0)
    }

    fn run_segment_settling(
        &self,
        cfg: &ProtocolConfig,
        duration: f64,
        report_interval: f64,
        seed: u64,
        settle: f64,
    ) -> Result<Vec<KeyRateReport>> {
        cfg.validate()?;
        self.testbed.chip(cfg.clock_rate_hz)?;
        if !(duration > 0.0 && report_interval > 0.0 && report_interval <= duration) {
            return Err(Error::config(format!(
                "need 0 < report_interval ({report_interval}) <= duration ({duration})"
            )));
        }
        let intervals = (duration / report_interval - 1e-9).ceil() as u64;
        let mut reports = Vec::with_capacity(intervals as usize);
        for k in 0..intervals {
            let start = k as f64 * report_interval;
            let end = (start + report_interval).min(duration);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let mut report = self.interval_report(cfg, end - start, start < settle, &mut rng)?;
            report.timestamp = end;
            reports.push(report);
        }
        Ok(reports)
    }

    /// Runs segments back to back. Every report interval overlapping the
    /// settle window after a switch is simulated with scrambled modulation.
    pub fn run_schedule(&self, schedule: &SwitchingSchedule) -> Result<RunResult> {
        schedule.validate()?;
        let mut result = RunResult {
            reports: Vec::new(),
            segment_boundaries: Vec::with_capacity(schedule.segments.len()),
        };
        let mut start = 0.0;
        for (i, seg) in schedule.segments.iter().enumerate() {
            result.segment_boundaries.push(start);
            let reports = self.run_segment_settling(
                &seg.config,
                seg.duration_s,
                schedule.report_interval_s,
                segment_seed(schedule.seed, i),
                schedule.settle_time_s,
            )?;
            result.reports.extend(reports.into_iter().map(|mut r| {
                r.timestamp += start;
                r
            }));
            start += seg.duration_s;
        }
        Ok(result)
    }
}

/// Random symbols for one pattern: uniform bits, X basis for BB84 (one-basis
/// collection), classes and COW decoy sequences by their probabilities.
pub fn random_pattern(cfg: &ProtocolConfig, symbols: usize, rng: &mut impl Rng) -> Result<PulseTrain> {
    let bits: Vec<bool> = (0..symbols).map(|_| rng.random()).collect();
    match cfg.protocol {
        Protocol::Bb84 => {
            let classes: Vec<IntensityClass> = (0..symbols)
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < cfg.prob_signal {
                        IntensityClass::Signal
                    } else if u < cfg.prob_signal + cfg.prob_decoy {
                        IntensityClass::Decoy
                    } else {
                        IntensityClass::Vacuum
                    }
                })
                .collect();
            encode_bb84(&bits, &vec![Basis::X; symbols], &classes, cfg)
        }
        Protocol::Dps => encode_dps(&bits, cfg),
        Protocol::Cow => {
            let decoys: Vec<bool> = (0..symbols)
                .map(|_| rng.random_bool(cfg.decoy_sequence_prob))
                .collect();
            encode_cow(&bits, &decoys, cfg)
        }
    }
}

/// Transmitter output before the drive electronics settle.
pub fn scramble(train: &PulseTrain, max_intensity: f64, rng: &mut impl Rng) -> PulseTrain {
    let pulses = train
        .pulses()
        .iter()
        .enumerate()
        .map(|(i, p)| Pulse {
            mean_photon_number: rng.random::<f64>() * max_intensity,
            phase: Phase::new(BlockId(i as u64), rng.random::<f64>() * TAU),
            ..*p
        })
        .collect();
    PulseTrain::from_parts_unchecked(train.clock_rate(), pulses)
}
