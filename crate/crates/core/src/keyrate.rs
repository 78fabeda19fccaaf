//! Asymptotic secret-key rates and the closed-form link predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{decoy_bounds_from_gains, DecoyBounds, SiftedStats};
use crate::optics::{click_probability, LinkBudget};
use crate::pulse::{IntensityClass, Protocol, ProtocolConfig};

/// Default error-correction inefficiency.
pub const DEFAULT_F_EC: f64 = 1.16;

/// Error rate above which the DPS collision-probability expression stops
/// being monotone (`dp_c/de = 6 − 38e`).
const DPS_FORMULA_LIMIT: f64 = 6.0 / 38.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    /// Seconds since the start of the run.
    pub timestamp: f64,
    pub protocol: Protocol,
    pub clock_rate: f64,
    /// Detections per second in key-candidate bins.
    pub raw_rate: f64,
    pub sifted_rate: f64,
    pub qber: f64,
    pub visibility: Option<f64>,
    pub skr: f64,
}

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

fn h(p: f64) -> f64 {
    binary_entropy(p.clamp(0.0, 1.0)).unwrap_or(0.0)
}

fn check_f_ec(f_ec: f64) -> Result<()> {
    if f_ec >= 1.0 && f_ec.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("error-correction efficiency must be >= 1, got {f_ec}")))
    }
}

/// Secret bits per signal symbol for decoy-state BB84 (unclamped).
pub fn bb84_secret_fraction(q_mu: f64, e_mu: f64, bounds: &DecoyBounds, f_ec: f64) -> f64 {
    if e_mu >= 0.5 {
        return f64::NEG_INFINITY;
    }
    -q_mu * f_ec * h(e_mu) + bounds.q1 * (1.0 - h(bounds.e1_upper.min(0.5)))
}

/// Decoy-state BB84 key rate in bits/s. Pairs are sent at `clock / 2` and
/// only the signal class contributes key.
pub fn skr_bb84(stats: &SiftedStats, bounds: &DecoyBounds, cfg: &ProtocolConfig, f_ec: f64) -> Result<f64> {
    check_f_ec(f_ec)?;
    let q_mu = stats.gain(IntensityClass::Signal).unwrap_or(0.0);
    let e_mu = stats.qber(IntensityClass::Signal).unwrap_or(0.0);
    let fraction = bb84_secret_fraction(q_mu, e_mu, bounds, f_ec).max(0.0);
    Ok(fraction * cfg.symbol_rate() * cfg.prob_signal)
}

/// Secret bits per sifted DPS bit, clamped at zero.
pub fn dps_secret_fraction(e: f64, f_ec: f64) -> f64 {
    if !(0.0..DPS_FORMULA_LIMIT).contains(&e) {
        return 0.0;
    }
    let collision = 1.0 - e * e - (1.0 - 6.0 * e).powi(2) / 2.0;
    (-collision.log2() - f_ec * h(e)).max(0.0)
}

pub fn skr_dps(sifted_rate: f64, e: f64, f_ec: f64) -> Result<f64> {
    check_f_ec(f_ec)?;
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::ProbabilityOutOfRange(e));
    }
    Ok(sifted_rate * dps_secret_fraction(e, f_ec))
}

/// Secret bits per sifted COW bit, clamped at zero. Negative visibilities
/// carry no coherence evidence and count as zero.
pub fn cow_secret_fraction(qber: f64, visibility: f64, f_ec: f64) -> f64 {
    if !(0.0..0.5).contains(&qber) {
        return 0.0;
    }
    let v = visibility.clamp(0.0, 1.0);
    (1.0 - f_ec * h(qber) - h((1.0 + v) / 2.0)).max(0.0)
}

pub fn skr_cow(sifted_rate: f64, qber: f64, visibility: f64, f_ec: f64) -> Result<f64> {
    check_f_ec(f_ec)?;
    if !(0.0..=1.0).contains(&qber) {
        return Err(Error::ProbabilityOutOfRange(qber));
    }
    Ok(sifted_rate * cow_secret_fraction(qber, visibility, f_ec))
}

/// Key rate from measured statistics over `elapsed` seconds of (real-time
/// equivalent) acquisition.
pub fn report_from_stats(
    cfg: &ProtocolConfig,
    stats: &SiftedStats,
    elapsed: f64,
    f_ec: f64,
    vacuum_yield_fallback: f64,
) -> Result<KeyRateReport> {
    let raw_rate = stats.raw_detections as f64 / elapsed;
    let sifted_rate = stats.sifted_count() as f64 / elapsed;
    let qber = stats.qber(IntensityClass::Signal).unwrap_or(0.0);
    let visibility = stats.visibility();
    let skr = match cfg.protocol {
        Protocol::Bb84 => {
            let y0 = stats
                .gain(IntensityClass::Vacuum)
                .unwrap_or(vacuum_yield_fallback);
            match crate::estimation::decoy_bounds(stats, cfg.mu_signal, cfg.mu_decoy, y0) {
                Ok(bounds) => skr_bb84(stats, &bounds, cfg, f_ec)? * stats_time_scale(stats, cfg, elapsed),
                Err(Error::NoSinglePhotonYield(_)) | Err(Error::EmptyInput(_)) => 0.0,
                Err(e) => return Err(e),
            }
        }
        Protocol::Dps => skr_dps(sifted_rate, qber, f_ec)?,
        Protocol::Cow => skr_cow(sifted_rate, qber, visibility.unwrap_or(0.0), f_ec)?,
    };
    Ok(KeyRateReport {
        timestamp: 0.0,
        protocol: cfg.protocol,
        clock_rate: cfg.clock_rate_hz,
        raw_rate,
        sifted_rate,
        qber,
        visibility,
        skr: skr.min(sifted_rate).max(0.0),
    })
}

/// [`skr_bb84`] assumes nominal symbol rate and class probabilities; rescale
/// to the symbols actually simulated in `elapsed` and their signal share.
fn stats_time_scale(stats: &SiftedStats, cfg: &ProtocolConfig, elapsed: f64) -> f64 {
    let nominal = cfg.symbol_rate() * cfg.prob_signal;
    let actual = stats.class(IntensityClass::Signal).symbols as f64 / elapsed;
    if nominal > 0.0 {
        actual / nominal
    } else {
        0.0
    }
}

/// Expected detection statistics of a link, without sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkPrediction {
    /// Detection probability per key symbol (signal class for BB84, data
    /// symbols for COW).
    pub gain: f64,
    pub qber: f64,
    pub visibility: Option<f64>,
    pub gains_per_class: Vec<(IntensityClass, f64)>,
    pub report: KeyRateReport,
}

/// Click probabilities on the correct and wrong interferometer port for two
/// equal pulses of `mu` (each) entering the chip in phase.
fn port_clicks(mu: f64, cfg: &ProtocolConfig, budget: &LinkBudget, bin: f64) -> Result<(f64, f64)> {
    let at_chip = mu * budget.channel_transmittance() * budget.interferometer_transmittance();
    let c = cfg.phase_error_offset.cos();
    let right = click_probability(at_chip * (1.0 + c) / 2.0, budget, bin)?;
    let wrong = click_probability(at_chip * (1.0 - c) / 2.0, budget, bin)?;
    Ok((right, wrong))
}

/// Closed-form gains, error rates and key rate for `cfg` over `budget`.
///
/// The expectations are exactly those of the Monte-Carlo pipeline: per key
/// bin the two interferometer ports (or the straight detector pair of bins
/// for COW) click independently with Poissonian probabilities.
pub fn predict_link(cfg: &ProtocolConfig, budget: &LinkBudget, f_ec: f64) -> Result<LinkPrediction> {
    cfg.validate()?;
    budget.validate()?;
    check_f_ec(f_ec)?;
    let bin = cfg.bin_duration();
    let symbol_rate = cfg.symbol_rate();

    let (gain, qber, visibility, gains_per_class, raw_rate, sifted_rate, skr) = match cfg.protocol {
        Protocol::Bb84 => {
            let mut per_class = Vec::new();
            let mut errors = Vec::new();
            for class in IntensityClass::ALL {
                let (right, wrong) = port_clicks(cfg.intensity(class), cfg, budget, bin)?;
                per_class.push((class, right + wrong));
                errors.push(wrong / (right + wrong));
            }
            let q_mu = per_class[0].1;
            let (q_nu, e_nu, y0) = (per_class[1].1, errors[1], per_class[2].1);
            let e_mu = errors[0];
            let raw: f64 = per_class
                .iter()
                .map(|(c, g)| cfg.class_probability(*c) * g)
                .sum::<f64>()
                * symbol_rate;
            let sifted = symbol_rate * cfg.prob_signal * q_mu;
            let skr = match decoy_bounds_from_gains(q_mu, q_nu, e_nu, cfg.mu_signal, cfg.mu_decoy, y0) {
                Ok(bounds) => {
                    bb84_secret_fraction(q_mu, e_mu, &bounds, f_ec).max(0.0) * symbol_rate * cfg.prob_signal
                }
                Err(Error::NoSinglePhotonYield(_)) => 0.0,
                Err(e) => return Err(e),
            };
            (q_mu, e_mu, None, per_class, raw, sifted, skr)
        }
        Protocol::Dps => {
            let (right, wrong) = port_clicks(cfg.mu_signal, cfg, budget, bin)?;
            let gain = right + wrong;
            let e = wrong / gain;
            let sifted = cfg.clock_rate_hz * gain;
            let skr = skr_dps(sifted, e, f_ec)?;
            (gain, e, None, vec![(IntensityClass::Signal, gain)], sifted, sifted, skr)
        }
        Protocol::Cow => {
            let to_straight = budget.channel_transmittance() * budget.straight_transmittance();
            let full = click_probability(cfg.mu_signal * to_straight, budget, bin)?;
            let empty = click_probability(cfg.mu_signal * cfg.empty_bin_leakage() * to_straight, budget, bin)?;
            let gain = full + empty;
            let qber = empty / gain;
            let (right, wrong) = port_clicks(cfg.mu_signal, cfg, budget, bin)?;
            let v = (right - wrong) / (right + wrong);
            let data = 1.0 - cfg.decoy_sequence_prob;
            let sifted = symbol_rate * data * gain;
            let raw = symbol_rate * (data * gain + cfg.decoy_sequence_prob * 2.0 * full);
            let skr = skr_cow(sifted, qber, v, f_ec)?;
            (gain, qber, Some(v), vec![(IntensityClass::Signal, gain)], raw, sifted, skr)
        }
    };

    Ok(LinkPrediction {
        gain,
        qber,
        visibility,
        gains_per_class,
        report: KeyRateReport {
            timestamp: 0.0,
            protocol: cfg.protocol,
            clock_rate: cfg.clock_rate_hz,
            raw_rate,
            sifted_rate,
            qber,
            visibility,
            skr: skr.min(sifted_rate),
        },
    })
}
