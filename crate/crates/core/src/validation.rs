//! Self-checks comparing the simulator against independent closed forms.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Result;
use crate::estimation::decoy_bounds_from_gains;
use crate::keyrate::predict_link;
use crate::optics::{attenuate, interfere, PhaseMode, ReceiverSpec};
use crate::orchestrator::MonteCarloSettings;
use crate::pulse::{
    BlockId, EncodingMeta, IntensityClass, Phase, Protocol, Pulse, PulseRole, PulseTrain,
};

/// Grid of channel transmittances for the decoy checks.
pub const DECOY_ETA_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
/// Background yield used with [`DECOY_ETA_GRID`].
pub const DECOY_Y0: f64 = 1e-5;
/// Misalignment error assumed for the multi-photon model in the decoy checks.
pub const DECOY_E_DETECTOR: f64 = 0.027;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// The quantity compared against `limit`.
    pub deviation: f64,
    pub limit: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, deviation: f64, limit: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: deviation <= limit,
            deviation,
            limit,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} (limit {:.3e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.deviation,
            self.limit,
            self.detail
        )
    }
}

fn pulse(bin: u64, mu: f64, block: u64, angle: f64) -> Pulse {
    Pulse {
        bin_index: bin,
        mean_photon_number: mu,
        phase: Phase::new(BlockId(block), angle),
        meta: EncodingMeta {
            bit: None,
            basis: None,
            intensity_class: None,
            pair_id: None,
            role: PulseRole::Data,
        },
    }
}

/// Worst relative difference between port output and input energy over
/// `pairs` random two-pulse trains with random phases and intensities.
pub fn check_energy_conservation(pairs: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clock = 2.0e9;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let (a, b): (f64, f64) = (rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0);
        let same_block = rng.random_bool(0.5);
        let train = PulseTrain::new(
            clock,
            vec![
                pulse(0, a, 0, rng.random::<f64>() * TAU),
                pulse(1, b, if same_block { 0 } else { 1 }, rng.random::<f64>() * TAU),
            ],
        )?;
        let rx = ReceiverSpec::new(clock, rng.random::<f64>() * TAU);
        let out = interfere(&train, &rx, PhaseMode::Sampled { seed: rng.random() })?;
        let ports: f64 = out.iter().map(|(_, l)| l[0] + l[1]).sum();
        let input = a + b;
        if input > 0.0 {
            worst = worst.max((ports - input).abs() / input);
        }
    }
    Ok(CheckResult::new(
        "energy conservation",
        worst,
        1e-12,
        format!("{pairs} random pulse pairs"),
    ))
}

/// Worst relative difference between `attenuate(attenuate(t, a), b)` and
/// `attenuate(t, a + b)`.
pub fn check_attenuation_additivity(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mu = rng.random::<f64>() + 1e-3;
        let train = PulseTrain::new(2.0e9, vec![pulse(0, mu, 0, 0.0)])?;
        let (x, y) = (rng.random::<f64>() * 30.0, rng.random::<f64>() * 30.0);
        let two = attenuate(&attenuate(&train, x)?, y)?.pulses()[0].mean_photon_number;
        let one = attenuate(&train, x + y)?.pulses()[0].mean_photon_number;
        worst = worst.max((two - one).abs() / one);
    }
    Ok(CheckResult::new(
        "attenuation additivity",
        worst,
        1e-12,
        format!("{trials} random loss pairs up to 60 dB"),
    ))
}

/// Expected statistics of a Poissonian source over a channel of
/// transmittance `eta` with background yield `y0`: (gain, error rate).
pub fn poisson_channel(mu: f64, eta: f64, y0: f64, e_detector: f64) -> (f64, f64) {
    let signal = 1.0 - (-eta * mu).exp();
    let gain = y0 + signal;
    (gain, (0.5 * y0 + e_detector * signal) / gain)
}

/// Decoy bound at one grid point: (y1_lower, true Y1, e1_upper, true e1).
pub fn decoy_point(eta: f64, mu: f64, nu: f64) -> Result<(f64, f64, f64, f64)> {
    let (q_mu, _) = poisson_channel(mu, eta, DECOY_Y0, DECOY_E_DETECTOR);
    let (q_nu, e_nu) = poisson_channel(nu, eta, DECOY_Y0, DECOY_E_DETECTOR);
    let b = decoy_bounds_from_gains(q_mu, q_nu, e_nu, mu, nu, DECOY_Y0)?;
    let y1 = 1.0 - (1.0 - DECOY_Y0) * (1.0 - eta);
    let e1 = (0.5 * DECOY_Y0 + DECOY_E_DETECTOR * eta) / y1;
    Ok((b.y1_lower, y1, b.e1_upper, e1))
}

/// Safety (bound below truth) and tightness over [`DECOY_ETA_GRID`].
pub fn check_decoy_grid(mu: f64, nu: f64) -> Result<Vec<CheckResult>> {
    let mut worst_gap: f64 = 0.0;
    let mut worst_violation: f64 = 0.0;
    for eta in DECOY_ETA_GRID {
        let (y1_lower, y1, e1_upper, e1) = decoy_point(eta, mu, nu)?;
        worst_gap = worst_gap.max((y1 - y1_lower) / y1);
        worst_violation = worst_violation.max((y1_lower - y1).max(0.0)).max((e1 - e1_upper).max(0.0));
    }
    Ok(vec![
        CheckResult::new(
            "decoy bound safety",
            worst_violation,
            0.0,
            format!("y1_lower <= Y1 and e1_upper >= e1 over eta grid, mu={mu}, nu={nu}"),
        ),
        CheckResult::new(
            "decoy bound tightness",
            worst_gap,
            0.05,
            "largest relative gap (Y1 - y1_lower) / Y1".into(),
        ),
    ])
}

/// Binomial z-scores of Monte-Carlo gain and QBER against [`predict_link`],
/// sampled without pattern replay.
pub fn check_mc_vs_analytic(cfg: &RunConfig, protocol: Protocol, clock: f64, symbols: u64, seed: u64) -> Result<Vec<CheckResult>> {
    let mut sim = cfg.simulator()?;
    sim.monte_carlo = MonteCarloSettings {
        repetitions: 1,
        ..sim.monte_carlo
    };
    let pcfg = cfg.protocol_config(protocol, clock);
    let budget = sim.testbed.budget(clock)?;
    let pred = predict_link(&pcfg, &budget, cfg.error_correction_efficiency)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sim.measure(&pcfg, symbols, false, &mut rng)?;
    let tally = m.stats.class(IntensityClass::Signal);

    let n = tally.symbols as f64;
    let gain_mc = tally.gain().unwrap_or(0.0);
    let gain_sigma = (pred.gain * (1.0 - pred.gain) / n).sqrt();
    let d = tally.detections as f64;
    let qber_mc = tally.qber().unwrap_or(0.0);
    let qber_sigma = (pred.qber * (1.0 - pred.qber) / d.max(1.0)).sqrt();
    let z = |mc: f64, exact: f64, sigma: f64| {
        let diff = (mc - exact).abs();
        match (sigma > 0.0, diff > 0.0) {
            (true, _) => diff / sigma,
            (false, true) => f64::INFINITY,
            (false, false) => 0.0,
        }
    };
    let label = format!("{protocol} @ {} GHz", clock / 1e9);
    Ok(vec![
        CheckResult::new(
            format!("MC gain {label}"),
            z(gain_mc, pred.gain, gain_sigma),
            3.0,
            format!("mc {gain_mc:.5e} vs {:.5e}, sigma {gain_sigma:.2e}, {n} symbols", pred.gain),
        ),
        CheckResult::new(
            format!("MC QBER {label}"),
            z(qber_mc, pred.qber, qber_sigma),
            3.0,
            format!("mc {qber_mc:.5} vs {:.5}, sigma {qber_sigma:.2e}, {d} detections", pred.qber),
        ),
    ])
}

/// Everything `qkdsim validate` runs.
pub fn run_oracle_suite(cfg: &RunConfig) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        check_energy_conservation(10_000, cfg.seed)?,
        check_attenuation_additivity(10_000, cfg.seed)?,
    ];
    let bb84 = cfg.protocol_config(Protocol::Bb84, cfg.run.clock_rate_hz);
    out.extend(check_decoy_grid(bb84.mu_signal, bb84.mu_decoy)?);
    let mut stream = 0;
    for protocol in Protocol::ALL {
        for chip in &cfg.link.chips {
            out.extend(check_mc_vs_analytic(
                cfg,
                protocol,
                chip.clock_rate_hz,
                cfg.validate.mc_symbols,
                cfg.seed.wrapping_add(stream),
            )?);
            stream += 1;
        }
    }
    Ok(out)
}
