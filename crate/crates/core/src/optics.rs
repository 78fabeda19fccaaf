//! Channel attenuation, the receiver chip, and photon-counting detectors.
//!
//! Bob's chip splits its input between a straight waveguide (time of
//! arrival) and a one-bin asymmetric Mach-Zehnder interferometer. Both the
//! interference and the straight monitor are computed on loss-free chip
//! input; path losses, the input split and detector efficiency are applied in
//! [`simulate_detection`].

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::TallyHistogram;
use crate::pulse::PulseTrain;
use crate::units::db_to_linear;

/// Split ratio the chip loss figures were measured with.
pub const NOMINAL_SPLIT: f64 = 0.5;

/// Everything between the transmitter output and a detector click, for one
/// receiver chip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub channel_loss_db: f64,
    pub switch_loss_db: f64,
    /// Input-to-output loss of the interferometer circuit, input splitter included.
    pub chip_interferometer_loss_db: f64,
    /// Input-to-output loss of the straight waveguide, input splitter included.
    pub chip_straight_loss_db: f64,
    pub input_split_to_interferometer: f64,
    pub detector_efficiency: f64,
    pub dark_count_rate_hz: f64,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("channel_loss_db", self.channel_loss_db),
            ("switch_loss_db", self.switch_loss_db),
            ("chip_interferometer_loss_db", self.chip_interferometer_loss_db),
            ("chip_straight_loss_db", self.chip_straight_loss_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("input_split_to_interferometer", self.input_split_to_interferometer),
            ("detector_efficiency", self.detector_efficiency),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.input_split_to_interferometer >= 1.0 {
            return Err(Error::config("input_split_to_interferometer must leave light for the straight path"));
        }
        if !(self.dark_count_rate_hz.is_finite() && self.dark_count_rate_hz >= 0.0) {
            return Err(Error::config(format!(
                "dark_count_rate_hz must be finite and >= 0, got {}",
                self.dark_count_rate_hz
            )));
        }
        Ok(())
    }

    /// Transmittance of the quantum channel plus the receiver-select switch.
    pub fn channel_transmittance(&self) -> f64 {
        db_to_linear(-(self.channel_loss_db + self.switch_loss_db))
    }

    pub fn interferometer_transmittance(&self) -> f64 {
        db_to_linear(-self.chip_interferometer_loss_db) * self.input_split_to_interferometer / NOMINAL_SPLIT
    }

    pub fn straight_transmittance(&self) -> f64 {
        db_to_linear(-self.chip_straight_loss_db) * (1.0 - self.input_split_to_interferometer)
            / (1.0 - NOMINAL_SPLIT)
    }

    /// Channel, switch and interferometer chip loss.
    pub fn total_loss_db(&self) -> f64 {
        self.channel_loss_db + self.switch_loss_db + self.chip_interferometer_loss_db
    }

    pub fn dark_click_probability(&self, bin_duration: f64) -> f64 {
        (self.dark_count_rate_hz * bin_duration).min(1.0)
    }

    pub fn path_transmittance(&self, detector: Detector) -> f64 {
        match detector {
            Detector::PortPlus | Detector::PortMinus => self.interferometer_transmittance(),
            Detector::Straight => self.straight_transmittance(),
        }
    }
}

/// One receiver chip as mounted behind the switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverChip {
    pub clock_rate_hz: f64,
    pub interferometer_loss_db: f64,
    pub straight_loss_db: f64,
}

/// The fixed part of the link plus the bank of receiver chips the switch
/// selects from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Testbed {
    pub channel_loss_db: f64,
    pub switch_loss_db: f64,
    pub input_split_to_interferometer: f64,
    pub detector_efficiency: f64,
    pub dark_count_rate_hz: f64,
    pub chips: Vec<ReceiverChip>,
}

impl Default for Testbed {
    fn default() -> Self {
        Self {
            channel_loss_db: 14.0,
            switch_loss_db: 0.5,
            input_split_to_interferometer: 0.5,
            detector_efficiency: 0.44,
            dark_count_rate_hz: 10.0,
            chips: vec![
                ReceiverChip {
                    clock_rate_hz: 2.0e9,
                    interferometer_loss_db: 6.7,
                    straight_loss_db: 3.7,
                },
                ReceiverChip {
                    clock_rate_hz: 2.5e9,
                    interferometer_loss_db: 10.1,
                    straight_loss_db: 7.1,
                },
            ],
        }
    }
}

fn same_clock(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

impl Testbed {
    /// The chip whose delay line matches `clock_rate_hz`.
    pub fn chip(&self, clock_rate_hz: f64) -> Result<&ReceiverChip> {
        self.chips
            .iter()
            .find(|c| same_clock(c.clock_rate_hz, clock_rate_hz))
            .ok_or(Error::UnknownClockRate(clock_rate_hz))
    }

    pub fn budget(&self, clock_rate_hz: f64) -> Result<LinkBudget> {
        let chip = self.chip(clock_rate_hz)?;
        Ok(LinkBudget {
            channel_loss_db: self.channel_loss_db,
            switch_loss_db: self.switch_loss_db,
            chip_interferometer_loss_db: chip.interferometer_loss_db,
            chip_straight_loss_db: chip.straight_loss_db,
            input_split_to_interferometer: self.input_split_to_interferometer,
            detector_efficiency: self.detector_efficiency,
            dark_count_rate_hz: self.dark_count_rate_hz,
        })
    }

    pub fn receiver(&self, clock_rate_hz: f64, phase_offset: f64) -> Result<ReceiverSpec> {
        let chip = self.chip(clock_rate_hz)?;
        Ok(ReceiverSpec::new(chip.clock_rate_hz, phase_offset))
    }

    pub fn with_channel_loss(&self, channel_loss_db: f64) -> Self {
        Self {
            channel_loss_db,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chips.is_empty() {
            return Err(Error::config("at least one receiver chip is required"));
        }
        for (i, chip) in self.chips.iter().enumerate() {
            if !(chip.clock_rate_hz.is_finite() && chip.clock_rate_hz > 0.0) {
                return Err(Error::config(format!("chip {i}: clock rate must be positive")));
            }
            if self.chips[..i].iter().any(|c| same_clock(c.clock_rate_hz, chip.clock_rate_hz)) {
                return Err(Error::config(format!(
                    "two chips share clock rate {} Hz",
                    chip.clock_rate_hz
                )));
            }
            self.budget(chip.clock_rate_hz)?.validate()?;
        }
        Ok(())
    }
}

/// Interferometer geometry. The delay is always one bin of the clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSpec {
    pub clock_rate_hz: f64,
    pub delay_bins: u32,
    pub delay_ps: f64,
    pub interferometer_phase_offset: f64,
}

impl ReceiverSpec {
    pub fn new(clock_rate_hz: f64, interferometer_phase_offset: f64) -> Self {
        Self {
            clock_rate_hz,
            delay_bins: 1,
            delay_ps: 1e12 / clock_rate_hz,
            interferometer_phase_offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Detector {
    PortPlus = 0,
    PortMinus = 1,
    Straight = 2,
}

impl Detector {
    pub const ALL: [Detector; 3] = [Detector::PortPlus, Detector::PortMinus, Detector::Straight];
}

/// How to treat the mutual phase of pulses from different coherence blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseMode {
    /// Replace the interference term by its phase average (zero).
    Averaged,
    /// Draw each random mutual phase uniformly from a seeded stream.
    Sampled { seed: u64 },
}

/// Mean photon numbers arriving at each chip output, per time bin.
#[derive(Clone, Debug, PartialEq)]
pub struct BinIntensities {
    bins: Vec<u64>,
    levels: Vec<[f64; 3]>,
}

impl BinIntensities {
    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn get(&self, bin_index: u64, detector: Detector) -> Option<f64> {
        let i = self.bins.binary_search(&bin_index).ok()?;
        Some(self.levels[i][detector as usize])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, [f64; 3])> + '_ {
        self.bins.iter().copied().zip(self.levels.iter().copied())
    }

    /// Sums two intensity maps over the same bin grid.
    pub fn combine(mut self, other: &BinIntensities) -> Result<Self> {
        if self.bins != other.bins {
            return Err(Error::HistogramMismatch("intensity maps cover different bins".into()));
        }
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            for d in 0..3 {
                a[d] += b[d];
            }
        }
        Ok(self)
    }
}

/// Bins at which a train produces light at Bob: every pulse bin plus the bin
/// after it (the long arm delays by one).
pub fn receiver_bins(train: &PulseTrain) -> Vec<u64> {
    let mut bins = Vec::with_capacity(train.len() + 1);
    for p in train.pulses() {
        if bins.last() != Some(&p.bin_index) {
            bins.push(p.bin_index);
        }
        bins.push(p.bin_index + 1);
    }
    bins
}

/// Multiplies every pulse by `10^(-loss_db/10)`.
pub fn attenuate(train: &PulseTrain, loss_db: f64) -> Result<PulseTrain> {
    if !(loss_db >= 0.0) {
        return Err(Error::NegativeLoss(loss_db));
    }
    let t = db_to_linear(-loss_db);
    Ok(train.map_intensities(|mu| mu * t))
}

/// Port intensities of a balanced one-bin interferometer.
///
/// In bin `t` the short arm carries half of pulse `t` and the long arm half of
/// pulse `t - 1`; `cos_phase` is the cosine of their mutual phase plus the
/// receiver offset.
pub fn interference_ports(short_arm: f64, long_arm: f64, cos_phase: f64) -> (f64, f64) {
    let mean = 0.5 * (short_arm + long_arm);
    let cross = (short_arm * long_arm).sqrt() * cos_phase;
    // (√a − √b)² ≥ 0 guarantees non-negativity up to rounding
    ((mean + cross).max(0.0), (mean - cross).max(0.0))
}

pub fn interfere(train: &PulseTrain, rx: &ReceiverSpec, mode: PhaseMode) -> Result<BinIntensities> {
    if !same_clock(train.clock_rate(), rx.clock_rate_hz) {
        return Err(Error::ClockMismatch {
            train: train.clock_rate(),
            receiver: rx.clock_rate_hz,
        });
    }
    let mut rng = match mode {
        PhaseMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        PhaseMode::Averaged => None,
    };
    let bins = receiver_bins(train);
    let pulses = train.pulses();
    let mut levels = Vec::with_capacity(bins.len());
    let mut next = 0usize;
    for &bin in &bins {
        while next < pulses.len() && pulses[next].bin_index < bin {
            next += 1;
        }
        let short = pulses.get(next).filter(|p| p.bin_index == bin);
        let long = next
            .checked_sub(1)
            .map(|i| &pulses[i])
            .filter(|p| p.bin_index + 1 == bin);
        let (plus, minus) = match (short, long) {
            (Some(s), Some(l)) => {
                let cos_phase = match s.phase.relative_to(&l.phase) {
                    Some(d) => (d + rx.interferometer_phase_offset).cos(),
                    None => match rng.as_mut() {
                        Some(r) => (r.random::<f64>() * TAU).cos(),
                        None => 0.0,
                    },
                };
                interference_ports(0.5 * s.mean_photon_number, 0.5 * l.mean_photon_number, cos_phase)
            }
            (Some(p), None) | (None, Some(p)) => {
                let half = 0.25 * p.mean_photon_number;
                (half, half)
            }
            (None, None) => (0.0, 0.0),
        };
        levels.push([plus, minus, 0.0]);
    }
    Ok(BinIntensities { bins, levels })
}

/// Straight-waveguide intensities on the same bin grid as [`interfere`].
pub fn monitor_straight(train: &PulseTrain) -> BinIntensities {
    let bins = receiver_bins(train);
    let mut levels = vec![[0.0; 3]; bins.len()];
    let mut i = 0;
    for p in train.pulses() {
        while bins[i] != p.bin_index {
            i += 1;
        }
        levels[i][Detector::Straight as usize] = p.mean_photon_number;
    }
    BinIntensities { bins, levels }
}

/// Probability of at least one click in a bin for a detector that sees
/// `intensity` mean photons before its efficiency.
pub fn click_probability(intensity: f64, budget: &LinkBudget, bin_duration: f64) -> Result<f64> {
    if !(intensity >= 0.0) {
        return Err(Error::NegativeIntensity(intensity));
    }
    Ok(click_probability_unchecked(
        intensity,
        budget.detector_efficiency,
        budget.dark_click_probability(bin_duration),
    ))
}

pub(crate) fn click_probability_unchecked(intensity: f64, efficiency: f64, dark: f64) -> f64 {
    -((-dark).ln_1p() - efficiency * intensity).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionSettings {
    pub bin_duration: f64,
    /// How many times the pattern is replayed into the histogram.
    pub repetitions: u64,
}

/// Accumulates clicks per bin and detector over `repetitions` replays of the
/// same intensities. Deterministic for a given seed.
pub fn simulate_detection(
    intensities: &BinIntensities,
    budget: &LinkBudget,
    settings: DetectionSettings,
    seed: u64,
) -> Result<TallyHistogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transmittance = Detector::ALL.map(|d| budget.path_transmittance(d));
    let dark = budget.dark_click_probability(settings.bin_duration);
    let eta = budget.detector_efficiency;
    let reps = settings.repetitions;
    let mut counts = Vec::with_capacity(intensities.len());
    for level in &intensities.levels {
        let mut row = [0u64; 3];
        for d in 0..3 {
            let mu = level[d] * transmittance[d];
            if !(mu >= 0.0) {
                return Err(Error::NegativeIntensity(mu));
            }
            let p = click_probability_unchecked(mu, eta, dark);
            row[d] = match reps {
                0 => 0,
                1 => (rng.random::<f64>() < p) as u64,
                n => Binomial::new(n, p)
                    .map_err(|e| Error::Parse(format!("binomial({n}, {p}): {e}")))?
                    .sample(&mut rng),
            };
        }
        counts.push(row);
    }
    let span = intensities.len().max(1) as f64;
    Ok(TallyHistogram::new(
        intensities.bins.clone(),
        counts,
        reps,
        reps as f64 * span * settings.bin_duration,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{encode_cow, encode_dps, BlockId, EncodingMeta, Phase, ProtocolConfig, Pulse, PulseRole};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    const GHZ2: f64 = 2.0e9;

    fn meta() -> EncodingMeta {
        EncodingMeta {
            bit: None,
            basis: None,
            intensity_class: None,
            pair_id: None,
            role: PulseRole::Data,
        }
    }

    fn two_pulses(mu: f64, phi: f64, same_block: bool) -> PulseTrain {
        let b2 = if same_block { BlockId(0) } else { BlockId(1) };
        PulseTrain::new(
            GHZ2,
            vec![
                Pulse {
                    bin_index: 0,
                    mean_photon_number: mu,
                    phase: Phase::new(BlockId(0), 0.0),
                    meta: meta(),
                },
                Pulse {
                    bin_index: 1,
                    mean_photon_number: mu,
                    phase: Phase::new(b2, phi),
                    meta: meta(),
                },
            ],
        )
        .unwrap()
    }

    fn budget() -> LinkBudget {
        Testbed::default().budget(GHZ2).unwrap()
    }

    fn ports_at(bins: &BinIntensities, bin: u64) -> (f64, f64) {
        (
            bins.get(bin, Detector::PortPlus).unwrap(),
            bins.get(bin, Detector::PortMinus).unwrap(),
        )
    }

    #[test]
    fn attenuation_examples() {
        let cfg = ProtocolConfig::dps(GHZ2);
        let t = encode_dps(&[false], &ProtocolConfig { mu_signal: 0.4, ..cfg.clone() }).unwrap();
        assert_eq!(attenuate(&t, 0.0).unwrap().pulses()[0].mean_photon_number, 0.4);
        assert!((attenuate(&t, 10.0).unwrap().pulses()[0].mean_photon_number - 0.04).abs() < 1e-15);
        let t = encode_dps(&[false], &ProtocolConfig { mu_signal: 0.5, ..cfg }).unwrap();
        let got = attenuate(&t, 14.0).unwrap().pulses()[0].mean_photon_number;
        assert!((got - 0.5 * 10f64.powf(-1.4)).abs() < 1e-15);
        assert!((got - 0.0199).abs() < 1e-4);
        assert!(matches!(attenuate(&t, -1.0), Err(Error::NegativeLoss(_))));
    }

    #[test]
    fn destructive_and_balanced_ports() {
        let rx = ReceiverSpec::new(GHZ2, 0.0);
        let out = interfere(&two_pulses(0.4, PI, true), &rx, PhaseMode::Averaged).unwrap();
        let (p, m) = ports_at(&out, 1);
        assert!(p.abs() < 1e-15);
        assert!((m - 0.4).abs() < 1e-15);

        let out = interfere(&two_pulses(0.4, FRAC_PI_2, true), &rx, PhaseMode::Averaged).unwrap();
        let (p, m) = ports_at(&out, 1);
        assert!((p - 0.2).abs() < 1e-15 && (m - 0.2).abs() < 1e-15);
    }

    #[test]
    fn random_blocks_average_to_balanced() {
        let rx = ReceiverSpec::new(GHZ2, 0.0);
        let out = interfere(&two_pulses(0.4, 0.0, false), &rx, PhaseMode::Averaged).unwrap();
        let (p, m) = ports_at(&out, 1);
        assert!((p - 0.2).abs() < 1e-15 && (m - 0.2).abs() < 1e-15);

        let sampled = interfere(&two_pulses(0.4, 0.0, false), &rx, PhaseMode::Sampled { seed: 3 }).unwrap();
        let (p, m) = ports_at(&sampled, 1);
        assert!((p + m - 0.4).abs() < 1e-15);
    }

    #[test]
    fn edge_bins_see_one_arm() {
        let rx = ReceiverSpec::new(GHZ2, 0.0);
        let out = interfere(&two_pulses(0.4, 0.0, true), &rx, PhaseMode::Averaged).unwrap();
        assert_eq!(out.bins(), &[0, 1, 2]);
        assert_eq!(ports_at(&out, 0), (0.1, 0.1));
        assert_eq!(ports_at(&out, 2), (0.1, 0.1));
    }

    #[test]
    fn clock_mismatch_rejected() {
        let rx = ReceiverSpec::new(2.5e9, 0.0);
        assert!(matches!(
            interfere(&two_pulses(0.4, 0.0, true), &rx, PhaseMode::Averaged),
            Err(Error::ClockMismatch { .. })
        ));
    }

    #[test]
    fn receiver_delay_matches_clock() {
        let tb = Testbed::default();
        assert_eq!(tb.receiver(2.0e9, 0.0).unwrap().delay_ps, 500.0);
        assert_eq!(tb.receiver(2.5e9, 0.0).unwrap().delay_ps, 400.0);
        assert!(matches!(tb.receiver(1.0e9, 0.0), Err(Error::UnknownClockRate(_))));
    }

    #[test]
    fn straight_monitor() {
        let mut cfg = ProtocolConfig::cow(GHZ2);
        cfg.extinction_ratio_db = f64::INFINITY;
        let mu = cfg.mu_signal;
        let s = monitor_straight(&encode_cow(&[false], &[false], &cfg).unwrap());
        assert_eq!(s.get(0, Detector::Straight), Some(mu));
        assert_eq!(s.get(1, Detector::Straight), Some(0.0));
        let s = monitor_straight(&encode_cow(&[false], &[true], &cfg).unwrap());
        assert_eq!(s.get(0, Detector::Straight), Some(mu));
        assert_eq!(s.get(1, Detector::Straight), Some(mu));

        let empty = PulseTrain::new(GHZ2, vec![]).unwrap();
        assert!(monitor_straight(&empty).iter().all(|(_, l)| l == [0.0; 3]));
    }

    #[test]
    fn click_probability_examples() {
        let b = budget();
        let p = click_probability(0.0, &b, 500e-12).unwrap();
        assert!((p - 5e-9).abs() < 1e-20);

        let no_dark = LinkBudget {
            dark_count_rate_hz: 0.0,
            ..b.clone()
        };
        let p = click_probability(1.0, &no_dark, 500e-12).unwrap();
        assert!((p - (1.0 - (-0.44f64).exp())).abs() < 1e-15);
        assert!((p - 0.3560).abs() < 1e-4);
        assert!(click_probability(1e6, &b, 500e-12).unwrap() > 1.0 - 1e-12);
        assert!(matches!(
            click_probability(-1.0, &b, 500e-12),
            Err(Error::NegativeIntensity(_))
        ));
    }

    #[test]
    fn detection_zero_and_determinism() {
        let silent = LinkBudget {
            dark_count_rate_hz: 0.0,
            ..budget()
        };
        let mut cfg = ProtocolConfig::dps(GHZ2);
        cfg.mu_signal = 0.0;
        let t = encode_dps(&[true, false, true], &cfg).unwrap();
        let rx = ReceiverSpec::new(GHZ2, 0.0);
        let bins = interfere(&t, &rx, PhaseMode::Averaged)
            .unwrap()
            .combine(&monitor_straight(&t))
            .unwrap();
        let settings = DetectionSettings {
            bin_duration: 5e-10,
            repetitions: 1000,
        };
        let h = simulate_detection(&bins, &silent, settings, 1).unwrap();
        assert_eq!(h.total_clicks(), 0);

        let t = encode_dps(&[true, false, true], &ProtocolConfig::dps(GHZ2)).unwrap();
        let bins = interfere(&t, &rx, PhaseMode::Averaged).unwrap();
        let a = simulate_detection(&bins, &budget(), settings, 99).unwrap();
        let b = simulate_detection(&bins, &budget(), settings, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn binomial_count_within_three_sigma() {
        // choose an intensity whose click probability is exactly 0.1
        let b = LinkBudget {
            dark_count_rate_hz: 0.0,
            detector_efficiency: 1.0,
            input_split_to_interferometer: 0.5,
            chip_straight_loss_db: 0.0,
            ..budget()
        };
        let mu = -(0.9f64).ln();
        let bins = BinIntensities {
            bins: vec![0],
            levels: vec![[0.0, 0.0, mu]],
        };
        let n = 1_000_000u64;
        let h = simulate_detection(
            &bins,
            &b,
            DetectionSettings {
                bin_duration: 5e-10,
                repetitions: n,
            },
            5,
        )
        .unwrap();
        let count = h.count(0, Detector::Straight).unwrap() as f64;
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((count - 1e5).abs() < 3.0 * sigma, "count {count}");
        // same check through the single-shot Bernoulli path
        let many = BinIntensities {
            bins: (0..n).collect(),
            levels: vec![[0.0, 0.0, mu]; n as usize],
        };
        let h = simulate_detection(
            &many,
            &b,
            DetectionSettings {
                bin_duration: 5e-10,
                repetitions: 1,
            },
            6,
        )
        .unwrap();
        let count = h.clicks(Detector::Straight) as f64;
        assert!((count - 1e5).abs() < 3.0 * (n as f64 * 0.09).sqrt(), "count {count}");
    }

    #[test]
    fn faster_clock_counts_more_at_equal_loss() {
        let tb = Testbed::default();
        let mut equal = tb.clone();
        equal.chips[1].interferometer_loss_db = equal.chips[0].interferometer_loss_db;
        let rate = |clock: f64| {
            let b = equal.budget(clock).unwrap();
            let t = b.channel_transmittance() * b.interferometer_transmittance();
            let p = click_probability(0.2 * t, &b, 1.0 / clock).unwrap();
            clock * p
        };
        assert!(rate(2.5e9) > rate(2.0e9));
    }

    proptest! {
        #[test]
        fn ports_conserve_energy(a in 0.0f64..10.0, b in 0.0f64..10.0, phi in 0.0f64..TAU) {
            let (p, m) = interference_ports(a, b, phi.cos());
            prop_assert!(p >= 0.0 && m >= 0.0);
            prop_assert!((p + m - (a + b)).abs() <= 1e-12 * (1.0 + a + b));
        }

        #[test]
        fn attenuation_is_additive(mu in 0.0f64..5.0, a in 0.0f64..40.0, b in 0.0f64..40.0) {
            let t = two_pulses(mu, 0.0, true);
            let twice = attenuate(&attenuate(&t, a).unwrap(), b).unwrap();
            let once = attenuate(&t, a + b).unwrap();
            for (x, y) in twice.pulses().iter().zip(once.pulses()) {
                prop_assert!((x.mean_photon_number - y.mean_photon_number).abs() <= 1e-12 * y.mean_photon_number.max(1e-300));
                prop_assert_eq!(x.phase, y.phase);
            }
        }

        #[test]
        fn train_energy_is_routed(bits in prop::collection::vec(any::<bool>(), 1..40), offset in 0.0f64..TAU) {
            let t = encode_dps(&bits, &ProtocolConfig::dps(GHZ2)).unwrap();
            let out = interfere(&t, &ReceiverSpec::new(GHZ2, offset), PhaseMode::Averaged).unwrap();
            let total: f64 = out.iter().map(|(_, l)| l[0] + l[1]).sum();
            prop_assert!((total - t.total_mean_photon_number()).abs() < 1e-9);
        }
    }
}
