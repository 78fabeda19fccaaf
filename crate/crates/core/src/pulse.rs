//! Optical pulse trains and the three transmitter encoders.
//!
//! A train is a sequence of point-like pulses, one per time bin of the
//! transmitter clock. Each pulse carries a mean photon number and a phase.
//! Phases are only meaningful relative to other pulses of the same
//! [`BlockId`]: the transmitter laser keeps a definite phase inside a block,
//! while pulses from different blocks have a uniformly random mutual phase
//! (gain-switched emission).

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::db_to_linear;

/// Identifier of a phase-coherent group of pulses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u64);

/// Optical phase of a pulse relative to its coherence block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phase {
    block: BlockId,
    angle: f64,
}

impl Phase {
    /// Builds a phase, canonicalizing `angle` into `[0, 2π)`.
    pub fn new(block: BlockId, angle: f64) -> Self {
        Self {
            block,
            angle: canonical_angle(angle),
        }
    }

    pub fn block(&self) -> BlockId {
        self.block
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Phase of `self` relative to `earlier`, or `None` when the two pulses
    /// belong to different blocks and their mutual phase is random.
    pub fn relative_to(&self, earlier: &Phase) -> Option<f64> {
        (self.block == earlier.block).then(|| canonical_angle(self.angle - earlier.angle))
    }
}

pub fn canonical_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "X" | "x" => Ok(Basis::X),
            "Y" | "y" => Ok(Basis::Y),
            other => Err(Error::UnknownBasis(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [
        IntensityClass::Signal,
        IntensityClass::Decoy,
        IntensityClass::Vacuum,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseRole {
    Data,
    DecoySequence,
    CwFiller,
}

/// What the transmitter meant to send with a pulse. Bob never sees this; the
/// sifting stage uses it as ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodingMeta {
    pub bit: Option<bool>,
    pub basis: Option<Basis>,
    pub intensity_class: Option<IntensityClass>,
    pub pair_id: Option<u64>,
    pub role: PulseRole,
}

impl EncodingMeta {
    fn data() -> Self {
        Self {
            bit: None,
            basis: None,
            intensity_class: None,
            pair_id: None,
            role: PulseRole::Data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pulse {
    pub bin_index: u64,
    pub mean_photon_number: f64,
    pub phase: Phase,
    pub meta: EncodingMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseTrain {
    clock_rate: f64,
    pulses: Vec<Pulse>,
}

impl PulseTrain {
    /// Checks that bins strictly increase and intensities are non-negative.
    pub fn new(clock_rate: f64, pulses: Vec<Pulse>) -> Result<Self> {
        if !(clock_rate.is_finite() && clock_rate > 0.0) {
            return Err(Error::config(format!("clock rate must be positive, got {clock_rate}")));
        }
        for p in &pulses {
            if !(p.mean_photon_number >= 0.0) {
                return Err(Error::NegativeIntensity(p.mean_photon_number));
            }
        }
        if pulses.windows(2).any(|w| w[1].bin_index <= w[0].bin_index) {
            return Err(Error::config("pulse bin indices must be strictly increasing"));
        }
        Ok(Self { clock_rate, pulses })
    }

    pub(crate) fn from_parts_unchecked(clock_rate: f64, pulses: Vec<Pulse>) -> Self {
        Self { clock_rate, pulses }
    }

    pub fn clock_rate(&self) -> f64 {
        self.clock_rate
    }

    pub fn bin_duration(&self) -> f64 {
        1.0 / self.clock_rate
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn total_mean_photon_number(&self) -> f64 {
        self.pulses.iter().map(|p| p.mean_photon_number).sum()
    }

    pub(crate) fn map_intensities(&self, f: impl Fn(f64) -> f64) -> Self {
        let pulses = self
            .pulses
            .iter()
            .map(|p| Pulse {
                mean_photon_number: f(p.mean_photon_number),
                ..*p
            })
            .collect();
        Self {
            clock_rate: self.clock_rate,
            pulses,
        }
    }

    /// Recovers `(bits, bases, classes)` from a BB84 train.
    pub fn decode_bb84(&self) -> Result<(Vec<bool>, Vec<Basis>, Vec<IntensityClass>)> {
        if !self.pulses.len().is_multiple_of(2) {
            return Err(Error::HistogramMismatch("BB84 train has an odd pulse count".into()));
        }
        let mut bits = Vec::with_capacity(self.pulses.len() / 2);
        let mut bases = Vec::with_capacity(bits.capacity());
        let mut classes = Vec::with_capacity(bits.capacity());
        for pair in self.pulses.chunks_exact(2) {
            let m = pair[0].meta;
            if pair[1].meta != m || m.pair_id.is_none() {
                return Err(Error::HistogramMismatch("BB84 pair metadata disagrees".into()));
            }
            match (m.bit, m.basis, m.intensity_class) {
                (Some(b), Some(basis), Some(c)) => {
                    bits.push(b);
                    bases.push(basis);
                    classes.push(c);
                }
                _ => return Err(Error::HistogramMismatch("BB84 pulse missing metadata".into())),
            }
        }
        Ok((bits, bases, classes))
    }

    /// Recovers the differential bits from a DPS train.
    pub fn decode_dps(&self) -> Result<Vec<bool>> {
        self.pulses
            .iter()
            .skip(1)
            .map(|p| {
                p.meta
                    .bit
                    .ok_or_else(|| Error::HistogramMismatch("DPS pulse missing bit".into()))
            })
            .collect()
    }

    /// Recovers `(bits, decoy_flags)` from a COW train. Decoy symbols decode
    /// as bit `false`.
    pub fn decode_cow(&self) -> Result<(Vec<bool>, Vec<bool>)> {
        if !self.pulses.len().is_multiple_of(2) {
            return Err(Error::HistogramMismatch("COW train has an odd pulse count".into()));
        }
        let mut bits = Vec::with_capacity(self.pulses.len() / 2);
        let mut decoys = Vec::with_capacity(bits.capacity());
        for pair in self.pulses.chunks_exact(2) {
            match (pair[0].meta.role, pair[0].meta.bit) {
                (PulseRole::DecoySequence, _) => {
                    bits.push(false);
                    decoys.push(true);
                }
                (PulseRole::Data, Some(b)) => {
                    bits.push(b);
                    decoys.push(false);
                }
                _ => return Err(Error::HistogramMismatch("COW pulse missing metadata".into())),
            }
        }
        Ok((bits, decoys))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[serde(alias = "BB84")]
    Bb84,
    #[serde(alias = "DPS")]
    Dps,
    #[serde(alias = "COW")]
    Cow,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Bb84, Protocol::Dps, Protocol::Cow];

    /// Time bins occupied by one logical symbol.
    pub fn bins_per_symbol(self) -> u64 {
        match self {
            Protocol::Bb84 | Protocol::Cow => 2,
            Protocol::Dps => 1,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Bb84 => "BB84",
            Protocol::Dps => "DPS",
            Protocol::Cow => "COW",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bb84" => Ok(Protocol::Bb84),
            "dps" => Ok(Protocol::Dps),
            "cow" => Ok(Protocol::Cow),
            other => Err(Error::Parse(format!("unknown protocol {other:?}"))),
        }
    }
}

/// One operating regime of the transmitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub clock_rate_hz: f64,
    pub mu_signal: f64,
    /// BB84 only.
    pub mu_decoy: f64,
    pub prob_signal: f64,
    pub prob_decoy: f64,
    pub prob_vacuum: f64,
    /// COW only.
    pub decoy_sequence_prob: f64,
    /// Receiver interferometer misalignment, radians.
    pub phase_error_offset: f64,
    /// COW occupied-to-empty bin power ratio.
    pub extinction_ratio_db: f64,
}

/// Offset giving (1 - cos φ)/2 ≈ 2.7 % on the interference outputs.
pub const DEFAULT_PHASE_OFFSET: f64 = 0.329;
/// Leakage giving ≈ 0.7 % time-bin error for COW.
pub const DEFAULT_EXTINCTION_DB: f64 = 21.5;

impl ProtocolConfig {
    pub fn new(protocol: Protocol, clock_rate_hz: f64) -> Self {
        let mu_signal = match protocol {
            Protocol::Bb84 => 0.4,
            Protocol::Dps => 0.2,
            Protocol::Cow => 0.5,
        };
        Self {
            protocol,
            clock_rate_hz,
            mu_signal,
            mu_decoy: 0.1,
            prob_signal: 0.8,
            prob_decoy: 0.1,
            prob_vacuum: 0.1,
            decoy_sequence_prob: 0.1,
            phase_error_offset: DEFAULT_PHASE_OFFSET,
            extinction_ratio_db: DEFAULT_EXTINCTION_DB,
        }
    }

    pub fn bb84(clock_rate_hz: f64) -> Self {
        Self::new(Protocol::Bb84, clock_rate_hz)
    }

    pub fn dps(clock_rate_hz: f64) -> Self {
        Self::new(Protocol::Dps, clock_rate_hz)
    }

    pub fn cow(clock_rate_hz: f64) -> Self {
        Self::new(Protocol::Cow, clock_rate_hz)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        if !(self.clock_rate_hz.is_finite() && self.clock_rate_hz > 0.0) {
            return Err(Error::config(format!(
                "clock_rate_hz must be positive, got {}",
                self.clock_rate_hz
            )));
        }
        finite_nonneg("mu_signal", self.mu_signal)?;
        finite_nonneg("mu_decoy", self.mu_decoy)?;
        if !self.phase_error_offset.is_finite() {
            return Err(Error::config("phase_error_offset must be finite"));
        }
        if !(self.extinction_ratio_db >= 0.0) {
            return Err(Error::config(format!(
                "extinction_ratio_db must be >= 0, got {}",
                self.extinction_ratio_db
            )));
        }
        match self.protocol {
            Protocol::Bb84 => {
                for (name, p) in [
                    ("prob_signal", self.prob_signal),
                    ("prob_decoy", self.prob_decoy),
                    ("prob_vacuum", self.prob_vacuum),
                ] {
                    check_probability(name, p)?;
                }
                let sum = self.prob_signal + self.prob_decoy + self.prob_vacuum;
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("class probabilities sum to {sum}, expected 1")));
                }
                if !(self.mu_decoy > 0.0 && self.mu_decoy < self.mu_signal) {
                    return Err(Error::DecoyPrecondition {
                        mu: self.mu_signal,
                        nu: self.mu_decoy,
                    });
                }
            }
            Protocol::Cow => check_probability("decoy_sequence_prob", self.decoy_sequence_prob)?,
            Protocol::Dps => {}
        }
        Ok(())
    }

    pub fn symbol_rate(&self) -> f64 {
        self.clock_rate_hz / self.protocol.bins_per_symbol() as f64
    }

    pub fn bin_duration(&self) -> f64 {
        1.0 / self.clock_rate_hz
    }

    pub fn intensity(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.mu_signal,
            IntensityClass::Decoy => self.mu_decoy,
            IntensityClass::Vacuum => 0.0,
        }
    }

    pub fn class_probability(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.prob_signal,
            IntensityClass::Decoy => self.prob_decoy,
            IntensityClass::Vacuum => self.prob_vacuum,
        }
    }

    /// Power fraction leaking into a nominally empty COW bin.
    pub fn empty_bin_leakage(&self) -> f64 {
        if self.extinction_ratio_db.is_infinite() {
            0.0
        } else {
            db_to_linear(-self.extinction_ratio_db)
        }
    }

    fn expect(&self, protocol: Protocol) -> Result<()> {
        if self.protocol == protocol {
            Ok(())
        } else {
            Err(Error::WrongProtocol {
                expected: protocol,
                got: self.protocol,
            })
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} = {p} is not a probability")))
    }
}

/// Time-bin BB84: each symbol is a pulse pair whose intra-pair phase
/// difference carries the bit, `{0, π}` in X and `{π/2, 3π/2}` in Y. Every pair
/// is its own coherence block.
pub fn encode_bb84(
    bits: &[bool],
    bases: &[Basis],
    classes: &[IntensityClass],
    cfg: &ProtocolConfig,
) -> Result<PulseTrain> {
    cfg.expect(Protocol::Bb84)?;
    if bits.len() != bases.len() {
        return Err(Error::LengthMismatch {
            what: "bits/bases",
            left: bits.len(),
            right: bases.len(),
        });
    }
    if bits.len() != classes.len() {
        return Err(Error::LengthMismatch {
            what: "bits/intensities",
            left: bits.len(),
            right: classes.len(),
        });
    }
    let mut pulses = Vec::with_capacity(2 * bits.len());
    for (k, ((&bit, &basis), &class)) in bits.iter().zip(bases).zip(classes).enumerate() {
        let k = k as u64;
        let block = BlockId(k);
        let difference = match (basis, bit) {
            (Basis::X, false) => 0.0,
            (Basis::X, true) => PI,
            (Basis::Y, false) => FRAC_PI_2,
            (Basis::Y, true) => 3.0 * FRAC_PI_2,
        };
        let meta = EncodingMeta {
            bit: Some(bit),
            basis: Some(basis),
            intensity_class: Some(class),
            pair_id: Some(k),
            role: PulseRole::Data,
        };
        let mu = cfg.intensity(class);
        pulses.push(Pulse {
            bin_index: 2 * k,
            mean_photon_number: mu,
            phase: Phase::new(block, 0.0),
            meta,
        });
        pulses.push(Pulse {
            bin_index: 2 * k + 1,
            mean_photon_number: mu,
            phase: Phase::new(block, difference),
            meta,
        });
    }
    Ok(PulseTrain::from_parts_unchecked(cfg.clock_rate_hz, pulses))
}

/// DPS: N bits become N + 1 equal pulses from one coherent block, bit `k`
/// being the phase step (0 or π) from pulse `k` to pulse `k + 1`.
pub fn encode_dps(bits: &[bool], cfg: &ProtocolConfig) -> Result<PulseTrain> {
    cfg.expect(Protocol::Dps)?;
    if bits.is_empty() {
        return Err(Error::EmptyInput("DPS bit list"));
    }
    let block = BlockId(0);
    let mut pulses = Vec::with_capacity(bits.len() + 1);
    pulses.push(Pulse {
        bin_index: 0,
        mean_photon_number: cfg.mu_signal,
        phase: Phase::new(block, 0.0),
        meta: EncodingMeta::data(),
    });
    let mut angle = 0.0;
    for (k, &bit) in bits.iter().enumerate() {
        if bit {
            angle = canonical_angle(angle + PI);
        }
        pulses.push(Pulse {
            bin_index: k as u64 + 1,
            mean_photon_number: cfg.mu_signal,
            phase: Phase::new(block, angle),
            meta: EncodingMeta {
                bit: Some(bit),
                ..EncodingMeta::data()
            },
        });
    }
    Ok(PulseTrain::from_parts_unchecked(cfg.clock_rate_hz, pulses))
}

/// COW: bit 0 occupies the early bin of its pair, bit 1 the late bin; a decoy
/// sequence occupies both. Empty bins carry extinction-limited leakage.
pub fn encode_cow(bits: &[bool], decoy_flags: &[bool], cfg: &ProtocolConfig) -> Result<PulseTrain> {
    cfg.expect(Protocol::Cow)?;
    if bits.len() != decoy_flags.len() {
        return Err(Error::LengthMismatch {
            what: "bits/decoy flags",
            left: bits.len(),
            right: decoy_flags.len(),
        });
    }
    let full = cfg.mu_signal;
    let empty = cfg.mu_signal * cfg.empty_bin_leakage();
    let block = BlockId(0);
    let mut pulses = Vec::with_capacity(2 * bits.len());
    for (k, (&bit, &decoy)) in bits.iter().zip(decoy_flags).enumerate() {
        let k = k as u64;
        let (early, late, meta) = if decoy {
            (
                full,
                full,
                EncodingMeta {
                    pair_id: Some(k),
                    role: PulseRole::DecoySequence,
                    ..EncodingMeta::data()
                },
            )
        } else {
            let meta = EncodingMeta {
                bit: Some(bit),
                pair_id: Some(k),
                ..EncodingMeta::data()
            };
            if bit {
                (empty, full, meta)
            } else {
                (full, empty, meta)
            }
        };
        for (offset, mu) in [(0, early), (1, late)] {
            pulses.push(Pulse {
                bin_index: 2 * k + offset,
                mean_photon_number: mu,
                phase: Phase::new(block, 0.0),
                meta,
            });
        }
    }
    Ok(PulseTrain::from_parts_unchecked(cfg.clock_rate_hz, pulses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GHZ2: f64 = 2.0e9;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn relative_phase(train: &PulseTrain, later: usize) -> f64 {
        let p = train.pulses();
        p[later].phase.relative_to(&p[later - 1].phase).unwrap()
    }

    #[test]
    fn phase_is_canonicalized() {
        let p = Phase::new(BlockId(0), -FRAC_PI_2);
        assert!(close(p.angle(), 3.0 * FRAC_PI_2));
        assert!(close(Phase::new(BlockId(0), 5.0 * PI).angle(), PI));
        assert_eq!(Phase::new(BlockId(0), -1e-300).angle(), 0.0);
        assert!(Phase::new(BlockId(1), 0.0).relative_to(&Phase::new(BlockId(2), 0.0)).is_none());
    }

    #[test]
    fn bb84_x_zero_signal() {
        let cfg = ProtocolConfig::bb84(GHZ2);
        let t = encode_bb84(&[false], &[Basis::X], &[IntensityClass::Signal], &cfg).unwrap();
        assert_eq!(t.len(), 2);
        assert!(close(relative_phase(&t, 1), 0.0));
        assert!(t.pulses().iter().all(|p| p.mean_photon_number == cfg.mu_signal));
    }

    #[test]
    fn bb84_y_one_is_three_half_pi() {
        let cfg = ProtocolConfig::bb84(GHZ2);
        let t = encode_bb84(&[true], &[Basis::Y], &[IntensityClass::Signal], &cfg).unwrap();
        assert!(close(relative_phase(&t, 1), 3.0 * FRAC_PI_2));
        let t = encode_bb84(&[true], &[Basis::X], &[IntensityClass::Decoy], &cfg).unwrap();
        assert!(close(relative_phase(&t, 1), PI));
        assert!(t.pulses().iter().all(|p| p.mean_photon_number == cfg.mu_decoy));
    }

    #[test]
    fn bb84_vacuum_is_dark() {
        let cfg = ProtocolConfig::bb84(GHZ2);
        for bit in [false, true] {
            let t = encode_bb84(&[bit], &[Basis::Y], &[IntensityClass::Vacuum], &cfg).unwrap();
            assert!(t.pulses().iter().all(|p| p.mean_photon_number == 0.0));
        }
    }

    #[test]
    fn bb84_pairs_are_separate_blocks() {
        let cfg = ProtocolConfig::bb84(GHZ2);
        let n = 5;
        let t = encode_bb84(
            &vec![false; n],
            &vec![Basis::X; n],
            &vec![IntensityClass::Signal; n],
            &cfg,
        )
        .unwrap();
        for w in t.pulses().chunks(2) {
            assert_eq!(w[0].phase.block(), w[1].phase.block());
        }
        for k in 1..n {
            let p = &t.pulses()[2 * k];
            let prev = &t.pulses()[2 * k - 1];
            assert!(p.phase.relative_to(&prev.phase).is_none());
        }
    }

    #[test]
    fn bb84_errors() {
        let cfg = ProtocolConfig::bb84(GHZ2);
        assert!(matches!(
            encode_bb84(&[true, false], &[Basis::X], &[IntensityClass::Signal; 2], &cfg),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            encode_bb84(&[true], &[Basis::X], &[], &cfg),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!("Z".parse::<Basis>(), Err(Error::UnknownBasis(_))));
        assert!(matches!(
            encode_bb84(&[true], &[Basis::X], &[IntensityClass::Signal], &ProtocolConfig::dps(GHZ2)),
            Err(Error::WrongProtocol { .. })
        ));
    }

    #[test]
    fn dps_all_zero_bits_share_phase() {
        let cfg = ProtocolConfig::dps(GHZ2);
        let t = encode_dps(&[false, false, false], &cfg).unwrap();
        assert_eq!(t.len(), 4);
        let first = t.pulses()[0].phase;
        assert!(t.pulses().iter().all(|p| p.phase == first));
    }

    #[test]
    fn dps_single_one_is_pi_step() {
        let t = encode_dps(&[true], &ProtocolConfig::dps(GHZ2)).unwrap();
        assert_eq!(t.len(), 2);
        assert!(close(relative_phase(&t, 1), PI));
    }

    #[test]
    fn dps_phases_follow_cumulative_sum() {
        // oracle: phase_k = π · Σ_{j<k} bit_j  (mod 2π)
        let bits = [false, true, true];
        let mut expected = vec![0.0];
        let mut acc = 0u32;
        for &b in &bits {
            acc += b as u32;
            expected.push((acc % 2) as f64 * PI);
        }
        assert_eq!(expected, vec![0.0, 0.0, PI, 0.0]);
        let t = encode_dps(&bits, &ProtocolConfig::dps(GHZ2)).unwrap();
        for (p, e) in t.pulses().iter().zip(&expected) {
            assert!(close(p.phase.angle(), *e));
        }
    }

    #[test]
    fn dps_rejects_empty() {
        assert!(matches!(
            encode_dps(&[], &ProtocolConfig::dps(GHZ2)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn cow_bins() {
        let mut cfg = ProtocolConfig::cow(GHZ2);
        cfg.extinction_ratio_db = f64::INFINITY;
        let mu = cfg.mu_signal;
        let t = encode_cow(&[false], &[false], &cfg).unwrap();
        let m: Vec<f64> = t.pulses().iter().map(|p| p.mean_photon_number).collect();
        assert_eq!(m, vec![mu, 0.0]);

        let t = encode_cow(&[true], &[true], &cfg).unwrap();
        let m: Vec<f64> = t.pulses().iter().map(|p| p.mean_photon_number).collect();
        assert_eq!(m, vec![mu, mu]);

        cfg.extinction_ratio_db = 20.0;
        let t = encode_cow(&[true], &[false], &cfg).unwrap();
        let m: Vec<f64> = t.pulses().iter().map(|p| p.mean_photon_number).collect();
        assert!(close(m[0], 0.01 * mu));
        assert!(close(m[1], mu));

        assert!(matches!(
            encode_cow(&[true], &[], &cfg),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        for p in Protocol::ALL {
            ProtocolConfig::new(p, GHZ2).validate().unwrap();
        }
        let mut c = ProtocolConfig::bb84(GHZ2);
        c.mu_decoy = 0.5;
        assert!(matches!(c.validate(), Err(Error::DecoyPrecondition { .. })));
        let mut c = ProtocolConfig::bb84(GHZ2);
        c.prob_vacuum = 0.3;
        assert!(c.validate().is_err());
        let mut c = ProtocolConfig::cow(GHZ2);
        c.mu_signal = -0.1;
        assert!(c.validate().is_err());
    }

    fn class_strategy() -> impl Strategy<Value = IntensityClass> {
        prop_oneof![
            Just(IntensityClass::Signal),
            Just(IntensityClass::Decoy),
            Just(IntensityClass::Vacuum)
        ]
    }

    fn basis_strategy() -> impl Strategy<Value = Basis> {
        prop_oneof![Just(Basis::X), Just(Basis::Y)]
    }

    proptest! {
        #[test]
        fn bb84_round_trip_and_energy(
            symbols in prop::collection::vec((any::<bool>(), basis_strategy(), class_strategy()), 1..64)
        ) {
            let cfg = ProtocolConfig::bb84(GHZ2);
            let bits: Vec<bool> = symbols.iter().map(|s| s.0).collect();
            let bases: Vec<Basis> = symbols.iter().map(|s| s.1).collect();
            let classes: Vec<IntensityClass> = symbols.iter().map(|s| s.2).collect();
            let t = encode_bb84(&bits, &bases, &classes, &cfg).unwrap();
            let (b2, ba2, c2) = t.decode_bb84().unwrap();
            prop_assert_eq!(&b2, &bits);
            prop_assert_eq!(&ba2, &bases);
            prop_assert_eq!(&c2, &classes);

            let mut seen = std::collections::HashMap::new();
            for p in t.pulses() {
                *seen.entry(p.meta.pair_id.unwrap()).or_insert(0) += 1;
            }
            prop_assert!(seen.values().all(|&n| n == 2));
            let blocks: std::collections::HashSet<_> = t.pulses().iter().map(|p| p.phase.block()).collect();
            prop_assert_eq!(blocks.len(), bits.len());

            let expected: f64 = classes.iter().map(|&c| 2.0 * cfg.intensity(c)).sum();
            prop_assert!((t.total_mean_photon_number() - expected).abs() < 1e-9);
        }

        #[test]
        fn dps_differences_and_energy(bits in prop::collection::vec(any::<bool>(), 1..128)) {
            let cfg = ProtocolConfig::dps(GHZ2);
            let t = encode_dps(&bits, &cfg).unwrap();
            prop_assert_eq!(t.decode_dps().unwrap(), bits.clone());
            for (k, &bit) in bits.iter().enumerate() {
                let d = relative_phase(&t, k + 1);
                let want = if bit { PI } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-9);
            }
            let expected = (bits.len() + 1) as f64 * cfg.mu_signal;
            prop_assert!((t.total_mean_photon_number() - expected).abs() < 1e-9);
        }

        #[test]
        fn cow_round_trip_and_energy(symbols in prop::collection::vec((any::<bool>(), any::<bool>()), 1..64)) {
            let cfg = ProtocolConfig::cow(GHZ2);
            let bits: Vec<bool> = symbols.iter().map(|s| s.0).collect();
            let decoys: Vec<bool> = symbols.iter().map(|s| s.1).collect();
            let t = encode_cow(&bits, &decoys, &cfg).unwrap();
            let (b2, d2) = t.decode_cow().unwrap();
            prop_assert_eq!(&d2, &decoys);
            for k in 0..bits.len() {
                if !decoys[k] {
                    prop_assert_eq!(b2[k], bits[k]);
                }
            }
            let n_decoy = decoys.iter().filter(|&&d| d).count() as f64;
            let n_data = bits.len() as f64 - n_decoy;
            let expected = cfg.mu_signal * (2.0 * n_decoy + n_data * (1.0 + cfg.empty_bin_leakage()));
            prop_assert!((t.total_mean_photon_number() - expected).abs() < 1e-9);
        }
    }
}
