//! Sifting, error-rate and visibility estimation, and decoy-state bounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{receiver_bins, Detector};
use crate::pulse::{Basis, IntensityClass, Protocol, ProtocolConfig, PulseTrain};

/// Click counts per (bin, detector) accumulated over repeated replays of one
/// pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct TallyHistogram {
    bins: Vec<u64>,
    counts: Vec<[u64; 3]>,
    total_repetitions: u64,
    duration: f64,
}

impl TallyHistogram {
    pub fn new(bins: Vec<u64>, counts: Vec<[u64; 3]>, total_repetitions: u64, duration: f64) -> Self {
        debug_assert_eq!(bins.len(), counts.len());
        Self {
            bins,
            counts,
            total_repetitions,
            duration,
        }
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn total_repetitions(&self) -> u64 {
        self.total_repetitions
    }

    /// Acquisition time covered by the histogram, seconds.
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn count(&self, bin_index: u64, detector: Detector) -> Option<u64> {
        let i = self.bins.binary_search(&bin_index).ok()?;
        Some(self.counts[i][detector as usize])
    }

    pub fn clicks(&self, detector: Detector) -> u64 {
        self.counts.iter().map(|c| c[detector as usize]).sum()
    }

    pub fn total_clicks(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row(&self, bin_index: u64) -> Result<[u64; 3]> {
        self.bins
            .binary_search(&bin_index)
            .map(|i| self.counts[i])
            .map_err(|_| Error::HistogramMismatch(format!("no histogram bin {bin_index}")))
    }
}

/// Per intensity class: symbols sent, sifted detections and erroneous ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTally {
    pub symbols: u64,
    pub detections: u64,
    pub errors: u64,
}

impl ClassTally {
    pub fn gain(&self) -> Option<f64> {
        (self.symbols > 0).then(|| self.detections as f64 / self.symbols as f64)
    }

    pub fn qber(&self) -> Option<f64> {
        (self.detections > 0).then(|| self.errors as f64 / self.detections as f64)
    }

    fn add(&mut self, other: &ClassTally) {
        self.symbols += other.symbols;
        self.detections += other.detections;
        self.errors += other.errors;
    }
}

/// Clicks on the two interferometer outputs in bins where the interfering
/// pulses should be in phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorTally {
    pub constructive: u64,
    pub destructive: u64,
}

impl MonitorTally {
    pub fn visibility(&self) -> Option<f64> {
        let total = self.constructive + self.destructive;
        (total > 0).then(|| (self.constructive as f64 - self.destructive as f64) / total as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftedStats {
    pub classes: BTreeMap<IntensityClass, ClassTally>,
    pub monitor: Option<MonitorTally>,
    /// Detections in any key-candidate bin before class or basis sifting.
    pub raw_detections: u64,
    /// Symbols covered, all classes and bases.
    pub symbols: u64,
}

impl SiftedStats {
    pub fn class(&self, class: IntensityClass) -> ClassTally {
        self.classes.get(&class).copied().unwrap_or_default()
    }

    /// Detections kept for the key (signal class).
    pub fn sifted_count(&self) -> u64 {
        self.class(IntensityClass::Signal).detections
    }

    pub fn error_count(&self) -> u64 {
        self.class(IntensityClass::Signal).errors
    }

    pub fn gain(&self, class: IntensityClass) -> Option<f64> {
        self.classes.get(&class).and_then(ClassTally::gain)
    }

    pub fn qber(&self, class: IntensityClass) -> Option<f64> {
        self.classes.get(&class).and_then(ClassTally::qber)
    }

    pub fn gain_per_class(&self) -> BTreeMap<IntensityClass, f64> {
        self.classes
            .iter()
            .filter_map(|(c, t)| t.gain().map(|g| (*c, g)))
            .collect()
    }

    pub fn qber_per_class(&self) -> BTreeMap<IntensityClass, f64> {
        self.classes
            .iter()
            .filter_map(|(c, t)| t.qber().map(|q| (*c, q)))
            .collect()
    }

    pub fn visibility(&self) -> Option<f64> {
        self.monitor.as_ref().and_then(MonitorTally::visibility)
    }

    pub fn merge(&mut self, other: &SiftedStats) {
        for (c, t) in &other.classes {
            self.classes.entry(*c).or_default().add(t);
        }
        if let Some(m) = other.monitor {
            let mine = self.monitor.get_or_insert_with(MonitorTally::default);
            mine.constructive += m.constructive;
            mine.destructive += m.destructive;
        }
        self.raw_detections += other.raw_detections;
        self.symbols += other.symbols;
    }

    fn tally(&mut self, class: IntensityClass) -> &mut ClassTally {
        self.classes.entry(class).or_default()
    }
}

/// Compares Bob's histogram with what Alice encoded.
///
/// * BB84: the second bin of each pair is where the pair interferes; the
///   receiver measures X, so Y symbols are discarded.
/// * DPS: every bin after the first compares neighbours; port + means bit 0.
/// * COW: the straight detector's arrival bin carries the key; bins where two
///   nominally occupied pulses interfere give the visibility.
pub fn sift(hist: &TallyHistogram, truth: &PulseTrain, cfg: &ProtocolConfig) -> Result<SiftedStats> {
    if hist.bins.len() != hist.counts.len() {
        return Err(Error::HistogramMismatch("bin and count lengths differ".into()));
    }
    let expected = receiver_bins(truth);
    if hist.bins != expected {
        return Err(Error::HistogramMismatch(format!(
            "histogram has {} bins, train produces {}",
            hist.bins.len(),
            expected.len()
        )));
    }
    if hist.counts.iter().flatten().any(|&c| c > hist.total_repetitions) {
        return Err(Error::HistogramMismatch("count exceeds repetitions".into()));
    }
    let reps = hist.total_repetitions;
    let mut stats = SiftedStats::default();
    let plus = Detector::PortPlus as usize;
    let minus = Detector::PortMinus as usize;
    let straight = Detector::Straight as usize;
    let pulses = truth.pulses();

    match cfg.protocol {
        Protocol::Bb84 => {
            let (bits, bases, classes) = truth.decode_bb84()?;
            for (k, pair) in pulses.chunks_exact(2).enumerate() {
                let row = hist.row(pair[1].bin_index)?;
                let clicks = row[plus] + row[minus];
                stats.raw_detections += clicks;
                stats.symbols += reps;
                if bases[k] != Basis::X {
                    continue;
                }
                let wrong = if bits[k] { row[plus] } else { row[minus] };
                let t = stats.tally(classes[k]);
                t.symbols += reps;
                t.detections += clicks;
                t.errors += wrong;
            }
        }
        Protocol::Dps => {
            let bits = truth.decode_dps()?;
            for (p, &bit) in pulses.iter().skip(1).zip(&bits) {
                let row = hist.row(p.bin_index)?;
                let clicks = row[plus] + row[minus];
                stats.raw_detections += clicks;
                stats.symbols += reps;
                let t = stats.tally(IntensityClass::Signal);
                t.symbols += reps;
                t.detections += clicks;
                t.errors += if bit { row[plus] } else { row[minus] };
            }
        }
        Protocol::Cow => {
            let (bits, decoys) = truth.decode_cow()?;
            let mut occupied = Vec::with_capacity(pulses.len());
            for (k, pair) in pulses.chunks_exact(2).enumerate() {
                let early = hist.row(pair[0].bin_index)?[straight];
                let late = hist.row(pair[1].bin_index)?[straight];
                stats.raw_detections += early + late;
                stats.symbols += reps;
                if decoys[k] {
                    occupied.extend([true, true]);
                    continue;
                }
                occupied.extend([!bits[k], bits[k]]);
                let t = stats.tally(IntensityClass::Signal);
                t.symbols += reps;
                t.detections += early + late;
                t.errors += if bits[k] { early } else { late };
            }
            let mut monitor = MonitorTally::default();
            for i in 1..pulses.len() {
                let (prev, cur) = (&pulses[i - 1], &pulses[i]);
                let coherent = occupied[i - 1]
                    && occupied[i]
                    && prev.bin_index + 1 == cur.bin_index
                    && cur.phase.relative_to(&prev.phase).is_some();
                if coherent {
                    let row = hist.row(cur.bin_index)?;
                    monitor.constructive += row[plus];
                    monitor.destructive += row[minus];
                }
            }
            stats.monitor = Some(monitor);
        }
    }
    Ok(stats)
}

/// Lower bound on the single-photon yield and upper bound on its error rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub y1_lower: f64,
    pub e1_upper: f64,
    /// Single-photon gain `y1_lower · μ · e^{-μ}` of the signal class.
    pub q1: f64,
}

/// Vacuum + weak decoy estimators from gains `Q_μ`, `Q_ν`, the decoy error
/// rate `E_ν` and the vacuum yield `Y₀`.
pub fn decoy_bounds_from_gains(
    q_mu: f64,
    q_nu: f64,
    e_nu: f64,
    mu: f64,
    nu: f64,
    y0: f64,
) -> Result<DecoyBounds> {
    if !(nu > 0.0 && nu < mu && mu.is_finite()) {
        return Err(Error::DecoyPrecondition { mu, nu });
    }
    let mu2 = mu * mu;
    let nu2 = nu * nu;
    let y1 = mu / (mu * nu - nu2)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu2 / mu2 - (mu2 - nu2) / mu2 * y0);
    if !(y1 > 0.0) {
        return Err(Error::NoSinglePhotonYield(y1));
    }
    let y1_lower = y1.min(1.0);
    let e1_upper = ((e_nu * q_nu * nu.exp() - 0.5 * y0) / (nu * y1_lower)).clamp(0.0, 1.0);
    Ok(DecoyBounds {
        y1_lower,
        e1_upper,
        q1: y1_lower * mu * (-mu).exp(),
    })
}

pub fn decoy_bounds(stats: &SiftedStats, mu: f64, nu: f64, y0: f64) -> Result<DecoyBounds> {
    if !(nu > 0.0 && nu < mu) {
        return Err(Error::DecoyPrecondition { mu, nu });
    }
    let q_mu = stats
        .gain(IntensityClass::Signal)
        .ok_or(Error::EmptyInput("signal-class statistics"))?;
    let q_nu = stats
        .gain(IntensityClass::Decoy)
        .ok_or(Error::EmptyInput("decoy-class statistics"))?;
    let e_nu = stats.qber(IntensityClass::Decoy).unwrap_or(0.0);
    decoy_bounds_from_gains(q_mu, q_nu, e_nu, mu, nu, y0)
}

/// Vacuum yield measured on the vacuum class, when it was sent.
pub fn measured_vacuum_yield(stats: &SiftedStats) -> Option<f64> {
    stats.gain(IntensityClass::Vacuum)
}
