//! Path-amplitude calculus for the pump interferometer followed by one
//! unbalanced analyzer per party.
//!
//! A detected pair is described by which arm the pump pulse took and which
//! analyzer arm each photon took (a [`PathTriple`]). The arrival slot of a
//! photon is the number of long arms in its history, so three slots exist per
//! party. Only the central/central cell receives two coherent contributions,
//! `(S, L, L)` and `(L, S, S)`; everything else is a single path.
//!
//! Amplitude conventions:
//!
//! * pump: `Short -> c_short`, `Long -> c_long * e^{i phi}`
//! * analyzer, short arm: `1/2` for either port
//! * analyzer, long arm: `(i/2) * e^{i alpha}` where `i = +1/-1` is the port sign
//!
//! With these, the central-slot correlations follow `1 + ij cos(alpha + beta - phi)`
//! with no extra offset.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("pump splitting not normalized: c_short^2 + c_long^2 = {norm} (c_short={c_short}, c_long={c_long})")]
    NotNormalized { c_short: f64, c_long: f64, norm: f64 },
    #[error("pump splitting amplitudes must be non-negative (c_short={c_short}, c_long={c_long})")]
    NegativeAmplitude { c_short: f64, c_long: f64 },
    #[error("time slot {0} out of range, expected 0, 1 or 2")]
    SlotOutOfRange(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathLabel {
    Short,
    Long,
}

impl PathLabel {
    pub const ALL: [PathLabel; 2] = [PathLabel::Short, PathLabel::Long];

    fn long_count(self) -> u8 {
        match self {
            PathLabel::Short => 0,
            PathLabel::Long => 1,
        }
    }
}

/// Arms taken by the pump pulse, Alice's photon and Bob's photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathTriple {
    pub pump: PathLabel,
    pub alice: PathLabel,
    pub bob: PathLabel,
}

impl PathTriple {
    pub const fn new(pump: PathLabel, alice: PathLabel, bob: PathLabel) -> Self {
        Self { pump, alice, bob }
    }

    pub fn alice_slot(&self) -> TimeSlot {
        TimeSlot(self.pump.long_count() + self.alice.long_count())
    }

    pub fn bob_slot(&self) -> TimeSlot {
        TimeSlot(self.pump.long_count() + self.bob.long_count())
    }
}

impl fmt::Display for PathTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |p: PathLabel| match p {
            PathLabel::Short => 's',
            PathLabel::Long => 'l',
        };
        write!(f, "{}{}{}", c(self.pump), c(self.alice), c(self.bob))
    }
}

/// All eight path triples, ordered with the pump arm most significant and
/// `Short` before `Long`: SSS, SSL, SLS, SLL, LSS, LSL, LLS, LLL.
pub fn enumerate_paths() -> [PathTriple; 8] {
    let mut out = [PathTriple::new(PathLabel::Short, PathLabel::Short, PathLabel::Short); 8];
    let mut k = 0;
    for pump in PathLabel::ALL {
        for alice in PathLabel::ALL {
            for bob in PathLabel::ALL {
                out[k] = PathTriple::new(pump, alice, bob);
                k += 1;
            }
        }
    }
    out
}

/// Interferometer phases in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseSettings {
    /// Pump interferometer.
    pub phi: f64,
    /// Alice's analyzer.
    pub alpha: f64,
    /// Bob's analyzer.
    pub beta: f64,
}

impl PhaseSettings {
    pub const fn new(phi: f64, alpha: f64, beta: f64) -> Self {
        Self { phi, alpha, beta }
    }

    /// `alpha + beta - phi`, the only combination the central slot sees.
    pub fn fringe_phase(&self) -> f64 {
        self.alpha + self.beta - self.phi
    }

    /// Each phase reduced to `[0, 2pi)`.
    pub fn reduced(&self) -> Self {
        Self {
            phi: self.phi.rem_euclid(TAU),
            alpha: self.alpha.rem_euclid(TAU),
            beta: self.beta.rem_euclid(TAU),
        }
    }
}

/// Real amplitudes of the short and long pump paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSplitting {
    pub c_short: f64,
    pub c_long: f64,
}

impl PumpSplitting {
    pub const MAXIMAL: PumpSplitting = PumpSplitting {
        c_short: FRAC_1_SQRT_2,
        c_long: FRAC_1_SQRT_2,
    };

    /// Validated constructor.
    pub fn new(c_short: f64, c_long: f64) -> Result<Self, ModelError> {
        let s = Self { c_short, c_long };
        s.validate()?;
        Ok(s)
    }

    /// Splitting with long-path weight `p_long = c_long^2`.
    pub fn from_long_weight(p_long: f64) -> Result<Self, ModelError> {
        Self::new((1.0 - p_long).max(0.0).sqrt(), p_long.max(0.0).sqrt())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.c_short < 0.0 || self.c_long < 0.0 {
            return Err(ModelError::NegativeAmplitude {
                c_short: self.c_short,
                c_long: self.c_long,
            });
        }
        let norm = self.c_short * self.c_short + self.c_long * self.c_long;
        if (norm - 1.0).abs() > NORM_TOL || !norm.is_finite() {
            return Err(ModelError::NotNormalized {
                c_short: self.c_short,
                c_long: self.c_long,
                norm,
            });
        }
        Ok(())
    }
}

impl Default for PumpSplitting {
    fn default() -> Self {
        Self::MAXIMAL
    }
}

/// Detector label at an analyzer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PortLabel {
    Minus,
    Plus,
}

impl PortLabel {
    pub const ALL: [PortLabel; 2] = [PortLabel::Plus, PortLabel::Minus];

    /// `+1` or `-1`.
    pub fn sign(self) -> i8 {
        match self {
            PortLabel::Plus => 1,
            PortLabel::Minus => -1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(PortLabel::Plus),
            -1 => Some(PortLabel::Minus),
            _ => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            PortLabel::Plus => '+',
            PortLabel::Minus => '-',
        }
    }

    fn index(self) -> usize {
        match self {
            PortLabel::Plus => 0,
            PortLabel::Minus => 1,
        }
    }
}

impl fmt::Display for PortLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Arrival slot relative to the pump pulse: 0 (left satellite), 1 (central),
/// 2 (right satellite).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TimeSlot(u8);

impl TimeSlot {
    pub const EARLY: TimeSlot = TimeSlot(0);
    pub const CENTRAL: TimeSlot = TimeSlot(1);
    pub const LATE: TimeSlot = TimeSlot(2);
    pub const ALL: [TimeSlot; 3] = [TimeSlot::EARLY, TimeSlot::CENTRAL, TimeSlot::LATE];

    pub fn new(index: u8) -> Result<Self, ModelError> {
        if index <= 2 {
            Ok(TimeSlot(index))
        } else {
            Err(ModelError::SlotOutOfRange(index))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn is_satellite(self) -> bool {
        self.0 != 1
    }
}

impl TryFrom<u8> for TimeSlot {
    type Error = ModelError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        TimeSlot::new(value)
    }
}

impl From<TimeSlot> for u8 {
    fn from(slot: TimeSlot) -> u8 {
        slot.0
    }
}

impl fmt::Display for TimeSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessClass {
    TimeShort,
    TimeLong,
    Energy,
    Mixed,
    Forbidden,
}

impl ProcessClass {
    pub const ALL: [ProcessClass; 5] = [
        ProcessClass::TimeShort,
        ProcessClass::TimeLong,
        ProcessClass::Energy,
        ProcessClass::Mixed,
        ProcessClass::Forbidden,
    ];
}

pub fn classify_process(slot_a: TimeSlot, slot_b: TimeSlot) -> ProcessClass {
    match (slot_a.0, slot_b.0) {
        (0, 0) => ProcessClass::TimeShort,
        (2, 2) => ProcessClass::TimeLong,
        (1, 1) => ProcessClass::Energy,
        (0, 2) | (2, 0) => ProcessClass::Forbidden,
        _ => ProcessClass::Mixed,
    }
}

/// One outcome of a detected pair: slot and port on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outcome {
    pub slot_a: TimeSlot,
    pub port_a: PortLabel,
    pub slot_b: TimeSlot,
    pub port_b: PortLabel,
}

impl Outcome {
    pub const COUNT: usize = 36;

    fn index(&self) -> usize {
        ((self.slot_a.0 as usize * 2 + self.port_a.index()) * 3 + self.slot_b.0 as usize) * 2
            + self.port_b.index()
    }

    fn from_index(k: usize) -> Self {
        let port = |i: usize| if i == 0 { PortLabel::Plus } else { PortLabel::Minus };
        Outcome {
            slot_a: TimeSlot((k / 12) as u8),
            port_a: port((k / 6) % 2),
            slot_b: TimeSlot(((k / 2) % 3) as u8),
            port_b: port(k % 2),
        }
    }

    /// All 36 cells in storage order.
    pub fn all() -> impl Iterator<Item = Outcome> {
        (0..Self::COUNT).map(Outcome::from_index)
    }

    pub fn class(&self) -> ProcessClass {
        classify_process(self.slot_a, self.slot_b)
    }
}

/// Probability table over `(slot_a, port_a, slot_b, port_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    prob: [f64; Outcome::COUNT],
}

impl JointDistribution {
    pub fn zeros() -> Self {
        Self {
            prob: [0.0; Outcome::COUNT],
        }
    }

    pub fn get(&self, cell: Outcome) -> f64 {
        self.prob[cell.index()]
    }

    pub fn set(&mut self, cell: Outcome, p: f64) {
        self.prob[cell.index()] = p;
    }

    pub fn add(&mut self, cell: Outcome, p: f64) {
        self.prob[cell.index()] += p;
    }

    pub fn cell(&self, slot_a: TimeSlot, port_a: PortLabel, slot_b: TimeSlot, port_b: PortLabel) -> f64 {
        self.get(Outcome {
            slot_a,
            port_a,
            slot_b,
            port_b,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (Outcome, f64)> + '_ {
        Outcome::all().map(move |o| (o, self.get(o)))
    }

    pub fn total(&self) -> f64 {
        self.prob.iter().sum()
    }

    pub fn class_probability(&self, class: ProcessClass) -> f64 {
        self.iter().filter(|(o, _)| o.class() == class).map(|(_, p)| p).sum()
    }

    pub fn slot_pair_probability(&self, slot_a: TimeSlot, slot_b: TimeSlot) -> f64 {
        self.iter()
            .filter(|(o, _)| o.slot_a == slot_a && o.slot_b == slot_b)
            .map(|(_, p)| p)
            .sum()
    }

    /// Central/central cells renormalized to sum to one. `None` when the
    /// central cell carries no weight.
    pub fn central_correlations(&self) -> Option<PortPairTable> {
        let mut t = PortPairTable::default();
        for pa in PortLabel::ALL {
            for pb in PortLabel::ALL {
                t.set(pa, pb, self.cell(TimeSlot::CENTRAL, pa, TimeSlot::CENTRAL, pb));
            }
        }
        let z = t.total();
        if z <= 0.0 {
            return None;
        }
        for v in t.0.iter_mut() {
            *v /= z;
        }
        Some(t)
    }

    /// Convex combination `w * self + (1 - w) * other`.
    pub fn mix(&self, other: &JointDistribution, w: f64) -> JointDistribution {
        let mut out = JointDistribution::zeros();
        for k in 0..Outcome::COUNT {
            out.prob[k] = w * self.prob[k] + (1.0 - w) * other.prob[k];
        }
        out
    }

    /// Probability that a sifted bit in the given basis is wrong, i.e.
    /// `P(error | both satellite)` or `P(error | both central)`.
    pub fn sifted_error_rate(&self, basis: crate::protocol::Basis) -> Option<f64> {
        use crate::protocol::Basis;
        let (mut kept, mut wrong) = (0.0, 0.0);
        for (o, p) in self.iter() {
            match basis {
                Basis::Time if o.slot_a.is_satellite() && o.slot_b.is_satellite() => {
                    kept += p;
                    if o.slot_a != o.slot_b {
                        wrong += p;
                    }
                }
                Basis::Energy if o.slot_a == TimeSlot::CENTRAL && o.slot_b == TimeSlot::CENTRAL => {
                    kept += p;
                    if o.port_a != o.port_b {
                        wrong += p;
                    }
                }
                _ => {}
            }
        }
        (kept > 0.0).then(|| wrong / kept)
    }

    pub(crate) fn as_slice(&self) -> &[f64; Outcome::COUNT] {
        &self.prob
    }
}

/// Values indexed by an (Alice port, Bob port) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PortPairTable([f64; 4]);

impl PortPairTable {
    fn idx(a: PortLabel, b: PortLabel) -> usize {
        a.index() * 2 + b.index()
    }

    pub fn get(&self, a: PortLabel, b: PortLabel) -> f64 {
        self.0[Self::idx(a, b)]
    }

    pub fn set(&mut self, a: PortLabel, b: PortLabel, v: f64) {
        self.0[Self::idx(a, b)] = v;
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Amplitude picked up by the pump in the given arm.
pub fn pump_amplitude(pump: PathLabel, phi: f64, split: &PumpSplitting) -> Complex64 {
    match pump {
        PathLabel::Short => Complex64::new(split.c_short, 0.0),
        PathLabel::Long => Complex64::from_polar(split.c_long, phi),
    }
}

/// Amplitude for one photon to take `arm` in an analyzer with phase `phase`
/// and leave by `port`. Independent of when the photon was emitted.
pub fn analyzer_amplitude(arm: PathLabel, port: PortLabel, phase: f64) -> Complex64 {
    match arm {
        PathLabel::Short => Complex64::new(0.5, 0.0),
        PathLabel::Long => Complex64::from_polar(0.5 * f64::from(port.sign()), phase),
    }
}

pub fn joint_amplitude(
    path: PathTriple,
    port_a: PortLabel,
    port_b: PortLabel,
    phases: &PhaseSettings,
    split: &PumpSplitting,
) -> Result<Complex64, ModelError> {
    split.validate()?;
    Ok(pump_amplitude(path.pump, phases.phi, split)
        * analyzer_amplitude(path.alice, port_a, phases.alpha)
        * analyzer_amplitude(path.bob, port_b, phases.beta))
}

/// Exact joint outcome distribution of one pair, coherently summing paths
/// that end in the same cell.
pub fn outcome_distribution(
    phases: &PhaseSettings,
    split: &PumpSplitting,
) -> Result<JointDistribution, ModelError> {
    split.validate()?;
    let mut amps = [Complex64::new(0.0, 0.0); Outcome::COUNT];
    for path in enumerate_paths() {
        for port_a in PortLabel::ALL {
            for port_b in PortLabel::ALL {
                let cell = Outcome {
                    slot_a: path.alice_slot(),
                    port_a,
                    slot_b: path.bob_slot(),
                    port_b,
                };
                amps[cell.index()] += joint_amplitude(path, port_a, port_b, phases, split)?;
            }
        }
    }
    let mut dist = JointDistribution::zeros();
    for (k, a) in amps.iter().enumerate() {
        dist.prob[k] = a.norm_sqr();
    }
    Ok(dist)
}

/// Port-pair probabilities given both photons were found in the central
/// slot, for maximal pump splitting: `(1 + ij cos(alpha + beta - phi)) / 4`.
pub fn conditional_central(phases: &PhaseSettings) -> PortPairTable {
    let c = phases.fringe_phase().cos();
    let mut t = PortPairTable::default();
    for a in PortLabel::ALL {
        for b in PortLabel::ALL {
            let ij = f64::from(a.sign() * b.sign());
            t.set(a, b, 0.25 * (1.0 + ij * c));
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    use PathLabel::{Long as L, Short as S};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn enumerate_paths_order() {
        let expected = [
            (S, S, S),
            (S, S, L),
            (S, L, S),
            (S, L, L),
            (L, S, S),
            (L, S, L),
            (L, L, S),
            (L, L, L),
        ];
        let paths = enumerate_paths();
        assert_eq!(paths.len(), 8);
        for (p, (a, b, c)) in paths.iter().zip(expected) {
            assert_eq!(*p, PathTriple::new(a, b, c));
        }
        let mut dedup = paths.to_vec();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 8);
    }

    #[test]
    fn amplitude_examples() {
        let m = PumpSplitting::MAXIMAL;
        let target = 1.0 / (4.0 * 2f64.sqrt());

        let phases = PhaseSettings::new(0.7, -1.3, 2.9);
        let a = joint_amplitude(PathTriple::new(S, S, S), PortLabel::Plus, PortLabel::Plus, &phases, &m).unwrap();
        assert!(close(a.re, target, 1e-15) && a.im == 0.0);

        let zero = PhaseSettings::default();
        let a = joint_amplitude(PathTriple::new(L, L, L), PortLabel::Plus, PortLabel::Plus, &zero, &m).unwrap();
        assert!(close(a.re, target, 1e-15) && close(a.im, 0.0, 1e-15));

        let pi = PhaseSettings::new(PI, 0.0, 0.0);
        let a = joint_amplitude(PathTriple::new(L, S, S), PortLabel::Minus, PortLabel::Plus, &pi, &m).unwrap();
        assert!(close(a.re, -target, 1e-15) && close(a.im, 0.0, 1e-15));
    }

    #[test]
    fn joint_amplitude_rejects_unnormalized_split() {
        let bad = PumpSplitting {
            c_short: 0.5,
            c_long: 0.5,
        };
        let r = joint_amplitude(
            PathTriple::new(S, S, S),
            PortLabel::Plus,
            PortLabel::Plus,
            &PhaseSettings::default(),
            &bad,
        );
        assert!(matches!(r, Err(ModelError::NotNormalized { .. })));
        assert!(PumpSplitting::new(-0.6, 0.8).is_err());
        assert!(PumpSplitting::new(0.6, 0.8).is_ok());
    }

    #[test]
    fn distribution_examples() {
        let d = outcome_distribution(&PhaseSettings::new(0.3, 1.1, -0.4), &PumpSplitting::MAXIMAL).unwrap();
        let e = TimeSlot::EARLY;
        assert!(close(d.cell(e, PortLabel::Plus, e, PortLabel::Plus), 1.0 / 32.0, 1e-15));
        assert!(close(d.slot_pair_probability(e, e), 0.125, 1e-15));
        assert_eq!(d.slot_pair_probability(TimeSlot::EARLY, TimeSlot::LATE), 0.0);
        assert_eq!(d.slot_pair_probability(TimeSlot::LATE, TimeSlot::EARLY), 0.0);

        let aligned = outcome_distribution(&PhaseSettings::new(0.4, 0.1, 0.3), &PumpSplitting::MAXIMAL).unwrap();
        let c = TimeSlot::CENTRAL;
        assert!(close(aligned.cell(c, PortLabel::Plus, c, PortLabel::Plus), 0.125, 1e-15));
        assert!(close(aligned.cell(c, PortLabel::Plus, c, PortLabel::Minus), 0.0, 1e-15));
    }

    #[test]
    fn conditional_central_examples() {
        use PortLabel::{Minus as M, Plus as P};
        let t = conditional_central(&PhaseSettings::default());
        assert_eq!((t.get(P, P), t.get(M, M), t.get(P, M), t.get(M, P)), (0.5, 0.5, 0.0, 0.0));

        let t = conditional_central(&PhaseSettings::new(0.0, PI / 2.0, 0.0));
        for a in PortLabel::ALL {
            for b in PortLabel::ALL {
                assert!(close(t.get(a, b), 0.25, 1e-15));
            }
        }

        let t = conditional_central(&PhaseSettings::new(-PI, 0.0, 0.0));
        assert!(close(t.get(P, M), 0.5, 1e-15) && close(t.get(M, P), 0.5, 1e-15));
        assert!(close(t.get(P, P), 0.0, 1e-15) && close(t.get(M, M), 0.0, 1e-15));
    }

    #[test]
    fn classify_examples() {
        let s = |i| TimeSlot::new(i).unwrap();
        assert_eq!(classify_process(s(0), s(0)), ProcessClass::TimeShort);
        assert_eq!(classify_process(s(2), s(2)), ProcessClass::TimeLong);
        assert_eq!(classify_process(s(1), s(1)), ProcessClass::Energy);
        assert_eq!(classify_process(s(0), s(2)), ProcessClass::Forbidden);
        assert_eq!(classify_process(s(2), s(0)), ProcessClass::Forbidden);
        assert_eq!(classify_process(s(0), s(1)), ProcessClass::Mixed);
        assert_eq!(classify_process(s(1), s(2)), ProcessClass::Mixed);
        assert_eq!(TimeSlot::new(3), Err(ModelError::SlotOutOfRange(3)));
    }

    #[test]
    fn class_fractions_at_maximal_splitting() {
        let d = outcome_distribution(&PhaseSettings::new(1.0, 2.0, 3.0), &PumpSplitting::MAXIMAL).unwrap();
        let want = [
            (ProcessClass::TimeShort, 0.125),
            (ProcessClass::TimeLong, 0.125),
            (ProcessClass::Energy, 0.25),
            (ProcessClass::Mixed, 0.5),
            (ProcessClass::Forbidden, 0.0),
        ];
        for (class, p) in want {
            assert!(close(d.class_probability(class), p, 1e-14), "{class:?}");
        }
    }

    #[test]
    fn outcome_index_roundtrip() {
        for k in 0..Outcome::COUNT {
            assert_eq!(Outcome::from_index(k).index(), k);
        }
    }

    #[test]
    fn reduced_phases() {
        let p = PhaseSettings::new(-0.5, 7.0, TAU).reduced();
        assert!(close(p.phi, TAU - 0.5, 1e-12));
        assert!(close(p.alpha, 7.0 - TAU, 1e-12));
        assert!(close(p.beta, 0.0, 1e-12));
    }
}
