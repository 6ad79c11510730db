//! Seeded Monte Carlo model of a measurement session.
//!
//! Pump pulses arrive at `pulse_rate`; pulse `k` is emitted at
//! `(k + 1/2) * period`. Pairs per pulse are Poisson with mean `pair_prob`.
//! Each photon is detected independently with the per-photon transmission
//! (analyzer loss, channel loss, detector efficiency). Only pairs with at
//! least one detected photon are materialized, which is an exact Poisson
//! thinning and keeps 10^10-pulse sessions cheap.
//!
//! A detected photon lands at
//! `pulse_time + slot * delta_t + envelope + jitter`, where the envelope
//! offset (Gaussian, FWHM `pulse_fwhm`) is shared by both photons of a pair
//! and the jitter (Gaussian, `jitter_sigma`) is drawn per detection.
//! Dark counts are an independent Poisson process per detector.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::EveStrategy;
use crate::quantum::{
    outcome_distribution, JointDistribution, ModelError, Outcome, PhaseSettings, PortLabel,
    PumpSplitting, TimeSlot,
};

/// Largest tolerated probability of two or more pairs in one pulse.
pub const DOUBLE_PAIR_GUARD: f64 = 0.05;

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HardwareError {
    #[error("invalid hardware parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("number of pulses must be positive, got {0}")]
    NonPositivePulses(i64),
    #[error("pair probability {mu} gives a double-pair probability of {p_double:.4} per pulse (limit {DOUBLE_PAIR_GUARD})")]
    DoublePairGuard { mu: f64, p_double: f64 },
    #[error("target singles rate {target} Hz unreachable; maximum is {max} Hz at the double-pair limit")]
    Unreachable { target: f64, max: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareParams {
    /// Pump repetition rate, Hz.
    pub pulse_rate: f64,
    /// Pump pulse FWHM, s.
    pub pulse_fwhm: f64,
    /// Interferometer travel-time difference, s.
    pub delta_t: f64,
    /// Mean number of pairs per pump pulse.
    pub pair_prob: f64,
    /// Probability a pair is split between Alice and Bob.
    pub separation_prob: f64,
    /// Analyzer loss per party, dB. The path-amplitude model is lossless, so
    /// this carries the full analyzer insertion loss.
    pub analyzer_loss_db: f64,
    /// Channel loss per party, dB.
    pub channel_loss_db: f64,
    pub detector_efficiency: f64,
    /// Dark count rate per detector, Hz.
    pub dark_rate: f64,
    /// Detector timing jitter (standard deviation), s.
    pub jitter_sigma: f64,
    /// Half-width of the acceptance window around each nominal slot center, s.
    pub coincidence_window: f64,
}

impl Default for HardwareParams {
    fn default() -> Self {
        Self {
            pulse_rate: 80e6,
            pulse_fwhm: 600e-12,
            delta_t: 1.2e-9,
            pair_prob: 0.01,
            separation_prob: 0.5,
            analyzer_loss_db: 0.0,
            channel_loss_db: 0.0,
            detector_efficiency: 0.05,
            dark_rate: 30e3,
            jitter_sigma: 150e-12,
            coincidence_window: 400e-12,
        }
    }
}

impl HardwareParams {
    /// Singles rate the laboratory preset is calibrated to, Hz per detector.
    pub const LAB_SINGLES_RATE: f64 = 6.5e3;

    /// The laboratory setup: 6 dB analyzers, 5 % detectors at 30 kHz dark
    /// counts, 300 ps acceptance half-window. `pair_prob` is left at the
    /// default; use [`calibrate_pair_prob`] with [`Self::LAB_SINGLES_RATE`].
    pub fn laboratory() -> Self {
        Self {
            analyzer_loss_db: 6.0,
            coincidence_window: 300e-12,
            ..Self::default()
        }
    }

    /// Lossless, noiseless, perfectly timed hardware with a deterministic
    /// pair splitter.
    pub fn ideal() -> Self {
        Self {
            pair_prob: 1e-3,
            separation_prob: 1.0,
            analyzer_loss_db: 0.0,
            channel_loss_db: 0.0,
            detector_efficiency: 1.0,
            dark_rate: 0.0,
            jitter_sigma: 0.0,
            pulse_fwhm: 0.0,
            ..Self::default()
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.pulse_rate
    }

    /// Probability that one photon reaching an analyzer produces a click.
    pub fn transmission(&self) -> f64 {
        let db = self.analyzer_loss_db + self.channel_loss_db;
        self.detector_efficiency * 10f64.powf(-db / 10.0)
    }

    pub fn envelope_sigma(&self) -> f64 {
        self.pulse_fwhm / FWHM_TO_SIGMA
    }

    /// `P(N >= 2)` for Poisson pair number with mean `pair_prob`.
    pub fn double_pair_probability(&self) -> f64 {
        double_pair_probability(self.pair_prob)
    }

    /// Checks ranges and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, HardwareError> {
        let prob = |name, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(HardwareError::InvalidParam {
                    name,
                    value: v,
                    reason: "must be a probability in [0, 1]",
                })
            }
        };
        let non_neg = |name, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HardwareError::InvalidParam {
                    name,
                    value: v,
                    reason: "must be finite and non-negative",
                })
            }
        };
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HardwareError::InvalidParam {
                    name,
                    value: v,
                    reason: "must be finite and positive",
                })
            }
        };
        positive("pulse_rate", self.pulse_rate)?;
        positive("delta_t", self.delta_t)?;
        non_neg("pulse_fwhm", self.pulse_fwhm)?;
        non_neg("pair_prob", self.pair_prob)?;
        prob("separation_prob", self.separation_prob)?;
        non_neg("analyzer_loss_db", self.analyzer_loss_db)?;
        non_neg("channel_loss_db", self.channel_loss_db)?;
        prob("detector_efficiency", self.detector_efficiency)?;
        non_neg("dark_rate", self.dark_rate)?;
        non_neg("jitter_sigma", self.jitter_sigma)?;
        positive("coincidence_window", self.coincidence_window)?;
        if 2.0 * self.coincidence_window >= self.delta_t {
            return Err(HardwareError::InvalidParam {
                name: "coincidence_window",
                value: self.coincidence_window,
                reason: "slot windows overlap; need 2 * window < delta_t",
            });
        }
        if 2.0 * self.delta_t + 2.0 * self.coincidence_window >= self.period() {
            return Err(HardwareError::InvalidParam {
                name: "delta_t",
                value: self.delta_t,
                reason: "slot windows of consecutive pulses overlap",
            });
        }
        let mut warnings = Vec::new();
        if self.delta_t <= 3.0 * self.jitter_sigma {
            warnings.push(format!(
                "delta_t = {:e} s is not above 3 * jitter_sigma = {:e} s; time slots are poorly resolved",
                self.delta_t,
                3.0 * self.jitter_sigma
            ));
        }
        Ok(warnings)
    }
}

pub fn double_pair_probability(mu: f64) -> f64 {
    // 1 - e^-mu (1 + mu), without cancellation at small mu
    -(-mu).exp_m1() - mu * (-mu).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn symbol(self) -> char {
        match self {
            Party::Alice => 'A',
            Party::Bob => 'B',
        }
    }

    pub fn from_symbol(c: &str) -> Option<Self> {
        match c {
            "A" => Some(Party::Alice),
            "B" => Some(Party::Bob),
            _ => None,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// A detector click. The pump pulse and slot it belongs to are derived from
/// the time via [`SessionLog::locate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DetectionEvent {
    /// Absolute time in picoseconds.
    pub time_ps: u64,
    pub party: Party,
    pub port: PortLabel,
    source: u32,
}

impl DetectionEvent {
    const DARK: u32 = u32::MAX;

    pub fn photon(time_ps: u64, party: Party, port: PortLabel, pair: u32) -> Self {
        debug_assert!(pair != Self::DARK);
        Self {
            time_ps,
            party,
            port,
            source: pair,
        }
    }

    pub fn dark(time_ps: u64, party: Party, port: PortLabel) -> Self {
        Self {
            time_ps,
            party,
            port,
            source: Self::DARK,
        }
    }

    pub fn time_s(&self) -> f64 {
        self.time_ps as f64 * 1e-12
    }

    /// Index of the pair that produced the click, `None` for dark counts.
    pub fn pair_id(&self) -> Option<u32> {
        (self.source != Self::DARK).then_some(self.source)
    }

    pub fn is_dark(&self) -> bool {
        self.source == Self::DARK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Truth {
    Genuine,
    Accidental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripleCoincidence {
    pub pulse_index: u64,
    pub alice: (TimeSlot, PortLabel),
    pub bob: (TimeSlot, PortLabel),
    /// Diagnostic only; the protocol never looks at it.
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub params: HardwareParams,
    pub phases: PhaseSettings,
    pub n_pulses: u64,
    pub seed: u64,
    /// Set when the pair statistics come from an intercept-resend attack.
    pub attack: Option<EveStrategy>,
    /// Time-ordered.
    pub events: Vec<DetectionEvent>,
}

impl SessionLog {
    pub fn duration_s(&self) -> f64 {
        self.n_pulses as f64 * self.params.period()
    }

    /// Pump pulse and slot whose acceptance window contains `time_ps`.
    pub fn locate(&self, time_ps: u64) -> Option<(u64, TimeSlot)> {
        let period = self.params.period() * 1e12;
        let dt = self.params.delta_t * 1e12;
        let w = self.params.coincidence_window * 1e12;
        let rel = time_ps as f64 - 0.5 * period;
        for slot in TimeSlot::ALL {
            let x = rel - f64::from(slot.index()) * dt;
            let p = (x / period).round();
            if p < 0.0 || p >= self.n_pulses as f64 {
                continue;
            }
            if (x - p * period).abs() <= w {
                return Some((p as u64, slot));
            }
        }
        None
    }

    /// Clicks per second on one detector. `photons_only` drops dark counts.
    pub fn singles_rate(&self, party: Party, port: PortLabel, photons_only: bool) -> f64 {
        let n = self
            .events
            .iter()
            .filter(|e| e.party == party && e.port == port && !(photons_only && e.is_dark()))
            .count();
        n as f64 / self.duration_s()
    }

    /// Photon-induced singles rate averaged over the four detectors.
    pub fn mean_photon_singles_rate(&self) -> f64 {
        let n = self.events.iter().filter(|e| !e.is_dark()).count();
        n as f64 / 4.0 / self.duration_s()
    }
}

pub fn run_session(
    params: &HardwareParams,
    phases: &PhaseSettings,
    n_pulses: i64,
    seed: u64,
) -> Result<SessionLog, HardwareError> {
    let dist = outcome_distribution(phases, &PumpSplitting::MAXIMAL)?;
    run_session_with(params, phases, &dist, None, n_pulses, seed)
}

/// Inverse-CDF sampler over the 36 outcome cells.
struct OutcomeSampler {
    cdf: [f64; Outcome::COUNT],
    cells: Vec<Outcome>,
}

impl OutcomeSampler {
    fn new(dist: &JointDistribution) -> Self {
        let mut cdf = [0.0; Outcome::COUNT];
        let mut acc = 0.0;
        for (k, p) in dist.as_slice().iter().enumerate() {
            acc += p.max(0.0);
            cdf[k] = acc;
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Self {
            cdf,
            cells: Outcome::all().collect(),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Outcome {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c <= u).min(Outcome::COUNT - 1);
        self.cells[k]
    }
}

/// Session with genuine-pair outcomes drawn from `dist`.
pub fn run_session_with(
    params: &HardwareParams,
    phases: &PhaseSettings,
    dist: &JointDistribution,
    attack: Option<EveStrategy>,
    n_pulses: i64,
    seed: u64,
) -> Result<SessionLog, HardwareError> {
    if n_pulses <= 0 {
        return Err(HardwareError::NonPositivePulses(n_pulses));
    }
    for w in params.validate()? {
        log::warn!("{w}");
    }
    let p_double = params.double_pair_probability();
    if p_double > DOUBLE_PAIR_GUARD {
        return Err(HardwareError::DoublePairGuard {
            mu: params.pair_prob,
            p_double,
        });
    }
    let n = n_pulses as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();

    generate_photons(params, dist, n, &mut rng, &mut events);
    generate_dark_counts(params, n, &mut rng, &mut events);
    events.sort_unstable();

    Ok(SessionLog {
        params: *params,
        phases: *phases,
        n_pulses: n,
        seed,
        attack,
        events,
    })
}

fn to_ps(t_s: f64) -> u64 {
    (t_s * 1e12).round().max(0.0) as u64
}

fn generate_photons(
    params: &HardwareParams,
    dist: &JointDistribution,
    n: u64,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<DetectionEvent>,
) {
    let t = params.transmission();
    let visible = 1.0 - (1.0 - t) * (1.0 - t);
    let lambda = params.pair_prob * visible;
    if lambda <= 0.0 {
        return;
    }
    // P(pulse holds at least one visible pair)
    let p_hit = -(-lambda).exp_m1();
    // ln P(no visible pair in a pulse)
    let ln_miss = -lambda;
    let sampler = OutcomeSampler::new(dist);
    let envelope = Normal::new(0.0, params.envelope_sigma()).expect("finite sigma");
    let jitter = Normal::new(0.0, params.jitter_sigma).expect("finite sigma");
    let period = params.period();
    let only_first = t * (1.0 - t) / visible;

    let mut pair_id: u32 = 0;
    let mut pulse: u64 = 0;
    loop {
        // geometric skip to the next pulse with a visible pair
        let u: f64 = 1.0 - rng.random::<f64>();
        let skip = if p_hit >= 1.0 { 0.0 } else { (u.ln() / ln_miss).floor() };
        if !skip.is_finite() || pulse as f64 + skip >= n as f64 {
            break;
        }
        pulse += skip as u64;
        let pulse_time = (pulse as f64 + 0.5) * period;

        let pairs = sample_truncated_poisson(lambda, p_hit, rng);
        for _ in 0..pairs {
            let outcome = sampler.sample(rng);
            let u: f64 = rng.random();
            let (first, second) = if u < only_first {
                (true, false)
            } else if u < 2.0 * only_first {
                (false, true)
            } else {
                (true, true)
            };
            let split: f64 = rng.random();
            let (party_1, party_2) = if split < params.separation_prob {
                (Party::Alice, Party::Bob)
            } else if rng.random::<bool>() {
                (Party::Alice, Party::Alice)
            } else {
                (Party::Bob, Party::Bob)
            };
            let shared = envelope.sample(rng);
            let photons = [
                (first, party_1, outcome.slot_a, outcome.port_a),
                (second, party_2, outcome.slot_b, outcome.port_b),
            ];
            for (detected, party, slot, port) in photons {
                if !detected {
                    continue;
                }
                let time = pulse_time
                    + f64::from(slot.index()) * params.delta_t
                    + shared
                    + jitter.sample(rng);
                events.push(DetectionEvent::photon(to_ps(time), party, port, pair_id));
            }
            pair_id = pair_id.checked_add(1).expect("pair id overflow");
            if pair_id == DetectionEvent::DARK {
                panic!("too many detected pairs in one session");
            }
        }
        pulse += 1;
        if pulse >= n {
            break;
        }
    }
}

/// Draw from Poisson(lambda) conditioned on at least one event.
fn sample_truncated_poisson(lambda: f64, p_hit: f64, rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random::<f64>() * p_hit;
    let mut k = 1u32;
    let mut term = lambda * (-lambda).exp();
    let mut acc = term;
    while acc < u && k < 64 {
        k += 1;
        term *= lambda / f64::from(k);
        acc += term;
    }
    k
}

fn generate_dark_counts(
    params: &HardwareParams,
    n: u64,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<DetectionEvent>,
) {
    if params.dark_rate <= 0.0 {
        return;
    }
    let span = n as f64 * params.period();
    let gap = Exp::new(params.dark_rate).expect("positive rate");
    for party in [Party::Alice, Party::Bob] {
        for port in PortLabel::ALL {
            let mut t = gap.sample(rng);
            while t < span {
                events.push(DetectionEvent::dark(to_ps(t), party, port));
                t += gap.sample(rng);
            }
        }
    }
}

/// Pair one Alice click with one Bob click per pump pulse.
///
/// A click counts only inside a slot window. Per party and pulse the earliest
/// in-window click wins, ties going to the `-` port.
pub fn extract_coincidences(log: &SessionLog) -> Vec<TripleCoincidence> {
    #[derive(Clone, Copy)]
    struct Candidate {
        time: u64,
        port: PortLabel,
        slot: TimeSlot,
        pair: Option<u32>,
    }

    fn better(new: &Candidate, old: &Option<Candidate>) -> bool {
        match old {
            None => true,
            Some(o) => (new.time, new.port) < (o.time, o.port),
        }
    }

    fn flush(pulse: u64, a: &Option<Candidate>, b: &Option<Candidate>, out: &mut Vec<TripleCoincidence>) {
        if let (Some(a), Some(b)) = (a, b) {
            let truth = match (a.pair, b.pair) {
                (Some(x), Some(y)) if x == y => Truth::Genuine,
                _ => Truth::Accidental,
            };
            out.push(TripleCoincidence {
                pulse_index: pulse,
                alice: (a.slot, a.port),
                bob: (b.slot, b.port),
                truth,
            });
        }
    }

    let mut out = Vec::new();
    let mut current: Option<u64> = None;
    let mut cand: [Option<Candidate>; 2] = [None, None];
    for ev in &log.events {
        let Some((pulse, slot)) = log.locate(ev.time_ps) else {
            continue;
        };
        if current != Some(pulse) {
            if let Some(p) = current {
                flush(p, &cand[0], &cand[1], &mut out);
            }
            current = Some(pulse);
            cand = [None, None];
        }
        let c = Candidate {
            time: ev.time_ps,
            port: ev.port,
            slot,
            pair: ev.pair_id(),
        };
        let k = match ev.party {
            Party::Alice => 0,
            Party::Bob => 1,
        };
        if better(&c, &cand[k]) {
            cand[k] = Some(c);
        }
    }
    if let Some(p) = current {
        flush(p, &cand[0], &cand[1], &mut out);
    }
    out
}

/// Bisection on `pair_prob` so the simulated photon-induced singles rate per
/// detector matches `target_singles_rate` within 2 %. Uses dark-count-free
/// sessions of `n_pulses` with a fixed seed.
pub fn calibrate_pair_prob(
    params: &HardwareParams,
    target_singles_rate: f64,
    n_pulses: i64,
    seed: u64,
) -> Result<f64, HardwareError> {
    if !(target_singles_rate >= 0.0) || !target_singles_rate.is_finite() {
        return Err(HardwareError::InvalidParam {
            name: "target_singles_rate",
            value: target_singles_rate,
            reason: "must be finite and non-negative",
        });
    }
    if target_singles_rate == 0.0 {
        return Ok(0.0);
    }
    let probe = |mu: f64| -> Result<f64, HardwareError> {
        let p = HardwareParams {
            pair_prob: mu,
            dark_rate: 0.0,
            ..*params
        };
        let dist = outcome_distribution(&PhaseSettings::default(), &PumpSplitting::MAXIMAL)?;
        let log = run_session_with(&p, &PhaseSettings::default(), &dist, None, n_pulses, seed)?;
        Ok(log.mean_photon_singles_rate())
    };

    let mut hi = max_pair_prob();
    let max_rate = probe(hi)?;
    if max_rate < target_singles_rate * 0.98 {
        return Err(HardwareError::Unreachable {
            target: target_singles_rate,
            max: max_rate,
        });
    }
    let mut lo = 0.0;
    let mut best = (f64::INFINITY, hi);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let rate = probe(mid)?;
        let rel = (rate - target_singles_rate).abs() / target_singles_rate;
        if rel < best.0 {
            best = (rel, mid);
        }
        if rel <= 0.002 {
            break;
        }
        if rate < target_singles_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > 0.02 {
        return Err(HardwareError::Unreachable {
            target: target_singles_rate,
            max: max_rate,
        });
    }
    Ok(best.1)
}

/// Largest mean pair number allowed by [`DOUBLE_PAIR_GUARD`].
pub fn max_pair_prob() -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if double_pair_probability(mid) > DOUBLE_PAIR_GUARD {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}
