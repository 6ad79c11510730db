//! Statistics over sifted keys and coincidence counts: fringe fits,
//! visibility/QBER conversions, Bell-violation significance, the two
//! laboratory tables and loss scans.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{attach_to_session, AttachError, EveStrategy};
use crate::hardware::{extract_coincidences, run_session, HardwareError, HardwareParams, TripleCoincidence, Truth};
use crate::protocol::{estimate_qber, sift, split_coincidences, Basis, ProtocolError, QberEstimate, SiftOutcome};
use crate::quantum::{PhaseSettings, PortLabel, TimeSlot};

/// Visibility above which a Franson-type measurement violates a Bell
/// inequality (the CHSH bound `2 sqrt 2` against the local bound 2).
pub const BELL_VISIBILITY_THRESHOLD: f64 = FRAC_1_SQRT_2;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 4 fringe points, got {0}")]
    TooFewPoints(usize),
    #[error("fringe points must span at least half a period")]
    InsufficientSpan,
    #[error("fringe data cannot be fitted: {0}")]
    Unfittable(&'static str),
    #[error("QBER undefined: no detected events")]
    Undefined,
    #[error("empty input")]
    EmptyInput,
    #[error("visibility uncertainty must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error(transparent)]
    Hardware(#[from] HardwareError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Attach(#[from] AttachError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub phase_setting: f64,
    pub counts: u64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub offset: f64,
    pub amplitude: f64,
    pub phase0: f64,
    /// `amplitude / offset`, clamped to `[0, 1]`.
    pub visibility: f64,
    /// Set when the raw ratio fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
    pub residual_rms: f64,
    /// Standard error of the visibility assuming Poisson counts, by linear
    /// error propagation.
    pub visibility_err: f64,
}

impl FringeFit {
    pub fn model(&self, phase: f64) -> f64 {
        self.offset + self.amplitude * (phase - self.phase0).cos()
    }

    pub fn model_max(&self) -> f64 {
        self.offset + self.amplitude
    }

    pub fn model_min(&self) -> f64 {
        self.offset - self.amplitude
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// True when no arc shorter than half a period contains all phases.
fn spans_half_period(phases: &[f64]) -> bool {
    let mut p: Vec<f64> = phases.iter().map(|x| x.rem_euclid(TAU)).collect();
    p.sort_by(f64::total_cmp);
    let mut largest_gap = TAU - (p[p.len() - 1] - p[0]);
    for w in p.windows(2) {
        largest_gap = largest_gap.max(w[1] - w[0]);
    }
    largest_gap <= PI + 1e-12
}

/// Least-squares fit of `offset * (1 + V cos(theta - theta0))` via the
/// linear form `c + a cos(theta) + b sin(theta)`.
pub fn fit_fringe(points: &[FringePoint]) -> Result<FringeFit, AnalysisError> {
    if points.len() < 4 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for p in points {
        let row = [1.0, p.phase_setting.cos(), p.phase_setting.sin()];
        let y = p.counts as f64;
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            aty[i] += row[i] * y;
        }
    }
    let [c, a, b] = solve3(ata, aty).ok_or(AnalysisError::Unfittable("singular design matrix"))?;
    let phases: Vec<f64> = points.iter().map(|p| p.phase_setting).collect();
    if !spans_half_period(&phases) {
        return Err(AnalysisError::InsufficientSpan);
    }
    if c <= 0.0 {
        return Err(AnalysisError::Unfittable("non-positive offset"));
    }
    let amplitude = a.hypot(b);
    let raw = amplitude / c;
    let ss: f64 = points
        .iter()
        .map(|p| {
            let m = c + a * p.phase_setting.cos() + b * p.phase_setting.sin();
            (p.counts as f64 - m).powi(2)
        })
        .sum();
    let grad = if amplitude > 0.0 {
        [-amplitude / (c * c), a / (amplitude * c), b / (amplitude * c)]
    } else {
        [0.0, 1.0 / c, 0.0]
    };
    // sandwich estimate with Poisson variance equal to the fitted counts
    let var = solve3(ata, grad).map_or(f64::NAN, |u| {
        points
            .iter()
            .map(|p| {
                let m = (c + a * p.phase_setting.cos() + b * p.phase_setting.sin()).max(0.0);
                let xu = u[0] + u[1] * p.phase_setting.cos() + u[2] * p.phase_setting.sin();
                m * xu * xu
            })
            .sum::<f64>()
    });
    Ok(FringeFit {
        offset: c,
        amplitude,
        phase0: b.atan2(a),
        visibility: raw.clamp(0.0, 1.0),
        clamped: raw > 1.0,
        residual_rms: (ss / points.len() as f64).sqrt(),
        visibility_err: var.max(0.0).sqrt(),
    })
}

/// `(max - min) / (max + min)`.
pub fn visibility_from_extremes(max: f64, min: f64) -> f64 {
    (max - min) / (max + min)
}

/// QBER implied by a fringe visibility: `(1 - V) / 2`.
pub fn visibility_to_qber(v: f64) -> f64 {
    (1.0 - v) / 2.0
}

/// `wrong / (correct + wrong)` with its binomial standard error. Counts may
/// be fractional (averaged runs).
pub fn qber_from_counts(correct: f64, wrong: f64) -> Result<(f64, f64), AnalysisError> {
    let n = correct + wrong;
    if !(n > 0.0) {
        return Err(AnalysisError::Undefined);
    }
    let q = wrong / n;
    Ok((q, (q * (1.0 - q) / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellReport {
    pub v_mean: f64,
    /// Error of the mean, individual errors added in quadrature.
    pub v_sigma: f64,
    /// Sample standard deviation of the inputs (0 for a single entry).
    pub v_spread: f64,
    pub threshold: f64,
    /// `(v_mean - threshold) / v_sigma`.
    pub sigmas: f64,
}

pub fn bell_significance(visibilities: &[(f64, f64)]) -> Result<BellReport, AnalysisError> {
    if visibilities.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if let Some(&(_, s)) = visibilities.iter().find(|(_, s)| !(*s > 0.0)) {
        return Err(AnalysisError::NonPositiveSigma(s));
    }
    let n = visibilities.len() as f64;
    let v_mean = visibilities.iter().map(|(v, _)| v).sum::<f64>() / n;
    let v_sigma = visibilities.iter().map(|(_, s)| s * s).sum::<f64>().sqrt() / n;
    let v_spread = if visibilities.len() > 1 {
        (visibilities.iter().map(|(v, _)| (v - v_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BellReport {
        v_mean,
        v_sigma,
        v_spread,
        threshold: BELL_VISIBILITY_THRESHOLD,
        sigmas: (v_mean - BELL_VISIBILITY_THRESHOLD) / v_sigma,
    })
}

/// Ratio as a percentage rounded half-up to one decimal.
pub fn percent_1dp(ratio: f64) -> f64 {
    // nudge by a few ulps so values like 4.55 that land just below the
    // half-way point in binary still round up
    let x = ratio * 1000.0;
    (x + x.abs() * 4.0 * f64::EPSILON + 0.5).floor() / 10.0
}

/// Detector pairs in table column order: `++`, `+-`, `-+`, `--`.
pub const DETECTOR_PAIRS: [(PortLabel, PortLabel); 4] = [
    (PortLabel::Plus, PortLabel::Plus),
    (PortLabel::Plus, PortLabel::Minus),
    (PortLabel::Minus, PortLabel::Plus),
    (PortLabel::Minus, PortLabel::Minus),
];

pub fn detector_pair_label(pair: (PortLabel, PortLabel)) -> String {
    format!("{}{}", pair.0.symbol(), pair.1.symbol())
}

fn pair_column(a: PortLabel, b: PortLabel) -> usize {
    DETECTOR_PAIRS.iter().position(|&p| p == (a, b)).expect("all pairs listed")
}

/// Time-basis coincidence counts. Rows: early/early, late/late, early/late,
/// late/early; columns as [`DETECTOR_PAIRS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBasisTable {
    pub counts: [[f64; 4]; 4],
}

impl TimeBasisTable {
    pub const ROW_LABELS: [&'static str; 4] = ["sPsA&sPsB", "lPlA&lPlB", "sPsA&lPlB", "lPlA&sPsB"];

    pub fn from_coincidences(coincidences: &[TripleCoincidence]) -> Self {
        let mut counts = [[0.0; 4]; 4];
        for c in coincidences {
            let row = match (c.alice.0, c.bob.0) {
                (TimeSlot::EARLY, TimeSlot::EARLY) => 0,
                (TimeSlot::LATE, TimeSlot::LATE) => 1,
                (TimeSlot::EARLY, TimeSlot::LATE) => 2,
                (TimeSlot::LATE, TimeSlot::EARLY) => 3,
                _ => continue,
            };
            counts[row][pair_column(c.alice.1, c.bob.1)] += 1.0;
        }
        Self { counts }
    }

    /// QBER per detector pair.
    pub fn qber(&self) -> [Option<(f64, f64)>; 4] {
        let mut out = [None; 4];
        for (col, q) in out.iter_mut().enumerate() {
            let correct = self.counts[0][col] + self.counts[1][col];
            let wrong = self.counts[2][col] + self.counts[3][col];
            *q = qber_from_counts(correct, wrong).ok();
        }
        out
    }

    /// Unweighted mean of the defined per-pair QBERs.
    pub fn mean_qber(&self) -> Option<f64> {
        let q: Vec<f64> = self.qber().iter().flatten().map(|(q, _)| *q).collect();
        (!q.is_empty()).then(|| q.iter().sum::<f64>() / q.len() as f64)
    }
}

/// Energy-basis fringe extremes per detector pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBasisColumn {
    pub max: f64,
    pub min: f64,
    /// Fitted visibility when a fringe fit is available.
    pub fitted_visibility: Option<f64>,
}

impl EnergyBasisColumn {
    pub fn extreme_visibility(&self) -> f64 {
        visibility_from_extremes(self.max, self.min)
    }

    /// `min / (max + min)`.
    pub fn qber(&self) -> Option<f64> {
        qber_from_counts(self.max, self.min).ok().map(|(q, _)| q)
    }
}

/// Laboratory time-basis counts per 100 s (rows and columns as
/// [`TimeBasisTable`]).
pub const MEASURED_TIME_BASIS: TimeBasisTable = TimeBasisTable {
    counts: [
        [278.0, 197.0, 187.0, 147.0],
        [304.0, 201.0, 200.0, 148.0],
        [11.0, 10.4, 9.2, 9.4],
        [11.2, 8.6, 9.1, 8.5],
    ],
};

/// Reported time-basis QBER per detector pair, percent.
pub const MEASURED_TIME_BASIS_QBER_PERCENT: [f64; 4] = [3.7, 4.6, 4.5, 5.7];
pub const MEASURED_TIME_BASIS_MEAN_QBER_PERCENT: f64 = 4.6;

/// Laboratory energy-basis fringe extremes and fitted visibilities.
pub const MEASURED_ENERGY_BASIS: [EnergyBasisColumn; 4] = [
    EnergyBasisColumn { max: 518.0, min: 20.0, fitted_visibility: Some(0.925) },
    EnergyBasisColumn { max: 416.0, min: 16.0, fitted_visibility: Some(0.926) },
    EnergyBasisColumn { max: 359.0, min: 20.0, fitted_visibility: Some(0.893) },
    EnergyBasisColumn { max: 279.0, min: 8.0, fitted_visibility: Some(0.945) },
];

/// Uncertainties of the fitted visibilities above.
pub const MEASURED_VISIBILITY_SIGMA: [f64; 4] = [0.018, 0.014, 0.019, 0.016];
pub const MEASURED_ENERGY_BASIS_QBER_PERCENT: [f64; 4] = [3.7, 3.7, 5.3, 2.8];
pub const MEASURED_MEAN_VISIBILITY: (f64, f64) = (0.922, 0.008);

/// Everything one session produces after sifting.
#[derive(Debug, Clone)]
pub struct ExchangeResult {
    pub duration_s: f64,
    pub n_events: usize,
    pub mean_photon_singles_rate: f64,
    pub coincidences: Vec<TripleCoincidence>,
    pub sift: SiftOutcome,
    pub qber: QberEstimate,
}

impl ExchangeResult {
    pub fn sifted_rate(&self) -> f64 {
        self.sift.alice_key.len() as f64 / self.duration_s
    }

    pub fn accidental_fraction(&self) -> Option<f64> {
        let n = self.coincidences.len();
        (n > 0).then(|| {
            self.coincidences.iter().filter(|c| c.truth == Truth::Accidental).count() as f64 / n as f64
        })
    }
}

/// Session, coincidence extraction, sifting and a full-key QBER comparison.
pub fn run_exchange(
    params: &HardwareParams,
    phases: &PhaseSettings,
    strategy: Option<&EveStrategy>,
    n_pulses: i64,
    seed: u64,
) -> Result<ExchangeResult, AnalysisError> {
    let log = match strategy {
        Some(s) => attach_to_session(params, phases, s, n_pulses, seed)?,
        None => run_session(params, phases, n_pulses, seed)?,
    };
    let coincidences = extract_coincidences(&log);
    let duration_s = log.duration_s();
    let n_events = log.events.len();
    let mean_photon_singles_rate = log.mean_photon_singles_rate();
    drop(log);
    let (alice, bob) = split_coincidences(&coincidences);
    let sift = sift(alice, bob)?;
    let qber = estimate_qber(&sift.alice_key, &sift.bob_key, 1.0, seed)?;
    Ok(ExchangeResult {
        duration_s,
        n_events,
        mean_photon_singles_rate,
        coincidences,
        sift,
        qber,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub loss_db: f64,
    pub qber_time: Option<f64>,
    pub qber_energy: Option<f64>,
    pub qber_total: Option<f64>,
    pub n_sifted: u64,
    pub n_errors: u64,
    pub rate_hz: f64,
}

/// Full pipeline at each added loss. The added loss is the total over both
/// channels and is split evenly between Alice and Bob. Point `k` uses seed
/// `seed + k`; points run in parallel.
pub fn distance_scan(
    base_params: &HardwareParams,
    phases: &PhaseSettings,
    extra_loss_db_list: &[f64],
    n_pulses: i64,
    seed: u64,
) -> Result<Vec<DistanceRow>, AnalysisError> {
    if extra_loss_db_list.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    extra_loss_db_list
        .par_iter()
        .enumerate()
        .map(|(k, &loss)| {
            let params = HardwareParams {
                channel_loss_db: base_params.channel_loss_db + 0.5 * loss,
                ..*base_params
            };
            let r = run_exchange(&params, phases, None, n_pulses, seed.wrapping_add(k as u64))?;
            let total = r.qber.total();
            Ok(DistanceRow {
                loss_db: loss,
                qber_time: r.qber.time.qber,
                qber_energy: r.qber.energy.qber,
                qber_total: total.qber,
                n_sifted: total.n_sifted,
                n_errors: total.n_errors,
                rate_hz: r.sifted_rate(),
            })
        })
        .collect()
}

/// Central/central coincidence counts per detector pair at one phase setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeRow {
    pub phase: f64,
    pub counts: [u64; 4],
    pub duration: f64,
}

pub fn central_counts(coincidences: &[TripleCoincidence]) -> [u64; 4] {
    let mut counts = [0u64; 4];
    for c in coincidences {
        if c.alice.0 == TimeSlot::CENTRAL && c.bob.0 == TimeSlot::CENTRAL {
            counts[pair_column(c.alice.1, c.bob.1)] += 1;
        }
    }
    counts
}

/// One session per value of Bob's phase in `grid`; point `k` uses seed
/// `seed + k`.
pub fn fringe_scan(
    params: &HardwareParams,
    phases: &PhaseSettings,
    grid: &[f64],
    n_pulses: i64,
    seed: u64,
) -> Result<Vec<FringeRow>, AnalysisError> {
    if grid.len() < 4 {
        return Err(AnalysisError::TooFewPoints(grid.len()));
    }
    grid.par_iter()
        .enumerate()
        .map(|(k, &beta)| {
            let p = PhaseSettings { beta, ..*phases };
            let log = run_session(params, &p, n_pulses, seed.wrapping_add(k as u64))?;
            let coincidences = extract_coincidences(&log);
            Ok(FringeRow {
                phase: beta,
                counts: central_counts(&coincidences),
                duration: log.duration_s(),
            })
        })
        .collect()
}

/// Fits one detector-pair column of a fringe scan.
pub fn fit_fringe_column(rows: &[FringeRow], column: usize) -> Result<FringeFit, AnalysisError> {
    let points: Vec<FringePoint> = rows
        .iter()
        .map(|r| FringePoint {
            phase_setting: r.phase,
            counts: r.counts[column],
            duration: r.duration,
        })
        .collect();
    fit_fringe(&points)
}

/// Per-basis QBER of the sifted key, for convenience.
pub fn basis_qber(est: &QberEstimate, basis: Basis) -> Option<f64> {
    est.report(basis).qber
}
