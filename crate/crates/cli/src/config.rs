//! Experiment configuration: a flat TOML file of typed keys.
//!
//! Every key is optional; unknown keys are rejected. Defaults describe the
//! laboratory setup with the pair probability calibrated to a 6.5 kHz photon
//! singles rate per detector.
//!
//! | key | unit | default |
//! |-----|------|---------|
//! | `pulse_rate_hz` | Hz | 80e6 |
//! | `pulse_fwhm_ps` | ps | 600 |
//! | `delta_t_ps` | ps | 1200 |
//! | `pair_prob` | pairs per pulse | calibrated |
//! | `target_singles_rate_hz` | Hz | 6500 (ignored when `pair_prob` is set) |
//! | `calibration_pulses` | | 80e6 |
//! | `calibration_seed` | | 1 |
//! | `separation_prob` | | 0.5 |
//! | `analyzer_loss_db` | dB per party | 6 |
//! | `channel_loss_db` | dB per party | 0 |
//! | `detector_efficiency` | | 0.05 |
//! | `dark_rate_hz` | Hz per detector | 30e3 |
//! | `jitter_sigma_ps` | ps | 150 |
//! | `coincidence_window_ps` | ps, half-width | 300 |
//! | `phi`, `alpha`, `beta` | rad | 0 |
//! | `n_pulses` / `duration_s` | | `duration_s = 100` |
//! | `seed` | | 0 |
//! | `eve_strategy` | `time`, `energy`, `random:<p>` | none |
//! | `sample_fraction` | | 1 |
//! | `phase_points` | | 12 |
//! | `losses_db` | dB total | `[0, 6]` |
//! | `out_dir` | path | `out` |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tbqkd::hardware::{calibrate_pair_prob, HardwareParams};
use tbqkd::{EveStrategy, PhaseSettings};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub pulse_rate_hz: Option<f64>,
    pub pulse_fwhm_ps: Option<f64>,
    pub delta_t_ps: Option<f64>,
    pub pair_prob: Option<f64>,
    pub target_singles_rate_hz: Option<f64>,
    pub calibration_pulses: Option<i64>,
    pub calibration_seed: Option<u64>,
    pub separation_prob: Option<f64>,
    pub analyzer_loss_db: Option<f64>,
    pub channel_loss_db: Option<f64>,
    pub detector_efficiency: Option<f64>,
    pub dark_rate_hz: Option<f64>,
    pub jitter_sigma_ps: Option<f64>,
    pub coincidence_window_ps: Option<f64>,
    pub phi: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub n_pulses: Option<i64>,
    pub duration_s: Option<f64>,
    pub seed: Option<u64>,
    pub eve_strategy: Option<String>,
    pub sample_fraction: Option<f64>,
    pub phase_points: Option<usize>,
    pub losses_db: Option<Vec<f64>>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Where the mean pair number comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PairSource {
    Fixed(f64),
    Calibrated { target_hz: f64, pulses: i64, seed: u64 },
}

/// A fully resolved experiment. Its canonical JSON form is what the config
/// hash covers; seed and output directory are excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub hardware: HardwareParams,
    pub pair_source: PairSource,
    pub phases: PhaseSettings,
    pub n_pulses: i64,
    #[serde(skip)]
    pub seed: u64,
    pub eve: Option<EveStrategy>,
    pub sample_fraction: f64,
    pub phase_points: usize,
    pub losses_db: Vec<f64>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub const DEFAULT_DURATION_S: f64 = 100.0;

fn ps(v: f64) -> f64 {
    v * 1e-12
}

impl Experiment {
    pub fn resolve(file: &ConfigFile) -> Result<Self, CliError> {
        let lab = HardwareParams::laboratory();
        let cfg = |m: String| CliError::Config(m);
        let mut hardware = HardwareParams {
            pulse_rate: file.pulse_rate_hz.unwrap_or(lab.pulse_rate),
            pulse_fwhm: file.pulse_fwhm_ps.map_or(lab.pulse_fwhm, ps),
            delta_t: file.delta_t_ps.map_or(lab.delta_t, ps),
            pair_prob: 0.0,
            separation_prob: file.separation_prob.unwrap_or(lab.separation_prob),
            analyzer_loss_db: file.analyzer_loss_db.unwrap_or(lab.analyzer_loss_db),
            channel_loss_db: file.channel_loss_db.unwrap_or(lab.channel_loss_db),
            detector_efficiency: file.detector_efficiency.unwrap_or(lab.detector_efficiency),
            dark_rate: file.dark_rate_hz.unwrap_or(lab.dark_rate),
            jitter_sigma: file.jitter_sigma_ps.map_or(lab.jitter_sigma, ps),
            coincidence_window: file.coincidence_window_ps.map_or(lab.coincidence_window, ps),
        };
        let pair_source = match (file.pair_prob, file.target_singles_rate_hz) {
            (Some(_), Some(_)) => {
                return Err(cfg("set either pair_prob or target_singles_rate_hz, not both".into()));
            }
            (Some(mu), None) => PairSource::Fixed(mu),
            (None, target) => PairSource::Calibrated {
                target_hz: target.unwrap_or(HardwareParams::LAB_SINGLES_RATE),
                pulses: file.calibration_pulses.unwrap_or(80_000_000),
                seed: file.calibration_seed.unwrap_or(1),
            },
        };
        if let PairSource::Fixed(mu) = pair_source {
            hardware.pair_prob = mu;
        }
        hardware.validate().map_err(|e| cfg(e.to_string()))?;

        let n_pulses = match (file.n_pulses, file.duration_s) {
            (Some(_), Some(_)) => return Err(cfg("set either n_pulses or duration_s, not both".into())),
            (Some(n), None) => n,
            (None, d) => {
                let d = d.unwrap_or(DEFAULT_DURATION_S);
                if !(d > 0.0) || !d.is_finite() {
                    return Err(cfg(format!("duration_s must be positive, got {d}")));
                }
                (d * hardware.pulse_rate).floor() as i64
            }
        };
        if n_pulses <= 0 {
            return Err(cfg(format!("n_pulses must be positive, got {n_pulses}")));
        }
        let eve = file
            .eve_strategy
            .as_deref()
            .map(str::parse::<EveStrategy>)
            .transpose()
            .map_err(|e| cfg(e.to_string()))?;
        let sample_fraction = file.sample_fraction.unwrap_or(1.0);
        if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
            return Err(cfg(format!("sample_fraction must lie in (0, 1], got {sample_fraction}")));
        }
        Ok(Self {
            hardware,
            pair_source,
            phases: PhaseSettings::new(file.phi.unwrap_or(0.0), file.alpha.unwrap_or(0.0), file.beta.unwrap_or(0.0)),
            n_pulses,
            seed: file.seed.unwrap_or(0),
            eve,
            sample_fraction,
            phase_points: file.phase_points.unwrap_or(12),
            losses_db: file.losses_db.clone().unwrap_or_else(|| vec![0.0, 6.0]),
            out_dir: file.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::resolve(&ConfigFile::load(p)?),
            None => Self::resolve(&ConfigFile::default()),
        }
    }

    /// Hardware parameters with the pair probability fixed, calibrating if
    /// requested.
    pub fn hardware(&self) -> Result<HardwareParams, CliError> {
        match self.pair_source {
            PairSource::Fixed(_) => Ok(self.hardware),
            PairSource::Calibrated { target_hz, pulses, seed } => {
                let mu = calibrate_pair_prob(&self.hardware, target_hz, pulses, seed)
                    .map_err(|e| CliError::Runtime(format!("calibration failed: {e}")))?;
                log::info!("calibrated pair_prob = {mu:.6} for {target_hz} Hz singles");
                Ok(HardwareParams {
                    pair_prob: mu,
                    ..self.hardware
                })
            }
        }
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("experiment serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
