//! Intercept-resend eavesdropping on both photons of each pair.
//!
//! In the time basis Eve learns the emission time (short or long pump path)
//! and resends a photon pair with that definite emission time. In the energy
//! basis she measures each photon with her own unbalanced interferometer,
//! phase-aligned with the legitimate analyzer downstream, and resends the
//! single-photon superposition `(|s> + k e^{i theta} |l>) / sqrt 2` that
//! reproduces her outcome `k` with certainty at that phase.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{run_session_with, HardwareError, HardwareParams, SessionLog};
use crate::quantum::{
    enumerate_paths, joint_amplitude, outcome_distribution, JointDistribution, ModelError, Outcome,
    PhaseSettings, PortLabel, PumpSplitting, TimeSlot,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdversaryError {
    #[error("p_time must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("unknown eavesdropping strategy {0:?}; expected time, energy or random:<p_time>")]
    UnknownStrategy(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EveStrategy {
    TimeBasis,
    EnergyBasis,
    /// Time basis with probability `p_time`, energy basis otherwise, chosen
    /// independently per pair.
    RandomPerPair { p_time: f64 },
}

impl EveStrategy {
    pub fn p_time(&self) -> f64 {
        match *self {
            EveStrategy::TimeBasis => 1.0,
            EveStrategy::EnergyBasis => 0.0,
            EveStrategy::RandomPerPair { p_time } => p_time,
        }
    }

    pub fn validate(&self) -> Result<(), AdversaryError> {
        let p = self.p_time();
        if (0.0..=1.0).contains(&p) {
            Ok(())
        } else {
            Err(AdversaryError::BadProbability(p))
        }
    }
}

impl fmt::Display for EveStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EveStrategy::TimeBasis => write!(f, "time"),
            EveStrategy::EnergyBasis => write!(f, "energy"),
            EveStrategy::RandomPerPair { p_time } => write!(f, "random:{p_time}"),
        }
    }
}

impl FromStr for EveStrategy {
    type Err = AdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let strategy = match s.trim() {
            "time" => EveStrategy::TimeBasis,
            "energy" => EveStrategy::EnergyBasis,
            other => {
                let p = other
                    .strip_prefix("random:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| AdversaryError::UnknownStrategy(s.to_string()))?;
                EveStrategy::RandomPerPair { p_time: p }
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// Joint distribution after a time-basis intercept-resend: the pump path is
/// known, so every path contributes incoherently.
fn time_attack(phases: &PhaseSettings) -> Result<JointDistribution, ModelError> {
    let split = PumpSplitting::MAXIMAL;
    let mut dist = JointDistribution::zeros();
    for path in enumerate_paths() {
        for port_a in PortLabel::ALL {
            for port_b in PortLabel::ALL {
                let amp = joint_amplitude(path, port_a, port_b, phases, &split)?;
                dist.add(
                    Outcome {
                        slot_a: path.alice_slot(),
                        port_a,
                        slot_b: path.bob_slot(),
                        port_b,
                    },
                    amp.norm_sqr(),
                );
            }
        }
    }
    Ok(dist)
}

/// Slot/port distribution of one resent energy eigenstate `k` behind an
/// analyzer at Eve's phase: satellites 1/8 per port, central port `k` only.
fn resent_photon(slot: TimeSlot, port: PortLabel, k: PortLabel) -> f64 {
    if slot.is_satellite() {
        0.125
    } else if port == k {
        0.5
    } else {
        0.0
    }
}

fn energy_attack(phases: &PhaseSettings) -> JointDistribution {
    let c = phases.fringe_phase().cos();
    let mut dist = JointDistribution::zeros();
    for k_a in PortLabel::ALL {
        for k_b in PortLabel::ALL {
            // Eve's outcome statistics are the undisturbed central correlations
            let p_eve = 0.25 * (1.0 + f64::from(k_a.sign() * k_b.sign()) * c);
            for o in Outcome::all() {
                dist.add(o, p_eve * resent_photon(o.slot_a, o.port_a, k_a) * resent_photon(o.slot_b, o.port_b, k_b));
            }
        }
    }
    dist
}

/// Outcome distribution seen by Alice and Bob under `strategy` (maximal
/// pump splitting).
pub fn attacked_distribution(
    phases: &PhaseSettings,
    strategy: &EveStrategy,
) -> Result<JointDistribution, AdversaryError> {
    strategy.validate()?;
    let p = strategy.p_time();
    let dist = if p == 1.0 {
        time_attack(phases)?
    } else if p == 0.0 {
        energy_attack(phases)
    } else {
        time_attack(phases)?.mix(&energy_attack(phases), p)
    };
    Ok(dist)
}

/// `attacked_distribution`, or the undisturbed distribution for `None`.
pub fn distribution_for(
    phases: &PhaseSettings,
    strategy: Option<&EveStrategy>,
) -> Result<JointDistribution, AdversaryError> {
    match strategy {
        Some(s) => attacked_distribution(phases, s),
        None => Ok(outcome_distribution(phases, &PumpSplitting::MAXIMAL)?),
    }
}

#[derive(Debug, Error)]
pub enum AttachError {
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Hardware(#[from] HardwareError),
}

/// Same as [`crate::hardware::run_session`], with pairs drawn from the
/// attacked distribution. The strategy is recorded on the log.
pub fn attach_to_session(
    params: &HardwareParams,
    phases: &PhaseSettings,
    strategy: &EveStrategy,
    n_pulses: i64,
    seed: u64,
) -> Result<SessionLog, AttachError> {
    let dist = attacked_distribution(phases, strategy)?;
    Ok(run_session_with(params, phases, &dist, Some(*strategy), n_pulses, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Basis;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn time_attack_example() {
        let d = attacked_distribution(&PhaseSettings::default(), &EveStrategy::TimeBasis).unwrap();
        assert!(close(d.sifted_error_rate(Basis::Energy).unwrap(), 0.5));
        assert!(close(d.sifted_error_rate(Basis::Time).unwrap(), 0.0));
        assert!(close(d.total(), 1.0));
    }

    #[test]
    fn energy_attack_populates_forbidden_cells() {
        let d = attacked_distribution(&PhaseSettings::default(), &EveStrategy::EnergyBasis).unwrap();
        assert!(d.slot_pair_probability(TimeSlot::EARLY, TimeSlot::LATE) > 0.0);
        assert!(close(d.sifted_error_rate(Basis::Time).unwrap(), 0.5));
        assert!(close(d.sifted_error_rate(Basis::Energy).unwrap(), 0.0));
        assert!(close(d.total(), 1.0));
    }

    #[test]
    fn half_mixture_gives_quarter_qber() {
        let d = attacked_distribution(&PhaseSettings::default(), &EveStrategy::RandomPerPair { p_time: 0.5 }).unwrap();
        assert!(close(d.sifted_error_rate(Basis::Time).unwrap(), 0.25));
        assert!(close(d.sifted_error_rate(Basis::Energy).unwrap(), 0.25));
    }

    #[test]
    fn time_attack_keeps_satellite_cells() {
        let phases = PhaseSettings::new(0.4, 2.2, -1.0);
        let clean = outcome_distribution(&phases, &PumpSplitting::MAXIMAL).unwrap();
        let d = attacked_distribution(&phases, &EveStrategy::TimeBasis).unwrap();
        for (o, p) in d.iter() {
            if o.slot_a.is_satellite() && o.slot_b.is_satellite() {
                assert!(close(p, clean.get(o)));
            }
        }
        let central = d.central_correlations().unwrap();
        for a in PortLabel::ALL {
            for b in PortLabel::ALL {
                assert!(close(central.get(a, b), 0.25));
            }
        }
    }

    #[test]
    fn null_strategy_is_undisturbed() {
        let phases = PhaseSettings::new(0.1, 0.2, 0.3);
        assert_eq!(
            distribution_for(&phases, None).unwrap(),
            outcome_distribution(&phases, &PumpSplitting::MAXIMAL).unwrap()
        );
    }

    #[test]
    fn parse_and_display() {
        for s in ["time", "energy", "random:0.5", "random:0.25"] {
            assert_eq!(s.parse::<EveStrategy>().unwrap().to_string(), s);
        }
        assert!("random:1.5".parse::<EveStrategy>().is_err());
        assert!("sideways".parse::<EveStrategy>().is_err());
        assert_eq!(
            "random:1".parse::<EveStrategy>().unwrap().p_time(),
            EveStrategy::TimeBasis.p_time()
        );
    }

    #[test]
    fn zero_pair_rate_gives_empty_log() {
        let params = HardwareParams {
            pair_prob: 0.0,
            ..HardwareParams::ideal()
        };
        for s in [EveStrategy::TimeBasis, EveStrategy::EnergyBasis, EveStrategy::RandomPerPair { p_time: 0.3 }] {
            let log = attach_to_session(&params, &PhaseSettings::default(), &s, 100_000, 3).unwrap();
            assert!(log.events.is_empty());
            assert_eq!(log.attack, Some(s));
        }
    }
}
