//! Simulation of entanglement-based quantum key distribution with time-bin
//! qubits analyzed by unbalanced interferometers.
//!
//! * [`quantum`]: path-amplitude model of the two-photon state and analyzers.
//! * [`hardware`]: Monte Carlo of the pulsed source, losses, detectors and
//!   coincidence extraction.
//! * [`protocol`]: basis sifting over a message transport and QBER estimation.
//! * [`adversary`]: intercept-resend eavesdropping.
//! * [`analysis`]: fringe fits, error statistics and loss scans.
//! * [`io`]: event and coincidence text files.

pub mod adversary;
pub mod analysis;
pub mod hardware;
pub mod io;
pub mod protocol;
pub mod quantum;

pub use adversary::EveStrategy;
pub use hardware::{HardwareParams, SessionLog, TripleCoincidence};
pub use protocol::{Basis, KeyBit, QberReport};
pub use quantum::{PhaseSettings, PortLabel, TimeSlot};
