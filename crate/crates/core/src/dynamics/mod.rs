//! Driven open-system dynamics of qubit subsets and the measurement
//! protocols built on them.

pub mod evolve;
pub mod integrator;
pub mod model;
pub mod protocols;
pub mod record;
pub mod stark;

pub use evolve::{evolve, evolve_open, EvolveOptions, NoiseSpec, QubitNoise, Readout};
pub use integrator::IntegratorOptions;
pub use model::{DriveTone, DrivenHamiltonian, Envelope, Frame, SystemModel};
pub use record::{Axis, ExperimentRecord};
pub use stark::{stark_amplitude_for_shift, stark_shift};
