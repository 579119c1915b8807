//! Sum-rate optimization for an active-RIS-aided downlink RSMA system.
//!
//! A base station with `N_T` antennas serves `K` single-antenna users through
//! rate-splitting multiple access, assisted by an `L`-element reconfigurable
//! intelligent surface that can amplify as well as phase-shift the incident
//! signal. The library provides:
//!
//! * [`channel`] — reproducible network geometry and Rayleigh channel draws,
//!   plus the equivalent BS→user channel through the RIS.
//! * [`rates`] — exact SINR / rate / power evaluation and feasibility checks
//!   for the sum-rate maximization problem.
//! * [`sca`] — the joint beamforming and common-rate subproblem, solved by
//!   successive convex approximation.
//! * [`ris`] — the RIS precoding subproblem via the Lagrangian dual and
//!   quadratic transforms, assembled into a QCQP.
//! * [`solver`] — a structured convex-program contract backed by a conic
//!   interior-point solver.
//! * [`harness`] — the alternating outer loop, baselines, sweeps, and CSV
//!   reporting.

pub mod channel;
pub mod config;
pub mod error;
pub mod harness;
pub mod rates;
pub mod ris;
pub mod sca;
pub mod solver;
pub mod validation;

pub use config::ScenarioConfig;
pub use error::Error;

/// Complex column vector used for channels, beams, and the RIS precoder.
pub type CVector = nalgebra::DVector<num_complex::Complex64>;
/// Complex matrix (BS→RIS channel, quadratic forms).
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;
/// Real column vector.
pub type RVector = nalgebra::DVector<f64>;
/// Real matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;

pub type Result<T> = std::result::Result<T, Error>;
