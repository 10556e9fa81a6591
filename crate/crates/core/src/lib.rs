//! Numerical laboratory for the two-dimensional Keller-Segel system on a
//! periodic box: mild-solution solvers for the parabolic-elliptic and
//! parabolic-parabolic models, decay norms, the `tau -> 0` limit and
//! Fourier-side blow-up certificates.

pub mod blowup;
pub mod error;
pub mod expint;
pub mod norms;
pub mod operators;
pub mod solver;
pub mod spectral;
pub mod tau_limit;
pub mod trajectory;

pub use blowup::{
    CertificateSequences, CertificateSummary, LowerBoundCheck, LowerBoundSetup, SpectralTrajectory,
};
pub use error::{Error, Result};
pub use norms::NormReport;
pub use operators::{ModelParams, VectorField};
pub use solver::{MarchOptions, MarchScheme, PicardReport};
pub use spectral::{Grid, RealField, SpectralField};
pub use tau_limit::{SweepConfig, SweepResult, Topology};
pub use trajectory::{Trajectory, TrajectoryMeta};
