//! Discrete rotation-group representations, steerable convolution kernels,
//! a minimal reverse-mode tensor engine, and equivariant transporter
//! pick-and-place models.

pub mod field;
pub mod group;
pub mod io;
pub mod kernels;
pub mod scalar;

pub use field::{CropSpec, FeatureField, FiberType, Interp};
pub use group::{GroupElement, GroupError, OrientationDistribution, RepKind, Representation};
pub use kernels::{
    check_steerability, cross_correlate, lemma4_check, project_kernel, Projector, SteerableKernel,
};
