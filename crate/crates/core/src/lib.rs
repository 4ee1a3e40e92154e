//! Two-phase guided flow-matching sampler for steering a video-to-audio
//! model toward a counterfactual caption, plus an analytic Gaussian-mixture
//! world to run it against and the frame-level metrics that score it.

pub mod backend;
pub mod condition;
pub mod error;
pub mod gmm;
pub mod grid;
pub mod guidance;
pub mod harness;
pub mod latent;
pub mod metrics;
pub mod sampler;
pub mod wire;

pub use backend::{
    evaluate_shared, Access, F32Boundary, FnField, VelocityBatch, VelocityField, VelocityRequest, ZeroField,
};
pub use condition::{ConditionId, ConditionKind, ConditionPair};
pub use error::{Error, Result};
pub use gmm::{GmmBackend, SceneRegistry};
pub use grid::{uniform_grid, TimestepGrid};
pub use guidance::{guided_velocity, GuidanceForm, GuidanceSpec, GuidanceWeights, PhaseSchedule, Variant};
pub use latent::{init_latent, Latent, Seed};
pub use sampler::{euler_from, euler_sample, SampleOptions, StepTrace, Trajectory};
