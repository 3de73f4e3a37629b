//! Shared field math: contraction, signed distance fields, density and the
//! annealing schedule.

pub mod contraction;
pub mod density;
pub mod mlp;
pub mod sdf;

pub use contraction::{contract, uncontract, ContractedPoint, WorldPoint};
pub use density::{beta_at, density_derivative, density_from_sdf, BetaSchedule, DensityParams};
pub use mlp::{Mlp, MlpConfig, MlpWorkspace, SDF_OUTPUT};
pub use sdf::{sdf_gradient, FieldSampler, SdfField};
