//! Dense network machinery: the MLP with hand-written backprop, Adam, and the
//! two action-distribution families.

pub mod adam;
pub mod dist;
pub mod mlp;
pub mod params;

pub use adam::AdamState;
pub use dist::{Action, DistGrad, PolicyDistribution};
pub use mlp::{ForwardCache, Mlp};
pub use params::{checksum_f64, ParamVector, Segment};
