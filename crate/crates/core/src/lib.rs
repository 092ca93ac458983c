//! Voxel-based volumetric animation numerics.
//!
//! A canonical object lives in a voxel grid of density, color and part
//! logits. Part poses, recovered from 2D/3D keypoint correspondences with
//! EPnP, deform it through linear blend skinning; the deformed volume is
//! rendered by quadrature along camera rays. Analytic gradients of the
//! rendering losses drive scene inversion, and a small set of evaluation
//! metrics covers depth correlation and novel-view consistency.

pub mod cli;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod optimizer;
pub mod pnp;
pub mod render;
pub mod scene_io;
pub mod skinning;
pub mod volume;

pub use geometry::{PinholeCamera, RigidTransform, Vec2, Vec3};
pub use image::Image;
pub use render::{render, RenderConfig, RenderOutput};
pub use skinning::PartPoseSet;
pub use volume::{CanonicalVolume, RenderCube, VoxelGrid};
