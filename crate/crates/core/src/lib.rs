//! Composable hair/face Gaussian head generation.
//!
//! Gaussians are rigged to the UV layouts of two template meshes (face and
//! hair), rendered with a tile-based differentiable rasterizer, and produced
//! by a dual-branch generator whose hair branch attends to the face latent.
//! The hair mesh itself deforms through a PCA blend-shape model fitted with
//! Jacobian fields and a Poisson solve.
//!
//! Module map:
//!
//! - [`scene`]: Gaussian, texture, mesh, and camera types plus texel rigging
//!   and Gaussian spawning.
//! - [`render`]: tiled rasterizer, per-pixel reference renderer, and the
//!   analytic backward pass.
//! - [`silhouette`]: soft-edged label rasterization of triangle meshes.
//! - [`hair`]: deformation gradients, Poisson solve, silhouette fitting, and
//!   the blend-shape model.
//! - [`net`]: the generator and discriminator, built on [`autodiff`].
//! - [`losses`]: every training objective term and their weighted total.
//! - [`harness`]: synthetic data, fitting/training drivers, editing, configs,
//!   checkpoints, and metrics.

pub mod autodiff;
pub mod camera;
pub mod container;
pub mod error;
pub mod gradcheck;
pub mod hair;
pub mod harness;
pub mod image_io;
pub mod losses;
pub mod math;
pub mod mesh;
pub mod net;
pub mod optim;
pub mod render;
pub mod scene;
pub mod silhouette;

pub use camera::CameraPose;
pub use error::{Error, Result};
pub use mesh::TemplateMesh;
pub use render::{RenderOptions, RenderOutput};
pub use scene::{GaussianPrimitive, GaussianSet, GaussianTextureMap, PartLabel, UvRig};
