//! Deformable hair geometry.
//!
//! A hair mesh is deformed through per-face target Jacobians that are turned
//! back into vertex positions by a least-squares Poisson solve. Fitting
//! optimizes those Jacobians against multi-view label silhouettes; a set of
//! fitted meshes then yields a PCA blend-shape model
//! `M(θ) = M̄ + σ Σ θ_n X_n`.

mod blend;
mod fit;
mod operator;
mod poisson;

pub use blend::{blend_hair_shape, blend_hair_shape_backward, build_blend_model, project_onto_model, HairBlendModel, NUM_COEFFS};
pub use fit::{fit_hair_mesh, HairFitConfig, HairFitResult, HairTarget};
pub use operator::{mesh_gradient_operator, GradientOperator};
pub use poisson::{JacobianField, PoissonSolver};
