//! Fixtures shared by the benchmarks.

use headgen::gradcheck::random_scene;
use headgen::hair::{JacobianField, PoissonSolver};
use headgen::mesh::{hair_mesh, HairStyle};
use headgen::silhouette::MeshTopology;
use headgen::{CameraPose, GaussianSet, TemplateMesh};

/// `count` random Gaussians and a camera that sees them.
pub fn splat_scene(count: usize) -> (GaussianSet, CameraPose) {
    random_scene(17, count)
}

/// Hair template at `rings x segments` and a mildly styled target.
pub fn hair_pair(rings: usize, segments: usize) -> (TemplateMesh, TemplateMesh) {
    let style = HairStyle {
        length: 0.1,
        flare: 0.1,
        volume: 0.05,
        back_length: 0.2,
    };
    (hair_mesh(rings, segments, &HairStyle::default()), hair_mesh(rings, segments, &style))
}

/// A prefactored solver and a perturbed Jacobian field for it.
pub fn poisson_problem(rings: usize, segments: usize) -> (PoissonSolver, JacobianField) {
    let (template, _) = hair_pair(rings, segments);
    let solver = PoissonSolver::new(&template).expect("template is solvable");
    let mut field = JacobianField::identity(template.faces.len());
    for (i, j) in field.jacobians.iter_mut().enumerate() {
        j[(0, 0)] += 0.01 * (i % 7) as f64;
    }
    (solver, field)
}

pub fn topology(mesh: &TemplateMesh) -> MeshTopology {
    MeshTopology::from_mesh(mesh).expect("valid mesh")
}
