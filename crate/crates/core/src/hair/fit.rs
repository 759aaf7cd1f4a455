use super::poisson::{JacobianField, PoissonSolver};
use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::TemplateMesh;
use crate::optim::{Adam, AdamConfig};
use crate::silhouette::{part_label, render_mesh_labels, render_mesh_labels_backward, LabeledMeshScene, MeshTopology, DEFAULT_SOFTNESS};

const RESIDUAL_TOL: f64 = 1e-9;

/// One view of the fitting target: a camera and its label image.
#[derive(Debug, Clone, PartialEq)]
pub struct HairTarget {
    pub camera: CameraPose,
    /// Row-major `H x W` scalar labels.
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HairFitConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub width: usize,
    pub height: usize,
    pub softness: f64,
}

impl Default for HairFitConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            adam: AdamConfig::with_lr(1e-2),
            width: 256,
            height: 256,
            softness: DEFAULT_SOFTNESS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HairFitResult {
    pub mesh: TemplateMesh,
    pub field: JacobianField,
    /// Loss after the last update.
    pub final_loss: f64,
    /// Loss before each update.
    pub trace: Vec<f64>,
}

struct Objective<'a> {
    solver: &'a PoissonSolver,
    topology: MeshTopology,
    label: f64,
    rest_centroid: Vec3,
    targets: &'a [HairTarget],
    config: &'a HairFitConfig,
}

impl Objective<'_> {
    fn vertices(&self, field: &JacobianField) -> Result<Vec<Vec3>> {
        let mut v = self.solver.solve(field)?;
        for p in &mut v {
            *p += self.rest_centroid;
        }
        Ok(v)
    }

    /// Mean L1 over views and pixels, optionally with its field gradient.
    fn eval(&self, field: &JacobianField, with_grad: bool) -> Result<(f64, Option<JacobianField>)> {
        let verts = self.vertices(field)?;
        let scene = LabeledMeshScene::new().with_part(&verts, &self.topology, self.label);
        let (w, h) = (self.config.width, self.config.height);
        let norm = 1.0 / ((w * h) as f64 * self.targets.len() as f64);
        let mut loss = 0.0;
        let mut d_verts = vec![Vec3::zeros(); verts.len()];
        for t in self.targets {
            let img = render_mesh_labels(&scene, &t.camera, w, h, self.config.softness)?;
            let diff: Vec<f64> = img.values.iter().zip(&t.labels).map(|(a, b)| a - b).collect();
            loss += diff.iter().map(|d| d.abs()).sum::<f64>() * norm;
            if with_grad {
                // residuals at rounding level count as exact matches
                let up: Vec<f64> = diff.iter().map(|d| if d.abs() <= RESIDUAL_TOL { 0.0 } else { d.signum() * norm }).collect();
                let g = render_mesh_labels_backward(&scene, &t.camera, w, h, self.config.softness, &up)?;
                for (acc, gv) in d_verts.iter_mut().zip(&g[0]) {
                    *acc += gv;
                }
            }
        }
        if !with_grad {
            return Ok((loss, None));
        }
        let (jacobians, translation) = self.solver.solve_backward(&d_verts)?;
        Ok((loss, Some(JacobianField { jacobians, translation })))
    }
}

/// Fits per-face Jacobians and a translation of `template` so that its label
/// renders match every target (mean L1 on raw label values, averaged over
/// views), starting from the identity field.
pub fn fit_hair_mesh(template: &TemplateMesh, targets: &[HairTarget], config: &HairFitConfig) -> Result<HairFitResult> {
    if targets.is_empty() {
        return Err(Error::Config("hair fitting needs at least one target view".into()));
    }
    if config.iterations == 0 {
        return Err(Error::Config("iteration budget must be at least 1".into()));
    }
    for (i, t) in targets.iter().enumerate() {
        if t.labels.len() != config.width * config.height {
            return Err(Error::Shape(format!(
                "target {i} has {} pixels, expected {}x{}",
                t.labels.len(),
                config.width,
                config.height
            )));
        }
    }
    let solver = PoissonSolver::new(template)?;
    let objective = Objective {
        solver: &solver,
        topology: MeshTopology::from_mesh(template)?,
        label: part_label(template)?,
        rest_centroid: template.centroid(),
        targets,
        config,
    };
    let faces = template.faces.len();
    let mut field = JacobianField::identity(faces);
    let mut params = field.to_flat();
    let mut adam = Adam::new(params.len(), config.adam);
    let mut trace = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let (loss, grad) = objective.eval(&field, true)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("hair fit loss is not finite at iteration {iter}")));
        }
        trace.push(loss);
        adam.step(&mut params, &grad.expect("gradient requested").to_flat())
            .map_err(|e| Error::Numeric(format!("iteration {iter}: {e}")))?;
        field = JacobianField::from_flat(&params, faces)?;
    }
    let (final_loss, _) = objective.eval(&field, false)?;
    if !final_loss.is_finite() {
        return Err(Error::Numeric(format!("hair fit loss is not finite at iteration {}", config.iterations)));
    }
    let mesh = template.with_vertices(objective.vertices(&field)?)?;
    Ok(HairFitResult {
        mesh,
        field,
        final_loss,
        trace,
    })
}
