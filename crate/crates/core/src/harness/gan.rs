//! Toy adversarial training of the generator against the synthetic dataset.
//!
//! Each step samples one real view, conditions the generator on that view's
//! camera or (with probability `pose_swap`) on a different camera of the
//! ring, renders the generated head at the real camera, and takes one Adam
//! step on the generator followed by one on the discriminator. The
//! discriminator step scores the fake rendered during the generator step.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hair::{blend_hair_shape, blend_hair_shape_backward, HairBlendModel};
use crate::losses::{adv_loss_d, adv_loss_g, l_mask, l_rgb, l_seg, l_seg_mesh, total_loss, LossReport, LossTerms, LossWeights};
use crate::net::{
    discriminator_backward, r1_parameter_gradient, sample_drop, sample_latent, GeneratorGraph, NetConfig, NetParams, ParamGrads,
    SynthesisConfig,
};
use crate::optim::{Adam, AdamConfig};
use crate::render::RenderGrads;
use crate::silhouette::DEFAULT_SOFTNESS;

use super::dataset::SyntheticDataset;
use super::fit::{add_uv_tv, regularize};
use super::metrics::MetricsLog;

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub steps: usize,
    pub seed: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub weights: LossWeights,
    pub pose_swap: f64,
    pub net: NetConfig,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Checkpoints are only written when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl GanConfig {
    /// Small networks for `texture_resolution` textures and square
    /// `image_size` renders.
    pub fn toy(texture_resolution: usize, image_size: usize) -> Self {
        let mut synthesis = SynthesisConfig::toy(texture_resolution);
        synthesis.z_dim = 64;
        synthesis.w_dim = 64;
        synthesis.mapping_width = 64;
        synthesis.mapping_layers = 2;
        synthesis.geometry_hidden = 32;
        synthesis.channels = synthesis.channels.iter().map(|&c| c.min(32)).collect();
        let mut net = NetConfig {
            synthesis,
            ..NetConfig::default()
        };
        net.discriminator.image_resolution = image_size;
        net.discriminator.feature_dim = 64;
        Self {
            steps: 200,
            seed: 0,
            lr_g: 2e-3,
            lr_d: 2e-3,
            weights: LossWeights::default(),
            pose_swap: 0.8,
            net,
            log_every: 1,
            checkpoint_every: 50,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.weights.validate()?;
        if self.steps == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("step budget and cadences must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pose_swap) {
            return Err(Error::Config("pose swap probability must lie in [0, 1]".into()));
        }
        if !(self.lr_g.is_finite() && self.lr_g > 0.0 && self.lr_d.is_finite() && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// What happened in one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct GanStep {
    pub report: LossReport,
    pub d_loss: f64,
    pub r1: f64,
    pub dropped: bool,
    pub swapped: bool,
}

impl GanStep {
    pub fn log_line(&self, step: usize) -> String {
        format!(
            "{} d_adv={} r1={} drop={} swap={}",
            self.report.log_line(step),
            self.d_loss,
            self.r1,
            self.dropped as u8,
            self.swapped as u8
        )
    }

    pub fn is_finite(&self) -> bool {
        self.report.total.is_finite() && self.d_loss.is_finite() && self.r1.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct GanRun {
    pub params: NetParams,
    pub steps: Vec<GanStep>,
    pub drops: usize,
    pub swaps: usize,
    pub checkpoints: Vec<PathBuf>,
}

/// One Adam state per parameter tensor.
struct Optimizers(Vec<Adam>);

impl Optimizers {
    fn new(params: &NetParams, lr_g: f64, lr_d: f64) -> Self {
        Self(
            params
                .names()
                .iter()
                .enumerate()
                .map(|(i, n)| Adam::new(params.tensor(i).len(), AdamConfig::with_lr(if n.starts_with("g.") { lr_g } else { lr_d })))
                .collect(),
        )
    }

    /// Steps every tensor whose name starts with `prefix`.
    fn step(&mut self, params: &mut NetParams, grads: &ParamGrads, prefix: &str) -> Result<()> {
        for i in 0..params.len() {
            if !params.names()[i].starts_with(prefix) {
                continue;
            }
            let n = params.tensor(i).len();
            let zeros;
            let g = match grads.get(i) {
                Some(g) => g,
                None => {
                    zeros = vec![0.0; n];
                    &zeros
                }
            };
            self.0[i].step(&mut params.tensor_mut(i).data, g)?;
        }
        Ok(())
    }
}

fn save_checkpoint(params: &NetParams, dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    params.save(&path)?;
    Ok(path)
}

/// Alternating generator and discriminator training on `dataset`, with hair
/// shapes from `model`. Deterministic given `config.seed`.
pub fn train_toy_gan(dataset: &SyntheticDataset, model: &HairBlendModel, config: &GanConfig, log: &mut MetricsLog) -> Result<GanRun> {
    config.validate()?;
    if dataset.scenes.is_empty() || dataset.spec.views == 0 {
        return Err(Error::Config("training needs a nonempty dataset".into()));
    }
    let rig = &dataset.rig;
    let syn = &config.net.synthesis;
    let dcfg = &config.net.discriminator;
    let size = dataset.spec.image_size;
    if rig.texture_resolution() != syn.output_resolution {
        return Err(Error::Config(format!(
            "rig textures are {0}x{0}, generator emits {1}x{1}",
            rig.texture_resolution(),
            syn.output_resolution
        )));
    }
    if dcfg.image_resolution != size {
        return Err(Error::Config(format!("discriminator expects {} px images, dataset has {size}", dcfg.image_resolution)));
    }
    if model.vertex_count() != rig.hair_template.vertices.len() || model.num_coeffs != syn.num_coeffs {
        return Err(Error::Shape("blend model does not match the hair template and generator".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetParams::init(&config.net, rng.random())?;
    let mut opt = Optimizers::new(&params, config.lr_g, config.lr_d);
    let w = &config.weights;
    let views = dataset.spec.views;
    let mut run = GanRun {
        params: params.clone(),
        steps: Vec::with_capacity(config.steps),
        drops: 0,
        swaps: 0,
        checkpoints: Vec::new(),
    };

    for step in 0..config.steps {
        let scene = &dataset.scenes[rng.random_range(0..dataset.scenes.len())];
        let v = rng.random_range(0..views);
        let real = &scene.views[v];
        let swapped = views > 1 && rng.random::<f64>() < config.pose_swap;
        let cond = if swapped {
            let u = rng.random_range(0..views - 1);
            &scene.views[if u >= v { u + 1 } else { u }].camera
        } else {
            &real.camera
        };
        let z = sample_latent(&mut rng, syn.z_dim);
        let dropped = sample_drop(&mut rng, syn.drop_probability);

        let outcome = (|| -> Result<(GanStep, ParamGrads, ParamGrads)> {
            // Generator step.
            let graph = GeneratorGraph::from_latent(&params, syn, &z, cond, 1.0, dropped)?;
            let out = graph.outputs()?;
            let hair_vertices = blend_hair_shape(model, &out.theta)?;
            let head = rig.compose(&out.face, &out.hair, &hair_vertices)?;
            let img = head.render(&real.camera, size)?;
            let fake = discriminator_backward(&params, dcfg, &img.rgb, &img.mask, &real.camera, 1.0)?;
            let (adv, d_adv) = adv_loss_g(&[fake.score]);
            let ga = w.adv * d_adv[0];

            let mut terms = LossTerms {
                adv,
                ..LossTerms::default()
            };
            let (lr, gr) = l_rgb(&img.rgb, &real.rgb)?;
            let (lm, gm) = l_mask(&img.mask, &real.mask)?;
            let (ls, gs) = l_seg(&img.seg, &real.seg)?;
            (terms.rgb, terms.mask, terms.seg) = (lr, lm, ls);
            let upstream = RenderGrads {
                rgb: gr.iter().zip(&fake.rgb).map(|(g, f)| w.rgb * g + ga * f).collect(),
                mask: gm.iter().zip(&fake.mask).map(|(g, f)| w.mask * g + ga * f).collect(),
                seg: gs.iter().map(|g| w.seg * g).collect(),
            };
            let mut acc = head.render_backward(&real.camera, size, &upstream)?;
            let d_offsets = regularize(&head, w, &mut terms, &mut acc);
            let mut grads = rig.compose_backward(&out.face, &out.hair, &head, &acc, Some(&d_offsets))?;
            add_uv_tv(rig, &out.face, &out.hair, w, &mut terms, &mut grads)?;

            let labels = rig.mesh_labels(&hair_vertices, &real.camera, size, DEFAULT_SOFTNESS)?;
            let (lsm, gsm) = l_seg_mesh(&labels.values, &real.seg)?;
            terms.seg_mesh = lsm;
            let gsm: Vec<f64> = gsm.iter().map(|g| w.seg_mesh * g).collect();
            let d_mesh = rig.mesh_labels_backward(&hair_vertices, &real.camera, size, DEFAULT_SOFTNESS, &gsm)?;
            for (a, d) in grads.hair_vertices.iter_mut().zip(&d_mesh) {
                *a += d;
            }
            let d_theta = blend_hair_shape_backward(model, &grads.hair_vertices)?;
            let g_grads = graph.backward(Some(&grads.hair), Some(&grads.face), Some(&d_theta))?.params;
            let report = total_loss(&terms, w, head.combined.len())?;

            // Discriminator step on the same fake and the real view.
            let real_d = discriminator_backward(&params, dcfg, &real.rgb, &real.mask, &real.camera, 1.0)?;
            let (d_loss, d_real, d_fake) = adv_loss_d(&[real_d.score], &[fake.score])?;
            let (r1, mut d_grads) = r1_parameter_gradient(&params, dcfg, &real.rgb, &real.mask, &real.camera, w)?;
            d_grads.accumulate(&real_d.params, d_real[0]);
            d_grads.accumulate(&fake.params, d_fake[0]);
            let record = GanStep {
                report,
                d_loss,
                r1,
                dropped,
                swapped,
            };
            if !record.is_finite() {
                return Err(Error::Numeric("non-finite loss".into()));
            }
            g_grads.check_finite(&params)?;
            d_grads.check_finite(&params)?;
            Ok((record, g_grads, d_grads))
        })();

        let (record, g_grads, d_grads) = match outcome {
            Ok(o) => o,
            Err(e @ (Error::Numeric(_) | Error::Render(_))) => {
                let saved = match &config.checkpoint_dir {
                    Some(dir) => format!("; last good parameters in {}", save_checkpoint(&params, dir, "last_good.3dgh")?.display()),
                    None => String::new(),
                };
                return Err(Error::Numeric(format!("training diverged at step {step}: {e}{saved}")));
            }
            Err(e) => return Err(e),
        };
        opt.step(&mut params, &g_grads, "g.")?;
        opt.step(&mut params, &d_grads, "d.")?;
        if params.validate().is_err() {
            let saved = match &config.checkpoint_dir {
                Some(dir) => format!("; last good parameters in {}", save_checkpoint(&run.params, dir, "last_good.3dgh")?.display()),
                None => String::new(),
            };
            return Err(Error::Numeric(format!("parameters became non-finite at step {step}{saved}")));
        }
        run.params.clone_from(&params);

        run.drops += dropped as usize;
        run.swaps += swapped as usize;
        if step % config.log_every == 0 || step + 1 == config.steps {
            log.push(record.log_line(step))?;
        }
        run.steps.push(record);
        if let Some(dir) = &config.checkpoint_dir {
            if (step + 1) % config.checkpoint_every == 0 || step + 1 == config.steps {
                run.checkpoints.push(save_checkpoint(&params, dir, &format!("step_{:06}.3dgh", step + 1))?);
            }
        }
    }
    log.push(format!("steps={} drops={} swaps={}", config.steps, run.drops, run.swaps))?;
    Ok(run)
}
