//! Dual-discrimination critic on concatenated RGB and mask renders with
//! projection conditioning on the camera.

use crate::autodiff::{Dual, Real, Tensor, Var};
use crate::camera::CameraPose;
use crate::error::{ensure_finite, Error, Result};
use crate::losses::{Discriminator, LossWeights};

use super::layers::Builder;
use super::{camera_features, DiscriminatorConfig, NetParams, ParamGrads, CAMERA_DIM};

fn disc_graph<R: Real>(b: &mut Builder<R>, cfg: &DiscriminatorConfig, image: Var, camera: Var) -> Var {
    let stages = cfg.stage_channels().expect("validated discriminator config");
    let conv = |b: &mut Builder<R>, x: Var, prefix: &str, stride: usize| {
        let w = b.param(&format!("{prefix}.w"));
        let bias = b.param(&format!("{prefix}.b"));
        let y = b.tape.conv2d(x, w, stride, 1);
        let y = b.tape.add_channel_bias(y, bias);
        b.lrelu(y)
    };
    let mut x = conv(b, image, "d.in", 1);
    for i in 1..stages.len() {
        x = conv(b, x, &format!("d.down{i}"), 2);
    }
    let n = b.tape.value(x).len();
    let f = b.tape.reshape(x, vec![1, n]);
    let f = b.linear(f, "d.fc");
    let f = b.lrelu(f);
    let raw = b.linear(f, "d.out");
    let raw = b.tape.reshape(raw, vec![1]);
    let e = b.linear(camera, "d.embed");
    let proj = b.tape.mul(f, e);
    let proj = b.tape.sum(proj);
    b.tape.add(raw, proj)
}

/// Packs `H×W×3` rgb and `H×W` mask into a `[4, H, W]` planar image.
fn pack(cfg: &DiscriminatorConfig, rgb: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.image_resolution * cfg.image_resolution;
    if rgb.len() != 3 * n || mask.len() != n {
        return Err(Error::Shape(format!(
            "discriminator expects {r}x{r} images, got {} rgb and {} mask values",
            rgb.len(),
            mask.len(),
            r = cfg.image_resolution
        )));
    }
    ensure_finite(rgb, "discriminator rgb")?;
    ensure_finite(mask, "discriminator mask")?;
    let mut out = vec![0.0; 4 * n];
    for p in 0..n {
        for c in 0..3 {
            out[c * n + p] = rgb[3 * p + c];
        }
        out[3 * n + p] = mask[p];
    }
    Ok(out)
}

fn unpack(n: usize, planar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut rgb = vec![0.0; 3 * n];
    for p in 0..n {
        for c in 0..3 {
            rgb[3 * p + c] = planar[c * n + p];
        }
    }
    (rgb, planar[3 * n..].to_vec())
}

fn build<'a, R: Real>(params: &'a NetParams, cfg: &DiscriminatorConfig, image: Tensor<R>, camera: &CameraPose) -> (Builder<'a, R>, Var, Var) {
    let mut b = Builder::new(params);
    let img = b.tape.leaf(image);
    let cam = b.input(vec![1, CAMERA_DIM], &camera_features(camera));
    let score = disc_graph(&mut b, cfg, img, cam);
    (b, img, score)
}

/// Raw (pre-sigmoid) realism score.
pub fn discriminator_forward(params: &NetParams, cfg: &DiscriminatorConfig, rgb: &[f64], mask: &[f64], camera: &CameraPose) -> Result<f64> {
    let planar = pack(cfg, rgb, mask)?;
    camera.validate()?;
    let r = cfg.image_resolution;
    let (b, _, score) = build::<f64>(params, cfg, Tensor::new(vec![4, r, r], planar), camera);
    Ok(b.tape.value(score).data[0])
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub score: f64,
    pub params: ParamGrads,
    /// `H×W×3`.
    pub rgb: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Score and the gradients of `d_score · score`.
pub fn discriminator_backward(
    params: &NetParams,
    cfg: &DiscriminatorConfig,
    rgb: &[f64],
    mask: &[f64],
    camera: &CameraPose,
    d_score: f64,
) -> Result<DiscriminatorGrads> {
    let planar = pack(cfg, rgb, mask)?;
    camera.validate()?;
    let r = cfg.image_resolution;
    let (b, img, score) = build::<f64>(params, cfg, Tensor::new(vec![4, r, r], planar), camera);
    let grads = b.tape.backward(score, vec![d_score]);
    let (d_rgb, d_mask) = unpack(r * r, &grads.get_or_zeros(img, 4 * r * r));
    Ok(DiscriminatorGrads {
        score: b.tape.value(score).data[0],
        params: b.param_grads(&grads, |v| v),
        rgb: d_rgb,
        mask: d_mask,
    })
}

/// R1 penalty `½(λ_rgb‖∇_rgb D‖² + λ_mask‖∇_mask D‖²)` at a real sample and
/// its parameter gradient.
///
/// The parameter gradient is the mixed second derivative `∂²D/∂θ∂x · Λ∇ₓD`,
/// obtained by a reverse pass over dual-valued inputs `x + εΛ∇ₓD`.
pub fn r1_parameter_gradient(
    params: &NetParams,
    cfg: &DiscriminatorConfig,
    rgb: &[f64],
    mask: &[f64],
    camera: &CameraPose,
    weights: &LossWeights,
) -> Result<(f64, ParamGrads)> {
    let planar = pack(cfg, rgb, mask)?;
    camera.validate()?;
    let r = cfg.image_resolution;
    let (b, img, score) = build::<f64>(params, cfg, Tensor::new(vec![4, r, r], planar.clone()), camera);
    let g = b.tape.backward(score, vec![1.0]).get_or_zeros(img, planar.len());
    ensure_finite(&g, "R1 input gradient")?;
    let n = r * r;
    let lambda = |i: usize| if i < 3 * n { weights.r1_rgb } else { weights.r1_mask };
    let penalty = 0.5 * g.iter().enumerate().map(|(i, v)| lambda(i) * v * v).sum::<f64>();

    let dual: Vec<Dual> = planar.iter().zip(&g).enumerate().map(|(i, (&x, &d))| Dual::new(x, lambda(i) * d)).collect();
    let (bd, _, score_d) = build::<Dual>(params, cfg, Tensor::new(vec![4, r, r], dual), camera);
    let grads = bd.tape.backward(score_d, vec![Dual::new(1.0, 0.0)]);
    let out = bd.param_grads(&grads, |v| v.eps);
    out.check_finite(params)?;
    Ok((penalty, out))
}

/// [`Discriminator`] backed by the network parameters.
pub struct NetDiscriminator<'a> {
    pub params: &'a NetParams,
    pub config: &'a DiscriminatorConfig,
}

impl Discriminator for NetDiscriminator<'_> {
    fn score(&self, rgb: &[f64], mask: &[f64], camera: &CameraPose) -> Result<f64> {
        discriminator_forward(self.params, self.config, rgb, mask, camera)
    }

    fn input_gradient(&self, rgb: &[f64], mask: &[f64], camera: &CameraPose) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let g = discriminator_backward(self.params, self.config, rgb, mask, camera, 1.0)?;
        Ok((g.score, g.rgb, g.mask))
    }
}
