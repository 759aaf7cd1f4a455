//! Mapping networks, synthesis stacks, and CFG-blended texture generation.

use crate::autodiff::{Real, Tensor, Var};
use crate::camera::CameraPose;
use crate::error::{ensure_finite, Error, Result};
use crate::scene::{GaussianTextureMap, TEXTURE_CHANNELS};

use super::layers::Builder;
use super::{camera_features, NetParams, ParamGrads, Role, SynthesisConfig, WCode, CAMERA_DIM};

pub(super) fn mapping_graph<R: Real>(b: &mut Builder<R>, cfg: &SynthesisConfig, z: Var, cam: Var) -> (Var, Var) {
    let mut x = b.tape.concat_cols(&[z, cam]);
    for i in 0..cfg.mapping_layers {
        let h = b.linear(x, &format!("g.map.fc{i}"));
        x = b.lrelu(h);
    }
    (b.linear(x, "g.map.hair"), b.linear(x, "g.map.face"))
}

pub(super) fn geometry_graph<R: Real>(b: &mut Builder<R>, w_hair: Var) -> Var {
    let h = b.linear(w_hair, "g.geom.fc0");
    let h = b.lrelu(h);
    b.linear(h, "g.geom.fc1")
}

/// Multi-head attention from per-pixel queries to the face tokens. Returns
/// the `[C, H, W]` residual and one `[HW, T]` weight matrix per head.
fn attention_graph<R: Real>(b: &mut Builder<R>, cfg: &SynthesisConfig, level: usize, x: Var, w_face: Var) -> (Var, Vec<Var>) {
    let shape = b.tape.shape(x).to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let p = format!("g.hair.b{level}.attn");
    let xm = b.tape.reshape(x, vec![c, h * w]);
    let xt = b.tape.transpose(xm);
    let wq = b.param(&format!("{p}.q"));
    let q = b.tape.matmul(xt, wq);
    let tokens = b.tape.reshape(w_face, vec![cfg.tokens, cfg.token_dim()]);
    let k = b.linear(tokens, &format!("{p}.k"));
    let v = b.linear(tokens, &format!("{p}.v"));
    let dh = c / cfg.heads;
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let cols = (head * dh, (head + 1) * dh);
        let qh = b.tape.slice_cols(q, cols.0, cols.1);
        let kh = b.tape.slice_cols(k, cols.0, cols.1);
        let vh = b.tape.slice_cols(v, cols.0, cols.1);
        let logits = b.tape.matmul_nt(qh, kh);
        let logits = b.tape.scale(logits, 1.0 / (dh as f64).sqrt());
        let a = b.tape.softmax_rows(logits);
        weights.push(a);
        outs.push(b.tape.matmul(a, vh));
    }
    let o = b.tape.concat_cols(&outs);
    let wo = b.param(&format!("{p}.o"));
    let o = b.tape.matmul(o, wo);
    let r = b.tape.transpose(o);
    (b.tape.reshape(r, vec![c, h, w]), weights)
}

/// One synthesis stack. `condition` is the face code and ω for the hair
/// branch, `None` for the face branch or a dropped condition.
fn synthesis_graph<R: Real>(b: &mut Builder<R>, cfg: &SynthesisConfig, part: &str, w: Var, condition: Option<(Var, f64)>) -> Var {
    let mut x = b.param(&format!("g.{part}.const"));
    let mut y: Option<Var> = None;
    for level in 0..cfg.channels.len() {
        let p = format!("g.{part}.b{level}");
        if level > 0 {
            x = b.tape.upsample2x(x);
        }
        let conv = b.modulated_conv(x, w, &format!("{p}.conv"), true);
        let bias = b.param(&format!("{p}.conv.b"));
        let conv = b.tape.add_channel_bias(conv, bias);
        x = b.lrelu(conv);
        if let Some((w_face, omega)) = condition {
            if omega != 0.0 {
                let (r, _) = attention_graph(b, cfg, level, x, w_face);
                let x_cond = b.tape.add(x, r);
                x = blend_vars(b, x_cond, x, omega);
            }
        }
        let rgb = b.modulated_conv(x, w, &format!("{p}.rgb"), false);
        y = Some(match y {
            None => rgb,
            Some(prev) => {
                let up = b.tape.upsample2x(prev);
                b.tape.add(up, rgb)
            }
        });
    }
    let bias = b.param(&format!("g.{part}.out_bias"));
    b.tape.add_channel_bias(y.expect("at least one synthesis level"), bias)
}

fn blend_vars<R: Real>(b: &mut Builder<R>, x_cond: Var, x_uncond: Var, omega: f64) -> Var {
    if omega == 1.0 {
        return x_cond;
    }
    let c = b.tape.scale(x_cond, omega);
    let u = b.tape.scale(x_uncond, 1.0 - omega);
    b.tape.add(c, u)
}

fn check_code(values: &[f64], len: usize, what: &str) -> Result<()> {
    if values.len() != len {
        return Err(Error::Shape(format!("{what} has {} values, expected {len}", values.len())));
    }
    ensure_finite(values, what)
}

/// `[14, R, R]` tensor to a texel-major texture.
fn chw_to_texture(t: &Tensor<f64>) -> GaussianTextureMap {
    let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        for p in 0..h * w {
            data[p * c + ch] = t.data[ch * h * w + p];
        }
    }
    GaussianTextureMap { height: h, width: w, data }
}

fn texture_to_chw(tex: &GaussianTextureMap) -> Vec<f64> {
    let n = tex.height * tex.width;
    let c = TEXTURE_CHANNELS;
    let mut out = vec![0.0; c * n];
    for p in 0..n {
        for ch in 0..c {
            out[ch * n + p] = tex.data[p * c + ch];
        }
    }
    out
}

/// `(w_hair, w_face)` for a latent and camera.
pub fn mapping_forward(params: &NetParams, cfg: &SynthesisConfig, z: &[f64], camera: &CameraPose) -> Result<(WCode, WCode)> {
    cfg.validate()?;
    check_code(z, cfg.z_dim, "latent z")?;
    camera.validate()?;
    let mut b = Builder::<f64>::new(params);
    let zv = b.input(vec![1, cfg.z_dim], z);
    let cv = b.input(vec![1, CAMERA_DIM], &camera_features(camera));
    let (wh, wf) = mapping_graph(&mut b, cfg, zv, cv);
    Ok((
        WCode {
            values: b.tape.value(wh).data.clone(),
            role: Role::Hair,
        },
        WCode {
            values: b.tape.value(wf).data.clone(),
            role: Role::Face,
        },
    ))
}

/// Blend-shape coefficients for a hair code.
pub fn geometry_mapping(params: &NetParams, cfg: &SynthesisConfig, w_hair: &WCode) -> Result<Vec<f64>> {
    if w_hair.role != Role::Hair {
        return Err(Error::Usage("geometry mapping takes a hair code".into()));
    }
    check_code(&w_hair.values, cfg.w_dim, "w_hair")?;
    let mut b = Builder::<f64>::new(params);
    let w = b.input(vec![1, cfg.w_dim], &w_hair.values);
    let theta = geometry_graph(&mut b, w);
    Ok(b.tape.value(theta).data.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `[C, H, W]` residual added to the hair features.
    pub residual: Tensor<f64>,
    /// Per head, row-major `[H·W, T]` attention weights.
    pub weights: Vec<Vec<f64>>,
}

/// Cross-attention of hair features at `level` to the face code.
pub fn cross_attention(
    params: &NetParams,
    cfg: &SynthesisConfig,
    level: usize,
    x: &Tensor<f64>,
    w_face: &WCode,
) -> Result<AttentionOutput> {
    cfg.validate()?;
    let c = *cfg
        .channels
        .get(level)
        .ok_or_else(|| Error::Shape(format!("no synthesis level {level}")))?;
    if x.shape.len() != 3 || x.shape[0] != c {
        return Err(Error::Shape(format!("attention input {:?} does not have {c} channels", x.shape)));
    }
    check_code(&w_face.values, cfg.w_dim, "w_face")?;
    let mut b = Builder::<f64>::new(params);
    let xv = b.input(x.shape.clone(), &x.data);
    let wf = b.input(vec![1, cfg.w_dim], &w_face.values);
    let (r, weights) = attention_graph(&mut b, cfg, level, xv, wf);
    Ok(AttentionOutput {
        residual: b.tape.value(r).clone(),
        weights: weights.iter().map(|&a| b.tape.value(a).data.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTextures {
    pub hair: GaussianTextureMap,
    pub face: GaussianTextureMap,
    pub theta: Vec<f64>,
    pub w_hair: WCode,
    pub w_face: WCode,
    /// Whether the hair branch ran without its face condition.
    pub dropped: bool,
}

/// Gradients of a scalar w.r.t. generator parameters and inputs.
#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub params: ParamGrads,
    /// Present when the graph was built from a latent.
    pub z: Option<Vec<f64>>,
    pub w_hair: Vec<f64>,
    pub w_face: Vec<f64>,
}

/// One recorded generator evaluation, kept for the reverse pass.
pub struct GeneratorGraph<'a> {
    b: Builder<'a, f64>,
    cfg: SynthesisConfig,
    z: Option<Var>,
    w_hair: Var,
    w_face: Var,
    hair: Var,
    face: Var,
    theta: Var,
    dropped: bool,
}

impl<'a> GeneratorGraph<'a> {
    /// Full generator from `(z, camera)`. With `drop` the hair branch runs
    /// on the null condition regardless of `omega`.
    pub fn from_latent(
        params: &'a NetParams,
        cfg: &SynthesisConfig,
        z: &[f64],
        camera: &CameraPose,
        omega: f64,
        drop: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        check_code(z, cfg.z_dim, "latent z")?;
        camera.validate()?;
        let mut b = Builder::new(params);
        let zv = b.input(vec![1, cfg.z_dim], z);
        let cv = b.input(vec![1, CAMERA_DIM], &camera_features(camera));
        let (wh, wf) = mapping_graph(&mut b, cfg, zv, cv);
        Ok(Self::synthesize(b, cfg, Some(zv), wh, wf, omega, drop))
    }

    /// Generator from precomputed style codes, as used for hairstyle swaps.
    pub fn from_codes(
        params: &'a NetParams,
        cfg: &SynthesisConfig,
        w_hair: &WCode,
        w_face: &WCode,
        omega: f64,
        drop: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        if w_hair.role != Role::Hair || w_face.role != Role::Face {
            return Err(Error::Usage("style codes passed in the wrong roles".into()));
        }
        check_code(&w_hair.values, cfg.w_dim, "w_hair")?;
        check_code(&w_face.values, cfg.w_dim, "w_face")?;
        let mut b = Builder::new(params);
        let wh = b.input(vec![1, cfg.w_dim], &w_hair.values);
        let wf = b.input(vec![1, cfg.w_dim], &w_face.values);
        Ok(Self::synthesize(b, cfg, None, wh, wf, omega, drop))
    }

    fn synthesize(mut b: Builder<'a, f64>, cfg: &SynthesisConfig, z: Option<Var>, wh: Var, wf: Var, omega: f64, drop: bool) -> Self {
        let theta = geometry_graph(&mut b, wh);
        let face = synthesis_graph(&mut b, cfg, "face", wf, None);
        let condition = if drop { None } else { Some((wf, omega)) };
        let hair = synthesis_graph(&mut b, cfg, "hair", wh, condition);
        Self {
            b,
            cfg: cfg.clone(),
            z,
            w_hair: wh,
            w_face: wf,
            hair,
            face,
            theta,
            dropped: drop,
        }
    }

    pub fn outputs(&self) -> Result<GeneratedTextures> {
        let t = &self.b.tape;
        let out = GeneratedTextures {
            hair: chw_to_texture(t.value(self.hair)),
            face: chw_to_texture(t.value(self.face)),
            theta: t.value(self.theta).data.clone(),
            w_hair: WCode {
                values: t.value(self.w_hair).data.clone(),
                role: Role::Hair,
            },
            w_face: WCode {
                values: t.value(self.w_face).data.clone(),
                role: Role::Face,
            },
            dropped: self.dropped,
        };
        out.hair.validate()?;
        out.face.validate()?;
        ensure_finite(&out.theta, "blend coefficients")?;
        Ok(out)
    }

    /// Reverse pass from gradients on the two textures and on θ; absent
    /// terms count as zero.
    pub fn backward(
        &self,
        d_hair: Option<&GaussianTextureMap>,
        d_face: Option<&GaussianTextureMap>,
        d_theta: Option<&[f64]>,
    ) -> Result<GeneratorGrads> {
        let r = self.cfg.output_resolution;
        let mut seeds = Vec::new();
        for (tex, var) in [(d_hair, self.hair), (d_face, self.face)] {
            if let Some(tex) = tex {
                if tex.height != r || tex.width != r {
                    return Err(Error::Shape(format!("texture gradient is {}x{}, expected {r}x{r}", tex.height, tex.width)));
                }
                tex.validate()?;
                seeds.push((var, texture_to_chw(tex)));
            }
        }
        if let Some(d) = d_theta {
            check_code(d, self.cfg.num_coeffs, "theta gradient")?;
            seeds.push((self.theta, d.to_vec()));
        }
        let t = &self.b.tape;
        let grads = t.backward_many(seeds);
        let out = GeneratorGrads {
            params: self.b.param_grads(&grads, |v| v),
            z: self.z.map(|z| grads.get_or_zeros(z, self.cfg.z_dim)),
            w_hair: grads.get_or_zeros(self.w_hair, self.cfg.w_dim),
            w_face: grads.get_or_zeros(self.w_face, self.cfg.w_dim),
        };
        Ok(out)
    }
}

/// Textures and blend coefficients for `(z, camera)`.
pub fn generate_textures(
    params: &NetParams,
    cfg: &SynthesisConfig,
    z: &[f64],
    camera: &CameraPose,
    omega: f64,
    drop: bool,
) -> Result<GeneratedTextures> {
    GeneratorGraph::from_latent(params, cfg, z, camera, omega, drop)?.outputs()
}

/// Textures and blend coefficients for given style codes.
pub fn generate_from_codes(
    params: &NetParams,
    cfg: &SynthesisConfig,
    w_hair: &WCode,
    w_face: &WCode,
    omega: f64,
    drop: bool,
) -> Result<GeneratedTextures> {
    GeneratorGraph::from_codes(params, cfg, w_hair, w_face, omega, drop)?.outputs()
}
