//! Toy-scale dual-branch generator and pose-conditioned discriminator.
//!
//! A shared mapping trunk turns `(z, camera)` into one style code per part.
//! Each part has its own modulated-convolution synthesis stack producing a
//! 14-channel Gaussian texture; the hair stack additionally attends to the
//! face code, tokenized into `T` tokens. A small geometry mapping network
//! turns the hair code into blend-shape coefficients.
//!
//! Parameters live in [`NetParams`] under stable names (`g.*` for the
//! generator, `d.*` for the discriminator). Every forward pass records onto an
//! [`autodiff::Tape`](crate::autodiff::Tape), so gradients w.r.t. parameters
//! and inputs come from the same code path as the values.

mod discriminator;
mod generator;
mod layers;

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::camera::CameraPose;
use crate::container::{read_table, write_table, StoredTensor};
use crate::error::{ensure_finite, Error, Result};
use crate::scene::TEXTURE_CHANNELS;

pub use discriminator::{discriminator_backward, discriminator_forward, r1_parameter_gradient, DiscriminatorGrads, NetDiscriminator};
pub use generator::{
    cross_attention, generate_from_codes, generate_textures, geometry_mapping, mapping_forward, AttentionOutput,
    GeneratedTextures, GeneratorGraph, GeneratorGrads,
};

/// Dimensionality of the flattened camera condition.
pub const CAMERA_DIM: usize = 25;
pub const LRELU_SLOPE: f64 = 0.2;

/// Which synthesis branch a style code belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Hair,
    Face,
}

/// Intermediate latent code with its branch tag.
#[derive(Debug, Clone, PartialEq)]
pub struct WCode {
    pub values: Vec<f64>,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    pub mapping_width: usize,
    pub geometry_hidden: usize,
    pub num_coeffs: usize,
    pub base_resolution: usize,
    pub output_resolution: usize,
    /// Output channels of each synthesis block, coarsest first.
    pub channels: Vec<usize>,
    pub tokens: usize,
    pub heads: usize,
    pub drop_probability: f64,
    pub omega: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self::toy(64)
    }
}

impl SynthesisConfig {
    /// Default widths for a given texture resolution.
    pub fn toy(output_resolution: usize) -> Self {
        let mut cfg = Self {
            z_dim: 512,
            w_dim: 512,
            mapping_layers: 4,
            mapping_width: 512,
            geometry_hidden: 256,
            num_coeffs: 32,
            base_resolution: 4,
            output_resolution,
            channels: Vec::new(),
            tokens: 8,
            heads: 4,
            drop_probability: 0.1,
            omega: 1.0,
        };
        let levels = cfg.levels().unwrap_or(1);
        cfg.channels = (0..levels).map(|l| (64usize >> (l / 2)).max(16)).collect();
        cfg
    }

    /// Number of synthesis blocks, `log2(output / base) + 1`.
    pub fn levels(&self) -> Result<usize> {
        let (b, o) = (self.base_resolution, self.output_resolution);
        if b == 0 || o < b || o % b != 0 || !(o / b).is_power_of_two() {
            return Err(Error::Config(format!("output resolution {o} is not base resolution {b} times a power of two")));
        }
        Ok((o / b).trailing_zeros() as usize + 1)
    }

    pub fn resolution(&self, level: usize) -> usize {
        self.base_resolution << level
    }

    pub fn token_dim(&self) -> usize {
        self.w_dim / self.tokens.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.levels()?;
        if self.channels.len() != levels {
            return Err(Error::Config(format!("{} channel entries for {levels} synthesis levels", self.channels.len())));
        }
        if self.tokens == 0 || self.w_dim % self.tokens != 0 {
            return Err(Error::Config(format!("token count {} does not divide w_dim {}", self.tokens, self.w_dim)));
        }
        if self.heads == 0 || self.channels.iter().any(|&c| c == 0 || c % self.heads != 0) {
            return Err(Error::Config(format!("head count {} must divide every channel width", self.heads)));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Config("drop probability must lie in [0, 1]".into()));
        }
        if !self.omega.is_finite() {
            return Err(Error::Config("omega must be finite".into()));
        }
        if self.z_dim == 0 || self.w_dim == 0 || self.mapping_layers == 0 || self.mapping_width == 0 || self.geometry_hidden == 0 {
            return Err(Error::Config("mapping dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Initial log-scale of generated Gaussians, about half the texel pitch
    /// on a head-sized template.
    pub fn initial_log_scale(&self) -> f64 {
        (60.0 / self.output_resolution as f64).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    /// Input image side; must be 4·2^k.
    pub image_resolution: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub feature_dim: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            image_resolution: 32,
            base_channels: 16,
            max_channels: 64,
            feature_dim: 128,
        }
    }
}

impl DiscriminatorConfig {
    /// Channel widths from the input convolution down to the 4×4 stage.
    pub fn stage_channels(&self) -> Result<Vec<usize>> {
        let r = self.image_resolution;
        if r < 4 || r % 4 != 0 || !(r / 4).is_power_of_two() {
            return Err(Error::Config(format!("discriminator resolution {r} must be 4 times a power of two")));
        }
        let downs = (r / 4).trailing_zeros() as usize;
        Ok((0..=downs).map(|i| (self.base_channels << i).min(self.max_channels)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_channels()?;
        if self.base_channels == 0 || self.feature_dim == 0 {
            return Err(Error::Config("discriminator widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetConfig {
    pub synthesis: SynthesisConfig,
    pub discriminator: DiscriminatorConfig,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate()?;
        self.discriminator.validate()
    }
}

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Const(f64),
    /// Texture prior from [`output_bias`].
    OutputBias,
    Zero,
}

/// Named parameter specs in their canonical order.
fn param_specs(cfg: &NetConfig) -> Result<Vec<(String, Vec<usize>, Init)>> {
    cfg.validate()?;
    let s = &cfg.synthesis;
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| specs.push((name, shape, init));

    let mut fan = s.z_dim + CAMERA_DIM;
    for i in 0..s.mapping_layers {
        add(format!("g.map.fc{i}.w"), vec![fan, s.mapping_width], Init::Normal((2.0 / fan as f64).sqrt()));
        add(format!("g.map.fc{i}.b"), vec![s.mapping_width], Init::Normal(0.1));
        fan = s.mapping_width;
    }
    for head in ["hair", "face"] {
        add(format!("g.map.{head}.w"), vec![fan, s.w_dim], Init::Normal((1.0 / fan as f64).sqrt()));
        add(format!("g.map.{head}.b"), vec![s.w_dim], Init::Normal(0.1));
    }
    add("g.geom.fc0.w".into(), vec![s.w_dim, s.geometry_hidden], Init::Normal((2.0 / s.w_dim as f64).sqrt()));
    add("g.geom.fc0.b".into(), vec![s.geometry_hidden], Init::Zero);
    add("g.geom.fc1.w".into(), vec![s.geometry_hidden, s.num_coeffs], Init::Normal(0.1 / (s.geometry_hidden as f64).sqrt()));
    add("g.geom.fc1.b".into(), vec![s.num_coeffs], Init::Zero);

    let dt = s.token_dim();
    let affine = (1.0 / s.w_dim as f64).sqrt();
    for part in ["hair", "face"] {
        add(format!("g.{part}.const"), vec![s.channels[0], s.base_resolution, s.base_resolution], Init::Normal(1.0));
        let mut cin = s.channels[0];
        for (l, &c) in s.channels.iter().enumerate() {
            let p = format!("g.{part}.b{l}");
            add(format!("{p}.conv.affine.w"), vec![s.w_dim, cin], Init::Normal(affine));
            add(format!("{p}.conv.affine.b"), vec![cin], Init::Const(1.0));
            add(format!("{p}.conv.w"), vec![c, cin, 3, 3], Init::Normal(1.0));
            add(format!("{p}.conv.b"), vec![c], Init::Zero);
            if part == "hair" {
                let q = (1.0 / c as f64).sqrt();
                add(format!("{p}.attn.q"), vec![c, c], Init::Normal(q));
                add(format!("{p}.attn.k.w"), vec![dt, c], Init::Normal((1.0 / dt as f64).sqrt()));
                add(format!("{p}.attn.k.b"), vec![c], Init::Zero);
                add(format!("{p}.attn.v.w"), vec![dt, c], Init::Normal((1.0 / dt as f64).sqrt()));
                add(format!("{p}.attn.v.b"), vec![c], Init::Zero);
                add(format!("{p}.attn.o"), vec![c, c], Init::Normal(q));
            }
            add(format!("{p}.rgb.affine.w"), vec![s.w_dim, c], Init::Normal(affine));
            add(format!("{p}.rgb.affine.b"), vec![c], Init::Const(1.0));
            add(format!("{p}.rgb.w"), vec![TEXTURE_CHANNELS, c, 1, 1], Init::Normal(0.1 / (c as f64).sqrt()));
            cin = c;
        }
        add(format!("g.{part}.out_bias"), vec![TEXTURE_CHANNELS], Init::OutputBias);
    }

    let d = &cfg.discriminator;
    let stages = d.stage_channels()?;
    add("d.in.w".into(), vec![stages[0], 4, 3, 3], Init::Normal((2.0 / 36.0f64).sqrt()));
    add("d.in.b".into(), vec![stages[0]], Init::Zero);
    for i in 1..stages.len() {
        let fan = stages[i - 1] * 9;
        add(format!("d.down{i}.w"), vec![stages[i], stages[i - 1], 3, 3], Init::Normal((2.0 / fan as f64).sqrt()));
        add(format!("d.down{i}.b"), vec![stages[i]], Init::Zero);
    }
    let flat = stages[stages.len() - 1] * 16;
    add("d.fc.w".into(), vec![flat, d.feature_dim], Init::Normal((2.0 / flat as f64).sqrt()));
    add("d.fc.b".into(), vec![d.feature_dim], Init::Zero);
    add("d.out.w".into(), vec![d.feature_dim, 1], Init::Normal((1.0 / d.feature_dim as f64).sqrt()));
    add("d.out.b".into(), vec![1], Init::Zero);
    add("d.embed.w".into(), vec![CAMERA_DIM, d.feature_dim], Init::Normal((1.0 / (CAMERA_DIM * d.feature_dim) as f64).sqrt()));
    add("d.embed.b".into(), vec![d.feature_dim], Init::Zero);
    Ok(specs)
}

/// Texture bias giving a plausible Gaussian at every texel before training:
/// zero offset, identity rotation, sub-texel scale, mid-grey, half opaque.
fn output_bias(cfg: &SynthesisConfig) -> Vec<f64> {
    let ls = cfg.initial_log_scale();
    vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, ls, ls, ls, 0.0, 0.0, 0.0, 0.0]
}

/// All trainable tensors, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    names: Vec<String>,
    tensors: Vec<Tensor<f64>>,
    index: HashMap<String, usize>,
}

impl NetParams {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in param_specs(cfg)? {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Normal(std) => (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
                Init::Const(c) => vec![c; n],
                Init::OutputBias => output_bias(&cfg.synthesis),
                Init::Zero => vec![0.0; n],
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data));
        }
        Ok(Self::from_parts(names, tensors))
    }

    fn from_parts(names: Vec<String>, tensors: Vec<Tensor<f64>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor<f64> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<f64> {
        &mut self.tensors[i]
    }

    pub fn validate(&self) -> Result<()> {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            ensure_finite(&t.data, n)?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> Result<Vec<(String, StoredTensor)>> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| Ok((n.clone(), StoredTensor::new(t.shape.clone(), t.data.clone())?)))
            .collect()
    }

    /// Rebuilds parameters from a stored table, checking it against `cfg`.
    pub fn from_table(entries: Vec<(String, StoredTensor)>, cfg: &NetConfig) -> Result<Self> {
        let specs = param_specs(cfg)?;
        let mut by_name: HashMap<String, StoredTensor> = entries.into_iter().collect();
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, _) in specs {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name}")))?;
            if t.dims != shape {
                return Err(Error::Shape(format!("tensor {name}: expected {shape:?}, found {:?}", t.dims)));
            }
            names.push(name);
            tensors.push(Tensor::new(shape, t.data));
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Config(format!("checkpoint has unexpected tensor {extra}")));
        }
        let params = Self::from_parts(names, tensors);
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_table(path, &self.to_table()?)
    }

    pub fn load(path: &Path, cfg: &NetConfig) -> Result<Self> {
        Self::from_table(read_table(path)?, cfg)
    }
}

/// Gradients aligned with a [`NetParams`]; `None` means zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn zeros(params: &NetParams) -> Self {
        Self {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, i: usize) -> Option<&[f64]> {
        self.grads.get(i).and_then(|g| g.as_deref())
    }

    pub fn add_to(&mut self, i: usize, g: &[f64], scale: f64) {
        match &mut self.grads[i] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b),
            slot => *slot = Some(g.iter().map(|v| scale * v).collect()),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add_to(i, g, scale);
            }
        }
    }

    pub fn check_finite(&self, params: &NetParams) -> Result<()> {
        for (i, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                ensure_finite(g, &format!("gradient of {}", params.names[i]))?;
            }
        }
        Ok(())
    }
}

/// Standard normal latent of length `dim`.
pub fn sample_latent(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Training-mode condition drop decision.
pub fn sample_drop(rng: &mut impl Rng, probability: f64) -> bool {
    rng.random::<f64>() < probability
}

/// Camera condition fed to the networks: the 25 pose values scaled to unit
/// RMS, so translations in millimeters do not swamp the latent.
pub fn camera_features(camera: &CameraPose) -> Vec<f64> {
    let v = camera.to_vec25();
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms > 0.0 {
        v.iter().map(|x| x / rms).collect()
    } else {
        v.to_vec()
    }
}

/// `ω·x_cond + (1−ω)·x_uncond`, returning either input unchanged at the
/// endpoints.
pub fn cfg_blend(x_cond: &[f64], x_uncond: &[f64], omega: f64) -> Result<Vec<f64>> {
    if x_cond.len() != x_uncond.len() {
        return Err(Error::Shape(format!("cfg blend of {} and {} values", x_cond.len(), x_uncond.len())));
    }
    Ok(if omega == 1.0 {
        x_cond.to_vec()
    } else if omega == 0.0 {
        x_uncond.to_vec()
    } else {
        x_cond.iter().zip(x_uncond).map(|(c, u)| omega * c + (1.0 - omega) * u).collect()
    })
}
