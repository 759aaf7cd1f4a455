//! Training objectives with analytic gradients.
//!
//! Every term returns its value together with the gradient w.r.t. its
//! differentiable input. Reconstruction terms are means; the position and
//! scale regularizers are sums over Gaussians.

use std::fmt::Write as _;

use crate::camera::CameraPose;
use crate::error::{ensure_finite, Error, Result};
use crate::math::{sigmoid, softplus, Vec3};
use crate::scene::{GaussianTextureMap, CH_DELTA, TEXTURE_CHANNELS};

/// Guard inside the cross-entropy logarithm.
pub const CE_EPS: f64 = 1e-8;
pub const SCALE_MIN: f64 = 0.2;
pub const SCALE_MAX: f64 = 5.0;
/// Slope of the penalty below [`SCALE_MIN`].
pub const SCALE_LOW_SLOPE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rgb: f64,
    pub mask: f64,
    pub seg: f64,
    pub seg_mesh: f64,
    pub pos: f64,
    pub scale: f64,
    pub uv: f64,
    pub adv: f64,
    pub r1_rgb: f64,
    pub r1_mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 10.0,
            mask: 10.0,
            seg: 1.0,
            seg_mesh: 100.0,
            pos: 0.1,
            scale: 1.0,
            uv: 1.0,
            adv: 1.0,
            r1_rgb: 1.0,
            r1_mask: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rgb,
            self.mask,
            self.seg,
            self.seg_mesh,
            self.pos,
            self.scale,
            self.uv,
            self.adv,
            self.r1_rgb,
            self.r1_mask,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Unweighted term values entering the total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub rgb: f64,
    pub mask: f64,
    pub seg: f64,
    pub seg_mesh: f64,
    pub pos: f64,
    pub scale: f64,
    pub uv: f64,
    pub adv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
    /// Gaussians entering the summed regularizers.
    pub gaussians: usize,
}

impl LossReport {
    /// `step=<n> rgb=<v> ...` with round-trip float formatting.
    pub fn log_line(&self, step: usize) -> String {
        let t = &self.terms;
        let mut s = format!("step={step}");
        for (k, v) in [
            ("rgb", t.rgb),
            ("mask", t.mask),
            ("seg", t.seg),
            ("seg_mesh", t.seg_mesh),
            ("pos", t.pos),
            ("scale", t.scale),
            ("uv", t.uv),
            ("adv", t.adv),
            ("total", self.total),
        ] {
            let _ = write!(s, " {k}={v}");
        }
        let _ = write!(s, " gaussians={}", self.gaussians);
        s
    }
}

/// Weighted sum of the terms.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights, gaussians: usize) -> Result<LossReport> {
    weights.validate()?;
    let t = terms;
    let total = weights.rgb * t.rgb
        + weights.mask * t.mask
        + weights.seg * t.seg
        + weights.seg_mesh * t.seg_mesh
        + weights.pos * t.pos
        + weights.scale * t.scale
        + weights.uv * t.uv
        + weights.adv * t.adv;
    ensure_finite(&[t.rgb, t.mask, t.seg, t.seg_mesh, t.pos, t.scale, t.uv, t.adv, total], "loss terms")?;
    Ok(LossReport {
        terms: *terms,
        total,
        gaussians,
    })
}

/// Non-saturating generator loss, mean of `softplus(−s)`.
pub fn adv_loss_g(scores_fake: &[f64]) -> (f64, Vec<f64>) {
    let n = scores_fake.len().max(1) as f64;
    let value = scores_fake.iter().map(|s| softplus(-s)).sum::<f64>() / n;
    let grad = scores_fake.iter().map(|s| -sigmoid(-s) / n).collect();
    (value, grad)
}

/// Discriminator loss, mean of `softplus(s_fake) + softplus(−s_real)`.
/// Returns the value and the gradients w.r.t. the real and fake scores.
pub fn adv_loss_d(scores_real: &[f64], scores_fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if scores_real.len() != scores_fake.len() {
        return Err(Error::Shape("real and fake score batches differ in size".into()));
    }
    let n = scores_real.len().max(1) as f64;
    let value = scores_real
        .iter()
        .zip(scores_fake)
        .map(|(r, f)| softplus(*f) + softplus(-r))
        .sum::<f64>()
        / n;
    let d_real = scores_real.iter().map(|r| -sigmoid(-r) / n).collect();
    let d_fake = scores_fake.iter().map(|f| sigmoid(*f) / n).collect();
    Ok((value, d_real, d_fake))
}

/// A critic scoring `(rgb, mask, camera)` with access to its input gradient.
pub trait Discriminator {
    fn score(&self, rgb: &[f64], mask: &[f64], camera: &CameraPose) -> Result<f64>;
    /// Score and its gradients w.r.t. `rgb` and `mask`.
    fn input_gradient(&self, rgb: &[f64], mask: &[f64], camera: &CameraPose) -> Result<(f64, Vec<f64>, Vec<f64>)>;
}

/// `½‖∇D‖²` over the four input channels, with separate strengths for the
/// rgb and mask parts.
pub fn r1_penalty(d: &impl Discriminator, rgb: &[f64], mask: &[f64], camera: &CameraPose, weights: &LossWeights) -> Result<f64> {
    let (_, g_rgb, g_mask) = d.input_gradient(rgb, mask, camera)?;
    ensure_finite(&g_rgb, "R1 rgb gradient")?;
    ensure_finite(&g_mask, "R1 mask gradient")?;
    let sq = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>();
    Ok(0.5 * (weights.r1_rgb * sq(&g_rgb) + weights.r1_mask * sq(&g_mask)))
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} predicted values against {b} targets")));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error and its gradient w.r.t. `pred`.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len(), "L1 loss")?;
    let n = pred.len().max(1) as f64;
    let value = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| sign(p - t) / n).collect();
    Ok((value, grad))
}

pub fn l_rgb(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    l1_loss(pred, target)
}

pub fn l_mask(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    l1_loss(pred, target)
}

fn check_classes(target: &[usize]) -> Result<()> {
    match target.iter().position(|&c| c > 2) {
        Some(i) => Err(Error::Data(format!("segmentation class {} at pixel {i} is not in 0..=2", target[i]))),
        None => Ok(()),
    }
}

/// Mean `−ln(p[target] + ε)` over pixels of an `H×W×3` label blend.
pub fn l_seg(pred_seg: &[f64], target: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_len(pred_seg.len(), 3 * target.len(), "segmentation loss")?;
    check_classes(target)?;
    let n = target.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred_seg.len()];
    for (i, &c) in target.iter().enumerate() {
        let p = pred_seg[3 * i + c] + CE_EPS;
        value -= p.ln();
        grad[3 * i + c] = -1.0 / (p * n);
    }
    Ok((value / n, grad))
}

/// Mean `|pred − class|` of a scalar mesh-label render against classes.
pub fn l_seg_mesh(pred: &[f64], target: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len(), "mesh segmentation loss")?;
    check_classes(target)?;
    let t: Vec<f64> = target.iter().map(|&c| c as f64).collect();
    l1_loss(pred, &t)
}

/// `Σ‖Δp‖` and its gradient (zero at `Δp = 0`).
pub fn l_pos_reg(deltas: &[Vec3]) -> (f64, Vec<Vec3>) {
    let mut value = 0.0;
    let grad = deltas
        .iter()
        .map(|d| {
            let n = d.norm();
            value += n;
            if n > 0.0 {
                d / n
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    (value, grad)
}

fn scale_penalty(s: f64) -> (f64, f64) {
    if s < SCALE_MIN {
        (SCALE_LOW_SLOPE * (SCALE_MIN - s), -SCALE_LOW_SLOPE)
    } else if s > SCALE_MAX {
        ((s - SCALE_MAX).powi(2), 2.0 * (s - SCALE_MAX))
    } else {
        (0.0, 0.0)
    }
}

/// Per-component scale penalty summed over all Gaussians.
pub fn l_scale_reg(scales: &[Vec3]) -> (f64, Vec<Vec3>) {
    let mut value = 0.0;
    let grad = scales
        .iter()
        .map(|s| {
            Vec3::from_fn(|k, _| {
                let (v, g) = scale_penalty(s[k]);
                value += v;
                g
            })
        })
        .collect();
    (value, grad)
}

/// Mean L1 difference of the delta-position channels over horizontally and
/// vertically adjacent pairs of valid texels.
pub fn l_uv_tv(texture: &GaussianTextureMap, valid: &[bool]) -> Result<(f64, GaussianTextureMap)> {
    let (h, w) = (texture.height, texture.width);
    check_len(valid.len(), h * w, "uv total variation validity mask")?;
    let mut pairs = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !valid[i] {
                continue;
            }
            if c + 1 < w && valid[i + 1] {
                pairs.push((i, i + 1));
            }
            if r + 1 < h && valid[i + w] {
                pairs.push((i, i + w));
            }
        }
    }
    let mut grad = GaussianTextureMap::zeros(h, w);
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let n = pairs.len() as f64;
    let mut value = 0.0;
    for &(a, b) in &pairs {
        for k in CH_DELTA..CH_DELTA + 3 {
            let d = texture.data[a * TEXTURE_CHANNELS + k] - texture.data[b * TEXTURE_CHANNELS + k];
            value += d.abs();
            grad.data[a * TEXTURE_CHANNELS + k] += sign(d) / n;
            grad.data[b * TEXTURE_CHANNELS + k] -= sign(d) / n;
        }
    }
    Ok((value / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut p = x.to_vec();
        p[i] += h;
        let mut m = x.to_vec();
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    }

    fn assert_close(fd: f64, an: f64) {
        assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1e-3), "fd {fd} analytic {an}");
    }

    #[test]
    fn adversarial_values() {
        assert!((adv_loss_g(&[0.0]).0 - 2f64.ln()).abs() < 1e-15);
        let (d, _, _) = adv_loss_d(&[10.0], &[-10.0]).unwrap();
        assert!((d - 2.0 * softplus(-10.0)).abs() < 1e-15);
        assert!((d - 9.08e-5).abs() < 1e-7);
        let mut prev = f64::INFINITY;
        for k in -100..=100 {
            let v = adv_loss_g(&[k as f64 * 0.1]).0;
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn adversarial_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fake: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, g) = adv_loss_g(&fake);
        let (_, dr, df) = adv_loss_d(&real, &fake).unwrap();
        for i in 0..20 {
            assert_close(fd(|x| adv_loss_g(x).0, &fake, i), g[i]);
            assert_close(fd(|x| adv_loss_d(&real, x).unwrap().0, &fake, i), df[i]);
            assert_close(fd(|x| adv_loss_d(x, &fake).unwrap().0, &real, i), dr[i]);
        }
    }

    struct Linear(Vec<f64>);

    impl Discriminator for Linear {
        fn score(&self, rgb: &[f64], mask: &[f64], _: &CameraPose) -> Result<f64> {
            Ok(rgb.iter().chain(mask).zip(&self.0).map(|(x, a)| x * a).sum())
        }
        fn input_gradient(&self, rgb: &[f64], mask: &[f64], c: &CameraPose) -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let n = rgb.len();
            Ok((self.score(rgb, mask, c)?, self.0[..n].to_vec(), self.0[n..].to_vec()))
        }
    }

    #[test]
    fn r1_of_constant_and_linear_critics() {
        let cam = CameraPose::orbit(0.0, 0.0, 100.0, 1.0);
        let (rgb, mask) = (vec![0.3; 12], vec![0.5; 4]);
        let w = LossWeights::default();
        assert_eq!(r1_penalty(&Linear(vec![0.0; 16]), &rgb, &mask, &cam, &w).unwrap(), 0.0);
        let a: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 1.0).collect();
        let expect = 0.5 * a.iter().map(|v| v * v).sum::<f64>();
        assert!((r1_penalty(&Linear(a), &rgb, &mask, &cam, &w).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn l1_values_and_gradient() {
        let t = vec![0.1, 0.4, 0.9, 0.2];
        assert_eq!(l_rgb(&t, &t).unwrap().0, 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 0.5).collect();
        assert!((l_mask(&p, &t).unwrap().0 - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let mut oracle = 0.0;
        for i in 0..50 {
            oracle += (a[i] - b[i]).abs();
        }
        let (v, g) = l1_loss(&a, &b).unwrap();
        assert!((v - oracle / 50.0).abs() < 1e-7);
        for i in 0..20 {
            assert_close(fd(|x| l1_loss(x, &b).unwrap().0, &a, i), g[i]);
        }
        assert!(matches!(l1_loss(&a, &b[1..]), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_values_and_gradient() {
        let target = vec![0, 1, 2, 1];
        let mut onehot = vec![0.0; 12];
        for (i, &c) in target.iter().enumerate() {
            onehot[3 * i + c] = 1.0;
        }
        assert!(l_seg(&onehot, &target).unwrap().0.abs() <= 1e-7);
        let uniform = vec![1.0 / 3.0; 12];
        assert!((l_seg(&uniform, &target).unwrap().0 - 3f64.ln()).abs() < 1e-6);
        assert!(matches!(l_seg(&uniform, &[0, 1, 3, 0]), Err(Error::Data(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let mut pred = Vec::new();
        let tgt: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        for _ in 0..n {
            let v: [f64; 3] = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
            let s: f64 = v.iter().sum();
            pred.extend(v.iter().map(|x| x / s));
        }
        let oracle: f64 = (0..n).map(|i| -(pred[3 * i + tgt[i]] + CE_EPS).ln()).sum::<f64>() / n as f64;
        let (v, g) = l_seg(&pred, &tgt).unwrap();
        assert!((v - oracle).abs() < 1e-7);
        for i in 0..20 {
            assert_close(fd(|x| l_seg(x, &tgt).unwrap().0, &pred, i), g[i]);
        }
    }

    #[test]
    fn mesh_segmentation_values() {
        let target = vec![0, 1, 2, 2];
        let hard: Vec<f64> = target.iter().map(|&c| c as f64).collect();
        assert_eq!(l_seg_mesh(&hard, &target).unwrap().0, 0.0);
        assert_eq!(l_seg_mesh(&[0.0; 4], &[2; 4]).unwrap().0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..2.0)).collect();
        let t: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
        let oracle: f64 = p.iter().zip(&t).map(|(a, &b)| (a - b as f64).abs()).sum::<f64>() / 40.0;
        assert!((l_seg_mesh(&p, &t).unwrap().0 - oracle).abs() < 1e-7);
    }

    #[test]
    fn position_regularizer() {
        assert_eq!(l_pos_reg(&[Vec3::zeros(); 4]).0, 0.0);
        assert!((l_pos_reg(&[Vec3::new(3.0, 4.0, 0.0)]).0 - 5.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d: Vec<Vec3> = (0..20).map(|_| Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0))).collect();
        let flat: Vec<f64> = d.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect();
        let f = |x: &[f64]| l_pos_reg(&x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect::<Vec<_>>()).0;
        let oracle: f64 = d.iter().map(|v| (v.x * v.x + v.y * v.y + v.z * v.z).sqrt()).sum();
        let (v, g) = l_pos_reg(&d);
        assert!((v - oracle).abs() <= 1e-6 * oracle);
        for i in 0..flat.len() {
            assert_close(fd(f, &flat, i), g[i / 3][i % 3]);
        }
    }

    #[test]
    fn scale_regularizer_cases() {
        assert_eq!(l_scale_reg(&[Vec3::new(1.0, 1.0, 1.0)]).0, 0.0);
        assert!((l_scale_reg(&[Vec3::new(0.1, 1.0, 1.0)]).0 - 1.0).abs() < 1e-12);
        assert!((l_scale_reg(&[Vec3::new(1.0, 6.0, 1.0)]).0 - 1.0).abs() < 1e-12);
        // continuous at the upper bound
        let eps = 1e-9;
        assert!(l_scale_reg(&[Vec3::new(1.0, SCALE_MAX + eps, 1.0)]).0 < 1e-12);
        let s = vec![0.05, 0.15, 3.0, 5.5, 7.0];
        let f = |x: &[f64]| x.iter().map(|v| scale_penalty(*v).0).sum::<f64>();
        for i in 0..s.len() {
            assert_close(fd(f, &s, i), scale_penalty(s[i]).1);
        }
    }

    #[test]
    fn uv_tv_step_and_oracle() {
        let (h, w) = (4, 5);
        let mut tex = GaussianTextureMap::zeros(h, w);
        let valid = vec![true; h * w];
        assert_eq!(l_uv_tv(&tex, &valid).unwrap().0, 0.0);
        // a unit step in Δx between columns 1 and 2 crosses 4 of 31 pairs
        for r in 0..h {
            for c in 2..w {
                tex.data[(r * w + c) * TEXTURE_CHANNELS] = 1.0;
            }
        }
        let total_pairs = h * (w - 1) + (h - 1) * w;
        assert!((l_uv_tv(&tex, &valid).unwrap().0 - h as f64 / total_pairs as f64).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tex = GaussianTextureMap {
            height: h,
            width: w,
            data: (0..h * w * TEXTURE_CHANNELS).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let valid: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.7)).collect();
        let mut sum = 0.0;
        let mut count = 0;
        for a in 0..h * w {
            for b in a + 1..h * w {
                let adjacent = (b == a + 1 && a % w + 1 < w) || b == a + w;
                if adjacent && valid[a] && valid[b] {
                    count += 1;
                    for k in 0..3 {
                        sum += (tex.data[a * TEXTURE_CHANNELS + k] - tex.data[b * TEXTURE_CHANNELS + k]).abs();
                    }
                }
            }
        }
        let (v, g) = l_uv_tv(&tex, &valid).unwrap();
        assert!((v - sum / count as f64).abs() <= 1e-6 * v);
        let f = |x: &[f64]| {
            l_uv_tv(
                &GaussianTextureMap {
                    height: h,
                    width: w,
                    data: x.to_vec(),
                },
                &valid,
            )
            .unwrap()
            .0
        };
        for i in (0..tex.data.len()).step_by(7) {
            assert_close(fd(f, &tex.data, i), g.data[i]);
        }
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossTerms::default(), &w, 0).unwrap().total, 0.0);
        let only_rgb = LossTerms {
            rgb: 1.0,
            ..Default::default()
        };
        assert_eq!(total_loss(&only_rgb, &w, 0).unwrap().total, 10.0);
        let t = LossTerms {
            rgb: 0.3,
            mask: 0.2,
            seg: 1.1,
            seg_mesh: 0.01,
            pos: 7.0,
            scale: 0.5,
            uv: 0.25,
            adv: 0.7,
        };
        let hand = 10.0 * 0.3 + 10.0 * 0.2 + 1.1 + 100.0 * 0.01 + 0.1 * 7.0 + 0.5 + 0.25 + 0.7;
        assert!((total_loss(&t, &w, 3).unwrap().total - hand).abs() < 1e-7);
        let bad = LossTerms { rgb: f64::NAN, ..t };
        assert!(matches!(total_loss(&bad, &w, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn log_line_round_trips_values() {
        let t = LossTerms {
            rgb: 0.1 + 0.2,
            ..Default::default()
        };
        let r = total_loss(&t, &LossWeights::default(), 9).unwrap();
        let line = r.log_line(4);
        assert!(line.starts_with("step=4 rgb=0.30000000000000004 "));
        assert!(line.ends_with(" gaussians=9"));
    }

    proptest! {
        #[test]
        fn total_is_linear_in_each_term(a in 0.0..10.0f64, b in 0.0..10.0f64, k in 0usize..8) {
            let w = LossWeights::default();
            let lam = [w.rgb, w.mask, w.seg, w.seg_mesh, w.pos, w.scale, w.uv, w.adv][k];
            let set = |v: f64| {
                let mut arr = [0.5; 8];
                arr[k] = v;
                LossTerms { rgb: arr[0], mask: arr[1], seg: arr[2], seg_mesh: arr[3], pos: arr[4], scale: arr[5], uv: arr[6], adv: arr[7] }
            };
            let ta = total_loss(&set(a), &w, 0).unwrap().total;
            let tb = total_loss(&set(b), &w, 0).unwrap().total;
            prop_assert!((ta - tb - lam * (a - b)).abs() < 1e-9);
        }

        #[test]
        fn losses_are_nonnegative(p in proptest::collection::vec(0.0..1.0f64, 12), s in proptest::collection::vec(0.01..9.0f64, 6)) {
            let target = vec![0usize, 1, 2, 1];
            let simplex: Vec<f64> = p.chunks(3).flat_map(|c| {
                let t = c.iter().sum::<f64>() + 1e-3;
                [(c[0] + 1e-3) / t, c[1] / t, c[2] / t]
            }).collect();
            prop_assert!(l_seg(&simplex, &target).unwrap().0 >= -CE_EPS);
            prop_assert!(l1_loss(&p[..4], &p[4..8]).unwrap().0 >= 0.0);
            let scales: Vec<Vec3> = s.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            prop_assert!(l_scale_reg(&scales).0 >= 0.0);
            let in_box: Vec<Vec3> = s.chunks(3).map(|c| Vec3::from_fn(|i, _| c[i].clamp(SCALE_MIN, SCALE_MAX))).collect();
            prop_assert_eq!(l_scale_reg(&in_box).0, 0.0);
            prop_assert!(adv_loss_g(&s).0 >= 0.0);
        }
    }
}
