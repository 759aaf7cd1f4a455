use rayon::prelude::*;

use crate::camera::CameraPose;
use crate::error::{ensure_finite, Error, Result};
use crate::scene::{GaussianGrads, GaussianSet};

use super::project::{project_gaussian_backward, SplatGrad};
use super::tiled::{bin_splats, check_size, tile_pixels};
use super::{footprint, project_and_sort, splat_alpha, RenderOptions, ALPHA_MAX};

/// Upstream gradients on the three output heads. Empty vectors count as zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderGrads {
    pub rgb: Vec<f64>,
    pub mask: Vec<f64>,
    pub seg: Vec<f64>,
}

impl RenderGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            rgb: vec![0.0; 3 * n],
            mask: vec![0.0; n],
            seg: vec![0.0; 3 * n],
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        for (v, k, name) in [(&self.rgb, 3, "rgb"), (&self.mask, 1, "mask"), (&self.seg, 3, "seg")] {
            if !v.is_empty() && v.len() != k * n {
                return Err(Error::Shape(format!("{name} gradient has {} values, expected {}", v.len(), k * n)));
            }
            ensure_finite(v, name)?;
        }
        Ok(())
    }
}

struct Contribution {
    slot: usize,
    alpha: f64,
    t: f64,
    q: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

/// Analytic gradients of the tiled renderer w.r.t. every Gaussian parameter.
///
/// The forward pass is replayed per pixel; back-to-front sweeps give the
/// color and transmittance behind each contribution without dividing by
/// `1 - α`. Per-tile partial sums are reduced in tile order, so the result
/// is deterministic regardless of thread scheduling.
pub fn render_backward(
    set: &GaussianSet,
    camera: &CameraPose,
    width: usize,
    height: usize,
    opts: &RenderOptions,
    upstream: &RenderGrads,
) -> Result<GaussianGrads> {
    check_size(width, height)?;
    camera.validate()?;
    upstream.check(width * height)?;
    let splats = project_and_sort(set, camera, width, height, true);
    let bins = bin_splats(&splats, width, height);
    let get = |v: &Vec<f64>, i: usize| if v.is_empty() { 0.0 } else { v[i] };

    let partials: Vec<Vec<SplatGrad>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let mut acc = vec![SplatGrad::default(); list.len()];
            let mut contrib: Vec<Contribution> = Vec::new();
            for (x, y) in tile_pixels(tile, &bins, width, height) {
                let idx = y * width + x;
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let g_rgb = [get(&upstream.rgb, 3 * idx), get(&upstream.rgb, 3 * idx + 1), get(&upstream.rgb, 3 * idx + 2)];
                let g_seg = [get(&upstream.seg, 3 * idx), get(&upstream.seg, 3 * idx + 1), get(&upstream.seg, 3 * idx + 2)];
                let g_mask = get(&upstream.mask, idx);
                if g_rgb.iter().chain(&g_seg).all(|&v| v == 0.0) && g_mask == 0.0 {
                    continue;
                }
                contrib.clear();
                let mut t = 1.0;
                for (slot, &si) in list.iter().enumerate() {
                    if t < opts.t_min {
                        break;
                    }
                    let s = &splats[si as usize];
                    let (alpha, q) = splat_alpha(s, px, py);
                    if alpha == 0.0 {
                        continue;
                    }
                    contrib.push(Contribution {
                        slot,
                        alpha,
                        t,
                        q,
                        dx: px - s.mean[0],
                        dy: py - s.mean[1],
                        clamped: alpha >= ALPHA_MAX,
                    });
                    t *= 1.0 - alpha;
                }
                // composite behind the current contribution, starting at T = 1
                let mut behind_rgb = opts.background;
                let mut behind_seg = [1.0, 0.0, 0.0];
                let mut behind_t = 1.0;
                for c in contrib.iter().rev() {
                    let s = &splats[list[c.slot] as usize];
                    let a = &mut acc[c.slot];
                    let w = c.t * c.alpha;
                    let mut d_alpha = g_mask * c.t * behind_t;
                    for k in 0..3 {
                        a.color[k] += g_rgb[k] * w;
                        a.label[k] += g_seg[k] * w;
                        d_alpha += g_rgb[k] * c.t * (s.color[k] - behind_rgb[k]);
                        d_alpha += g_seg[k] * c.t * (s.label[k] - behind_seg[k]);
                    }
                    if !c.clamped {
                        let (g, dg) = footprint(c.q);
                        a.opacity += d_alpha * g;
                        let d_q = d_alpha * s.opacity * dg;
                        let [ka, kb, kc] = s.conic;
                        // q = ka dx² + 2 kb dx dy + kc dy², d = pixel - mean
                        a.mean[0] -= d_q * 2.0 * (ka * c.dx + kb * c.dy);
                        a.mean[1] -= d_q * 2.0 * (kb * c.dx + kc * c.dy);
                        a.conic[0][0] += d_q * c.dx * c.dx;
                        a.conic[0][1] += d_q * c.dx * c.dy;
                        a.conic[1][0] += d_q * c.dx * c.dy;
                        a.conic[1][1] += d_q * c.dy * c.dy;
                    }
                    for k in 0..3 {
                        behind_rgb[k] = c.alpha * s.color[k] + (1.0 - c.alpha) * behind_rgb[k];
                        behind_seg[k] = c.alpha * s.label[k] + (1.0 - c.alpha) * behind_seg[k];
                    }
                    behind_t *= 1.0 - c.alpha;
                }
            }
            acc
        })
        .collect();

    let mut per_splat = vec![SplatGrad::default(); splats.len()];
    for (tile, acc) in partials.iter().enumerate() {
        for (slot, g) in acc.iter().enumerate() {
            per_splat[bins.lists[tile][slot] as usize].add(g);
        }
    }

    let prim: Vec<_> = splats
        .par_iter()
        .zip(per_splat.par_iter())
        .map(|(s, d)| (s.index, project_gaussian_backward(&set.gaussians[s.index], camera, width, height, d), *d))
        .collect();
    let mut grads = GaussianGrads::zeros(set.len());
    for (i, p, d) in prim {
        grads.position[i] = p.position;
        grads.rotation[i] = p.rotation;
        grads.scale[i] = p.scale;
        grads.color[i] = d.color;
        grads.opacity[i] = d.opacity;
        grads.label[i] = d.label;
    }
    Ok(grads)
}
