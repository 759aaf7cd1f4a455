//! Differentiable Gaussian rasterization.
//!
//! Projection follows the usual EWA recipe: `Σ = R S² Rᵀ`, pushed through the
//! camera rotation and the affine Jacobian of the perspective map, then
//! dilated by 0.3 px². Compositing is front to back in one global depth order
//! (ties broken by Gaussian index) with `α = min(0.999, o·exp(-q/2))`, where
//! `q` is the squared Mahalanobis distance of the pixel center. Footprints
//! end at the 3σ ellipse: past [`TAPER_START`] a smoothstep takes the falloff
//! to zero at [`MAX_MAHALANOBIS`], so α stays continuously differentiable.
//! Both renderers apply the same rule, so the tiled renderer only skips work
//! that cannot change a pixel.

mod backward;
mod project;
mod reference;
mod tiled;

pub use backward::{render_backward, RenderGrads};
pub use project::{project_gaussian, project_gaussian_backward, Splat2D};
pub use reference::reference_render;
pub use tiled::render;

pub const TILE_SIZE: usize = 16;
/// Anti-aliasing dilation added to the diagonal of every 2D covariance.
pub const COV_DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
pub const DEFAULT_T_MIN: f64 = 1e-4;
/// Footprint support, the 3σ ellipse `q ≤ 9`.
pub const MAX_MAHALANOBIS: f64 = 9.0;
/// Start of the smooth falloff to zero at the support boundary (about 2.74σ,
/// where `exp(-q/2) ≈ 0.024`).
pub const TAPER_START: f64 = 7.5;

/// Footprint profile `exp(-q/2)·w(q)` and its derivative w.r.t. `q`, with
/// `w` a smoothstep from 1 at [`TAPER_START`] to 0 at [`MAX_MAHALANOBIS`].
#[inline]
pub fn footprint(q: f64) -> (f64, f64) {
    if q >= MAX_MAHALANOBIS {
        return (0.0, 0.0);
    }
    let e = (-0.5 * q).exp();
    if q <= TAPER_START {
        return (e, -0.5 * e);
    }
    let span = MAX_MAHALANOBIS - TAPER_START;
    let t = (MAX_MAHALANOBIS - q) / span;
    let w = t * t * (3.0 - 2.0 * t);
    let dw = -6.0 * t * (1.0 - t) / span;
    (e * w, e * (dw - 0.5 * w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Compositing stops once transmittance falls below this value; 0
    /// disables early termination.
    pub t_min: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            t_min: DEFAULT_T_MIN,
        }
    }
}

impl RenderOptions {
    pub fn exact() -> Self {
        Self {
            t_min: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H x W x 3`, row-major.
    pub rgb: Vec<f64>,
    /// `H x W` alpha, `1 - transmittance`.
    pub mask: Vec<f64>,
    /// `H x W x 3` label blend over the background class.
    pub seg: Vec<f64>,
    pub transmittance: Vec<f64>,
}

impl RenderOutput {
    fn blank(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            rgb: vec![0.0; 3 * n],
            mask: vec![0.0; n],
            seg: vec![0.0; 3 * n],
            transmittance: vec![1.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Largest absolute per-channel difference across all heads.
    pub fn max_abs_diff(&self, other: &RenderOutput) -> f64 {
        let pairs = [
            (&self.rgb, &other.rgb),
            (&self.mask, &other.mask),
            (&self.seg, &other.seg),
        ];
        pairs
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Argmax class per pixel of the segmentation blend.
    pub fn seg_classes(&self) -> Vec<usize> {
        self.seg
            .chunks_exact(3)
            .map(|p| {
                let mut best = 0;
                for k in 1..3 {
                    if p[k] > p[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Result of compositing one pixel.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PixelValue {
    pub rgb: [f64; 3],
    pub seg: [f64; 3],
    pub transmittance: f64,
}

/// Opacity of `splat` at pixel center `(px, py)`, or 0 outside the footprint.
#[inline]
pub(crate) fn splat_alpha(s: &Splat2D, px: f64, py: f64) -> (f64, f64) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    let (g, _) = footprint(q);
    ((s.opacity * g).min(ALPHA_MAX), q)
}

/// Front-to-back compositing shared by both renderers; the splat order and
/// the arithmetic are identical, which makes the two bitwise comparable.
#[inline]
pub(crate) fn composite_pixel<'a>(
    px: f64,
    py: f64,
    splats: impl Iterator<Item = &'a Splat2D>,
    opts: &RenderOptions,
) -> PixelValue {
    let mut t = 1.0;
    let mut rgb = [0.0; 3];
    let mut seg = [0.0; 3];
    for s in splats {
        if t < opts.t_min {
            break;
        }
        let (alpha, _) = splat_alpha(s, px, py);
        if alpha == 0.0 {
            continue;
        }
        let w = t * alpha;
        for k in 0..3 {
            rgb[k] += w * s.color[k];
            seg[k] += w * s.label[k];
        }
        t *= 1.0 - alpha;
    }
    for k in 0..3 {
        rgb[k] += t * opts.background[k];
    }
    seg[0] += t;
    PixelValue {
        rgb,
        seg,
        transmittance: t,
    }
}

pub(crate) fn write_pixel(out: &mut RenderOutput, idx: usize, v: &PixelValue) {
    out.rgb[3 * idx..3 * idx + 3].copy_from_slice(&v.rgb);
    out.seg[3 * idx..3 * idx + 3].copy_from_slice(&v.seg);
    out.mask[idx] = 1.0 - v.transmittance;
    out.transmittance[idx] = v.transmittance;
}

/// Projects every Gaussian and returns the survivors sorted front to back.
pub(crate) fn project_and_sort(
    set: &crate::scene::GaussianSet,
    camera: &crate::camera::CameraPose,
    width: usize,
    height: usize,
    cull_offscreen: bool,
) -> Vec<Splat2D> {
    use rayon::prelude::*;
    let mut splats: Vec<Splat2D> = set
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let s = project::project_unculled(g, i, camera, width, height)?;
            (!cull_offscreen || s.intersects_image(width, height)).then_some(s)
        })
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

#[cfg(test)]
mod tests;
