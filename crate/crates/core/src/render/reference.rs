use rayon::prelude::*;

use crate::camera::CameraPose;
use crate::error::Result;
use crate::scene::GaussianSet;

use super::tiled::check_size;
use super::{composite_pixel, project_and_sort, write_pixel, RenderOptions, RenderOutput};

/// Per-pixel oracle renderer: every projected splat is visited at every
/// pixel in global depth order, with no tiling, footprint culling, or early
/// termination.
pub fn reference_render(set: &GaussianSet, camera: &CameraPose, width: usize, height: usize, opts: &RenderOptions) -> Result<RenderOutput> {
    check_size(width, height)?;
    camera.validate()?;
    let splats = project_and_sort(set, camera, width, height, false);
    let opts = RenderOptions { t_min: 0.0, ..*opts };
    let pixels: Vec<_> = (0..width * height)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (idx % width, idx / width);
            composite_pixel(x as f64 + 0.5, y as f64 + 0.5, splats.iter(), &opts)
        })
        .collect();
    let mut out = RenderOutput::blank(width, height);
    for (idx, v) in pixels.iter().enumerate() {
        write_pixel(&mut out, idx, v);
    }
    Ok(out)
}
