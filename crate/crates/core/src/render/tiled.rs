use rayon::prelude::*;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::scene::GaussianSet;

use super::{composite_pixel, project_and_sort, write_pixel, PixelValue, RenderOptions, RenderOutput, Splat2D, TILE_SIZE};

/// Per-tile splat lists, each in global depth order.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

pub(crate) fn bin_splats(splats: &[Splat2D], width: usize, height: usize) -> TileBins {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bounds;
        let clamp_x = |v: i64| v.clamp(0, width as i64 - 1) as usize / TILE_SIZE;
        let clamp_y = |v: i64| v.clamp(0, height as i64 - 1) as usize / TILE_SIZE;
        for ty in clamp_y(y0)..=clamp_y(y1) {
            for tx in clamp_x(x0)..=clamp_x(x1) {
                lists[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    TileBins { tiles_x, lists }
}

pub(crate) fn tile_pixels(tile: usize, bins: &TileBins, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (tile % bins.tiles_x, tile / bins.tiles_x);
    let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width);
    let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height);
    ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
}

pub(crate) fn check_size(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Render(format!("image size {width}x{height} is empty")));
    }
    Ok(())
}

/// Tile-based renderer. Splats are sorted once globally by depth, binned into
/// 16x16 tiles, and tiles are composited in parallel.
pub fn render(set: &GaussianSet, camera: &CameraPose, width: usize, height: usize, opts: &RenderOptions) -> Result<RenderOutput> {
    check_size(width, height)?;
    camera.validate()?;
    let splats = project_and_sort(set, camera, width, height, true);
    let bins = bin_splats(&splats, width, height);
    let tiles: Vec<Vec<(usize, PixelValue)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            tile_pixels(tile, &bins, width, height)
                .map(|(x, y)| {
                    let iter = list.iter().map(|&i| &splats[i as usize]);
                    (y * width + x, composite_pixel(x as f64 + 0.5, y as f64 + 0.5, iter, opts))
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutput::blank(width, height);
    for tile in &tiles {
        for (idx, v) in tile {
            write_pixel(&mut out, *idx, v);
        }
    }
    Ok(out)
}
