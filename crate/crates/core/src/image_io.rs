//! Image artifacts: PNG for inspection, container float dumps for exact
//! comparison.
//!
//! RGB is written as 8-bit color, the mask as 16-bit gray, and segmentation
//! classes as 8-bit gray with value `100 · class`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::container::{read_tensor, write_tensor, StoredTensor};
use crate::error::{Error, Result};
use crate::render::RenderOutput;

fn check(len: usize, width: usize, height: usize, channels: usize, what: &str) -> Result<()> {
    if len != width * height * channels || width == 0 || height == 0 {
        return Err(Error::Shape(format!("{what}: {len} values for a {width}x{height}x{channels} image")));
    }
    Ok(())
}

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(data).map_err(png_err)?;
    w.finish().map_err(png_err)
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// `H×W×3` values in `[0, 1]` as an 8-bit RGB PNG.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    check(rgb.len(), width, height, 3, "rgb image")?;
    let bytes: Vec<u8> = rgb.iter().map(|&v| quantize(v, 255.0) as u8).collect();
    encode(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// `H×W` values in `[0, 1]` as a 16-bit grayscale PNG.
pub fn write_mask_png(path: &Path, width: usize, height: usize, mask: &[f64]) -> Result<()> {
    check(mask.len(), width, height, 1, "mask image")?;
    let bytes: Vec<u8> = mask.iter().flat_map(|&v| (quantize(v, 65535.0) as u16).to_be_bytes()).collect();
    encode(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

/// Class indices `0..=2` as 8-bit grayscale, `100 · class`.
pub fn write_seg_png(path: &Path, width: usize, height: usize, classes: &[usize]) -> Result<()> {
    check(classes.len(), width, height, 1, "segmentation image")?;
    if let Some(c) = classes.iter().find(|&&c| c > 2) {
        return Err(Error::Data(format!("segmentation class {c} is not in 0..=2")));
    }
    let bytes: Vec<u8> = classes.iter().map(|&c| (100 * c) as u8).collect();
    encode(path, width, height, png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)
}

/// Decoded PNG samples scaled to `[0, 1]`, with width, height and channel
/// count.
pub fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: png::DecodingError| Error::Data(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Data(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let channels = info.color_type.samples();
    let values = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        d => return Err(Error::Data(format!("{}: unsupported bit depth {d:?}", path.display()))),
    };
    Ok((info.width as usize, info.height as usize, channels, values))
}

/// Writes `stem_rgb`, `stem_mask` and `stem_seg` into `dir`, as PNGs or as
/// float tensors (`.3dgh`) when `emit_float` is set. Returns the paths.
pub fn write_render(dir: &Path, stem: &str, render: &RenderOutput, emit_float: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = (render.width, render.height);
    let path = |part: &str, ext: &str| dir.join(format!("{stem}_{part}.{ext}"));
    let paths = if emit_float {
        let out = [path("rgb", "3dgh"), path("mask", "3dgh"), path("seg", "3dgh")];
        write_tensor(&out[0], &StoredTensor::new(vec![h, w, 3], render.rgb.clone())?)?;
        write_tensor(&out[1], &StoredTensor::new(vec![h, w], render.mask.clone())?)?;
        write_tensor(&out[2], &StoredTensor::new(vec![h, w, 3], render.seg.clone())?)?;
        out
    } else {
        let out = [path("rgb", "png"), path("mask", "png"), path("seg", "png")];
        write_rgb_png(&out[0], w, h, &render.rgb)?;
        write_mask_png(&out[1], w, h, &render.mask)?;
        write_seg_png(&out[2], w, h, &render.seg_classes())?;
        out
    };
    Ok(paths.to_vec())
}

/// Reads a float dump written by [`write_render`].
pub fn read_float_image(path: &Path) -> Result<StoredTensor> {
    read_tensor(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (5, 3);
        let rgb: Vec<f64> = (0..w * h * 3).map(|i| i as f64 / 44.0).collect();
        let mask: Vec<f64> = (0..w * h).map(|i| (i as f64 / 14.0).powi(2)).collect();
        let seg: Vec<usize> = (0..w * h).map(|i| i % 3).collect();

        write_rgb_png(&dir.path().join("a.png"), w, h, &rgb).unwrap();
        let (rw, rh, c, back) = read_png(&dir.path().join("a.png")).unwrap();
        assert_eq!((rw, rh, c), (w, h, 3));
        assert!(back.iter().zip(&rgb).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));

        write_mask_png(&dir.path().join("m.png"), w, h, &mask).unwrap();
        let (_, _, c, back) = read_png(&dir.path().join("m.png")).unwrap();
        assert_eq!(c, 1);
        assert!(back.iter().zip(&mask).all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-12));

        write_seg_png(&dir.path().join("s.png"), w, h, &seg).unwrap();
        let (_, _, _, back) = read_png(&dir.path().join("s.png")).unwrap();
        let classes: Vec<usize> = back.iter().map(|v| (v * 255.0 / 100.0).round() as usize).collect();
        assert_eq!(classes, seg);
    }

    #[test]
    fn shape_and_label_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        assert!(matches!(write_rgb_png(&p, 2, 2, &[0.0; 11]), Err(Error::Shape(_))));
        assert!(matches!(write_seg_png(&p, 1, 1, &[3]), Err(Error::Data(_))));
        assert!(matches!(read_png(&dir.path().join("missing.png")), Err(Error::Io { .. })));
    }
}
