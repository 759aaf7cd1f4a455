//! Image metrics and the per-step metrics log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::RenderOutput;
use crate::silhouette::mask_iou;

use super::dataset::ViewTruth;

/// Peak signal-to-noise ratio in dB for values in `[0, 1]`; infinite for
/// identical inputs.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("PSNR of {} against {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(-10.0 * mse.log10())
}

/// Fraction of pixels whose class matches.
pub fn seg_accuracy(pred: &[usize], target: &[usize]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!("segmentation accuracy of {} against {} pixels", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewMetrics {
    pub yaw_deg: f64,
    pub psnr: f64,
    pub seg_accuracy: f64,
    /// IoU of `mask > 0.5` against the ground-truth mask.
    pub mask_iou: f64,
}

impl ViewMetrics {
    pub fn measure(render: &RenderOutput, truth: &ViewTruth) -> Result<Self> {
        let pred: Vec<bool> = render.mask.iter().map(|&m| m > 0.5).collect();
        let gt: Vec<bool> = truth.mask.iter().map(|&m| m > 0.5).collect();
        if pred.len() != gt.len() {
            return Err(Error::Shape("render and ground truth differ in size".into()));
        }
        Ok(Self {
            yaw_deg: truth.yaw_deg,
            psnr: psnr(&render.rgb, &truth.rgb)?,
            seg_accuracy: seg_accuracy(&render.seg_classes(), &truth.seg)?,
            mask_iou: mask_iou(&pred, &gt),
        })
    }

    pub fn log_line(&self) -> String {
        format!("yaw={} psnr={} seg_accuracy={} mask_iou={}", self.yaw_deg, self.psnr, self.seg_accuracy, self.mask_iou)
    }
}

/// Means of psnr, seg accuracy and mask IoU over views.
pub fn mean_metrics(views: &[ViewMetrics]) -> (f64, f64, f64) {
    let n = views.len().max(1) as f64;
    let sum = |f: fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / n;
    (sum(|v| v.psnr), sum(|v| v.seg_accuracy), sum(|v| v.mask_iou))
}

/// One structured text line per step, kept in memory and optionally
/// streamed to a file.
#[derive(Default)]
pub struct MetricsLog {
    lines: Vec<String>,
    file: Option<(BufWriter<File>, std::path::PathBuf)>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            lines: Vec::new(),
            file: Some((BufWriter::new(f), path.to_path_buf())),
        })
    }

    pub fn push(&mut self, line: String) -> Result<()> {
        if let Some((w, path)) = &mut self.file {
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path.clone(), e))?;
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

impl std::fmt::Debug for MetricsLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsLog").field("lines", &self.lines.len()).finish()
    }
}
