//! Image quality metrics and atom localization.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::Tensor;

/// Default binarization level for masks and localization.
pub const MASK_THRESHOLD: f64 = 127.5;

/// Stand-in for infinite PSNR when averaging.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;

fn same_shape(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)` in dB; identical images give `+inf`.
pub fn psnr(pred: &Tensor<f32>, gt: &Tensor<f32>, peak: f64) -> Result<f64> {
    same_shape(pred, gt)?;
    let mse = pred.data().iter().zip(gt.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>()
        / pred.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn ssim_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let raw: Vec<f64> = (-r..=r).map(|t| (-((t * t) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable windowed mean over the valid region.
fn window_mean(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, c)| c * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, c)| c * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), computed over
/// positions where the window fits, averaged over channels.
pub fn ssim(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    same_shape(pred, gt)?;
    let (c, h, w) = pred.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(dim_err!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let taps = ssim_taps();
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = pred.channel(ch).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = gt.channel(ch).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, my) = (window_mean(&x, h, w, &taps), window_mean(&y, h, w, &taps));
        let (exx, eyy, exy) = (window_mean(&xx, h, w, &taps), window_mean(&yy, h, w, &taps), window_mean(&xy, h, w, &taps));
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let vx = exx[i] - a * a;
            let vy = eyy[i] - b * b;
            let cov = exy[i] - a * b;
            let num = (2.0 * a * b + c1) * (2.0 * cov + c2);
            let den = (a * a + b * b + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// 1 where `image > threshold`, else 0.
pub fn binarize(image: &Tensor<f32>, threshold: f64) -> Tensor<f32> {
    image.map(|v| if v as f64 > threshold { 1.0 } else { 0.0 })
}

/// Pixel intersection over union of two binary masks. Two empty masks count
/// as a perfect match.
pub fn iou(pred_mask: &Tensor<f32>, gt_mask: &Tensor<f32>) -> Result<f64> {
    same_shape(pred_mask, gt_mask)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred_mask.data().iter().zip(gt_mask.data()) {
        let (a, b) = (a > 0.5, b > 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Binary atom mask and one centroid per connected component.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    pub mask: Tensor<f32>,
    /// Intensity-weighted `(x, y)` centroids in pixel coordinates.
    pub centroids: Vec<[f64; 2]>,
    /// Pixel count of each retained component.
    pub sizes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub threshold: f64,
    /// Components with fewer pixels are discarded.
    pub min_pixels: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self { threshold: MASK_THRESHOLD, min_pixels: 1 }
    }
}

/// Thresholds a `[1, H, W]` image, labels 8-connected components and
/// returns their intensity-weighted centroids in raster order of first pixel.
pub fn localize(image: &Tensor<f32>, cfg: &LocalizeConfig) -> Result<LocalizationResult> {
    let (c, h, w) = image.dims3()?;
    if c != 1 {
        return Err(dim_err!("localization takes a single-channel image, got {c} channels"));
    }
    let fg = binarize(image, cfg.threshold);
    let on = |i: usize| fg.data()[i] > 0.5;
    let mut label = vec![usize::MAX; h * w];
    let mut mask = vec![0f32; h * w];
    let mut centroids = Vec::new();
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..h * w {
        if !on(start) || label[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        label[start] = id;
        stack.push(start);
        members.clear();
        while let Some(i) = stack.pop() {
            members.push(i);
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if on(j) && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(members.len());
        if members.len() < cfg.min_pixels {
            centroids.push(None);
            continue;
        }
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for &i in &members {
            let v = image.data()[i] as f64;
            sw += v;
            sx += v * (i % w) as f64;
            sy += v * (i / w) as f64;
            mask[i] = 1.0;
        }
        centroids.push(Some([sx / sw, sy / sw]));
    }
    let kept: Vec<(usize, [f64; 2])> =
        sizes.iter().zip(&centroids).filter_map(|(&s, c)| c.map(|c| (s, c))).collect();
    Ok(LocalizationResult {
        mask: Tensor::new(vec![1, h, w], mask)?,
        centroids: kept.iter().map(|k| k.1).collect(),
        sizes: kept.iter().map(|k| k.0).collect(),
    })
}

/// Metrics of one prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    /// `None` encodes an infinite PSNR (identical images).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
    pub iou: f64,
}

/// Compares a prediction against ground truth. The prediction is clamped to
/// `[0, 255]` first; IoU uses both images binarized at `mask_threshold`.
pub fn sample_metrics(pred: &Tensor<f32>, gt: &Tensor<f32>, mask_threshold: f64) -> Result<SampleMetrics> {
    let pred = pred.map(|v| v.clamp(0.0, 255.0));
    let p = psnr(&pred, gt, DYNAMIC_RANGE)?;
    Ok(SampleMetrics {
        psnr_db: p.is_finite().then_some(p),
        ssim: ssim(&pred, gt)?,
        iou: iou(&binarize(&pred, mask_threshold), &binarize(gt, mask_threshold))?,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub method: String,
    pub params: serde_json::Value,
    pub dataset_id: String,
}

/// Aggregate and per-sample metrics of one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean PSNR with infinite values replaced by [`PSNR_CAP`].
    pub psnr_db: f64,
    pub ssim: f64,
    pub iou: f64,
    /// Number of samples whose PSNR was capped.
    pub psnr_capped: usize,
    pub per_sample: Vec<SampleMetrics>,
    pub meta: ReportMeta,
}

impl MetricReport {
    pub fn aggregate(per_sample: Vec<SampleMetrics>, meta: ReportMeta) -> Self {
        let n = per_sample.len().max(1) as f64;
        let psnr_capped = per_sample.iter().filter(|s| s.psnr_db.is_none()).count();
        let psnr_db = per_sample.iter().map(|s| s.psnr_db.unwrap_or(PSNR_CAP).min(PSNR_CAP)).sum::<f64>() / n;
        let ssim = per_sample.iter().map(|s| s.ssim).sum::<f64>() / n;
        let iou = per_sample.iter().map(|s| s.iou).sum::<f64>() / n;
        Self { psnr_db, ssim, iou, psnr_capped, per_sample, meta }
    }
}

/// Fixed-width table with one row per report.
pub fn format_table(reports: &[MetricReport]) -> String {
    let width = reports.iter().map(|r| r.meta.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>9}  {:>7}  {:>7}\n", "Method", "PSNR(dB)", "SSIM", "IoU");
    for r in reports {
        let flag = if r.psnr_capped > 0 { "*" } else { " " };
        out += &format!("{:<width$}  {:>8.2}{flag}  {:>7.4}  {:>7.4}\n", r.meta.method, r.psnr_db, r.ssim, r.iou);
    }
    out
}
