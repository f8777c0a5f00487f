//! Sensor noise for HRTEM frames: per-column offsets plus signal-dependent
//! per-pixel noise, and recovery of its parameters from vacuum sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};
use crate::io::{read_json, write_json};
use crate::tensor::container;
use crate::Tensor;

/// `sigma_p(I) = slope * I + intercept`, plus a column-noise deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub slope: f64,
    pub intercept: f64,
    pub sigma_c: f64,
}

impl NoiseParams {
    /// Values calibrated on the reference microscope.
    pub const PAPER: NoiseParams = NoiseParams { slope: 0.03583, intercept: 1.379, sigma_c: 0.6641 };

    pub const ZERO: NoiseParams = NoiseParams { slope: 0.0, intercept: 0.0, sigma_c: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.slope) && ok(self.intercept) && ok(self.sigma_c)) {
            return Err(config_err!("noise parameters must be finite and non-negative, got {self:?}"));
        }
        Ok(())
    }

    /// Pointwise noise deviation at a clean intensity.
    pub fn sigma_p(&self, intensity: f64) -> Result<f64> {
        if !(intensity >= 0.0) {
            return Err(Error::Domain(format!("intensity must be >= 0, got {intensity}")));
        }
        Ok(self.slope * intensity + self.intercept)
    }
}

/// Adds column and pointwise noise to a clean `[1, H, W]` frame. The output
/// is not clamped.
pub fn add_noise(clean: &Tensor<f32>, p: &NoiseParams, seed: u64) -> Result<Tensor<f32>> {
    p.validate()?;
    let (c, h, w) = clean.dims3()?;
    if c != 1 {
        return Err(dim_err!("expected a single-channel frame, got {c} channels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<f64> = (0..w).map(|_| p.sigma_c * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut out = Vec::with_capacity(h * w);
    for (i, &v) in clean.data().iter().enumerate() {
        let sp = p.sigma_p(v as f64)?;
        let z: f64 = rng.sample(StandardNormal);
        out.push((v as f64 + columns[i % w] + sp * z) as f32);
    }
    Tensor::new(vec![1, h, w], out)
}

/// Frames of an empty field of view at a fixed mean signal.
#[derive(Clone, Debug, PartialEq)]
pub struct VacuumSequence {
    pub intensity: f64,
    pub frames: Vec<Tensor<f32>>,
}

/// Simulates `n_frames` vacuum frames at constant `intensity`, each with
/// fresh noise.
pub fn synth_vacuum(
    intensity: f64,
    p: &NoiseParams,
    n_frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<VacuumSequence> {
    if n_frames < 2 {
        return Err(config_err!("a vacuum sequence needs at least 2 frames, got {n_frames}"));
    }
    if !(intensity >= 0.0) {
        return Err(Error::Domain(format!("intensity must be >= 0, got {intensity}")));
    }
    let clean = Tensor::full(&[1, height, width], intensity as f32);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n_frames).map(|_| add_noise(&clean, p, seeds.gen())).collect::<Result<_>>()?;
    Ok(VacuumSequence { intensity, frames })
}

/// Noise statistics of one vacuum sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceFit {
    /// Declared intensity of the sequence.
    pub intensity: f64,
    /// Mean pixel value over all frames; the regression abscissa.
    pub mean_intensity: f64,
    pub sigma_p: f64,
    /// Column variance after removing the pointwise contribution; may be
    /// slightly negative on noise-free columns.
    pub sigma_c_sq: f64,
    pub frames: usize,
}

/// Separates column and pointwise noise in one sequence.
///
/// The temporal per-pixel mean is removed first, so any fixed scene cancels.
/// Column estimates are row means of the residual; what remains is pointwise.
/// Both variances are corrected for the two mean subtractions.
pub fn sequence_stats(seq: &VacuumSequence) -> Result<SequenceFit> {
    let k = seq.frames.len();
    if k < 2 {
        return Err(Error::Fit(format!("sequence at intensity {} has {k} frames, need >= 2", seq.intensity)));
    }
    let (c, h, w) = seq.frames[0].dims3()?;
    if c != 1 || h < 2 {
        return Err(dim_err!("calibration frames must be [1, H, W] with H >= 2, got {:?}", seq.frames[0].shape()));
    }
    for f in &seq.frames {
        if f.shape() != seq.frames[0].shape() {
            return Err(dim_err!("frame shapes differ: {:?} vs {:?}", f.shape(), seq.frames[0].shape()));
        }
    }
    let n = h * w;
    let mut temporal = vec![0f64; n];
    for f in &seq.frames {
        for (t, &v) in temporal.iter_mut().zip(f.data()) {
            *t += v as f64;
        }
    }
    for t in temporal.iter_mut() {
        *t /= k as f64;
    }
    let mean_intensity = temporal.iter().sum::<f64>() / n as f64;

    let (mut point_ss, mut col_ss) = (0f64, 0f64);
    let mut col = vec![0f64; w];
    for f in &seq.frames {
        col.iter_mut().for_each(|v| *v = 0.0);
        for (i, &v) in f.data().iter().enumerate() {
            col[i % w] += v as f64 - temporal[i];
        }
        col.iter_mut().for_each(|v| *v /= h as f64);
        for (i, &v) in f.data().iter().enumerate() {
            let r = v as f64 - temporal[i] - col[i % w];
            point_ss += r * r;
        }
        col_ss += col.iter().map(|v| v * v).sum::<f64>();
    }
    let temporal_corr = k as f64 / (k - 1) as f64;
    let sigma_p_sq = point_ss / (k * n) as f64 * (h as f64 / (h - 1) as f64) * temporal_corr;
    let sigma_c_sq = col_ss / (k * w) as f64 * temporal_corr - sigma_p_sq / h as f64;
    Ok(SequenceFit { intensity: seq.intensity, mean_intensity, sigma_p: sigma_p_sq.sqrt(), sigma_c_sq, frames: k })
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Fit(format!("need ≥2 intensities for a line fit, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-12 * (1.0 + mx * mx) * n {
        return Err(Error::Fit("need >= 2 distinct intensities; regression is singular".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fitted parameters with the per-sequence evidence behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: NoiseParams,
    pub sequences: Vec<SequenceFit>,
    /// `sigma_p - (slope * mean_intensity + intercept)` per sequence.
    pub residuals: Vec<f64>,
}

/// Fits noise parameters from vacuum sequences at two or more intensities.
/// Fitted values are clamped at zero to stay valid parameters.
pub fn calibrate(sequences: &[VacuumSequence]) -> Result<CalibrationReport> {
    if sequences.len() < 2 {
        return Err(Error::Fit(format!("need ≥2 intensities, got {} sequence(s)", sequences.len())));
    }
    let fits = sequences.iter().map(sequence_stats).collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = fits.iter().map(|f| (f.mean_intensity, f.sigma_p)).collect();
    let (slope, intercept) = fit_line(&points)?;
    let sigma_c_sq = fits.iter().map(|f| f.sigma_c_sq).sum::<f64>() / fits.len() as f64;
    let residuals = points.iter().map(|&(x, y)| y - (slope * x + intercept)).collect();
    let params = NoiseParams { slope: slope.max(0.0), intercept: intercept.max(0.0), sigma_c: sigma_c_sq.max(0.0).sqrt() };
    Ok(CalibrationReport { params, sequences: fits, residuals })
}

/// Contents of `sequence.json` in a sequence directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub intensity: f64,
    /// Frame files relative to the sequence directory, in capture order.
    pub frames: Vec<String>,
}

/// Writes a sequence as `sequence.json` plus one tensor container per frame.
pub fn write_sequence(dir: &Path, seq: &VacuumSequence) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for (i, f) in seq.frames.iter().enumerate() {
        let name = format!("frame-{i:04}.tensor");
        container::write(&dir.join(&name), f, &name)?;
        frames.push(name);
    }
    write_json(&dir.join("sequence.json"), &SequenceMeta { intensity: seq.intensity, frames })
}

pub fn read_sequence(dir: &Path) -> Result<VacuumSequence> {
    let meta: SequenceMeta = read_json(&dir.join("sequence.json"))?;
    let frames = meta.frames.iter().map(|f| Ok(container::read(&dir.join(f))?.1)).collect::<Result<_>>()?;
    Ok(VacuumSequence { intensity: meta.intensity, frames })
}

/// Reads every subdirectory of `root` that holds a `sequence.json`, in
/// name order.
pub fn read_sequences(root: &Path) -> Result<Vec<VacuumSequence>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("sequence.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_sequence(d)).collect()
}
