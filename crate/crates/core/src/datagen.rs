//! Synthetic nucleation images: blue-noise atom placement, Perlin vacuum
//! carving and Gaussian atom rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::noisemodel::{add_noise, NoiseParams};
use crate::Tensor;

/// Candidates tried around each active point before it is retired.
const BRIDSON_K: usize = 30;

/// Sub-pixel atom positions. Pixel `(x, y)` has its center at integer
/// coordinates `(x, y)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AtomSet {
    pub width: f64,
    pub height: f64,
    pub positions: Vec<[f64; 2]>,
}

impl AtomSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.min(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        best
    }
}

/// Bridson sampling on `[0, width) x [0, height)` with minimum distance
/// `r_min`. Domains smaller than `r_min` yield a single point.
pub fn poisson_disk(width: f64, height: f64, r_min: f64, seed: u64) -> Result<AtomSet> {
    if !(r_min > 0.0 && r_min.is_finite()) {
        return Err(config_err!("r_min must be positive, got {r_min}"));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(config_err!("domain must be non-empty, got {width}x{height}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = r_min / std::f64::consts::SQRT_2;
    let gw = (width / cell).ceil() as usize;
    let gh = (height / cell).ceil() as usize;
    let mut grid: Vec<Option<usize>> = vec![None; gw * gh];
    let cell_of = |p: [f64; 2]| ((p[0] / cell) as usize).min(gw - 1) + ((p[1] / cell) as usize).min(gh - 1) * gw;
    let r2 = r_min * r_min;

    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut active = Vec::new();
    let first = [rng.gen_range(0.0..width), rng.gen_range(0.0..height)];
    grid[cell_of(first)] = Some(0);
    points.push(first);
    active.push(0);

    while !active.is_empty() {
        let slot = rng.gen_range(0..active.len());
        let center = points[active[slot]];
        let mut placed = false;
        for _ in 0..BRIDSON_K {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let radius = rng.gen_range(r_min..2.0 * r_min);
            let p = [center[0] + radius * theta.cos(), center[1] + radius * theta.sin()];
            if !(0.0..width).contains(&p[0]) || !(0.0..height).contains(&p[1]) {
                continue;
            }
            let (cx, cy) = ((p[0] / cell) as isize, (p[1] / cell) as isize);
            let mut ok = true;
            'scan: for gy in (cy - 2).max(0)..=(cy + 2).min(gh as isize - 1) {
                for gx in (cx - 2).max(0)..=(cx + 2).min(gw as isize - 1) {
                    if let Some(j) = grid[gy as usize * gw + gx as usize] {
                        let q = points[j];
                        if (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) < r2 {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
            }
            if ok {
                grid[cell_of(p)] = Some(points.len());
                active.push(points.len());
                points.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            active.swap_remove(slot);
        }
    }
    Ok(AtomSet { width, height, positions: points })
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Gradient-lattice Perlin noise scaled to `[-1, 1]`, sampled at pixel
/// centers and binarized: 1 where the noise exceeds `threshold` (material),
/// 0 elsewhere (vacuum).
pub fn perlin_mask(width: usize, height: usize, cell: usize, threshold: f64, seed: u64) -> Result<Tensor<f32>> {
    if cell < 2 {
        return Err(config_err!("perlin cell must be >= 2 px, got {cell}"));
    }
    let noise = perlin_field(width, height, cell, seed);
    Ok(Tensor::from_fn(&[1, height, width], |i| if noise[i] > threshold { 1.0 } else { 0.0 }))
}

/// Raw Perlin values in row-major order.
pub fn perlin_field(width: usize, height: usize, cell: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lw = width / cell + 2;
    let lh = height / cell + 2;
    let grads: Vec<[f64; 2]> = (0..lw * lh)
        .map(|_| {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            [a.cos(), a.sin()]
        })
        .collect();
    let dot = |gx: usize, gy: usize, dx: f64, dy: f64| {
        let g = grads[gy * lw + gx];
        g[0] * dx + g[1] * dy
    };
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let fx = (x as f64 + 0.5) / cell as f64;
            let fy = (y as f64 + 0.5) / cell as f64;
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let n00 = dot(x0, y0, tx, ty);
            let n10 = dot(x0 + 1, y0, tx - 1.0, ty);
            let n01 = dot(x0, y0 + 1, tx, ty - 1.0);
            let n11 = dot(x0 + 1, y0 + 1, tx - 1.0, ty - 1.0);
            let (sx, sy) = (smoothstep(tx), smoothstep(ty));
            let top = n00 + sx * (n10 - n00);
            let bottom = n01 + sx * (n11 - n01);
            // 2D gradient noise is bounded by sqrt(1/2).
            out.push((top + sy * (bottom - top)) * std::f64::consts::SQRT_2);
        }
    }
    out
}

/// Closed interval for a uniform draw; `lo == hi` is a constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub const fn fixed(v: f64) -> Self {
        Span { lo: v, hi: v }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(config_err!("{what} range [{}, {}] is invalid", self.lo, self.hi));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Clean,
    GroundTruth,
}

/// Rendering distributions. Peak and sigma are drawn per atom, the
/// background once per image. Ground-truth mode ignores the spans and uses
/// 255 / 0.75 px / 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub mode: RenderMode,
    pub peak: Span,
    pub sigma: Span,
    pub background: Span,
}

pub const GT_PEAK: f64 = 255.0;
pub const GT_SIGMA: f64 = 0.75;

impl RenderParams {
    pub const GROUND_TRUTH: RenderParams = RenderParams {
        mode: RenderMode::GroundTruth,
        peak: Span::fixed(GT_PEAK),
        sigma: Span::fixed(GT_SIGMA),
        background: Span::fixed(0.0),
    };

    pub const CLEAN: RenderParams = RenderParams {
        mode: RenderMode::Clean,
        peak: Span { lo: 120.0, hi: 220.0 },
        sigma: Span { lo: 1.0, hi: 1.6 },
        background: Span { lo: 5.0, hi: 20.0 },
    };

    pub fn validate(&self) -> Result<()> {
        self.peak.validate("peak")?;
        self.sigma.validate("sigma")?;
        self.background.validate("background")?;
        if self.sigma.lo <= 0.0 {
            return Err(config_err!("atom sigma must be positive, got {}", self.sigma.lo));
        }
        Ok(())
    }
}

/// Sums one 2D Gaussian per atom over the background, truncated at a 4 sigma
/// radius, clamped to `[0, 255]`.
pub fn render_atoms(atoms: &AtomSet, p: &RenderParams, width: usize, height: usize, seed: u64) -> Result<Tensor<f32>> {
    p.validate()?;
    let p = match p.mode {
        RenderMode::GroundTruth => RenderParams::GROUND_TRUTH,
        RenderMode::Clean => *p,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = p.background.draw(&mut rng);
    let mut acc = vec![background; width * height];
    for a in &atoms.positions {
        let peak = p.peak.draw(&mut rng);
        let sigma = p.sigma.draw(&mut rng);
        let reach = 4.0 * sigma;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let x0 = (a[0] - reach).ceil().max(0.0) as usize;
        let y0 = (a[1] - reach).ceil().max(0.0) as usize;
        let x1 = ((a[0] + reach).floor() as isize).min(width as isize - 1);
        let y1 = ((a[1] + reach).floor() as isize).min(height as isize - 1);
        for y in y0 as isize..=y1 {
            let dy = y as f64 - a[1];
            for x in x0 as isize..=x1 {
                let dx = x as f64 - a[0];
                let d2 = dx * dx + dy * dy;
                if d2 <= reach * reach {
                    acc[y as usize * width + x as usize] += peak * (-d2 * inv).exp();
                }
            }
        }
    }
    Tensor::new(vec![1, height, width], acc.into_iter().map(|v| v.clamp(0.0, 255.0) as f32).collect())
}

/// Everything needed to synthesize one noisy/ground-truth pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub r_min: f64,
    pub perlin_cell: usize,
    pub perlin_threshold: f64,
    pub clean: RenderParams,
    pub noise: NoiseParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            r_min: 4.0,
            perlin_cell: 64,
            perlin_threshold: 0.0,
            clean: RenderParams::CLEAN,
            noise: NoiseParams::PAPER,
        }
    }
}

impl GenConfig {
    /// 64 x 64 images for quick experiments.
    pub fn desk() -> Self {
        Self { width: 64, height: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(config_err!("image size must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if self.perlin_cell < 2 {
            return Err(config_err!("perlin cell must be >= 2 px, got {}", self.perlin_cell));
        }
        if !(self.r_min > 0.0) {
            return Err(config_err!("r_min must be positive, got {}", self.r_min));
        }
        if self.clean.mode != RenderMode::Clean {
            return Err(config_err!("clean render parameters must use clean mode"));
        }
        self.clean.validate()?;
        self.noise.validate()
    }
}

/// A noisy frame, its ground-truth map and the atoms behind both.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub noisy: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub clean: Tensor<f32>,
    pub atoms: AtomSet,
    pub seed: u64,
}

/// Keeps atoms whose nearest pixel lies in the material region.
pub fn filter_by_mask(atoms: &AtomSet, mask: &Tensor<f32>) -> Result<AtomSet> {
    let (_, h, w) = mask.dims3()?;
    let positions = atoms
        .positions
        .iter()
        .filter(|a| {
            let x = (a[0].round().max(0.0) as usize).min(w - 1);
            let y = (a[1].round().max(0.0) as usize).min(h - 1);
            mask.data()[y * w + x] > 0.5
        })
        .copied()
        .collect();
    Ok(AtomSet { positions, ..atoms.clone() })
}

/// Deterministic per-index seed derived from a dataset seed.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the combined value.
    let mut z = base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full generation pipeline for one sample.
///
/// Atoms are placed over the pixel-center hull `[0, W-1] x [0, H-1]`, so
/// every atom's peak pixel lies inside the image.
pub fn make_sample(cfg: &GenConfig, seed: u64) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s_atoms, s_mask, s_render, s_noise): (u64, u64, u64, u64) = (rng.gen(), rng.gen(), rng.gen(), rng.gen());
    let (w, h) = (cfg.width, cfg.height);
    let raw = poisson_disk(w as f64 - 1.0, h as f64 - 1.0, cfg.r_min, s_atoms)?;
    let mask = perlin_mask(w, h, cfg.perlin_cell, cfg.perlin_threshold, s_mask)?;
    let mut atoms = filter_by_mask(&raw, &mask)?;
    atoms.width = w as f64;
    atoms.height = h as f64;
    let gt = render_atoms(&atoms, &RenderParams::GROUND_TRUTH, w, h, 0)?;
    let clean = render_atoms(&atoms, &cfg.clean, w, h, s_render)?;
    let noisy = add_noise(&clean, &cfg.noise, s_noise)?;
    Ok(Sample { noisy, gt, clean, atoms, seed })
}
