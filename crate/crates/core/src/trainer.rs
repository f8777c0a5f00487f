//! Supervised training with L1 loss and Adam, plus evaluation passes.
//!
//! Images enter the network divided by 255 and predictions are scaled back,
//! so losses are in `[0, 1]` units while metrics stay in pixel units.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gaussian_filter, GaussianFilterSpec};
use crate::checkpoint;
use crate::datagen::GenConfig;
use crate::dataset::Pair;
use crate::error::{config_err, dim_err, Error, Result};
use crate::io::write_atomic;
use crate::metrics::{sample_metrics, MetricReport, ReportMeta, MASK_THRESHOLD};
use crate::scgn::{forward, ArchConfig, ModelParams};
use crate::tensor::{Backend, Scalar, Tape, Tensor};

/// Pixel scale between stored images and network values.
pub const PIXEL_SCALE: f64 = 255.0;

/// Mean absolute difference.
pub fn l1_loss<T: Scalar, B: Backend<T>>(b: &mut B, pred: &B::Handle, gt: &B::Handle) -> Result<B::Handle> {
    let (ps, gs) = (b.value(pred).shape(), b.value(gt).shape());
    if ps != gs {
        return Err(dim_err!("l1 loss shape mismatch: {ps:?} vs {gs:?}"));
    }
    let d = b.sub(pred, gt)?;
    let a = b.abs(&d)?;
    b.mean(&a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &ModelParams<f32>) -> Self {
        let zeros: Vec<_> = model.weights.named().iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update. Fails without touching anything if a
/// gradient is not finite.
pub fn adam_step(model: &mut ModelParams<f32>, grads: &[Tensor<f32>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let named = model.weights.named();
    if grads.len() != named.len() || state.m.len() != named.len() || state.v.len() != named.len() {
        return Err(dim_err!("{} gradients and {} moments for {} parameters", grads.len(), state.m.len(), named.len()));
    }
    for (((name, p), g), m) in named.iter().zip(grads).zip(&state.m) {
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(dim_err!("gradient {:?} for parameter {name} {:?}", g.shape(), p.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { param: name.clone(), step: state.t + 1 });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut params: Vec<&mut Tensor<f32>> = Vec::with_capacity(grads.len());
    collect_mut(model, &mut params);
    for (i, p) in params.into_iter().enumerate() {
        let (g, m, v) = (&grads[i], &mut state.m[i], &mut state.v[i]);
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let gv = gv as f64;
            let mn = cfg.beta1 * *mv as f64 + (1.0 - cfg.beta1) * gv;
            let vn = cfg.beta2 * *vv as f64 + (1.0 - cfg.beta2) * gv * gv;
            *mv = mn as f32;
            *vv = vn as f32;
            let update = cfg.lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
            *pv = (*pv as f64 - update) as f32;
        }
    }
    Ok(())
}

fn collect_mut<'a>(model: &'a mut ModelParams<f32>, out: &mut Vec<&'a mut Tensor<f32>>) {
    use crate::scgn::{Classifier, Conv, FreqUnit};
    fn conv<'a>(c: &'a mut Conv<Tensor<f32>>, out: &mut Vec<&'a mut Tensor<f32>>) {
        out.push(&mut c.kernel);
        out.push(&mut c.bias);
    }
    fn cls<'a>(c: &'a mut Classifier<Tensor<f32>>, out: &mut Vec<&'a mut Tensor<f32>>) {
        conv(&mut c.conv1, out);
        conv(&mut c.conv2, out);
    }
    let w = &mut model.weights;
    conv(&mut w.head_conv, out);
    for b in &mut w.blocks {
        for s in &mut b.sdgw {
            conv(&mut s.feat_conv, out);
            if let Some(wc) = &mut s.weight_conv {
                conv(wc, out);
            }
        }
        for f in &mut b.fbgw {
            match f {
                FreqUnit::Fbgw(p) => {
                    conv(&mut p.decouple_conv, out);
                    cls(&mut p.cls_avg, out);
                    cls(&mut p.cls_max, out);
                    conv(&mut p.recouple_conv, out);
                }
                FreqUnit::Conv(c) => conv(c, out),
                FreqUnit::ChannelAttention { conv: c, cls_avg, cls_max } => {
                    conv(c, out);
                    cls(cls_avg, out);
                    cls(cls_max, out);
                }
            }
        }
        conv(&mut b.fuse_conv, out);
    }
    conv(&mut w.tail_conv, out);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub arch: ArchConfig,
    /// Seeds both initialization and batch order.
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Evaluate on the held-out set every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Optional global gradient-norm clip, off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 2e-4,
            batch_size: 6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            arch: ArchConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(config_err!("Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.adam_eps > 0.0) {
            return Err(config_err!("Adam eps must be positive, got {}", self.adam_eps));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(config_err!("gradient clip must be positive"));
        }
        Ok(())
    }
}

/// Training recipe together with the data it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub train: TrainConfig,
    pub data: GenConfig,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

impl Preset {
    /// Full-scale recipe: n=8, C=64, lr 2e-4, batch 6, 100 epochs, 1000 pairs.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            train: TrainConfig::default(),
            data: GenConfig::default(),
            train_pairs: 1000,
            test_pairs: 100,
        }
    }

    /// Reduced recipe that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            train: TrainConfig {
                epochs: 20,
                lr: 3e-3,
                arch: ArchConfig { blocks: 2, channels: 16, ..ArchConfig::default() },
                ..TrainConfig::default()
            },
            data: GenConfig::desk(),
            train_pairs: 200,
            test_pairs: 50,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(config_err!("unknown preset {other:?}; expected paper or desk")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: u64,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<MetricReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// One JSON record per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs.iter().map(|e| serde_json::to_string(e).expect("record serializes") + "\n").collect()
    }
}

/// Data and side outputs of a training run.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainRun<'a> {
    pub train: &'a [Pair],
    pub eval: Option<&'a [Pair]>,
    /// Checkpoints go to `<dir>/epoch-NNNN` and `<dir>/final`.
    pub checkpoint_dir: Option<&'a Path>,
    /// Rewritten after every epoch.
    pub log_path: Option<&'a Path>,
    pub dataset_id: Option<&'a str>,
}

fn check_pairs(pairs: &[Pair]) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        let (c, h, w) = p.noisy.dims3()?;
        if c != 1 || h < 2 || w < 2 {
            return Err(config_err!("pair {i}: network expects [1, H, W] with H, W >= 2, got {:?}", p.noisy.shape()));
        }
        if p.noisy.shape() != p.gt.shape() {
            return Err(config_err!("pair {i}: noisy {:?} and gt {:?} differ", p.noisy.shape(), p.gt.shape()));
        }
    }
    Ok(())
}

fn to_unit(t: &Tensor<f32>) -> Tensor<f32> {
    let s = (1.0 / PIXEL_SCALE) as f32;
    t.map(|v| v * s)
}

/// Loss and gradients of one sample, gradients in canonical order.
pub fn sample_gradients(model: &ModelParams<f32>, noisy: &Tensor<f32>, gt: &Tensor<f32>) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let w = model.weights.map(&mut |_, t| Ok(tape.param(t)))?;
    let x = tape.constant(noisy.clone());
    let y = tape.constant(gt.clone());
    let pred = forward(&mut tape, &x, &w, &model.arch)?;
    let loss = l1_loss(&mut tape, &pred, &y)?;
    let value = tape.value(&loss).data()[0] as f64;
    let mut grads = tape.backward(loss)?;
    let out = w
        .named()
        .into_iter()
        .zip(model.weights.named())
        .map(|((_, v), (_, p))| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, out))
}

fn clip(grads: &mut [Tensor<f32>], max_norm: f64) {
    let norm = grads.iter().flat_map(|g| g.data()).map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Trains from a fresh initialization. Batch order is a seeded shuffle per
/// epoch; the last partial batch is kept. Per-sample gradients may run in
/// parallel but are summed in sample order, so results do not depend on
/// the thread count.
pub fn train(cfg: &TrainConfig, run: TrainRun<'_>) -> Result<(ModelParams<f32>, TrainLog)> {
    cfg.validate()?;
    check_pairs(run.train)?;
    if let Some(eval) = run.eval {
        check_pairs(eval)?;
    }
    let mut model = ModelParams::<f32>::init(&cfg.arch, cfg.seed)?;
    let mut state = AdamState::new(&model);
    let mut log = TrainLog::default();
    if cfg.epochs == 0 || run.train.is_empty() {
        return Ok((model, log));
    }
    let inputs: Vec<(Tensor<f32>, Tensor<f32>)> = run.train.iter().map(|p| (to_unit(&p.noisy), to_unit(&p.gt))).collect();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464C_4521);
    let adam = cfg.adam();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| sample_gradients(&model, &inputs[i].0, &inputs[i].1))
                .collect::<Result<Vec<_>>>()?;
            let mut iter = results.into_iter();
            let (first_loss, mut total) = iter.next().expect("chunks are non-empty");
            loss_sum += first_loss;
            for (l, g) in iter {
                loss_sum += l;
                for (acc, gi) in total.iter_mut().zip(&g) {
                    acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += b);
                }
            }
            let inv = 1.0 / batch.len() as f32;
            total.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            if let Some(c) = cfg.grad_clip {
                clip(&mut total, c);
            }
            adam_step(&mut model, &total, &mut state, &adam)?;
        }
        let mean_loss = loss_sum / inputs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite { param: "loss".into(), step: state.t });
        }
        let eval = match run.eval {
            Some(pairs) if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) => {
                Some(evaluate(&Method::Model(&model), pairs, run.dataset_id.unwrap_or(""))?)
            }
            _ => None,
        };
        log.epochs.push(EpochRecord { epoch, mean_loss, steps: state.t, seconds: start.elapsed().as_secs_f64(), eval });
        if let Some(path) = run.log_path {
            write_atomic(path, log.to_jsonl().as_bytes())?;
        }
        if let Some(dir) = run.checkpoint_dir {
            let meta = serde_json::json!({
                "seed": cfg.seed,
                "epoch": epoch,
                "step": state.t,
                "losses": log.losses(),
                "dataset_id": run.dataset_id,
            });
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                checkpoint::save(&dir.join(format!("epoch-{epoch:04}")), &model, meta.clone())?;
            }
            if epoch == cfg.epochs {
                checkpoint::save(&dir.join("final"), &model, meta)?;
            }
        }
    }
    Ok((model, log))
}

/// Denoising method under evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    Model(&'a ModelParams<f32>),
    Gaussian(GaussianFilterSpec),
    /// Returns the noisy input unchanged.
    Identity,
    /// Returns the ground truth; an upper bound for sanity checks.
    Oracle,
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Model(m) => {
                let v = crate::scgn::Variant::ALL.iter().find(|v| m.arch.clone().with_variant(**v) == m.arch);
                v.map(|v| v.name().to_string()).unwrap_or_else(|| "SCGN-custom".into())
            }
            Method::Gaussian(_) => "Gaussian".into(),
            Method::Identity => "Noisy".into(),
            Method::Oracle => "Oracle".into(),
        }
    }

    fn params(&self) -> serde_json::Value {
        match self {
            Method::Model(m) => serde_json::json!({ "arch": m.arch, "parameters": m.param_count() }),
            Method::Gaussian(s) => serde_json::to_value(s).expect("spec serializes"),
            Method::Identity | Method::Oracle => serde_json::Value::Null,
        }
    }
}

/// Applies a trained model to a `[1, H, W]` image in pixel units.
pub fn denoise_with_model(model: &ModelParams<f32>, noisy: &Tensor<f32>) -> Result<Tensor<f32>> {
    let out = model.infer(&to_unit(noisy))?;
    let s = PIXEL_SCALE as f32;
    Ok(out.map(|v| v * s))
}

pub fn apply(method: &Method<'_>, pair: &Pair) -> Result<Tensor<f32>> {
    match method {
        Method::Model(m) => denoise_with_model(m, &pair.noisy),
        Method::Gaussian(spec) => gaussian_filter(&pair.noisy, spec),
        Method::Identity => Ok(pair.noisy.clone()),
        Method::Oracle => Ok(pair.gt.clone()),
    }
}

/// Denoises every pair and reports PSNR, SSIM and pixel IoU.
pub fn evaluate(method: &Method<'_>, pairs: &[Pair], dataset_id: &str) -> Result<MetricReport> {
    let per_sample = pairs
        .par_iter()
        .map(|p| sample_metrics(&apply(method, p)?, &p.gt, MASK_THRESHOLD))
        .collect::<Result<Vec<_>>>()?;
    let meta = ReportMeta { method: method.name(), params: method.params(), dataset_id: dataset_id.to_string() };
    Ok(MetricReport::aggregate(per_sample, meta))
}

/// Path of the final checkpoint under a training output directory.
pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join("final")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate;
    use crate::tensor::Eager;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            lr: 1e-3,
            batch_size: 3,
            arch: ArchConfig { blocks: 1, channels: 4, reduction: 2, ..ArchConfig::default() },
            ..TrainConfig::default()
        }
    }

    fn tiny_pairs(n: usize, seed: u64) -> Vec<Pair> {
        let cfg = GenConfig { width: 16, height: 16, ..GenConfig::desk() };
        generate(&cfg, n, seed).unwrap().into_iter().map(|s| Pair { noisy: s.noisy, gt: s.gt }).collect()
    }

    #[test]
    fn l1_examples() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(&Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let g = tape.constant(Tensor::zeros(&[2]));
        let l = l1_loss(&mut tape, &p, &g).unwrap();
        assert_eq!(tape.value(&l).data()[0], 1.0);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.5, -0.5]);

        let mut e = Eager;
        let a = e.constant(Tensor::<f64>::full(&[1, 3, 3], 5.0));
        let b = e.constant(Tensor::<f64>::full(&[1, 3, 3], 3.0));
        assert_eq!(l1_loss(&mut e, &a, &b).unwrap().data()[0], 2.0);
        assert_eq!(l1_loss(&mut e, &a, &a).unwrap().data()[0], 0.0);
        let c = e.constant(Tensor::<f64>::zeros(&[1, 3, 4]));
        assert_eq!(l1_loss(&mut e, &a, &c).unwrap_err().kind(), "dimension");
    }

    fn small_model() -> ModelParams<f32> {
        ModelParams::init(&tiny_cfg().arch, 1).unwrap()
    }

    fn adam() -> AdamConfig {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut m = small_model();
        let before = m.clone();
        let mut s = AdamState::new(&m);
        let g: Vec<_> = s.m.clone();
        adam_step(&mut m, &g, &mut s, &adam()).unwrap();
        assert_eq!(m, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = small_model();
        let before = m.clone();
        let mut s = AdamState::new(&m);
        let g: Vec<_> = s.m.iter().map(|t| Tensor::full(t.shape(), 0.37f32)).collect();
        adam_step(&mut m, &g, &mut s, &adam()).unwrap();
        for ((_, a), (_, b)) in m.weights.named().iter().zip(before.weights.named()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!(((y - x) as f64 - 1e-3).abs() < 1e-6);
            }
        }
        adam_step(&mut m, &g, &mut s, &adam()).unwrap();
        assert_eq!(s.t, 2);
        assert!(s.v.iter().all(|v| v.data().iter().all(|&x| x > 0.0)));
    }

    #[test]
    fn adam_zero_lr_is_bit_identical() {
        let mut m = small_model();
        let before = m.clone();
        let mut s = AdamState::new(&m);
        let cfg = AdamConfig { lr: 0.0, ..adam() };
        for k in 0..5 {
            let g: Vec<_> = s.m.iter().map(|t| Tensor::full(t.shape(), k as f32 - 2.5)).collect();
            adam_step(&mut m, &g, &mut s, &cfg).unwrap();
        }
        assert_eq!(m, before);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut m = small_model();
        let before = m.clone();
        let mut s = AdamState::new(&m);
        let mut g: Vec<_> = s.m.clone();
        g[3].data_mut()[0] = f32::NAN;
        match adam_step(&mut m, &g, &mut s, &adam()).unwrap_err() {
            Error::NonFinite { param, step } => {
                assert_eq!(param, before.weights.named()[3].0);
                assert_eq!(step, 1);
            }
            e => panic!("{e}"),
        }
        assert_eq!(m, before);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let pairs = tiny_pairs(2, 0);
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let (m, log) = train(&cfg, TrainRun { train: &pairs, ..Default::default() }).unwrap();
        assert_eq!(m, ModelParams::init(&cfg.arch, cfg.seed).unwrap());
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_logs_each_epoch() {
        let pairs = tiny_pairs(5, 1);
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("log.jsonl");
        let run = TrainRun { train: &pairs, checkpoint_dir: Some(dir.path()), log_path: Some(&log_path), ..Default::default() };
        let cfg = TrainConfig { checkpoint_every: 1, ..tiny_cfg() };
        let (a, la) = train(&cfg, run).unwrap();
        let (b, lb) = train(&cfg, TrainRun { train: &pairs, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.losses(), lb.losses());
        assert_eq!(la.epochs.len(), 2);
        assert_eq!(la.epochs[1].steps, 4);
        assert_eq!(std::fs::read_to_string(&log_path).unwrap().lines().count(), 2);
        let (back, manifest) = checkpoint::load(&final_checkpoint(dir.path())).unwrap();
        assert_eq!(back, a);
        assert_eq!(manifest.meta["losses"].as_array().unwrap().len(), 2);
        assert_eq!(manifest.meta["epoch"], 2);
        assert!(dir.path().join("epoch-0001/manifest.json").exists());
        assert_ne!(a, ModelParams::init(&cfg.arch, cfg.seed).unwrap());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let pairs = tiny_pairs(4, 2);
        let cfg = tiny_cfg();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| train(&cfg, TrainRun { train: &pairs, ..Default::default() }).unwrap().0)
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn mismatched_pairs_fail_before_training() {
        let mut pairs = tiny_pairs(2, 3);
        pairs[1].gt = Tensor::zeros(&[1, 8, 8]);
        let err = train(&tiny_cfg(), TrainRun { train: &pairs, ..Default::default() }).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let pairs = tiny_pairs(2, 4);
        let m = small_model();
        let (la, ga) = sample_gradients(&m, &to_unit(&pairs[0].noisy), &to_unit(&pairs[0].gt)).unwrap();
        let (lb, gb) = sample_gradients(&m, &to_unit(&pairs[1].noisy), &to_unit(&pairs[1].gt)).unwrap();
        assert!(la > 0.0 && lb > 0.0);
        assert_eq!(ga.len(), m.weights.named().len());
        for (a, (_, p)) in ga.iter().zip(m.weights.named()) {
            assert_eq!(a.shape(), p.shape());
        }
        assert!(gb.iter().any(|g| g.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn presets() {
        let p = Preset::paper();
        p.validate().unwrap();
        assert_eq!((p.train.arch.blocks, p.train.arch.channels), (8, 64));
        assert_eq!((p.train.lr, p.train.batch_size, p.train.epochs, p.train_pairs), (2e-4, 6, 100, 1000));
        assert_eq!((p.train.beta1, p.train.beta2), (0.9, 0.999));
        let d = Preset::desk();
        d.validate().unwrap();
        assert_eq!((d.data.width, d.train.arch.channels, d.train.arch.blocks), (64, 16, 2));
        assert_eq!((d.train_pairs, d.test_pairs, d.train.epochs), (200, 50, 20));
        assert_eq!(Preset::by_name("huge").unwrap_err().kind(), "config");
    }

    #[test]
    fn evaluate_trivial_methods() {
        let pairs = tiny_pairs(3, 5);
        let ident = evaluate(&Method::Identity, &pairs, "x").unwrap();
        let expect: f64 = pairs
            .iter()
            .map(|p| crate::metrics::psnr(&p.noisy.map(|v| v.clamp(0.0, 255.0)), &p.gt, 255.0).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((ident.psnr_db - expect).abs() < 1e-9);
        let oracle = evaluate(&Method::Oracle, &pairs, "x").unwrap();
        assert_eq!((oracle.psnr_db, oracle.ssim, oracle.iou, oracle.psnr_capped), (99.0, 1.0, 1.0, 3));
        assert_eq!(oracle.meta.dataset_id, "x");
    }

    #[test]
    fn method_names() {
        let full = ModelParams::init(&tiny_cfg().arch, 0).unwrap();
        assert_eq!(Method::Model(&full).name(), "SCGN");
        let v3 = ModelParams::init(&tiny_cfg().arch.with_variant(crate::scgn::Variant::V3), 0).unwrap();
        assert_eq!(Method::Model(&v3).name(), "SCGN-V3");
    }
}
