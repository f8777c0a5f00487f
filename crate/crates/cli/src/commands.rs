use std::path::{Path, PathBuf};

use clap::Args;
use nucdenoise::baselines::{gaussian_filter, GaussianFilterSpec};
use nucdenoise::checkpoint;
use nucdenoise::datagen::GenConfig;
use nucdenoise::dataset::{generate as generate_samples, write_dataset, Dataset, TEST_SEED_OFFSET};
use nucdenoise::io::{read_json, read_pgm, write_atomic, write_json, write_pgm};
use nucdenoise::metrics::{format_table, localize as localize_image, LocalizeConfig, MetricReport, MASK_THRESHOLD};
use nucdenoise::noisemodel::{calibrate as fit_noise, read_sequences, synth_vacuum as synth, write_sequence, NoiseParams};
use nucdenoise::tensor::container;
use nucdenoise::trainer::{self, denoise_with_model, evaluate, Method, Preset, TrainRun};
use nucdenoise::{ArchConfig, Error, ModelParams, Result, Tensor, Variant};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub struct Globals {
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: Option<PathBuf>,
}

impl Globals {
    fn json(&self) -> Value {
        json!({ "seed": self.seed, "threads": self.threads, "config": self.config })
    }
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Usage(format!("missing required --{flag} (flag or config file)")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_resolved(dir: &Path, command: &str, globals: &Globals, body: Value) -> Result<()> {
    let mut v = json!({ "command": command, "globals": globals.json() });
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, body) {
        dst.extend(src);
    }
    write_json(&dir.join("resolved.json"), &v)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size must look like HxW, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

/// `builtin-paper`, `none`, or a JSON file holding noise parameters.
fn noise_params(spec: &str) -> Result<NoiseParams> {
    let p = match spec {
        "builtin-paper" | "paper" => NoiseParams::PAPER,
        "none" => NoiseParams::ZERO,
        path => read_json(Path::new(path))?,
    };
    p.validate()?;
    Ok(p)
}

fn preset(name: &Option<String>) -> Result<Preset> {
    Preset::by_name(name.as_deref().unwrap_or("paper"))
}

fn parse_variant(s: &str) -> Result<Variant> {
    serde_json::from_value(Value::String(s.to_lowercase()))
        .map_err(|_| Error::Config(format!("unknown variant {s:?}; expected v1..v5 or full")))
}

fn read_image(path: &Path) -> Result<Tensor<f32>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        read_pgm(path)
    } else {
        Ok(container::read(path)?.1)
    }
}

fn write_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        write_pgm(path, image)
    } else {
        container::write(path, image, "image")
    }
}

// ---------------------------------------------------------------- generate

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of samples; defaults to the preset's split size.
    #[arg(long)]
    pub count: Option<usize>,
    /// Image size as HxW.
    #[arg(long)]
    pub size: Option<String>,
    /// Minimum atom spacing in pixels.
    #[arg(long)]
    pub rmin: Option<f64>,
    /// `builtin-paper`, `none`, or a parameter JSON file from `calibrate`.
    #[arg(long)]
    pub noise_params: Option<String>,
    /// `paper` (256x256) or `desk` (64x64).
    #[arg(long)]
    pub preset: Option<String>,
    /// `train` or `test`; the test split draws from a disjoint seed range.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub perlin_cell: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub perlin_threshold: Option<f64>,
    /// Also write PGM previews.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pgm: Option<bool>,
    /// Clamp noisy images to [0, 255] before writing.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub clamp: Option<bool>,
}

pub fn generate(g: &Globals, a: GenerateArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let preset = preset(&a.preset)?;
    let mut cfg: GenConfig = preset.data.clone();
    if let Some(s) = &a.size {
        (cfg.height, cfg.width) = parse_size(s)?;
    }
    if let Some(r) = a.rmin {
        cfg.r_min = r;
    }
    if let Some(c) = a.perlin_cell {
        cfg.perlin_cell = c;
    }
    if let Some(t) = a.perlin_threshold {
        cfg.perlin_threshold = t;
    }
    let noise_source = a.noise_params.clone().unwrap_or_else(|| "builtin-paper".into());
    cfg.noise = noise_params(&noise_source)?;
    cfg.validate()?;
    let split = a.split.clone().unwrap_or_else(|| "train".into());
    let (base_seed, default_count) = match split.as_str() {
        "train" => (g.seed, preset.train_pairs),
        "test" => (g.seed.wrapping_add(TEST_SEED_OFFSET), preset.test_pairs),
        other => return Err(Error::Config(format!("split must be train or test, got {other:?}"))),
    };
    let count = a.count.unwrap_or(default_count);
    let clamp = a.clamp.unwrap_or(false);
    let mut samples = generate_samples(&cfg, count, base_seed)?;
    if clamp {
        for s in &mut samples {
            s.noisy = s.noisy.map(|v| v.clamp(0.0, 255.0));
        }
    }
    let index = write_dataset(&out, &cfg, base_seed, &samples, a.pgm.unwrap_or(false))?;
    write_resolved(
        &out,
        "generate",
        g,
        json!({
            "out": out,
            "preset": preset.name,
            "split": split,
            "base_seed": base_seed,
            "count": count,
            "noise_source": noise_source,
            "clamp": clamp,
            "pgm": a.pgm.unwrap_or(false),
            "config": cfg,
            "dataset_id": index.dataset_id,
        }),
    )?;
    println!("wrote {count} samples to {} (dataset {})", out.display(), index.dataset_id);
    Ok(())
}

// ---------------------------------------------------------------- synth-vacuum

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthVacuumArgs {
    /// Output directory; one subdirectory per intensity.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated mean intensities in pixel units.
    #[arg(long)]
    pub intensities: Option<String>,
    /// Frames per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame size as HxW.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub noise_params: Option<String>,
}

pub fn synth_vacuum(g: &Globals, a: SynthVacuumArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let list = a.intensities.clone().unwrap_or_else(|| "20,24,28,32,36,40".into());
    let intensities = list
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad intensity {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let frames = a.frames.unwrap_or(100);
    let (h, w) = parse_size(a.size.as_deref().unwrap_or("256x256"))?;
    let noise_source = a.noise_params.clone().unwrap_or_else(|| "builtin-paper".into());
    let p = noise_params(&noise_source)?;
    create_dir(&out)?;
    for (i, &intensity) in intensities.iter().enumerate() {
        let seq = synth(intensity, &p, frames, h, w, g.seed.wrapping_mul(1000).wrapping_add(i as u64))?;
        write_sequence(&out.join(format!("seq-{i:02}")), &seq)?;
    }
    write_resolved(
        &out,
        "synth-vacuum",
        g,
        json!({ "out": out, "intensities": intensities, "frames": frames, "height": h, "width": w,
                "noise_source": noise_source, "noise": p }),
    )?;
    println!("wrote {} sequences of {frames} frames to {}", intensities.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- calibrate

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateArgs {
    /// Directory of sequence subdirectories.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Output parameter JSON; a fit report is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn calibrate(g: &Globals, a: CalibrateArgs) -> Result<()> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let seqs = read_sequences(&input)?;
    let report = fit_noise(&seqs)?;
    let dir = parent_dir(&out);
    create_dir(&dir)?;
    write_json(&out, &report.params)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("params");
    write_json(&dir.join(format!("{stem}.report.json")), &report)?;
    write_resolved(&dir, "calibrate", g, json!({ "in": input, "out": out, "sequences": seqs.len() }))?;
    println!("{:>10} {:>10} {:>10} {:>10}", "intensity", "mean", "sigma_p", "residual");
    for (s, r) in report.sequences.iter().zip(&report.residuals) {
        println!("{:>10.3} {:>10.3} {:>10.5} {:>10.5}", s.intensity, s.mean_intensity, s.sigma_p, r);
    }
    let p = report.params;
    println!("slope {} intercept {} sigma_c {}", p.slope, p.intercept, p.sigma_c);
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Optional held-out dataset scored during training.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `paper` or `desk` hyperparameters.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub reduction: Option<usize>,
    /// Ablation variant: v1..v5 or full.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Clip the global gradient norm; off by default.
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

fn arch_overrides(mut arch: ArchConfig, blocks: Option<usize>, channels: Option<usize>, reduction: Option<usize>, variant: &Option<String>) -> Result<ArchConfig> {
    if let Some(v) = variant {
        arch = arch.with_variant(parse_variant(v)?);
    }
    if let Some(b) = blocks {
        arch.blocks = b;
    }
    if let Some(c) = channels {
        arch.channels = c;
    }
    if let Some(r) = reduction {
        arch.reduction = r;
    }
    arch.validate()?;
    Ok(arch)
}

pub fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let data = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let preset = preset(&a.preset)?;
    let mut cfg = preset.train.clone();
    cfg.seed = g.seed;
    cfg.arch = arch_overrides(cfg.arch, a.blocks, a.channels, a.reduction, &a.variant)?;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.checkpoint_every = a.checkpoint_every.unwrap_or(cfg.checkpoint_every);
    cfg.grad_clip = a.grad_clip.or(cfg.grad_clip);
    cfg.eval_every = a.eval_every.unwrap_or(if a.eval_data.is_some() { 1 } else { 0 });
    cfg.validate()?;

    let train_set = Dataset::open(&data)?;
    let pairs = train_set.load_all()?;
    let eval_set = a.eval_data.as_deref().map(Dataset::open).transpose()?;
    let eval_pairs = eval_set.as_ref().map(|d| d.load_all()).transpose()?;
    if let Some(e) = &eval_set {
        if e.index.dataset_id == train_set.index.dataset_id {
            eprintln!("warning: evaluation dataset is the training dataset");
        }
    }
    create_dir(&out)?;
    write_resolved(
        &out,
        "train",
        g,
        json!({
            "data": data,
            "eval_data": a.eval_data,
            "out": out,
            "preset": preset.name,
            "train": cfg,
            "dataset_id": train_set.index.dataset_id,
            "eval_dataset_id": eval_set.as_ref().map(|d| &d.index.dataset_id),
            "parameters": ModelParams::<f32>::init(&cfg.arch, cfg.seed)?.param_count(),
        }),
    )?;
    let log_path = out.join("train_log.jsonl");
    let ckpt = out.join("checkpoints");
    let run = TrainRun {
        train: &pairs,
        eval: eval_pairs.as_deref(),
        checkpoint_dir: Some(&ckpt),
        log_path: Some(&log_path),
        dataset_id: Some(&train_set.index.dataset_id),
    };
    let (model, log) = trainer::train(&cfg, run)?;
    if cfg.epochs == 0 {
        let meta = json!({ "seed": cfg.seed, "epoch": 0, "step": 0, "losses": [], "dataset_id": train_set.index.dataset_id });
        checkpoint::save(&trainer::final_checkpoint(&ckpt), &model, meta)?;
        write_atomic(&log_path, b"")?;
    }
    for e in &log.epochs {
        let eval = e.eval.as_ref().map(|r| format!("  eval {:.2} dB / {:.4}", r.psnr_db, r.ssim)).unwrap_or_default();
        println!("epoch {:>4}  loss {:.6}  {:.1}s{eval}", e.epoch, e.mean_loss, e.seconds);
    }
    println!("final checkpoint: {}", trainer::final_checkpoint(&ckpt).display());
    Ok(())
}

// ---------------------------------------------------------------- denoise

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseArgs {
    /// Noisy image: tensor container or PGM.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output image; `.pgm` writes an 8-bit preview, anything else a tensor.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `scgn` (needs --checkpoint), `gaussian` or `identity`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Gaussian baseline sigma in pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Require the checkpoint to have this variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// Require the checkpoint to have this many blocks.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Require the checkpoint to have this many channels.
    #[arg(long)]
    pub channels: Option<usize>,
}

fn load_checkpoint(dir: &Path, expect: &DenoiseArgs) -> Result<(ModelParams<f32>, checkpoint::Manifest)> {
    let (model, manifest) = checkpoint::load(dir)?;
    if expect.variant.is_some() || expect.blocks.is_some() || expect.channels.is_some() {
        let mut arch = model.arch.clone();
        if let Some(v) = &expect.variant {
            arch = arch.with_variant(parse_variant(v)?);
        }
        arch.blocks = expect.blocks.unwrap_or(arch.blocks);
        arch.channels = expect.channels.unwrap_or(arch.channels);
        checkpoint::load_for(dir, &arch)?;
    }
    Ok((model, manifest))
}

pub fn denoise(g: &Globals, a: DenoiseArgs) -> Result<()> {
    let input = required(&a.input, "input")?;
    let output = required(&a.output, "output")?;
    let method = a.method.clone().unwrap_or_else(|| "scgn".into());
    let noisy = read_image(&input)?;
    let mut resolved = json!({ "input": input, "output": output, "method": method });
    let out = match method.as_str() {
        "scgn" => {
            let ckpt = a.checkpoint.clone().ok_or_else(|| Error::Usage("method scgn needs --checkpoint".into()))?;
            let (model, _) = load_checkpoint(&ckpt, &a)?;
            resolved["checkpoint"] = json!(ckpt);
            resolved["arch"] = json!(model.arch);
            denoise_with_model(&model, &noisy)?
        }
        "gaussian" => {
            let spec = GaussianFilterSpec::new(a.sigma.unwrap_or(GaussianFilterSpec::DEFAULT_SIGMA))?;
            resolved["gaussian"] = json!(spec);
            gaussian_filter(&noisy, &spec)?
        }
        "identity" => noisy,
        other => return Err(Error::Config(format!("unknown method {other:?}; expected scgn, gaussian or identity"))),
    };
    let dir = parent_dir(&output);
    create_dir(&dir)?;
    write_image(&output, &out)?;
    write_resolved(&dir, "denoise", g, resolved)?;
    println!("wrote {}", output.display());
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    /// Test dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for report.json and table.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint directory; repeat to compare several.
    #[arg(long)]
    pub checkpoint: Option<Vec<PathBuf>>,
    /// Gaussian baseline sigma in pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Leave out the Gaussian baseline row.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_baseline: Option<bool>,
    /// Add a row scoring the noisy input itself.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub noisy: Option<bool>,
    /// Add a row scoring the ground truth against itself.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle: Option<bool>,
}

pub fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    let data = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let set = Dataset::open(&data)?;
    let pairs = set.load_all()?;
    let id = set.index.dataset_id.clone();
    let mut reports: Vec<MetricReport> = Vec::new();
    for ckpt in a.checkpoint.clone().unwrap_or_default() {
        let (model, manifest) = checkpoint::load(&ckpt)?;
        let train_id = manifest.meta.get("dataset_id").cloned().unwrap_or(Value::Null);
        if train_id.as_str() == Some(id.as_str()) {
            eprintln!("warning: {} was trained on the evaluation dataset", ckpt.display());
        }
        let mut r = evaluate(&Method::Model(&model), &pairs, &id)?;
        if let Value::Object(m) = &mut r.meta.params {
            m.insert("checkpoint".into(), json!(ckpt));
            m.insert("train_dataset_id".into(), train_id);
        }
        reports.push(r);
    }
    let sigma = a.sigma.unwrap_or(GaussianFilterSpec::DEFAULT_SIGMA);
    if !a.no_baseline.unwrap_or(false) {
        reports.push(evaluate(&Method::Gaussian(GaussianFilterSpec::new(sigma)?), &pairs, &id)?);
    }
    if a.noisy.unwrap_or(false) {
        reports.push(evaluate(&Method::Identity, &pairs, &id)?);
    }
    if a.oracle.unwrap_or(false) {
        reports.push(evaluate(&Method::Oracle, &pairs, &id)?);
    }
    if reports.is_empty() {
        return Err(Error::Usage("nothing to evaluate: give --checkpoint or keep the baseline".into()));
    }
    create_dir(&out)?;
    let table = format_table(&reports);
    write_json(&out.join("report.json"), &reports)?;
    write_atomic(&out.join("table.txt"), table.as_bytes())?;
    write_resolved(
        &out,
        "eval",
        g,
        json!({ "data": data, "out": out, "dataset_id": id, "checkpoints": a.checkpoint, "sigma": sigma,
                "baseline": !a.no_baseline.unwrap_or(false), "noisy": a.noisy.unwrap_or(false),
                "oracle": a.oracle.unwrap_or(false), "mask_threshold": MASK_THRESHOLD }),
    )?;
    print!("{table}");
    Ok(())
}

// ---------------------------------------------------------------- localize

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeArgs {
    /// Image to analyse: tensor container or PGM.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory for centroids.json and mask.pgm.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Binarization threshold in pixel units.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Drop components with fewer pixels.
    #[arg(long)]
    pub min_pixels: Option<usize>,
}

#[derive(Serialize)]
struct Centroids {
    count: usize,
    centroids: Vec<[f64; 2]>,
    sizes: Vec<usize>,
}

pub fn localize(g: &Globals, a: LocalizeArgs) -> Result<()> {
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let defaults = LocalizeConfig::default();
    let cfg = LocalizeConfig {
        threshold: a.threshold.unwrap_or(defaults.threshold),
        min_pixels: a.min_pixels.unwrap_or(defaults.min_pixels),
    };
    if !(cfg.threshold > 0.0 && cfg.threshold < 255.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 255), got {}", cfg.threshold)));
    }
    let image = read_image(&input)?;
    let r = localize_image(&image, &cfg)?;
    create_dir(&out)?;
    write_json(&out.join("centroids.json"), &Centroids { count: r.centroids.len(), centroids: r.centroids.clone(), sizes: r.sizes })?;
    write_pgm(&out.join("mask.pgm"), &r.mask.map(|v| v * 255.0))?;
    write_resolved(&out, "localize", g, json!({ "input": input, "out": out, "localize": cfg }))?;
    println!("{} atoms", r.centroids.len());
    Ok(())
}
