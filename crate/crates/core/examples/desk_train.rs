//! Trains the desk preset in memory and compares it with the Gaussian
//! baseline. Usage: `cargo run --release --example desk_train [epochs]`.

use nucdenoise::baselines::GaussianFilterSpec;
use nucdenoise::dataset::{generate, Pair, TEST_SEED_OFFSET};
use nucdenoise::metrics::format_table;
use nucdenoise::trainer::{evaluate, train, Method, Preset, TrainConfig, TrainRun};

fn pairs(preset: &Preset, n: usize, seed: u64) -> nucdenoise::Result<Vec<Pair>> {
    Ok(generate(&preset.data, n, seed)?.into_iter().map(|s| Pair { noisy: s.noisy, gt: s.gt }).collect())
}

fn main() -> nucdenoise::Result<()> {
    let preset = Preset::desk();
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(preset.train.epochs);
    let train_set = pairs(&preset, preset.train_pairs, 0)?;
    let test_set = pairs(&preset, preset.test_pairs, TEST_SEED_OFFSET)?;
    let cfg = TrainConfig { epochs, ..preset.train.clone() };
    let (model, log) = train(&cfg, TrainRun { train: &train_set, ..Default::default() })?;
    for e in &log.epochs {
        println!("epoch {:>3}  loss {:.5}  {:.1}s", e.epoch, e.mean_loss, e.seconds);
    }
    let reports = vec![
        evaluate(&Method::Model(&model), &test_set, "desk")?,
        evaluate(&Method::Gaussian(GaussianFilterSpec::new(GaussianFilterSpec::DEFAULT_SIGMA)?), &test_set, "desk")?,
        evaluate(&Method::Identity, &test_set, "desk")?,
    ];
    print!("{}", format_table(&reports));
    Ok(())
}
