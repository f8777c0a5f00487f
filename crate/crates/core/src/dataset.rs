//! On-disk datasets of noisy/ground-truth pairs.
//!
//! Layout: `index.json`, `atoms.json`, and `samples/<id>.noisy.tensor` plus
//! `samples/<id>.gt.tensor` per sample; optional `.pgm` previews.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{make_sample, sample_seed, GenConfig, Sample};
use crate::error::{config_err, Error, Result};
use crate::io::{read_json, write_json, write_pgm};
use crate::tensor::container;
use crate::Tensor;

pub const DATASET_FORMAT: &str = "nucdenoise-dataset/1";

/// Added to the base seed of a held-out split so that its samples never
/// coincide with the training split of the same seed.
pub const TEST_SEED_OFFSET: u64 = 0x7E57_0000_0000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub seed: u64,
    pub noisy: String,
    pub gt: String,
    pub atoms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub dataset_id: String,
    pub base_seed: u64,
    pub config: GenConfig,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomsEntry {
    pub id: String,
    pub positions: Vec<[f64; 2]>,
}

/// Input image and target, both in `[0, 255]` units.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub noisy: Tensor<f32>,
    pub gt: Tensor<f32>,
}

/// Stable identifier of a generation run.
pub fn dataset_id(cfg: &GenConfig, base_seed: u64, count: usize) -> String {
    let canonical = serde_json::to_vec(&(cfg, base_seed, count)).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates `count` samples with seeds derived from `base_seed`.
pub fn generate(cfg: &GenConfig, count: usize, base_seed: u64) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..count).into_par_iter().map(|i| make_sample(cfg, sample_seed(base_seed, i as u64))).collect()
}

/// Writes samples and their index. Returns the index.
pub fn write_dataset(
    dir: &Path,
    cfg: &GenConfig,
    base_seed: u64,
    samples: &[Sample],
    export_pgm: bool,
) -> Result<DatasetIndex> {
    std::fs::create_dir_all(dir.join("samples")).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut atoms = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let id = format!("{i:06}");
        let noisy = format!("samples/{id}.noisy.tensor");
        let gt = format!("samples/{id}.gt.tensor");
        container::write(&dir.join(&noisy), &s.noisy, "noisy")?;
        container::write(&dir.join(&gt), &s.gt, "gt")?;
        if export_pgm {
            write_pgm(&dir.join(format!("samples/{id}.noisy.pgm")), &s.noisy)?;
            write_pgm(&dir.join(format!("samples/{id}.gt.pgm")), &s.gt)?;
        }
        atoms.push(AtomsEntry { id: id.clone(), positions: s.atoms.positions.clone() });
        entries.push(SampleEntry { id, seed: s.seed, noisy, gt, atoms: s.atoms.len() });
    }
    let index = DatasetIndex {
        format: DATASET_FORMAT.into(),
        dataset_id: dataset_id(cfg, base_seed, samples.len()),
        base_seed,
        config: cfg.clone(),
        samples: entries,
    };
    write_json(&dir.join("atoms.json"), &atoms)?;
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

/// A dataset directory opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub index: DatasetIndex,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = read_json(&dir.join("index.json"))?;
        if index.format != DATASET_FORMAT {
            return Err(config_err!("{}: unsupported dataset format {:?}", dir.display(), index.format));
        }
        Ok(Self { dir: dir.to_path_buf(), index })
    }

    pub fn len(&self) -> usize {
        self.index.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.samples.is_empty()
    }

    pub fn load(&self, i: usize) -> Result<Pair> {
        let e = &self.index.samples[i];
        let (_, noisy) = container::read(&self.dir.join(&e.noisy))?;
        let gt_path = self.dir.join(&e.gt);
        if !gt_path.exists() {
            return Err(Error::Usage(format!("sample {} has no ground truth at {}", e.id, gt_path.display())));
        }
        let (_, gt) = container::read(&gt_path)?;
        if noisy.shape() != gt.shape() {
            return Err(config_err!("sample {}: noisy {:?} and gt {:?} differ", e.id, noisy.shape(), gt.shape()));
        }
        Ok(Pair { noisy, gt })
    }

    pub fn load_all(&self) -> Result<Vec<Pair>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    pub fn atoms(&self) -> Result<Vec<AtomsEntry>> {
        read_json(&self.dir.join("atoms.json"))
    }
}
