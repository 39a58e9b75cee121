//! Datasets of labelled density profiles.

pub mod format;
pub mod noise;
pub mod region;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CouplingParams;
use crate::rng;
use crate::topo::{chern_link, BzGrid, DEFAULT_LABEL_GRID};
use crate::walk::{choose_time, evolve_momentum, momentum_profile, position_profile, to_position, Domain, Lattice};

pub use format::{decode_sample, encode_sample, read_sample, write_sample, Sample, SAMPLE_MAGIC};
pub use noise::{add_momentum_noise, add_position_noise, NoiseSpec};
pub use region::{sample_classes, sample_parameters, RegionKind, RegionSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_FILL: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub file: String,
    pub label: i32,
    pub params: CouplingParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<SampleEntry>,
    #[serde(default)]
    pub region: Option<RegionSpec>,
    pub lattice: usize,
    pub domain: Domain,
    pub fill: f64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub split: Option<Split>,
    pub global_seed: u64,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn class_counts(&self) -> BTreeMap<i32, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label).or_default() += 1;
        }
        counts
    }

    pub fn load(&self, dir: &Path, indices: &[usize]) -> Result<Vec<Sample>> {
        indices
            .iter()
            .map(|&i| read_sample(&dir.join(&self.samples[i].file)))
            .collect()
    }

    pub fn load_all(&self, dir: &Path) -> Result<Vec<Sample>> {
        self.load(dir, &(0..self.samples.len()).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub domain: Domain,
    pub fill: f64,
    pub noise: Option<NoiseSpec>,
    pub global_seed: u64,
    pub label_grid: BzGrid,
    pub region: Option<RegionSpec>,
}

impl GenerateOptions {
    pub fn new(domain: Domain, global_seed: u64) -> Self {
        GenerateOptions {
            domain,
            fill: DEFAULT_FILL,
            noise: None,
            global_seed,
            label_grid: BzGrid::new(DEFAULT_LABEL_GRID).unwrap(),
            region: None,
        }
    }
}

pub fn sample_file_name(index: usize) -> String {
    format!("sample_{index:06}.qwp")
}

/// Simulates one sample: walk time, evolution, optional transform and noise.
pub fn simulate_sample(
    params: &CouplingParams,
    lat: Lattice,
    opts: &GenerateOptions,
    label: i32,
    seed: u64,
) -> Result<Sample> {
    let t = choose_time(params, lat, opts.fill)?;
    let field = evolve_momentum(params, lat, t)?;
    let profile = match opts.domain {
        Domain::Momentum => {
            let clean = momentum_profile(&field)?;
            match &opts.noise {
                Some(spec) => add_momentum_noise(&clean, spec, seed)?,
                None => clean,
            }
        }
        Domain::Position => {
            let pos = to_position(&field)?;
            match &opts.noise {
                Some(spec) => add_position_noise(&pos, spec, seed)?,
                None => position_profile(&pos)?,
            }
        }
    };
    Ok(Sample::new(profile, label, seed))
}

/// Writes one sample file per parameter set plus `manifest.json` into `out_dir`.
///
/// Labels are recomputed with the link-variable evaluator. Samples are
/// independent and generated in parallel; sample `i` draws noise from the
/// stream keyed by `(global_seed, i)`.
pub fn generate_dataset(
    params_list: &[CouplingParams],
    lat: Lattice,
    out_dir: &Path,
    opts: &GenerateOptions,
) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<SampleEntry> = params_list
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<SampleEntry> {
            let label = chern_link(p, opts.label_grid)?.value;
            let seed = rng::derive_seed(opts.global_seed, i as u64);
            let sample = simulate_sample(p, lat, opts, label, seed)?;
            let file = sample_file_name(i);
            write_sample(&sample, &out_dir.join(&file))?;
            Ok(SampleEntry {
                file,
                label,
                params: *p,
                seed,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        samples: entries,
        region: opts.region.clone(),
        lattice: lat.side(),
        domain: opts.domain,
        fill: opts.fill,
        noise: opts.noise.clone(),
        split: None,
        global_seed: opts.global_seed,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

pub fn resolve(dir: &Path, entry: &SampleEntry) -> PathBuf {
    dir.join(&entry.file)
}

/// Stratified random split; each class is divided by `ratios` independently.
pub fn split(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    let n = manifest.samples.len();
    if n < 10 {
        return Err(Error::TooFewSamples(n));
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split ratios must sum to 1: {ratios:?}"
        )));
    }
    let mut by_class: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, s) in manifest.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = rng::seeded(seed);
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let len = idx.len() as f64;
        let n_train = (ratios[0] * len).round() as usize;
        let n_val = ((ratios[1] * len).round() as usize).min(idx.len() - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(DatasetManifest {
        split: Some(out),
        ..manifest.clone()
    })
}
