//! The single declarative run configuration and its fingerprint.

use std::fs;
use std::path::{Path, PathBuf};

use popk::rng::derive_seed;
use popk::{BucketSpec, PopularityLogic, PopularityMetric, SamplerConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub news: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Checkpoint read by `eval`; defaults to `<out_dir>/model.json`.
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub popk: Vec<usize>,
    pub logics: Vec<PopularityLogic>,
    pub metrics: Vec<PopularityMetric>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            popk: vec![1, 2, 3],
            logics: PopularityLogic::ALL.to_vec(),
            metrics: vec![PopularityMetric::Clicks],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub bucket: BucketSpec,
    /// The `seed` field is replaced by a sub-seed of the top-level seed.
    pub sampler: SamplerConfig,
    /// The `seed` field is replaced by a sub-seed of the top-level seed.
    pub model: TrainConfig,
    /// The `seed` field is replaced by a sub-seed of the top-level seed.
    pub synth: SynthConfig,
    /// Fraction of synthetic impressions written to the train split.
    pub synth_train_fraction: f64,
    pub eval_ks: Vec<usize>,
    /// Fraction of the catalog, by train clicks, counted as popular when
    /// reporting the popular share of recommendations.
    pub popular_fraction: f64,
    pub sweep: SweepGrid,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                out_dir: PathBuf::from("out"),
                ..Paths::default()
            },
            bucket: BucketSpec::default(),
            sampler: SamplerConfig::default(),
            model: TrainConfig::default(),
            synth: SynthConfig::default(),
            synth_train_fraction: 0.8,
            eval_ks: vec![5, 10],
            popular_fraction: 0.1,
            sweep: SweepGrid::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

/// Flag values that win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub popk: Option<usize>,
    pub logic: Option<PopularityLogic>,
    pub metric: Option<PopularityMetric>,
    pub k: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubSeeds {
    pub sampler: u64,
    pub model: u64,
    pub synth: u64,
}

impl RunConfig {
    /// Reads a JSON config; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut config.paths;
        for slot in [&mut p.news, &mut p.train, &mut p.val, &mut p.test, &mut p.model] {
            if let Some(inner) = slot.as_mut() {
                *inner = base.join(&*inner);
            }
        }
        p.out_dir = base.join(&p.out_dir);
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(popk) = o.popk {
            self.sampler.popk = popk;
        }
        if let Some(logic) = o.logic {
            self.sampler.logic = logic;
        }
        if let Some(metric) = o.metric {
            self.sampler.metric = metric;
        }
        if let Some(k) = o.k {
            self.sampler.k = k;
        }
        if let Some(jobs) = o.jobs {
            self.jobs = jobs;
        }
        if let Some(out) = &o.out {
            self.paths.out_dir.clone_from(out);
        }
    }

    /// Fills the per-stage seeds from the top-level seed.
    pub fn resolve_seeds(&mut self) -> SubSeeds {
        let seeds = SubSeeds {
            sampler: derive_seed(self.seed, &[b"sampler"]),
            model: derive_seed(self.seed, &[b"model"]),
            synth: derive_seed(self.seed, &[b"synth"]),
        };
        self.sampler.seed = seeds.sampler;
        self.model.seed = seeds.model;
        self.synth.seed = seeds.synth;
        seeds
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.bucket.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.sampler.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.model.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.synth.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(CliError::Validation("eval_ks must be non-empty and positive".into()));
        }
        if !self.eval_ks.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::Validation("eval_ks must be strictly ascending".into()));
        }
        if !(0.0..=1.0).contains(&self.synth_train_fraction) || !(0.0..=1.0).contains(&self.popular_fraction) {
            return Err(CliError::Validation("fractions must lie in [0, 1]".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Validation("jobs must be at least 1".into()));
        }
        for &popk in &self.sweep.popk {
            if popk > self.sampler.k {
                return Err(CliError::Validation(format!(
                    "sweep popk {popk} exceeds k = {}",
                    self.sampler.k
                )));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON, leaving
    /// out settings that cannot change results (output dir, job count).
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.out_dir = PathBuf::new();
        canonical.jobs = 0;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        path.as_deref()
            .ok_or_else(|| CliError::Validation(format!("config is missing paths.{name}")))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("model.json"))
    }
}
