//! Fixtures, training arms and evaluations shared by the criteria.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stylebind::checkpoint::{load_table, load_weights};
use stylebind::commands::train;
use stylebind::config::{RunConfig, TrainArgs};
use stylebind::dataset_io::{read_dataset, read_images};
use stylebind::experiment::{generate, score, PromptJob};
use stylebind_core::data::StyleDataset;
use stylebind_core::evaluation::{AlignmentTower, Evaluator, FeatureExtractor, MetricReport};
use stylebind_core::nets::TrainableWeights;
use stylebind_core::sampler::SamplerConfig;
use stylebind_core::Image;

pub type Res<T> = Result<T, Box<dyn std::error::Error>>;

/// Samples per evaluated model.
pub const EVAL_IMAGES: usize = 96;
pub const EVAL_SEED: u64 = 1;
pub const FEATURE_SEED: u64 = 0;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn corpus(group: &str, style: &str) -> PathBuf {
    fixtures().join("corpus").join(group).join(style)
}

fn resolve(p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = fixtures().join(&*path);
        }
    }
}

pub struct Lab {
    pub tmp: tempfile::TempDir,
    base: Option<TrainableWeights>,
    runs: BTreeMap<String, PathBuf>,
    reference: Option<Vec<Image>>,
    tower: Option<AlignmentTower>,
    extractor: FeatureExtractor,
    reports: BTreeMap<String, MetricReport>,
}

impl Lab {
    pub fn new() -> Self {
        Self {
            tmp: tempfile::tempdir().expect("temporary directory"),
            base: None,
            runs: BTreeMap::new(),
            reference: None,
            tower: None,
            extractor: FeatureExtractor::new(FEATURE_SEED),
            reports: BTreeMap::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    pub fn base_path() -> PathBuf {
        fixtures().join("base.sfck")
    }

    pub fn base(&mut self) -> Res<TrainableWeights> {
        if self.base.is_none() {
            self.base = Some(load_weights(&Self::base_path())?);
        }
        Ok(self.base.clone().expect("loaded"))
    }

    pub fn styleref(&self) -> Res<StyleDataset> {
        Ok(read_dataset(&corpus("styleref", "pixelation"))?)
    }

    pub fn reference_dir() -> PathBuf {
        corpus("reference", "pixelation")
    }

    pub fn reference(&mut self) -> Res<Vec<Image>> {
        if self.reference.is_none() {
            self.reference = Some(read_images(&Self::reference_dir())?);
        }
        Ok(self.reference.clone().expect("loaded"))
    }

    pub fn tower_path() -> PathBuf {
        fixtures().join("tower.sfck")
    }

    fn tower(&mut self) -> Res<&AlignmentTower> {
        if self.tower.is_none() {
            self.tower = Some(AlignmentTower { weights: load_table(&Self::tower_path())? });
        }
        Ok(self.tower.as_ref().expect("loaded"))
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    /// Trains the arm described by `fixtures/arms/<arm>.toml` once and
    /// returns its run directory.
    pub fn run(&mut self, arm: &str) -> Res<PathBuf> {
        if let Some(p) = self.runs.get(arm) {
            return Ok(p.clone());
        }
        let cfg = RunConfig::read(&fixtures().join("arms").join(format!("{arm}.toml")))?;
        let mut args: TrainArgs = cfg.train.ok_or_else(|| format!("{arm}.toml has no [train] section"))?;
        resolve(&mut args.styleref);
        resolve(&mut args.aux);
        resolve(&mut args.init);
        args.out = Some(self.path(&format!("runs/{arm}")));
        let dir = train(&args, true)?;
        self.runs.insert(arm.to_string(), dir.clone());
        Ok(dir)
    }

    pub fn final_weights(&mut self, arm: &str) -> Res<TrainableWeights> {
        let dir = self.run(arm)?;
        Ok(load_weights(&dir.join("model.sfck"))?)
    }

    pub fn record(&mut self, key: &str, report: MetricReport) {
        self.reports.insert(key.to_string(), report);
    }

    /// Samples `per_prompt` images per job from the final weights of `arm`
    /// and scores them against the reference; cached under `key`.
    pub fn evaluate(&mut self, key: &str, arm: &str, jobs: &[PromptJob], per_prompt: usize) -> Res<MetricReport> {
        if let Some(r) = self.reports.get(key) {
            return Ok(r.clone());
        }
        let w = self.final_weights(arm)?;
        let g = generate(&w, jobs, per_prompt, &SamplerConfig::default(), EVAL_SEED)?;
        let reference = self.reference()?;
        let extractor = FeatureExtractor::new(FEATURE_SEED);
        let tower = self.tower()?;
        let ev = Evaluator { extractor: &extractor, tower: Some(tower) };
        let report = score(&ev, &g, &reference, arm, 0, "pixelation", key)?;
        self.reports.insert(key.to_string(), report.clone());
        Ok(report)
    }
}

pub fn read_text(p: &Path) -> Res<String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()).into())
}
