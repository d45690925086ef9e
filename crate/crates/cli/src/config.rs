use std::path::{Path, PathBuf};

use cban::datasets::MaskSpec;
use cban::training::TrainConfig;
use cban::ArchSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{CliError, CliResult};

fn default_eval_items() -> usize {
    2000
}

fn default_patch() -> usize {
    40
}

/// Where examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskSpec {
    /// The 5×5 bar images with unique-completion evidence, scored on
    /// `eval_items` fresh evidence draws.
    Bar {
        #[serde(default = "default_eval_items")]
        eval_items: usize,
    },
    /// MNIST digits with a 28-unit label row appended to the visible layer.
    MnistSupervised {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// Generic image completion. `train` and `test` are IDX image files or
    /// folders of PGM/PPM images.
    Completion {
        train: PathBuf,
        test: PathBuf,
        /// Flatten images for fully-connected nets.
        #[serde(default)]
        flatten: bool,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// ×2 super-resolution on random crops, with the visible layer holding
    /// the low-resolution copy and the read-out side by side.
    SuperResolution {
        train: PathBuf,
        test: PathBuf,
        #[serde(default = "default_patch")]
        patch: usize,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl TaskSpec {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            TaskSpec::Bar { .. } => Vec::new(),
            TaskSpec::MnistSupervised {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
            TaskSpec::Completion { train, test, .. } | TaskSpec::SuperResolution { train, test, .. } => {
                vec![train, test]
            }
        }
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            TaskSpec::Bar { .. } => Vec::new(),
            TaskSpec::MnistSupervised {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
            TaskSpec::Completion { train, test, .. } | TaskSpec::SuperResolution { train, test, .. } => {
                vec![train, test]
            }
        }
    }
}

fn default_eval_every() -> usize {
    1
}

fn default_samples() -> usize {
    8
}

fn default_mask() -> MaskSpec {
    MaskSpec::LabelOnly
}

/// Everything one training run needs. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    /// Observation masks for image tasks; ignored by the bar and
    /// super-resolution tasks, which build their own evidence.
    #[serde(default = "default_mask")]
    pub mask: MaskSpec,
    pub output_dir: PathBuf,
    /// Seeds initialization, shuffling and masks. Copied into `train.seed`.
    pub seed: u64,
    /// Evaluate, log metrics and write a sample grid every this many epochs
    /// (and after the last one).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Columns in each sample grid.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl RunConfig {
    /// Parses a config from JSON text. `train.seed` may be omitted; when
    /// present it must equal the top-level seed.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut v: Value = serde_json::from_str(text)?;
        if let (Some(seed), Some(train)) = (v.get("seed").cloned(), v.get_mut("train")) {
            if let Some(t) = train.as_object_mut() {
                t.entry("seed").or_insert(seed);
            }
        }
        serde_json::from_value(v)
    }

    /// Reads, resolves and validates a config file. Every referenced data
    /// path must exist.
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative data and output paths relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in self.task.paths_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.train.seed != self.seed {
            return Err(CliError::Usage(format!(
                "train.seed {} differs from seed {}",
                self.train.seed, self.seed
            )));
        }
        if let Some(missing) = self.task.paths().into_iter().find(|p| !p.exists()) {
            return Err(CliError::MissingPath(missing.to_path_buf()));
        }
        if self.eval_every == 0 {
            return Err(CliError::Usage("eval_every must be at least 1".into()));
        }
        self.arch.validate()?;
        self.train.validate()?;
        self.mask.validate()?;
        Ok(())
    }
}
