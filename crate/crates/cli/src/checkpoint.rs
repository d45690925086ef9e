//! Binary checkpoint container.
//!
//! Layout, all little-endian: the 8-byte magic `CBANCKPT`, a `u32` format
//! version, a `u32` byte length followed by that much JSON metadata, then
//! every parameter block as raw `f32` in declaration order, followed by the
//! Adam first and second moments when present. Loading widens to `f64`.

use std::path::Path;

use cban::training::{OptimizerState, TrainConfig, Trainer};
use cban::{ArchSpec, Tensor, WeightBundle};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"CBANCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    /// `u128` as a decimal string; JSON numbers stop at 64 bits.
    word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Metadata {
    arch: ArchSpec,
    train: Option<TrainConfig>,
    epoch: usize,
    rng: RngState,
    optimizer_step: u64,
    moments: bool,
    block_shapes: Vec<Vec<usize>>,
}

/// Everything needed to resume a run or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    /// Present for checkpoints written by training.
    pub train: Option<TrainConfig>,
    pub weights: WeightBundle,
    pub opt_state: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

fn bad(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            arch: t.arch.clone(),
            train: Some(t.cfg.clone()),
            weights: t.weights.clone(),
            opt_state: t.opt_state.clone(),
            epoch: t.epoch,
            rng: t.rng.clone(),
        }
    }

    /// Continues training from the stored state.
    pub fn into_trainer(self, cfg: TrainConfig) -> CliResult<Trainer> {
        Ok(Trainer::resume(
            self.arch,
            cfg,
            self.weights,
            self.opt_state,
            self.epoch,
            self.rng,
        )?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let moments = !self.opt_state.m.is_empty();
        let meta = Metadata {
            arch: self.arch.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            optimizer_step: self.opt_state.step,
            moments,
            block_shapes: self.weights.blocks().map(|b| b.shape().to_vec()).collect(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.weights.num_parameters() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut blocks: Vec<&Tensor> = self.weights.blocks().collect();
        if moments {
            blocks.extend(self.opt_state.m.iter());
            blocks.extend(self.opt_state.v.iter());
        }
        for b in blocks {
            for &v in b.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses a whole checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad(path, "not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(path, format!("format version {version}, expected {VERSION}")));
        }
        let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad(path, "truncated metadata"))?;
        let meta: Metadata = serde_json::from_slice(json).map_err(|e| bad(path, format!("metadata: {e}")))?;
        meta.arch.validate()?;

        let template = WeightBundle::zeros(&meta.arch);
        let shapes: Vec<Vec<usize>> = template.blocks().map(|b| b.shape().to_vec()).collect();
        if shapes != meta.block_shapes {
            return Err(bad(path, "block shapes disagree with the architecture"));
        }
        let per_set: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        let sets = if meta.moments { 3 } else { 1 };
        let body = &bytes[16 + len..];
        if body.len() != 4 * per_set * sets {
            return Err(bad(
                path,
                format!(
                    "expected {} bytes of parameters, found {}",
                    4 * per_set * sets,
                    body.len()
                ),
            ));
        }
        let mut floats = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        let mut read_set = || -> CliResult<Vec<Tensor>> {
            shapes
                .iter()
                .map(|s| {
                    let n = s.iter().product();
                    Ok(Tensor::new(s.clone(), floats.by_ref().take(n).collect())?)
                })
                .collect()
        };
        let weights = WeightBundle::from_blocks_like(&template, read_set()?);
        let (m, v) = if meta.moments {
            (read_set()?, read_set()?)
        } else {
            (Vec::new(), Vec::new())
        };
        let word_pos: u128 = meta
            .rng
            .word_pos
            .parse()
            .map_err(|_| bad(path, "malformed generator position"))?;
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(meta.rng.seed);
        rng.set_stream(meta.rng.stream);
        rng.set_word_pos(word_pos);
        Ok(Checkpoint {
            arch: meta.arch,
            train: meta.train,
            weights,
            opt_state: OptimizerState {
                step: meta.optimizer_step,
                m,
                v,
            },
            epoch: meta.epoch,
            rng,
        })
    }
}

/// Writes through a temporary sibling file, so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, ckpt.to_bytes()).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::MissingPath(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
