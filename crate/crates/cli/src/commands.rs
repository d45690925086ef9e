use std::path::{Path, PathBuf};

use cban::datasets::{
    decode_label, label_row, read_pnm, stack_examples, supervised_target, BarTask, MaskSpec, MnistSupervised,
    LABEL_UNITS, MNIST_SIDE,
};
use cban::dynamics::{settle_with, update_layer, SettleOptions};
use cban::training::{GradNorm, LossKind, Optimizer, TrainConfig, Trainer};
use cban::{ArchSpec, Evidence, LayerKind, Mask, NetState, Tensor};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::output::{write_grid, write_image, write_trace, TrainLog};
use crate::task::{eval_options, settle_all, LoadedTask, TaskKind};
use crate::{CliError, CliResult, EXIT_FAILED, EXIT_OK};

/// Offset mixed into the run seed for evaluation draws, so they never share
/// a stream with training.
const EVAL_SEED_OFFSET: u64 = 0x5e_ed0f_e7a1;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Outcome of `train`.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub metrics: Vec<(String, f64)>,
    pub output_dir: PathBuf,
}

/// Trains per the config, writing a checkpoint every epoch plus the CSV log
/// and sample grids into the output directory.
pub fn cmd_train(config: &Path, out: Option<&Path>, resume: Option<&Path>) -> CliResult<TrainSummary> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(dir) = out {
        cfg.output_dir = dir.to_path_buf();
    }
    run_training(&cfg, resume, &mut |line| println!("{line}"))
}

/// Runs a resolved config; `progress` receives one line per epoch.
pub fn run_training(cfg: &RunConfig, resume: Option<&Path>, progress: &mut dyn FnMut(&str)) -> CliResult<TrainSummary> {
    let task = LoadedTask::load(cfg)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.arch != cfg.arch {
                return Err(CliError::Usage(format!(
                    "{} was trained with a different architecture",
                    path.display()
                )));
            }
            ckpt.into_trainer(cfg.train.clone())?
        }
        None => Trainer::new(cfg.arch.clone(), cfg.train.clone())?,
    };
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let cfg_path = dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(&cfg_path, text).map_err(|e| CliError::io(&cfg_path, e))?;
    let mut log = TrainLog::create(&dir.join(LOG_FILE), task.kind)?;

    let eval_seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET);
    let total = cfg.train.epochs;
    let mut summary = TrainSummary {
        epochs: trainer.epoch,
        final_loss: f64::NAN,
        metrics: Vec::new(),
        output_dir: dir.clone(),
    };
    while trainer.epoch < total {
        let stats = trainer.run_epoch(task.train.as_ref())?;
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &Checkpoint::from_trainer(&trainer))?;
        let done = trainer.epoch;
        let metrics = if done % cfg.eval_every == 0 || done == total {
            let m = task.evaluate(&trainer.weights, &trainer.arch, &trainer.cfg, eval_seed)?;
            write_samples(
                &task,
                &trainer,
                eval_seed,
                cfg.samples,
                &dir.join(format!("samples_epoch_{done:04}")),
            )?;
            Some(m)
        } else {
            None
        };
        log.append(&stats, metrics.as_deref())?;
        let shown: Vec<String> = metrics.iter().flatten().map(|(k, v)| format!("{k} {v:.4}")).collect();
        progress(&format!(
            "epoch {done}/{total} loss {:.4} t* {:.1} nonconverged {} {}",
            stats.mean_loss,
            stats.mean_t_star,
            stats.nonconverged,
            shown.join(" ")
        ));
        summary.epochs = done;
        summary.final_loss = stats.mean_loss;
        if let Some(m) = metrics {
            summary.metrics = m;
        }
    }
    let path = dir.join("metrics.json");
    let map: serde_json::Map<String, serde_json::Value> =
        summary.metrics.iter().map(|(k, v)| (k.clone(), (*v).into())).collect();
    let text = serde_json::to_string_pretty(&map).expect("metrics serialize");
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(summary)
}

/// Grid rows: targets, completions, evidence.
fn write_samples(task: &LoadedTask, trainer: &Trainer, seed: u64, n: usize, stem: &Path) -> CliResult<()> {
    let mut examples = task.eval_examples(seed)?;
    examples.truncate(n.max(1));
    let (targets, _) = stack_examples(&examples)?;
    let (outputs, _) = settle_all(
        &examples,
        &trainer.weights,
        &trainer.arch,
        &trainer.cfg,
        &eval_options(&trainer.cfg),
    )?;
    let rows = [
        task.readout(&targets)?,
        task.readout(&outputs)?,
        task.evidence_view(&examples)?,
    ];
    write_grid(stem, &rows)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskKind {
    /// Everything observed (only a label, if any, is hidden).
    None,
    Perlin,
    Patches,
    Bernoulli,
}

/// Observation mask options shared by `complete` and `eval`.
#[derive(Clone, Debug, Args)]
pub struct MaskArgs {
    #[arg(long, value_enum, default_value_t = MaskKind::None)]
    pub mask: MaskKind,
    /// Hidden fraction: of all pixels for Perlin and Bernoulli, of white
    /// pixels for patches.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub fraction: f64,
    /// Perlin lattice cells across the image.
    #[arg(long, default_value_t = 7)]
    pub frequency: usize,
    #[arg(long, default_value_t = 3)]
    pub diameter_min: usize,
    #[arg(long, default_value_t = 6)]
    pub diameter_max: usize,
    /// Seed for mask draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl MaskArgs {
    pub fn spec(&self) -> MaskSpec {
        match self.mask {
            MaskKind::None => MaskSpec::LabelOnly,
            MaskKind::Perlin => MaskSpec::Perlin {
                frequency: self.frequency,
                obscured_fraction: self.fraction,
            },
            MaskKind::Patches => MaskSpec::SquarePatches {
                diameter_min: self.diameter_min,
                diameter_max: self.diameter_max,
                white_fraction: self.fraction,
            },
            MaskKind::Bernoulli => MaskSpec::Bernoulli { p: self.fraction },
        }
    }
}

/// Settling limits; defaults come from the checkpoint's training config.
#[derive(Clone, Debug, Default, Args)]
pub struct SettleArgs {
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

/// Settings for checkpoints saved without a training config.
fn fallback_train() -> TrainConfig {
    TrainConfig::new(
        LossKind::DeltaEPlus,
        Optimizer::SgdRenorm {
            norm: GradNorm::L2,
            lr: 0.01,
        },
        1,
        0,
        0,
    )
}

fn settle_config(ckpt: &Checkpoint, args: &SettleArgs) -> TrainConfig {
    let mut t = ckpt.train.clone().unwrap_or_else(fallback_train);
    if let Some(theta) = args.theta {
        t.theta = theta;
    }
    if let Some(m) = args.max_iters {
        t.max_iters = m;
    }
    t
}

/// Evidence file for inputs that are not images: flat visible values and
/// the observed units, optionally with a display shape.
#[derive(Clone, Debug, Deserialize)]
pub struct EvidenceFile {
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
}

/// One visible item prepared from the input, and which slice of it is the
/// picture.
struct Prepared {
    /// Visible item values; only the observed ones matter.
    values: Tensor,
    mask: Mask,
    /// `[c, h, w]` of the displayed part.
    display: Vec<usize>,
    /// Start of the displayed part within the visible item.
    offset: usize,
    supervised: bool,
}

fn square_display(n: usize) -> Vec<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        vec![1, side, side]
    } else {
        vec![1, 1, n]
    }
}

fn prepare_input(input: &Path, arch: &ArchSpec, masks: &MaskArgs) -> CliResult<Prepared> {
    if !input.exists() {
        return Err(CliError::MissingPath(input.to_path_buf()));
    }
    let visible = arch.visible().item_shape();
    let units: usize = visible.iter().product();
    let mismatch = |what: String| CliError::Usage(format!("{what} does not fit the visible layer {visible:?}"));

    if input.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
        let ev: EvidenceFile = serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: input.to_path_buf(),
            source,
        })?;
        if ev.values.len() != units || ev.observed.len() != units {
            return Err(mismatch(format!(
                "evidence with {} values and {} mask entries",
                ev.values.len(),
                ev.observed.len()
            )));
        }
        let display = ev.shape.clone().unwrap_or_else(|| square_display(units));
        if display.iter().product::<usize>() != units {
            return Err(CliError::Usage(format!(
                "display shape {display:?} does not hold {units} units"
            )));
        }
        let (values, mask) = (
            Tensor::new(visible.clone(), ev.values)?,
            Mask::new(visible, ev.observed)?,
        );
        return Ok(Prepared {
            values,
            mask,
            display,
            offset: 0,
            supervised: false,
        });
    }

    let image = read_pnm(input)?.to_tensor();
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(masks.seed);
    let spec = masks.spec();
    let lum = Tensor::from_fn(&[h, w], |p| {
        (0..c).map(|ch| image.data()[ch * h * w + p]).sum::<f64>() / c as f64
    });
    let pixel_mask = spec.image_mask(&lum, &mut rng)?;
    let shared: Vec<bool> = (0..c).flat_map(|_| pixel_mask.bits().iter().copied()).collect();
    let n = c * h * w;

    let conv = matches!(arch.visible().kind, LayerKind::Conv { .. });
    if conv && visible == [c, h, w] {
        let (values, mask) = (image, Mask::new(vec![c, h, w], shared)?);
        return Ok(Prepared {
            values,
            mask,
            display: vec![c, h, w],
            offset: 0,
            supervised: false,
        });
    }
    if conv && visible == [2 * c, h, w] {
        // Low-resolution input in the observed half, read-out in the other.
        let mut data = image.data().to_vec();
        data.extend_from_slice(image.data());
        let bits = (0..2 * n).map(|i| i < n).collect();
        let (values, mask) = (Tensor::new(visible.clone(), data)?, Mask::new(visible, bits)?);
        return Ok(Prepared {
            values,
            mask,
            display: vec![c, h, w],
            offset: n,
            supervised: false,
        });
    }
    if !conv && units == n {
        let (values, mask) = (image.reshape(&[n])?, Mask::new(vec![n], shared)?);
        return Ok(Prepared {
            values,
            mask,
            display: vec![c, h, w],
            offset: 0,
            supervised: false,
        });
    }
    if !conv && c == 1 && (h, w) == (MNIST_SIDE, MNIST_SIDE) && units == n + LABEL_UNITS {
        let target = supervised_target(&image.reshape(&[h, w])?, 0)?;
        let mut bits = shared;
        bits.extend(std::iter::repeat_n(false, LABEL_UNITS));
        let (values, mask) = (target, Mask::new(vec![units], bits)?);
        return Ok(Prepared {
            values,
            mask,
            display: vec![1, h + 1, w],
            offset: 0,
            supervised: true,
        });
    }
    Err(mismatch(format!("a {c}×{h}×{w} image")))
}

fn observed_values(values: &Tensor, mask: &Mask) -> CliResult<Tensor> {
    let data = values
        .data()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    Ok(Tensor::new(values.shape().to_vec(), data)?)
}

/// Outcome of `complete`; outputs are written even when settling did not
/// converge.
#[derive(Clone, Debug)]
pub struct CompletionSummary {
    pub converged: bool,
    pub t_star: usize,
    pub label: Option<usize>,
    pub completed: PathBuf,
    pub dream: PathBuf,
    pub trace: PathBuf,
}

impl CompletionSummary {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_FAILED
        }
    }
}

fn display_part(visible: &Tensor, display: &[usize], offset: usize) -> CliResult<Tensor> {
    let len: usize = display.iter().product();
    Ok(Tensor::new(
        display.to_vec(),
        visible.data()[offset..offset + len].to_vec(),
    )?)
}

/// Settles from the input evidence and writes the completed image, the
/// top-down dream, the observed evidence and a per-sweep trace into `out`.
pub fn cmd_complete(
    ckpt_path: &Path,
    input: &Path,
    out: &Path,
    masks: &MaskArgs,
    settle: &SettleArgs,
) -> CliResult<CompletionSummary> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let train = settle_config(&ckpt, settle);
    let p = prepare_input(input, &ckpt.arch, masks)?;
    let batched = |shape: &[usize]| [&[1][..], shape].concat();
    let ev = Evidence::new(
        train.evidence,
        p.mask.reshape(&batched(p.mask.shape()))?,
        p.values.reshape(&batched(p.values.shape()))?,
    )?;
    let state = NetState::with_evidence(&ckpt.arch, ev)?;
    let opts = SettleOptions {
        theta: train.theta,
        max_iters: train.max_iters,
        record_energy: true,
        ..SettleOptions::default()
    };
    let (settled, rep) = settle_with(&state, &ckpt.weights, &ckpt.arch, &opts)?;

    // Top-down pass with the evidence removed.
    let free = NetState {
        layers: settled.layers.clone(),
        evidence: None,
    };
    let dream = update_layer(&free, &ckpt.weights, &ckpt.arch, 0)?;

    create_dir(out)?;
    let view = |t: &Tensor| display_part(t, &p.display, p.offset);
    let completed = write_image(&out.join("completed"), &view(&settled.visible().batch_item(0))?)?;
    let dream_path = write_image(&out.join("dream"), &view(&dream.visible().batch_item(0))?)?;
    // Evidence always sits at the start of the visible item.
    let evidence = display_part(&observed_values(&p.values, &p.mask)?, &p.display, 0)?;
    write_image(&out.join("evidence"), &evidence)?;
    let trace = out.join("trace.csv");
    write_trace(&trace, &rep)?;

    let label = p
        .supervised
        .then(|| decode_label(label_row(settled.visible().batch_item(0).data())));
    Ok(CompletionSummary {
        converged: rep.converged,
        t_star: rep.t_star,
        label,
        completed,
        dream: dream_path,
        trace,
    })
}

/// Scores a checkpoint on a data set. `data` is an IDX image file, a PNM
/// folder, or the word `bar`; `labels` selects supervised label decoding.
pub fn cmd_eval(
    ckpt_path: &Path,
    data: &Path,
    labels: Option<&Path>,
    limit: Option<usize>,
    masks: &MaskArgs,
    settle: &SettleArgs,
) -> CliResult<Vec<(String, f64)>> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let train = settle_config(&ckpt, settle);
    let task = eval_task(&ckpt.arch, data, labels, limit, masks)?;
    task.check_arch(&ckpt.arch)?;
    task.evaluate(&ckpt.weights, &ckpt.arch, &train, masks.seed)
}

fn eval_task(
    arch: &ArchSpec,
    data: &Path,
    labels: Option<&Path>,
    limit: Option<usize>,
    masks: &MaskArgs,
) -> CliResult<LoadedTask> {
    let spec = masks.spec();
    if data == Path::new("bar") {
        return Ok(LoadedTask {
            kind: TaskKind::Bar,
            train: Box::new(BarTask::new()),
            test: Box::new(BarTask::new()),
            eval_items: limit.unwrap_or(2000),
            image_shape: vec![1, 5, 5],
        });
    }
    if let Some(labels) = labels {
        for p in [data, labels] {
            if !p.exists() {
                return Err(CliError::MissingPath(p.to_path_buf()));
            }
        }
        let set = MnistSupervised::load(data, labels, spec)?;
        let set = match limit {
            Some(n) => set.truncate(n),
            None => set,
        };
        return Ok(LoadedTask {
            kind: TaskKind::Supervised,
            train: Box::new(set.clone()),
            test: Box::new(set),
            eval_items: 0,
            image_shape: vec![1, MNIST_SIDE + 1, MNIST_SIDE],
        });
    }
    let images = crate::task::load_images(data, limit)?;
    let shape = images[0].shape().to_vec();
    let visible = arch.visible().item_shape();
    if visible.len() == 3 && visible[0] == 2 * shape[0] {
        let set = cban::datasets::SuperResolution::new(images, visible[1])?;
        return Ok(LoadedTask {
            kind: TaskKind::SuperResolution,
            train: Box::new(set.clone()),
            test: Box::new(set),
            eval_items: 0,
            image_shape: vec![shape[0], visible[1], visible[2]],
        });
    }
    let flatten = visible.len() == 1;
    let set = cban::datasets::ImageCompletion::new(images, spec, flatten)?;
    Ok(LoadedTask {
        kind: TaskKind::Completion,
        train: Box::new(set.clone()),
        test: Box::new(set),
        eval_items: 0,
        image_shape: shape,
    })
}
