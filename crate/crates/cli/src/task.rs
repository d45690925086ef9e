use std::path::Path;

use cban::datasets::{
    decode_label, label_row, load_idx_images, load_image_folder, stack_examples, BarTask, Example, ImageCompletion,
    MnistSupervised, SuperResolution, TaskData, BAR_SIDE, MNIST_SIDE, SUPERVISED_UNITS,
};
use cban::dynamics::SettleOptions;
use cban::metrics::{completion_accuracy, image_report, label_accuracy};
use cban::training::{complete, TrainConfig};
use cban::{ArchSpec, Mask, Tensor, WeightBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, TaskSpec};
use crate::{CliError, CliResult};

/// Items settled per call during evaluation.
const EVAL_BATCH: usize = 100;

/// Images span [−0.999, 0.999]; PSNR and SSIM use the full range as peak.
pub const IMAGE_PEAK: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Bar,
    Supervised,
    Completion,
    SuperResolution,
}

/// Train and test sets for one run.
pub struct LoadedTask {
    pub kind: TaskKind,
    pub train: Box<dyn TaskData>,
    pub test: Box<dyn TaskData>,
    /// For bar evaluation: how many fresh evidence draws to score.
    pub eval_items: usize,
    /// `[c, h, w]` of one displayed image.
    pub image_shape: Vec<usize>,
}

/// Reads `[c, h, w]` images from an IDX image file or a PGM/PPM folder.
pub fn load_images(path: &Path, limit: Option<usize>) -> CliResult<Vec<Tensor>> {
    if !path.exists() {
        return Err(CliError::MissingPath(path.to_path_buf()));
    }
    let mut images: Vec<Tensor> = if path.is_dir() {
        load_image_folder(path)?
            .into_iter()
            .map(|(_, img)| img.to_tensor())
            .collect()
    } else {
        let all = load_idx_images(path)?;
        let (h, w) = (all.shape()[1], all.shape()[2]);
        (0..all.shape()[0])
            .map(|i| all.batch_item(i).reshape(&[1, h, w]))
            .collect::<cban::Result<_>>()?
    };
    if let Some(n) = limit {
        images.truncate(n);
    }
    if images.is_empty() {
        return Err(CliError::Usage(format!("{}: no images", path.display())));
    }
    Ok(images)
}

fn limited(data: MnistSupervised, limit: Option<usize>) -> MnistSupervised {
    match limit {
        Some(n) => data.truncate(n),
        None => data,
    }
}

impl LoadedTask {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let task = match &cfg.task {
            TaskSpec::Bar { eval_items } => LoadedTask {
                kind: TaskKind::Bar,
                train: Box::new(BarTask::new()),
                test: Box::new(BarTask::new()),
                eval_items: *eval_items,
                image_shape: vec![1, BAR_SIDE, BAR_SIDE],
            },
            TaskSpec::MnistSupervised {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => LoadedTask {
                kind: TaskKind::Supervised,
                train: Box::new(limited(
                    MnistSupervised::load(train_images, train_labels, cfg.mask.clone())?,
                    *train_limit,
                )),
                test: Box::new(limited(
                    MnistSupervised::load(test_images, test_labels, cfg.mask.clone())?,
                    *test_limit,
                )),
                eval_items: 0,
                image_shape: vec![1, SUPERVISED_UNITS / MNIST_SIDE, MNIST_SIDE],
            },
            TaskSpec::Completion {
                train,
                test,
                flatten,
                train_limit,
                test_limit,
            } => {
                let test = load_images(test, *test_limit)?;
                LoadedTask {
                    kind: TaskKind::Completion,
                    train: Box::new(ImageCompletion::new(
                        load_images(train, *train_limit)?,
                        cfg.mask.clone(),
                        *flatten,
                    )?),
                    image_shape: test[0].shape().to_vec(),
                    test: Box::new(ImageCompletion::new(test, cfg.mask.clone(), *flatten)?),
                    eval_items: 0,
                }
            }
            TaskSpec::SuperResolution {
                train,
                test,
                patch,
                train_limit,
                test_limit,
            } => LoadedTask {
                kind: TaskKind::SuperResolution,
                train: Box::new(SuperResolution::new(load_images(train, *train_limit)?, *patch)?),
                test: Box::new(SuperResolution::new(load_images(test, *test_limit)?, *patch)?),
                eval_items: 0,
                image_shape: Vec::new(),
            },
        };
        let mut task = task;
        if task.kind == TaskKind::SuperResolution {
            let s = task.test.item_shape();
            task.image_shape = vec![s[0] / 2, s[1], s[2]];
        }
        task.check_arch(&cfg.arch)?;
        Ok(task)
    }

    /// The visible layer must hold exactly one item.
    pub fn check_arch(&self, arch: &ArchSpec) -> CliResult<()> {
        let item = self.train.item_shape();
        let visible = arch.visible().item_shape();
        if item != visible {
            return Err(CliError::Usage(format!(
                "task items have shape {item:?} but the visible layer is {visible:?}"
            )));
        }
        Ok(())
    }

    /// Fixed evaluation examples, identical for every call with the same seed.
    pub fn eval_examples(&self, seed: u64) -> CliResult<Vec<Example>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = match self.kind {
            TaskKind::Bar => self.eval_items,
            _ => self.test.len(),
        };
        let m = self.test.len();
        Ok((0..n)
            .map(|i| self.test.example(i % m, &mut rng))
            .collect::<cban::Result<_>>()?)
    }

    /// Scores the net on the evaluation examples. Returns named metrics in
    /// a fixed order.
    pub fn evaluate(
        &self,
        w: &WeightBundle,
        arch: &ArchSpec,
        train: &TrainConfig,
        seed: u64,
    ) -> CliResult<Vec<(String, f64)>> {
        let examples = self.eval_examples(seed)?;
        let opts = eval_options(train);
        let (outputs, t_star) = settle_all(&examples, w, arch, train, &opts)?;
        let (targets, mask) = stack_examples(&examples)?;
        let mut out = vec![("eval_t_star".to_string(), t_star)];
        match self.kind {
            TaskKind::Bar => {
                let acc = completion_accuracy(&outputs, &targets, &mask)?;
                out.push(("accuracy".into(), acc.per_item));
                out.push(("pixel_accuracy".into(), acc.per_pixel));
            }
            TaskKind::Supervised => {
                let classes: Vec<usize> = examples
                    .iter()
                    .map(|e| decode_label(label_row(e.target.data())))
                    .collect();
                out.push(("accuracy_masked".into(), label_accuracy(&outputs, &classes)?));
                let clean = label_only(&examples)?;
                let (clean_out, _) = settle_all(&clean, w, arch, train, &opts)?;
                out.push(("accuracy_clean".into(), label_accuracy(&clean_out, &classes)?));
            }
            TaskKind::Completion | TaskKind::SuperResolution => {
                let baseline = self.baseline_outputs(&examples)?;
                let view = |t: &Tensor| self.readout(t);
                let shape = &self.image_shape;
                let cban_report = image_report(&view(&outputs)?, &view(&targets)?, shape, IMAGE_PEAK)?;
                let base_report = image_report(&view(&baseline)?, &view(&targets)?, shape, IMAGE_PEAK)?;
                out.push(("psnr".into(), cban_report.psnr.mean));
                out.push(("ssim".into(), cban_report.ssim.mean));
                out.push(("baseline_psnr".into(), base_report.psnr.mean));
                out.push(("baseline_ssim".into(), base_report.ssim.mean));
            }
        }
        Ok(out)
    }

    /// The displayed part of batched visible values `[n, …]`, reshaped to
    /// `[n, c, h, w]`. For super-resolution this is the read-out half.
    pub fn readout(&self, batch: &Tensor) -> CliResult<Tensor> {
        let n = batch.batch_len();
        let shape = self.image_shape.clone();
        let per: usize = shape.iter().product();
        let stride = batch.len() / n.max(1);
        let skip = stride - per;
        let data = (0..n)
            .flat_map(|i| batch.data()[i * stride + skip..(i + 1) * stride].iter().copied())
            .collect();
        let mut full = vec![n];
        full.extend(shape);
        Ok(Tensor::new(full, data)?)
    }

    /// The reference completion: observed values copied, zeros elsewhere.
    /// For super-resolution the low-resolution copy stands in for the
    /// read-out.
    pub fn baseline_outputs(&self, examples: &[Example]) -> CliResult<Tensor> {
        let items: Vec<Tensor> = examples
            .iter()
            .map(|e| {
                let v = e.evidence_values();
                if self.kind != TaskKind::SuperResolution {
                    return Ok(v);
                }
                let half = v.len() / 2;
                let mut d = v.data()[..half].to_vec();
                d.extend_from_slice(&v.data()[..half]);
                Tensor::new(v.shape().to_vec(), d)
            })
            .collect::<cban::Result<_>>()?;
        Ok(Tensor::stack(&items)?)
    }

    /// Evidence as shown in sample grids: for super-resolution the observed
    /// low-resolution half, otherwise observed values with 0 elsewhere.
    pub fn evidence_view(&self, examples: &[Example]) -> CliResult<Tensor> {
        let ev = Tensor::stack(&examples.iter().map(Example::evidence_values).collect::<Vec<_>>())?;
        if self.kind == TaskKind::SuperResolution {
            let n = ev.batch_len();
            let half = ev.len() / n / 2;
            let data = (0..n)
                .flat_map(|i| ev.data()[2 * i * half..(2 * i + 1) * half].iter().copied())
                .collect();
            let mut full = vec![n];
            full.extend(self.image_shape.clone());
            return Ok(Tensor::new(full, data)?);
        }
        self.readout(&ev)
    }
}

/// Settle options for evaluation: the training criterion, no energy trace.
pub fn eval_options(train: &TrainConfig) -> SettleOptions {
    SettleOptions {
        theta: train.theta,
        max_iters: train.max_iters,
        record_energy: false,
        ..SettleOptions::default()
    }
}

/// Settles `examples` in fixed-size batches; returns the stacked visible
/// layers and the mean per-item t*.
pub fn settle_all(
    examples: &[Example],
    w: &WeightBundle,
    arch: &ArchSpec,
    train: &TrainConfig,
    opts: &SettleOptions,
) -> CliResult<(Tensor, f64)> {
    let mut parts = Vec::new();
    let mut t_sum = 0.0;
    for chunk in examples.chunks(EVAL_BATCH) {
        let (state, rep) = complete(chunk, w, arch, train.evidence, opts)?;
        t_sum += rep.item_t_star.iter().sum::<usize>() as f64;
        parts.extend((0..chunk.len()).map(|i| state.visible().batch_item(i)));
    }
    Ok((Tensor::stack(&parts)?, t_sum / examples.len().max(1) as f64))
}

/// The same supervised items with every pixel observed and only the label
/// hidden.
pub fn label_only(examples: &[Example]) -> CliResult<Vec<Example>> {
    examples
        .iter()
        .map(|e| {
            let bits = (0..SUPERVISED_UNITS).map(|i| i < MNIST_SIDE * MNIST_SIDE).collect();
            Ok(Example::new(
                e.target.clone(),
                Mask::new(vec![SUPERVISED_UNITS], bits)?,
            )?)
        })
        .collect()
}
