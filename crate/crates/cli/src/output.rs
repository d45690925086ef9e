use std::fs::File;
use std::path::{Path, PathBuf};

use cban::datasets::{tile_grid, write_pnm};
use cban::training::EpochStats;
use cban::{SettleReport, Tensor};

use crate::task::TaskKind;
use crate::{CliError, CliResult};

/// Metric columns logged for each task kind, in evaluation order.
pub fn metric_names(kind: TaskKind) -> &'static [&'static str] {
    match kind {
        TaskKind::Bar => &["eval_t_star", "accuracy", "pixel_accuracy"],
        TaskKind::Supervised => &["eval_t_star", "accuracy_masked", "accuracy_clean"],
        TaskKind::Completion | TaskKind::SuperResolution => {
            &["eval_t_star", "psnr", "ssim", "baseline_psnr", "baseline_ssim"]
        }
    }
}

/// Per-epoch CSV: training statistics, then metrics (blank on epochs
/// without an evaluation).
pub struct TrainLog {
    writer: csv::Writer<File>,
    metrics: &'static [&'static str],
}

impl TrainLog {
    pub fn create(path: &Path, kind: TaskKind) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let metrics = metric_names(kind);
        let mut header = vec!["epoch", "loss", "mean_t_star", "nonconverged", "lr_multiplier"];
        header.extend_from_slice(metrics);
        writer.write_record(&header)?;
        Ok(TrainLog { writer, metrics })
    }

    pub fn append(&mut self, stats: &EpochStats, metrics: Option<&[(String, f64)]>) -> CliResult<()> {
        let mut row = vec![
            (stats.epoch + 1).to_string(),
            stats.mean_loss.to_string(),
            stats.mean_t_star.to_string(),
            stats.nonconverged.to_string(),
            stats.lr_multiplier.to_string(),
        ];
        for name in self.metrics {
            let v = metrics
                .and_then(|m| m.iter().find(|(k, _)| k == name))
                .map(|(_, v)| v.to_string());
            row.push(v.unwrap_or_default());
        }
        self.writer.write_record(&row)?;
        self.writer.flush().map_err(|e| CliError::io("training log", e))
    }
}

/// Image extension for a channel count.
pub fn image_ext(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

/// Writes rows of `[n, c, h, w]` batches as one tiled image and returns the
/// path actually written (with the PGM or PPM extension).
pub fn write_grid(stem: &Path, rows: &[Tensor]) -> CliResult<PathBuf> {
    let tiles: Vec<Vec<Tensor>> = rows
        .iter()
        .map(|r| (0..r.batch_len()).map(|i| r.batch_item(i)).collect())
        .collect();
    let img = tile_grid(&tiles)?;
    let path = stem.with_extension(image_ext(img.channels));
    write_pnm(&path, &img)?;
    Ok(path)
}

/// Writes one `[c, h, w]` image; returns the path with its extension.
pub fn write_image(stem: &Path, t: &Tensor) -> CliResult<PathBuf> {
    let img = cban::datasets::Image::from_tensor(t)?;
    let path = stem.with_extension(image_ext(img.channels));
    write_pnm(&path, &img)?;
    Ok(path)
}

/// One CSV row per sweep: index from 1, energy after the sweep and the
/// largest unit change during it.
pub fn write_trace(path: &Path, rep: &SettleReport) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["sweep", "energy", "max_delta"])?;
    for (t, delta) in rep.max_delta_trace.iter().enumerate() {
        let e = rep.energy_trace.get(t).map(f64::to_string).unwrap_or_default();
        w.write_record([(t + 1).to_string(), e, delta.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
