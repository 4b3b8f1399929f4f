//! Training runs on disk: loss log, sample grids and checkpoints, each
//! carrying the effective configuration.
//!
//! Layout under the run directory:
//!
//! ```text
//! config.txt                      effective `key = value` configuration
//! log.csv                         `# key = value` lines, then one row per cycle
//! samples/cycle_000100.png        (posemap, reference, generated, target) rows
//! checkpoints/cycle_000100.ckpt
//! checkpoints/latest.ckpt
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use adar_tensor::Tensor;

use crate::batch::{Batch, PairSet};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::imageio::{grid, save_png_with_text};
use crate::net::PoseRenderer;
use crate::posemap::denormalize_image;
use crate::trainer::{CycleMetrics, Trainer};
use crate::{Error, Result};

/// `tEXt` keyword under which PNG outputs store the configuration.
pub const CONFIG_KEYWORD: &str = "adar-config";

/// Rows shown in each sample grid.
pub const PREVIEW_ROWS: usize = 4;

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("log.csv")
    }

    pub fn sample_path(&self, cycle: u64) -> PathBuf {
        self.root.join("samples").join(format!("cycle_{cycle:06}.png"))
    }

    pub fn checkpoint_path(&self, cycle: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("cycle_{cycle:06}.ckpt"))
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.ckpt")
    }

    fn create(&self) -> Result<()> {
        for d in [self.root.clone(), self.root.join("samples"), self.root.join("checkpoints")] {
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }
}

/// `text` with every line prefixed by `# `.
pub fn comment_block(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

/// Per-cycle CSV loss log.
pub struct LossLog {
    path: PathBuf,
    file: std::fs::File,
}

impl LossLog {
    /// Starts a log whose next row is cycle `after + 1`. Rows of an existing
    /// log up to `after` are kept; later rows (from a run that went past the
    /// checkpoint being resumed) are dropped.
    pub fn open(path: impl AsRef<Path>, config_text: &str, after: u64) -> Result<LossLog> {
        let path = path.as_ref().to_path_buf();
        let mut kept = Vec::new();
        if after > 0 {
            if let Ok(old) = std::fs::read_to_string(&path) {
                for line in old.lines() {
                    if line.starts_with('#') || line == CycleMetrics::CSV_HEADER {
                        continue;
                    }
                    let cycle: Option<u64> = line.split(',').next().and_then(|c| c.parse().ok());
                    if cycle.is_some_and(|c| c <= after) {
                        kept.push(line.to_string());
                    }
                }
            }
        }
        let mut text = comment_block(config_text);
        text.push_str(CycleMetrics::CSV_HEADER);
        text.push('\n');
        for line in kept {
            text.push_str(&line);
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(LossLog { path, file })
    }

    pub fn append(&mut self, m: &CycleMetrics) -> Result<()> {
        writeln!(self.file, "{}", m.csv_row()).map_err(|e| Error::io(&self.path, e))
    }
}

/// `[3, H', W']` grid in `[0, 1]` with one `(posemap, reference, generated,
/// target)` row per sample of `batch`.
pub fn sample_grid(renderer: &mut PoseRenderer<f32>, batch: &Batch) -> Result<Tensor<f32>> {
    let generated = renderer.render(&batch.pose, &batch.reference)?;
    let mut tiles = Vec::with_capacity(4 * batch.len());
    for i in 0..batch.len() {
        for t in [&batch.pose, &batch.reference, &generated, &batch.target] {
            let s = t.sample(i)?;
            let shape = s.shape()[1..].to_vec();
            tiles.push(denormalize_image(&s.reshape(shape)?));
        }
    }
    grid(&tiles, 4)
}

/// Up to [`PREVIEW_ROWS`] pairs spread evenly over `data`.
pub fn preview_batch(data: &PairSet) -> Result<Batch> {
    let n = data.len();
    let rows = PREVIEW_ROWS.min(n);
    let idx: Vec<usize> = (0..rows).map(|i| i * n / rows).collect();
    data.batch(&idx)
}

/// Checkpoint of `trainer` with `run` echoed in the header.
pub fn checkpoint_with_config(trainer: &Trainer, run: &RunConfig) -> Checkpoint {
    let mut ck = trainer.checkpoint();
    ck.header.config_text = run.to_text();
    ck
}

/// Trains until `run.train.total_cycles`, writing the log, sample grids and
/// checkpoints under `dir`. `trainer` may be fresh or restored from a
/// checkpoint; the log continues at its next cycle either way.
pub fn run_training(
    trainer: &mut Trainer,
    run: &RunConfig,
    data: &PairSet,
    preview: &Batch,
    dir: &RunDir,
    mut progress: impl FnMut(&CycleMetrics),
) -> Result<()> {
    dir.create()?;
    let text = run.to_text();
    let cfg = dir.config_path();
    std::fs::write(&cfg, &text).map_err(|e| Error::io(&cfg, e))?;
    let mut log = LossLog::open(dir.log_path(), &text, trainer.counters().cycle)?;
    trainer.set_total_cycles(run.train.total_cycles);

    let save = |t: &Trainer| -> Result<()> {
        let ck = checkpoint_with_config(t, run);
        ck.save(dir.checkpoint_path(t.counters().cycle))?;
        ck.save(dir.latest_checkpoint())
    };
    trainer.train(data, |t, m| {
        log.append(m)?;
        if run.sample_every > 0 && m.cycle % run.sample_every as u64 == 0 {
            let img = sample_grid(&mut t.renderer.clone(), preview)?;
            save_png_with_text(dir.sample_path(m.cycle), &img, &[(CONFIG_KEYWORD, &text)])?;
        }
        if run.checkpoint_every > 0 && m.cycle % run.checkpoint_every as u64 == 0 {
            save(t)?;
        }
        progress(m);
        Ok(())
    })?;
    let done = trainer.counters().cycle;
    if !dir.checkpoint_path(done).exists() || run.checkpoint_every == 0 || done % run.checkpoint_every as u64 != 0 {
        save(trainer)?;
    }
    Ok(())
}
