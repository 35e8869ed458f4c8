//! Run directory output: metrics CSV and checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::metrics::{MetricsRecord, CSV_HEADER};
use super::trainer::TrainHooks;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, GptModel};
use crate::numerics::Scalar;

/// Streams `metrics.csv` and writes `step_<s>.ckpt` / `best.ckpt`.
pub struct RunWriter {
    dir: PathBuf,
    csv: BufWriter<File>,
    step_checkpoints: bool,
}

impl RunWriter {
    pub fn create(dir: impl AsRef<Path>, step_checkpoints: bool) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("metrics.csv");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut csv = BufWriter::new(f);
        writeln!(csv, "{CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(RunWriter {
            dir,
            csv,
            step_checkpoints,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
}

impl<F: Scalar> TrainHooks<F> for RunWriter {
    fn on_record(&mut self, record: &MetricsRecord) -> Result<()> {
        let path = self.metrics_path();
        writeln!(self.csv, "{}", record.csv_row())
            .and_then(|_| self.csv.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn on_eval(&mut self, step: u64, model: &GptModel<F>, is_best: bool) -> Result<()> {
        if self.step_checkpoints {
            save_checkpoint(model, self.dir.join(format!("step_{step}.ckpt")))?;
        }
        if is_best {
            save_checkpoint(model, self.dir.join("best.ckpt"))?;
        }
        Ok(())
    }
}
