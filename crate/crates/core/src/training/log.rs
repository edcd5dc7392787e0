use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::loss::LossReport;
use crate::error::{Error, Result};

pub const LOSS_LOG_HEADER: &str = "step,variant,l_rec,l_cyc,l_total";

/// CSV loss trace, flushed after every row.
#[derive(Debug)]
pub struct LossLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LossLog {
    /// Starts a new log (and its directory), replacing any existing file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = Self { out: BufWriter::new(file), path };
        writeln!(log.out, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&log.path, e))?;
        log.flush()?;
        Ok(log)
    }

    /// Continues an existing log (creating it with a header if absent).
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            return Self::create(path);
        }
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { out: BufWriter::new(file), path })
    }

    pub fn record(&mut self, r: &LossReport) -> Result<()> {
        writeln!(self.out, "{},{},{:e},{:e},{:e}", r.step, r.variant, r.l_rec, r.l_cyc, r.l_total)
            .map_err(|e| Error::io(&self.path, e))?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
