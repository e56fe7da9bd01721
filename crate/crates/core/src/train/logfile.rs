//! Append-only CSV training log.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::TrainStepReport;
use crate::error::{Error, Result};

pub const HEADER: &str = "iteration,loss,lr,batch_accuracy,seconds";

pub struct TrainLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TrainLog {
    /// Opens `path` for appending, writing the header when the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let mut log = TrainLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        if empty {
            log.line(HEADER)?;
        }
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, r: &TrainStepReport) -> Result<()> {
        self.line(&format!(
            "{},{},{},{},{:.3}",
            r.iteration, r.loss, r.lr, r.batch_accuracy, r.seconds
        ))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for TrainLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_once_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let r = TrainStepReport {
            iteration: 3,
            loss: 0.5,
            lr: 0.01,
            batch_accuracy: 0.25,
            seconds: 1.0,
        };
        TrainLog::open(&p).unwrap().append(&r).unwrap();
        TrainLog::open(&p).unwrap().append(&r).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines, [HEADER, "3,0.5,0.01,0.25,1.000", "3,0.5,0.01,0.25,1.000"]);
    }
}
