use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use fryshort_core::config::RunConfig;
use fryshort_core::{FryError, Result};

pub const CONFIG_LOCK: &str = "config.lock";

/// `config.lock`, `checkpoints/`, `metrics/`, `plots/`, `logs/` under one root.
pub struct RunDir {
    pub root: PathBuf,
    log: File,
}

impl RunDir {
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        for sub in ["checkpoints", "metrics", "plots", "logs"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| FryError::io(&dir, e))?;
        }
        let path = root.join("logs").join(format!("{command}.log"));
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| FryError::io(&path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            log,
        })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn metrics(&self, file: &str) -> PathBuf {
        self.root.join("metrics").join(file)
    }

    /// Archives the effective config; the run can be replayed from it.
    pub fn lock_config(&self, cfg: &RunConfig) -> Result<()> {
        let path = self.root.join(CONFIG_LOCK);
        fs::write(&path, cfg.to_toml()).map_err(|e| FryError::io(&path, e))
    }

    /// Prints to stderr and appends to the command log.
    pub fn log(&mut self, line: &str) {
        eprintln!("{line}");
        // a failed log write should not abort a long run
        let _ = writeln!(self.log, "{line}");
    }
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| FryError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn csv_err(path: &Path) -> impl Fn(csv::Error) -> FryError + '_ {
    move |e| FryError::io(path, std::io::Error::other(e))
}
