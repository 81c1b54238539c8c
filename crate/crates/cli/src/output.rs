//! Output bookkeeping: every file a command creates is recorded so a
//! failed run can remove what it wrote.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};

#[derive(Default)]
pub struct Outputs {
    files: Mutex<Vec<PathBuf>>,
    dirs: Mutex<Vec<PathBuf>>,
}

impl Outputs {
    /// Creates `dir` and any missing parents, remembering the ones that
    /// did not exist before.
    pub fn dir(&self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        self.dirs.lock().expect("lock").extend(missing.into_iter().rev());
        Ok(())
    }

    pub fn track(&self, path: &Path) {
        self.files.lock().expect("lock").push(path.to_path_buf());
    }

    pub fn create(&self, path: &Path) -> Result<BufWriter<File>> {
        if let Some(parent) = path.parent() {
            self.dir(parent)?;
        }
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.track(path);
        Ok(BufWriter::new(f))
    }

    pub fn csv(&self, path: &Path, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>> {
        let mut w = csv::Writer::from_writer(self.create(path)?);
        w.write_record(header)?;
        Ok(w)
    }

    pub fn write(&self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        use std::io::Write;
        let mut w = self.create(path)?;
        w.write_all(contents.as_ref())?;
        w.flush()?;
        Ok(())
    }

    /// Removes recorded files, then recorded directories that are empty.
    pub fn discard(&self) {
        for f in self.files.lock().expect("lock").drain(..).rev() {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.lock().expect("lock").drain(..).rev() {
            let _ = std::fs::remove_dir(d);
        }
    }
}

/// Shortest decimal that reads back to the same `f64`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
