//! Output directories and CSV/text writers. Every path is resolved inside the
//! experiment's own directory.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;

use crate::LabError;

#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    plots: bool,
}

impl OutputDir {
    /// Creates `root` (and parents). An existing non-empty directory is only
    /// reused with `force`.
    pub fn prepare(root: impl Into<PathBuf>, force: bool) -> Result<Self, LabError> {
        let root = root.into();
        if root.is_dir() {
            let mut entries = fs::read_dir(&root).map_err(|e| LabError::io(&root, e))?;
            if entries.next().is_some() && !force {
                return Err(LabError::OutputExists(root));
            }
        } else {
            fs::create_dir_all(&root).map_err(|e| LabError::io(&root, e))?;
        }
        Ok(Self { root, plots: false })
    }

    /// Enables the gnuplot scripts written by [`OutputDir::write_plot`].
    pub fn with_plots(mut self, plots: bool) -> Self {
        self.plots = plots;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path of `name` inside the directory; rejects absolute paths and `..`.
    pub fn path(&self, name: &str) -> Result<PathBuf, LabError> {
        let rel = Path::new(name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(LabError::Config(format!("output name `{name}` leaves the output directory")));
        }
        Ok(self.root.join(rel))
    }

    pub fn subdir(&self, name: &str) -> Result<OutputDir, LabError> {
        let path = self.path(name)?;
        fs::create_dir_all(&path).map_err(|e| LabError::io(&path, e))?;
        Ok(OutputDir {
            root: path,
            plots: self.plots,
        })
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, LabError> {
        let path = self.path(name)?;
        fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
        Ok(path)
    }

    /// Writes a plot script if plots are enabled.
    pub fn write_plot(&self, name: &str, script: &str) -> Result<Option<PathBuf>, LabError> {
        if !self.plots {
            return Ok(None);
        }
        self.write_text(name, script).map(Some)
    }

    pub fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<PathBuf, LabError> {
        let path = self.path(name)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| LabError::io(&path, e))?;
        Ok(path)
    }
}
