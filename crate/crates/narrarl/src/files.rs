//! JSON file formats: grids, Q-tables and narrative frameworks.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use narrarl_core::narratives::NarrativeError;
use narrarl_core::{GridError, GridWorld, NarrativeFramework, QTable};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Grid { path: PathBuf, source: GridError },
    #[error("{}: {source}", path.display())]
    Validation { path: PathBuf, source: NarrativeError },
}

impl FileError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, FileError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = fs::read_to_string(path).map_err(|source| FileError::Io { path: path.to_owned(), source })?;
    serde_json::from_str(&text).map_err(|e| FileError::Parse { path: path.to_owned(), message: e.to_string() })
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let io_err = |source| FileError::Io { path: path.to_owned(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err)
}

/// Load a grid and check that its goal is reachable.
pub fn load_grid(path: &Path) -> Result<GridWorld, FileError> {
    let grid: GridWorld = read_json(path)?;
    grid.validate_solvable().map_err(|source| FileError::Grid { path: path.to_owned(), source })?;
    Ok(grid)
}

pub fn save_grid(path: &Path, grid: &GridWorld) -> Result<(), FileError> {
    write_json(path, grid)
}

pub fn load_qtable(path: &Path) -> Result<QTable, FileError> {
    read_json(path)
}

pub fn save_qtable(path: &Path, qtable: &QTable) -> Result<(), FileError> {
    write_json(path, qtable)
}

/// Load a user-defined framework `{"id", "system_preamble", "decision_template"}`.
pub fn load_framework(path: &Path) -> Result<NarrativeFramework, FileError> {
    let framework: NarrativeFramework = read_json(path)?;
    framework.validate().map_err(|source| FileError::Validation { path: path.to_owned(), source })?;
    Ok(framework)
}
