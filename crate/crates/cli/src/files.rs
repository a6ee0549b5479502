//! File I/O helpers: atomic writes, pose/eval JSON documents, image loading.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fieldcal::camera::CameraPose;
use fieldcal::error::Error;
use fieldcal::image_io::{read_gray_image, write_pgm, write_png};
use fieldcal::render::GrayRaster;

/// Command error carrying the process exit code.
pub struct CliError {
    pub exit: u8,
    pub message: String,
}

impl CliError {
    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError { exit: 2, message: e.to_string() }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError { exit: 1, message: e.to_string() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::InvalidTemplate(_)
            | Error::InvalidDistribution(_) => CliError::config(e),
            other => CliError::runtime(other),
        }
    }
}

/// Write via a temporary file and rename, so failures never leave partial
/// output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    let write_all = || -> std::io::Result<()> {
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)
    };
    write_all().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::runtime(format!("{}: {e}", path.display()))
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// One entry of a pose list file used by `eval`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalItem {
    pub id: String,
    pub pose: CameraPose,
    #[serde(default)]
    pub converged: Option<bool>,
}

pub fn read_eval_items(path: &Path) -> Result<Vec<EvalItem>, CliError> {
    let items: Vec<EvalItem> = read_json(path).map_err(CliError::config)?;
    if items.is_empty() {
        return Err(CliError::config(format!("{}: empty pose list", path.display())));
    }
    Ok(items)
}

pub fn read_gray(path: &Path) -> Result<GrayRaster, CliError> {
    read_gray_image(path).map_err(CliError::runtime)
}

/// Write PGM or PNG depending on the output extension (default PGM).
pub fn write_image(img: &GrayRaster, path: &Path) -> Result<(), CliError> {
    let result = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => write_png(img, path),
        _ => write_pgm(img, path),
    };
    result.map_err(CliError::runtime)
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}
