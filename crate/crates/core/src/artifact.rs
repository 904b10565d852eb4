//! Versioned JSON envelopes for trained models and derived data, so a stage
//! can tell a wrong or stale file from a missing one.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    pub format_version: u32,
    /// The master seed of the run that produced this artifact.
    pub seed: u64,
    pub payload: T,
}

#[derive(Serialize)]
struct ArtifactView<'a, T: Serialize> {
    kind: &'a str,
    format_version: u32,
    seed: u64,
    payload: &'a T,
}

/// Writes `payload` wrapped in the envelope, creating parent directories.
pub fn save_artifact<T: Serialize>(path: &Path, kind: &str, seed: u64, payload: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let view = ArtifactView {
        kind,
        format_version: FORMAT_VERSION,
        seed,
        payload,
    };
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &view)?;
    Ok(())
}

/// Reads an envelope back, checking kind and format version.
pub fn load_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Artifact<T>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let file = File::open(path)?;
    let artifact: Artifact<T> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| {
            Error::ArtifactFormat(format!("{}: {e}", path.display()))
        })?;
    if artifact.kind != kind {
        return Err(Error::ArtifactFormat(format!(
            "{}: expected kind {kind:?}, found {:?}",
            path.display(),
            artifact.kind
        )));
    }
    if artifact.format_version != FORMAT_VERSION {
        return Err(Error::ArtifactFormat(format!(
            "{}: format version {} is not supported (expected {FORMAT_VERSION})",
            path.display(),
            artifact.format_version
        )));
    }
    Ok(artifact)
}
