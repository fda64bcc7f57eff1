//! Run directories: one adapter file per site per epoch plus a TOML manifest.
//!
//! ```text
//! <dir>/manifest.toml
//! <dir>/epoch1/layer0.q.lrc
//! ...
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{select_best_index, TrainConfig, TrainOutcome};
use crate::adapter::{self, LowRankAdapter};
use crate::error::{Error, Result};

pub const RUN_MANIFEST: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub epoch: usize,
    pub validation_ce: f64,
    pub training_loss: f64,
    /// Adapter files relative to the run directory.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub initial_loss: f64,
    pub selected_epoch: usize,
    pub checkpoints: Vec<CheckpointEntry>,
}

/// SHA-256 of the TOML rendering of `cfg`, hex encoded.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let text = toml::to_string(cfg).expect("train config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_run(dir: &Path, name: &str, outcome: &TrainOutcome, cfg: &TrainConfig) -> Result<RunManifest> {
    let mut entries = Vec::with_capacity(outcome.checkpoints.len());
    for ckpt in &outcome.checkpoints {
        let sub = format!("epoch{}", ckpt.epoch);
        let epoch_dir = dir.join(&sub);
        std::fs::create_dir_all(&epoch_dir).map_err(|e| Error::io(&epoch_dir, e))?;
        let mut files = Vec::with_capacity(ckpt.adapters.len());
        for ad in &ckpt.adapters {
            let rel = format!("{sub}/{}.lrc", ad.site());
            adapter::save(ad, dir.join(&rel))?;
            files.push(rel);
        }
        entries.push(CheckpointEntry {
            epoch: ckpt.epoch,
            validation_ce: ckpt.validation_ce,
            training_loss: ckpt.training_loss,
            files,
        });
    }
    let ces: Vec<f64> = entries.iter().map(|e| e.validation_ce).collect();
    let manifest = RunManifest {
        name: name.to_string(),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        initial_loss: outcome.initial_loss,
        selected_epoch: entries[select_best_index(&ces)?].epoch,
        checkpoints: entries,
    };
    let path = dir.join(RUN_MANIFEST);
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads the manifest, checks that every checkpoint file is present, re-derives
/// the selection and loads the selected adapters.
pub fn load_selected(dir: &Path) -> Result<(RunManifest, Vec<LowRankAdapter>)> {
    let path = dir.join(RUN_MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for entry in &manifest.checkpoints {
        for f in &entry.files {
            let p = dir.join(f);
            if !p.exists() {
                return Err(Error::MissingArtifact(p.display().to_string()));
            }
        }
    }
    let ces: Vec<f64> = manifest.checkpoints.iter().map(|e| e.validation_ce).collect();
    let best = &manifest.checkpoints[select_best_index(&ces)?];
    if best.epoch != manifest.selected_epoch {
        return Err(Error::Malformed(format!(
            "{}: selected epoch {} but validation CE picks epoch {}",
            path.display(),
            manifest.selected_epoch,
            best.epoch
        )));
    }
    let adapters = best
        .files
        .iter()
        .map(|f| adapter::load(dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, adapters))
}
