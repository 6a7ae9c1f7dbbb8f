use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::persist::Provenance;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Completion record of one stage: who produced it and what it wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Output path relative to the run directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// The output directory of one run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub provenance: Provenance,
    pub resume: bool,
}

impl RunDir {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.json"))
    }

    fn read_stamp(&self, stage: &str) -> Result<Option<Stamp>> {
        let p = self.stamp_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let stamp = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        Ok(Some(stamp))
    }

    fn verify(&self, stage: &str, stamp: &Stamp) -> Result<()> {
        if stamp.config_hash != self.provenance.config_hash {
            return Err(Error::StaleArtifact {
                path: self.stamp_path(stage),
                reason: format!(
                    "stage {stage} ran with config {} but the current config is {}; rerun `koa {stage}` without --stage-resume",
                    stamp.config_hash, self.provenance.config_hash
                ),
            });
        }
        for (rel, hash) in &stamp.outputs {
            let p = self.path(rel);
            if !p.exists() {
                return Err(Error::MissingArtifact {
                    path: p,
                    stage: stage.to_string(),
                });
            }
            if &sha256_file(&p)? != hash {
                return Err(Error::StaleArtifact {
                    path: p,
                    reason: format!("contents changed since stage {stage} wrote it"),
                });
            }
        }
        Ok(())
    }

    /// True when resuming and `stage` already completed with verified outputs.
    pub fn completed(&self, stage: &str) -> Result<bool> {
        if !self.resume {
            return Ok(false);
        }
        match self.read_stamp(stage)? {
            Some(stamp) => self.verify(stage, &stamp).map(|()| true),
            None => Ok(false),
        }
    }

    /// Fails unless `stage` completed for this config and its outputs are intact.
    pub fn require(&self, stage: &str) -> Result<()> {
        match self.read_stamp(stage)? {
            Some(stamp) => self.verify(stage, &stamp),
            None => Err(Error::MissingArtifact {
                path: self.stamp_path(stage),
                stage: stage.to_string(),
            }),
        }
    }

    pub fn finish(&self, stage: &str, outputs: &[String]) -> Result<()> {
        let mut map = BTreeMap::new();
        for rel in outputs {
            map.insert(rel.clone(), sha256_file(&self.path(rel))?);
        }
        let stamp = Stamp {
            stage: stage.to_string(),
            config_hash: self.provenance.config_hash.clone(),
            seed: self.provenance.seed,
            outputs: map,
        };
        self.ensure_dir("stages")?;
        let p = self.stamp_path(stage);
        let mut text = serde_json::to_string_pretty(&stamp)?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

/// Writes `id, class_0..class_{C-1}` rows.
pub fn write_probs(path: &Path, ids: &[String], probs: &[Vec<f64>]) -> Result<()> {
    let c = probs.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..c).map(|k| format!("class_{k}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(probs) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_probs(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut it = rec.iter();
        ids.push(it.next().unwrap_or_default().to_string());
        let row = it
            .map(|v| v.parse::<f64>().map_err(|e| Error::data(format!("{}: bad probability {v:?}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((ids, rows))
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
