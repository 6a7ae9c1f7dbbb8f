//! Versioned JSON envelope shared by every persisted model.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "koa-model";
pub const FORMAT_VERSION: u32 = 1;

/// Run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub body: T,
}

pub fn to_string<T: Serialize>(kind: &str, provenance: Option<&Provenance>, body: &T) -> Result<String> {
    let env = Envelope {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        kind: kind.to_string(),
        provenance: provenance.cloned(),
        body,
    };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    Ok(s)
}

pub fn from_str<T: DeserializeOwned>(text: &str, kind: &str) -> Result<(T, Option<Provenance>)> {
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if env.format != FORMAT {
        return Err(Error::Format(format!("not a {FORMAT} file (format {:?})", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            env.version
        )));
    }
    if env.kind != kind {
        return Err(Error::Format(format!("expected a {kind:?} model, found {:?}", env.kind)));
    }
    Ok((env.body, env.provenance))
}

pub fn save<T: Serialize>(path: &Path, kind: &str, provenance: Option<&Provenance>, body: &T) -> Result<()> {
    let text = to_string(kind, provenance, body)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(T, Option<Provenance>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, kind)
}

/// Reads only the `kind` field of a model file.
pub fn peek_kind(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        kind: String,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let h: Header = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if h.format != FORMAT {
        return Err(Error::Format(format!("not a {FORMAT} file")));
    }
    Ok(h.kind)
}
