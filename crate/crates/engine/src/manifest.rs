use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::ImageRef;
use crate::error::EngineError;

/// One line of an image manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub uri: String,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl ManifestRecord {
    pub fn image_ref(&self) -> ImageRef {
        ImageRef {
            id: self.id.clone(),
            uri: self.uri.clone(),
            width: self.width,
            height: self.height,
        }
    }
}

/// Parses newline-delimited records. Blank lines and `#` comments are
/// skipped; ids must be unique and dimensions positive.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRecord>, EngineError> {
    let mut out: Vec<ManifestRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| EngineError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: ManifestRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if !(rec.width > 0.0 && rec.height > 0.0 && rec.width.is_finite() && rec.height.is_finite())
        {
            return Err(parse_err(format!(
                "image {} has size {}x{}",
                rec.id, rec.width, rec.height
            )));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(parse_err(format!("duplicate image id {}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    parse_manifest(&text, path)
}
