//! Landmark JSON: `{"scheme": "FULL_68" | "EYES_ONLY" | "GENERIC", "points": [[x, y], ...]}`.

use std::path::Path;

use crate::alignment::LandmarkSet;
use crate::error::{FormatError, Result};

pub fn decode_landmarks(text: &str) -> Result<LandmarkSet, FormatError> {
    let set: LandmarkSet =
        serde_json::from_str(text).map_err(|e| FormatError::Schema(e.to_string()))?;
    set.validate().map_err(|e| FormatError::Schema(e.to_string()))?;
    Ok(set)
}

pub fn encode_landmarks(set: &LandmarkSet) -> String {
    let mut s = serde_json::to_string_pretty(set).expect("landmark sets always serialize");
    s.push('\n');
    s
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let bytes = super::read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| FormatError::Schema("landmark file is not UTF-8".into()))?;
    Ok(decode_landmarks(text)?)
}

pub fn save_landmarks(set: &LandmarkSet, path: &Path) -> Result<()> {
    set.validate()?;
    super::atomic_write(path, encode_landmarks(set).as_bytes())
}
