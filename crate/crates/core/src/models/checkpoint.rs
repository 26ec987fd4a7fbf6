use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    payload: T,
}

/// Writes `payload` as versioned JSON. Floats are printed in shortest
/// round-trip form, so loading restores every bit.
pub fn save_checkpoint<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let env = Envelope {
        format_version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        payload,
    };
    let bytes = serde_json::to_vec(&env)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingArtifact(path.to_path_buf())),
        Err(e) => return Err(Error::io(path, e)),
    };
    let corrupt = |reason: String| Error::Format {
        what: "checkpoint",
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: u32::try_from(version).unwrap_or(u32::MAX),
        });
    }
    let env: Envelope<T> = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    if env.kind != kind {
        return Err(corrupt(format!("expected a `{kind}` checkpoint, found `{}`", env.kind)));
    }
    Ok(env.payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_generator, GeneratorConfig, MappingModel};
    use crate::signals::DomainTag;

    #[test]
    fn generator_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = build_generator(&GeneratorConfig::default(), DomainTag::B_NarrowMic, DomainTag::C_WideMic).unwrap();
        save_checkpoint(&path, "generator", &g).unwrap();
        let back: MappingModel = load_checkpoint(&path, "generator").unwrap();
        assert_eq!(back, g);
        let bits = |m: &MappingModel| m.parameters.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&g));
    }

    #[test]
    fn errors_are_structured() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_checkpoint(&path, "generator", &vec![1.0f64, 2.0]).unwrap();
        assert!(matches!(load_checkpoint::<Vec<f64>>(&path, "critic"), Err(Error::Format { .. })));

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint::<Vec<f64>>(&path, "generator"), Err(Error::Format { .. })));

        fs::write(&path, br#"{"format_version":99,"kind":"generator","payload":[]}"#).unwrap();
        assert!(matches!(load_checkpoint::<Vec<f64>>(&path, "generator"), Err(Error::Version { found: 99, .. })));

        let missing = dir.path().join("none.json");
        assert!(matches!(load_checkpoint::<Vec<f64>>(&missing, "generator"), Err(Error::MissingArtifact(_))));
    }
}
