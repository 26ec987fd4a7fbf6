use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{load_checkpoint, save_checkpoint, MappingModel};
use crate::signals::DomainTag::{self, A_NarrowTel as A, C_WideMic as C};
use crate::signals::{upsample, Utterance, Waveform};

pub const SYSTEM_FILE: &str = "system.json";
const SYSTEM_VERSION: u32 = 1;

/// Trained mappings and the order in which inference applies them to an
/// upsampled telephone utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSystem {
    pub mappings: BTreeMap<String, MappingModel>,
    pub inference_path: Vec<String>,
}

impl TrainedSystem {
    pub fn validate(&self) -> Result<()> {
        let mut domain = A;
        for name in &self.inference_path {
            let m = self
                .mappings
                .get(name)
                .ok_or_else(|| Error::Plan(format!("inference mapping {name} is missing")))?;
            m.validate()?;
            if m.source_domain != domain {
                return Err(Error::Domain {
                    expected: domain.to_string(),
                    found: m.source_domain.to_string(),
                });
            }
            domain = m.target_domain;
        }
        if domain != C || self.inference_path.is_empty() {
            return Err(Error::Plan("inference path must lead from A to C".into()));
        }
        Ok(())
    }

    /// Applies the inference path to a model-rate waveform.
    pub fn map_model_rate(&self, w: &Waveform) -> Result<Waveform> {
        let mut cur = w.clone();
        for name in &self.inference_path {
            let m = self
                .mappings
                .get(name)
                .ok_or_else(|| Error::Plan(format!("inference mapping {name} is missing")))?;
            cur = m.map_waveform(&cur)?;
        }
        Ok(cur)
    }
}

/// Upsamples a telephone utterance to 16 kHz and runs the inference path.
pub fn inference_map(system: &TrainedSystem, u: &Utterance) -> Result<Waveform> {
    if u.domain != DomainTag::A_NarrowTel {
        return Err(Error::Domain {
            expected: A.to_string(),
            found: u.domain.to_string(),
        });
    }
    system.validate()?;
    system.map_model_rate(&upsample(&u.waveform)?)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    mappings: BTreeMap<String, String>,
    inference_path: Vec<String>,
}

/// Writes one checkpoint per mapping plus a manifest into `dir`.
pub fn save_system(dir: &Path, system: &TrainedSystem) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    for (name, model) in &system.mappings {
        let file = format!("{name}.json");
        save_checkpoint(&dir.join(&file), "generator", model)?;
        files.insert(name.clone(), file);
    }
    let manifest = Manifest {
        format_version: SYSTEM_VERSION,
        mappings: files,
        inference_path: system.inference_path.clone(),
    };
    let path = dir.join(SYSTEM_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_system(dir: &Path) -> Result<TrainedSystem> {
    let path = dir.join(SYSTEM_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingArtifact(path)),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        what: "system manifest",
        reason: e.to_string(),
    })?;
    if manifest.format_version != SYSTEM_VERSION {
        return Err(Error::Version {
            expected: SYSTEM_VERSION,
            found: manifest.format_version,
        });
    }
    let mut mappings = BTreeMap::new();
    for (name, file) in manifest.mappings {
        let model: MappingModel = load_checkpoint(&dir.join(file), "generator")?;
        mappings.insert(name, model);
    }
    let system = TrainedSystem {
        mappings,
        inference_path: manifest.inference_path,
    };
    system.validate()?;
    Ok(system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::DomainTag::B_NarrowMic as B;
    use crate::signals::{build_corpus, CorpusConfig, MODEL_RATE};

    fn explicit(g_ab: MappingModel, g_bc: MappingModel) -> TrainedSystem {
        TrainedSystem {
            mappings: [("G_A_to_B".to_string(), g_ab), ("G_B_to_C".to_string(), g_bc)].into(),
            inference_path: vec!["G_A_to_B".into(), "G_B_to_C".into()],
        }
    }

    #[test]
    fn identity_system_is_plain_upsampling() {
        let c = build_corpus(&CorpusConfig::new(2, 1, 3)).unwrap();
        let u = &c.narrow_tel.utterances[0];
        let sys = explicit(MappingModel::identity(A, B), MappingModel::identity(B, C));
        let out = inference_map(&sys, u).unwrap();
        assert_eq!(out, upsample(&u.waveform).unwrap());
        assert_eq!(out.sample_rate_hz(), MODEL_RATE);
        assert_eq!(out.len(), 2 * u.waveform.len());
        assert!(matches!(
            inference_map(&sys, &c.narrow_mic.utterances[0]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn broken_chains_are_rejected() {
        let sys = explicit(MappingModel::identity(A, B), MappingModel::identity(A, C));
        assert!(sys.validate().is_err());
        let mut missing = explicit(MappingModel::identity(A, B), MappingModel::identity(B, C));
        missing.inference_path.push("G_C_to_B".into());
        assert!(missing.validate().is_err());
    }

    #[test]
    fn persistence_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let sys = explicit(MappingModel::scale(0.5, A, B), MappingModel::identity(B, C));
        save_system(dir.path(), &sys).unwrap();
        assert_eq!(load_system(dir.path()).unwrap(), sys);
        assert!(matches!(
            load_system(&dir.path().join("nope")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
