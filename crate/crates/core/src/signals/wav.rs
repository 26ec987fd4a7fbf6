//! 16-bit PCM mono WAV files and the corpus manifest.

use std::fs;
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::corpus::{DomainCorpus, DomainTag, ThreeDomainCorpus, Utterance};
use super::waveform::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

fn format_error(reason: impl ToString) -> Error {
    Error::Format {
        what: "WAV file",
        reason: reason.to_string(),
    }
}

fn quantize(sample: f64) -> i16 {
    (sample * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Encode a waveform as RIFF/WAVE bytes. Samples beyond full scale are clipped
/// with a warning.
pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    let clipped = w.samples().iter().filter(|s| s.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!("clipping {clipped} samples with |x| > 1 while writing WAV");
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut cursor, spec).map_err(format_error)?;
        let mut i16_writer = writer.get_i16_writer(w.len() as u32);
        for &s in w.samples() {
            i16_writer.write_sample(quantize(s));
        }
        i16_writer.flush().map_err(format_error)?;
        writer.finalize().map_err(format_error)?;
    }
    Ok(cursor.into_inner())
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader = WavReader::new(std::io::Cursor::new(bytes)).map_err(format_error)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::Format {
            what: "WAV file",
            reason: format!(
                "unsupported encoding: {} channel(s), {} bits, {:?} (need mono 16-bit PCM)",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(format_error)?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let bytes = encode_wav(w)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub domain: DomainTag,
    pub pairing_key: Option<String>,
    /// Path relative to the manifest's directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Write each corpus's utterances as `<dir>/<domain letter>/<utterance_id>.wav`
/// plus one `manifest.json`. Returns the manifest path.
pub fn write_corpora(dir: &Path, corpora: &[&DomainCorpus]) -> Result<PathBuf> {
    let mut entries = Vec::new();
    for corpus in corpora {
        for u in &corpus.utterances {
            let rel = format!("{}/{}.wav", u.domain.letter(), u.utterance_id);
            write_wav(&dir.join(&rel), &u.waveform)?;
            entries.push(ManifestEntry {
                utterance_id: u.utterance_id.clone(),
                speaker_id: u.speaker_id.clone(),
                domain: u.domain,
                pairing_key: u.pairing_key.clone(),
                path: rel,
            });
        }
    }
    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION,
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Load every domain listed in a manifest. Corpora whose entries carry pairing
/// keys are marked as paired with the other keyed corpus.
pub fn read_corpora(manifest_path: &Path) -> Result<Vec<DomainCorpus>> {
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(manifest_path.to_path_buf()));
    }
    let bytes = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CorpusManifest = serde_json::from_slice(&bytes)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Version {
            expected: MANIFEST_VERSION,
            found: manifest.format_version,
        });
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut corpora: Vec<DomainCorpus> = Vec::new();
    for e in manifest.entries {
        let waveform = read_wav(&root.join(&e.path))?;
        let utt = Utterance {
            waveform,
            domain: e.domain,
            speaker_id: e.speaker_id,
            utterance_id: e.utterance_id,
            pairing_key: e.pairing_key,
        };
        match corpora.iter_mut().find(|c| c.domain == utt.domain) {
            Some(c) => c.utterances.push(utt),
            None => corpora.push(DomainCorpus {
                domain: utt.domain,
                utterances: vec![utt],
                paired_with: None,
            }),
        }
    }
    let keyed: Vec<DomainTag> = corpora
        .iter()
        .filter(|c| c.utterances.iter().any(|u| u.pairing_key.is_some()))
        .map(|c| c.domain)
        .collect();
    if keyed.len() == 2 {
        for c in corpora.iter_mut() {
            if keyed.contains(&c.domain) {
                c.paired_with = keyed.iter().copied().find(|&d| d != c.domain);
            }
        }
    }
    Ok(corpora)
}

/// Load a synthetic three-domain corpus written by [`write_corpora`].
pub fn read_three_domain_corpus(manifest_path: &Path) -> Result<ThreeDomainCorpus> {
    let mut corpora = read_corpora(manifest_path)?;
    let mut take = |tag: DomainTag| -> Result<DomainCorpus> {
        let i = corpora.iter().position(|c| c.domain == tag).ok_or_else(|| Error::Format {
            what: "corpus manifest",
            reason: format!("no utterances for domain {tag}"),
        })?;
        Ok(corpora.swap_remove(i))
    };
    let corpus = ThreeDomainCorpus {
        narrow_tel: take(DomainTag::A_NarrowTel)?,
        narrow_mic: take(DomainTag::B_NarrowMic)?,
        wide_mic: take(DomainTag::C_WideMic)?,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_round_trips_exactly() {
        let w = Waveform::zeros(100, 8000).unwrap();
        assert_eq!(decode_wav(&encode_wav(&w).unwrap()).unwrap(), w);
    }

    #[test]
    fn truncated_header_is_a_format_error() {
        let w = Waveform::zeros(100, 8000).unwrap();
        let bytes = encode_wav(&w).unwrap();
        let err = decode_wav(&bytes[..20]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn rejects_stereo() {
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut cursor = std::io::Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut cursor, spec).unwrap();
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
            w.finalize().unwrap();
        }
        let err = decode_wav(&cursor.into_inner()).unwrap_err();
        assert!(err.to_string().contains("unsupported encoding"));
    }

    #[test]
    fn clipping_saturates() {
        let w = Waveform::new(vec![1.5, -1.5], 16000).unwrap();
        let back = decode_wav(&encode_wav(&w).unwrap()).unwrap();
        assert_eq!(back.samples(), &[32767.0 / 32768.0, -1.0]);
    }
}
