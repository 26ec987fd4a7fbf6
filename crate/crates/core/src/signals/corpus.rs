use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::filters::{lowpass_downsample, TelephoneChannel};
use super::synth::{synth_wide_mic, SyntheticSpeakerSpec};
use super::waveform::{Waveform, MODEL_RATE, NARROWBAND_RATE};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// The three acoustic domains.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DomainTag {
    /// Narrowband telephone speech (8 kHz).
    A_NarrowTel,
    /// Narrowband microphone speech (8 kHz), a downsampled view of `C`.
    B_NarrowMic,
    /// Wideband microphone speech (16 kHz).
    C_WideMic,
}

impl DomainTag {
    pub fn letter(self) -> &'static str {
        match self {
            DomainTag::A_NarrowTel => "A",
            DomainTag::B_NarrowMic => "B",
            DomainTag::C_WideMic => "C",
        }
    }

    pub fn storage_rate(self) -> u32 {
        match self {
            DomainTag::C_WideMic => MODEL_RATE,
            _ => NARROWBAND_RATE,
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DomainTag::A_NarrowTel => "narrow_tel",
            DomainTag::B_NarrowMic => "narrow_mic",
            DomainTag::C_WideMic => "wide_mic",
        };
        write!(f, "{} ({name})", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub waveform: Waveform,
    pub domain: DomainTag,
    pub speaker_id: String,
    pub utterance_id: String,
    /// Equal keys mark parallel versions of the same underlying signal.
    pub pairing_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCorpus {
    pub domain: DomainTag,
    pub utterances: Vec<Utterance>,
    /// Domain of the corpus this one is paired with through `pairing_key`.
    pub paired_with: Option<DomainTag>,
}

impl DomainCorpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.utterances.iter().map(|u| u.speaker_id.as_str()).collect()
    }

    /// Checks the tag, rate and pairing-key invariants of a single corpus.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for u in &self.utterances {
            if u.domain != self.domain {
                return Err(Error::Domain {
                    expected: self.domain.to_string(),
                    found: u.domain.to_string(),
                });
            }
            if !ids.insert(u.utterance_id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id {}", u.utterance_id)));
            }
            let rate = u.waveform.sample_rate_hz();
            if rate != MODEL_RATE && rate != NARROWBAND_RATE {
                return Err(Error::SampleRate {
                    expected: self.domain.storage_rate(),
                    found: rate,
                });
            }
            if self.paired_with.is_some() != u.pairing_key.is_some() {
                return Err(Error::Unpaired(format!(
                    "utterance {} pairing key presence disagrees with its corpus",
                    u.utterance_id
                )));
            }
        }
        Ok(())
    }

    /// Index pairs `(i_self, i_other)` of the pairing bijection between two corpora.
    pub fn pairing_bijection(&self, other: &DomainCorpus) -> Result<Vec<(usize, usize)>> {
        let keyed = |c: &DomainCorpus| -> Result<BTreeMap<String, usize>> {
            let mut m = BTreeMap::new();
            for (i, u) in c.utterances.iter().enumerate() {
                let key = u.pairing_key.clone().ok_or_else(|| {
                    Error::Unpaired(format!("utterance {} has no pairing key", u.utterance_id))
                })?;
                if m.insert(key.clone(), i).is_some() {
                    return Err(Error::Unpaired(format!("pairing key {key} is not unique")));
                }
            }
            Ok(m)
        };
        let mine = keyed(self)?;
        let theirs = keyed(other)?;
        if mine.len() != theirs.len() || mine.keys().ne(theirs.keys()) {
            return Err(Error::Unpaired(format!(
                "pairing keys of {} and {} do not form a bijection",
                self.domain, other.domain
            )));
        }
        let mut pairs = Vec::with_capacity(mine.len());
        for (i, u) in self.utterances.iter().enumerate() {
            let j = theirs[u.pairing_key.as_deref().unwrap_or_default()];
            let (a, b) = (&u.waveform, &other.utterances[j].waveform);
            if (a.duration_s() - b.duration_s()).abs() > 1.0 / NARROWBAND_RATE as f64 {
                return Err(Error::LengthMismatch(format!(
                    "paired utterances {} and {} differ in duration",
                    u.utterance_id, other.utterances[j].utterance_id
                )));
            }
            pairs.push((i, j));
        }
        Ok(pairs)
    }

    /// Split off the last `per_speaker` utterances of every speaker (in corpus
    /// order) as a held-out set. Returns `(train, heldout)`.
    pub fn split_heldout(&self, per_speaker: usize) -> (DomainCorpus, DomainCorpus) {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for u in &self.utterances {
            *counts.entry(u.speaker_id.as_str()).or_default() += 1;
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut train = Vec::new();
        let mut heldout = Vec::new();
        for u in &self.utterances {
            let k = seen.entry(u.speaker_id.as_str()).or_default();
            let total = counts[u.speaker_id.as_str()];
            if *k + per_speaker >= total {
                heldout.push(u.clone());
            } else {
                train.push(u.clone());
            }
            *k += 1;
        }
        let wrap = |utterances| DomainCorpus {
            domain: self.domain,
            utterances,
            paired_with: self.paired_with,
        };
        (wrap(train), wrap(heldout))
    }
}

/// Size and seeding of the synthetic three-domain corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub channel: TelephoneChannel,
}

fn default_duration() -> f64 {
    1.0
}

impl CorpusConfig {
    pub fn new(n_speakers: usize, utts_per_speaker: usize, master_seed: u64) -> Self {
        Self {
            n_speakers,
            utts_per_speaker,
            duration_s: default_duration(),
            master_seed,
            channel: TelephoneChannel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::Config(format!(
                "n_speakers must be at least 2, got {}",
                self.n_speakers
            )));
        }
        if self.utts_per_speaker < 1 {
            return Err(Error::Config("utts_per_speaker must be at least 1".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        self.channel.validate()
    }
}

/// The three training corpora: telephone (A), narrowband mic (B), wideband mic (C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeDomainCorpus {
    pub narrow_tel: DomainCorpus,
    pub narrow_mic: DomainCorpus,
    pub wide_mic: DomainCorpus,
}

impl ThreeDomainCorpus {
    pub fn get(&self, tag: DomainTag) -> &DomainCorpus {
        match tag {
            DomainTag::A_NarrowTel => &self.narrow_tel,
            DomainTag::B_NarrowMic => &self.narrow_mic,
            DomainTag::C_WideMic => &self.wide_mic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.narrow_tel.validate()?;
        self.narrow_mic.validate()?;
        self.wide_mic.validate()?;
        if self.narrow_tel.utterances.iter().any(|u| u.pairing_key.is_some()) {
            return Err(Error::Unpaired("telephone utterances must not carry pairing keys".into()));
        }
        self.narrow_mic.pairing_bijection(&self.wide_mic)?;
        Ok(())
    }

    pub fn split_heldout(&self, per_speaker: usize) -> (ThreeDomainCorpus, ThreeDomainCorpus) {
        let (at, ah) = self.narrow_tel.split_heldout(per_speaker);
        let (bt, bh) = self.narrow_mic.split_heldout(per_speaker);
        let (ct, ch) = self.wide_mic.split_heldout(per_speaker);
        (
            ThreeDomainCorpus {
                narrow_tel: at,
                narrow_mic: bt,
                wide_mic: ct,
            },
            ThreeDomainCorpus {
                narrow_tel: ah,
                narrow_mic: bh,
                wide_mic: ch,
            },
        )
    }
}

const MIC_SPEAKERS: u64 = 1;
const TEL_SPEAKERS: u64 = 2;
const UTTERANCE: u64 = 3;
const CHANNEL: u64 = 4;

pub fn speaker_seed(master_seed: u64, group: u64, speaker: usize) -> u64 {
    derive_seed(master_seed, &[group, speaker as u64])
}

/// Build A, B and C. C and B share one speaker set (B is the decimated C,
/// paired by key); A is drawn from a disjoint speaker set and then passed
/// through the telephone channel, so it carries no pairing.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<ThreeDomainCorpus> {
    cfg.validate()?;
    let mut wide = Vec::new();
    let mut narrow = Vec::new();
    let mut tel = Vec::new();
    for s in 0..cfg.n_speakers {
        let mic_spec = SyntheticSpeakerSpec::from_seed(speaker_seed(cfg.master_seed, MIC_SPEAKERS, s));
        let tel_spec = SyntheticSpeakerSpec::from_seed(speaker_seed(cfg.master_seed, TEL_SPEAKERS, s));
        for u in 0..cfg.utts_per_speaker {
            let key = format!("s{s:03}-u{u:03}");
            let utt_seed = derive_seed(cfg.master_seed, &[UTTERANCE, MIC_SPEAKERS, s as u64, u as u64]);
            let c_wave = synth_wide_mic(&mic_spec, cfg.duration_s, utt_seed)?;
            let b_wave = lowpass_downsample(&c_wave)?;
            let speaker = format!("mic-spk{s:03}");
            wide.push(Utterance {
                waveform: c_wave,
                domain: DomainTag::C_WideMic,
                speaker_id: speaker.clone(),
                utterance_id: format!("C-{key}"),
                pairing_key: Some(key.clone()),
            });
            narrow.push(Utterance {
                waveform: b_wave,
                domain: DomainTag::B_NarrowMic,
                speaker_id: speaker,
                utterance_id: format!("B-{key}"),
                pairing_key: Some(key.clone()),
            });

            let tel_seed = derive_seed(cfg.master_seed, &[UTTERANCE, TEL_SPEAKERS, s as u64, u as u64]);
            let chan_seed = derive_seed(cfg.master_seed, &[CHANNEL, s as u64, u as u64]);
            let source = synth_wide_mic(&tel_spec, cfg.duration_s, tel_seed)?;
            let a_wave = cfg.channel.apply(&lowpass_downsample(&source)?, chan_seed)?;
            tel.push(Utterance {
                waveform: a_wave,
                domain: DomainTag::A_NarrowTel,
                speaker_id: format!("tel-spk{s:03}"),
                utterance_id: format!("A-{key}"),
                pairing_key: None,
            });
        }
    }
    let corpus = ThreeDomainCorpus {
        narrow_tel: DomainCorpus {
            domain: DomainTag::A_NarrowTel,
            utterances: tel,
            paired_with: None,
        },
        narrow_mic: DomainCorpus {
            domain: DomainTag::B_NarrowMic,
            utterances: narrow,
            paired_with: Some(DomainTag::C_WideMic),
        },
        wide_mic: DomainCorpus {
            domain: DomainTag::C_WideMic,
            utterances: wide,
            paired_with: Some(DomainTag::B_NarrowMic),
        },
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Three-domain corpus of one-second utterances.
pub fn build_three_domain_corpus(
    n_speakers: usize,
    utts_per_speaker: usize,
    master_seed: u64,
) -> Result<(DomainCorpus, DomainCorpus, DomainCorpus)> {
    let c = build_corpus(&CorpusConfig::new(n_speakers, utts_per_speaker, master_seed))?;
    Ok((c.narrow_tel, c.narrow_mic, c.wide_mic))
}
