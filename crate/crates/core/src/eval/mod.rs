//! Evaluation: log-spectral distance, toy utterance embeddings with cosine
//! trial scoring, EER / minDCF, and a linear domain-discriminability probe.

mod domain;
mod scoring;
mod spectral;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use domain::{domain_discriminability, mann_whitney_auc, MIN_PER_SIDE};
pub use scoring::{
    compute_eer, compute_min_dcf, cosine, error_rates, score_trials, scores_to_text, Trial, TrialList, P_TARGET,
};
pub use spectral::{
    embed_utterance, log_spectral_distance, mel_filterbank, Stft, FRAME, HOP, MAGNITUDE_FLOOR, MEL_BANDS,
    MIN_EMBED_SECONDS,
};

use crate::error::{Error, Result};
use crate::schemes::TrainedSystem;
use crate::signals::{upsample, DomainCorpus, DomainTag, ThreeDomainCorpus, Utterance, Waveform};

pub const REPORT_VERSION: u32 = 1;

/// The four headline metrics of one signal path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub lsd_db: f64,
    pub domain_auc: f64,
    pub eer_percent: f64,
    pub min_dcf: f64,
}

impl Metrics {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("lsd_db", self.lsd_db, 0.0, f64::INFINITY),
            ("domain_auc", self.domain_auc, 0.0, 1.0),
            ("eer_percent", self.eer_percent, 0.0, 100.0),
            ("min_dcf", self.min_dcf, 0.0, 1.0 + 1e-9),
        ];
        for (name, v, lo, hi) in checks {
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::invalid(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMeta {
    pub seed: u64,
    pub p_target: f64,
    pub lsd_pairs: usize,
    pub domain_utterances: [usize; 2],
    pub trials: usize,
    pub target_trials: usize,
}

/// Metrics of a trained system next to the naive-upsampling passthrough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format_version: u32,
    pub label: String,
    #[serde(flatten)]
    pub system: Metrics,
    pub baseline: Metrics,
    pub meta: EvalMeta,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != REPORT_VERSION {
            return Err(Error::Version {
                expected: REPORT_VERSION,
                found: self.format_version,
            });
        }
        self.system.validate()?;
        self.baseline.validate()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let r: Self = serde_json::from_slice(bytes).map_err(|e| Error::Format {
            what: "eval report",
            reason: e.to_string(),
        })?;
        r.validate()?;
        Ok(r)
    }
}

/// A report plus the raw trial scores behind its EER and minDCF.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub trials: TrialList,
    pub scores: Vec<f64>,
    pub baseline_scores: Vec<f64>,
}

fn mapped_corpus(corpus: &DomainCorpus, domain: DomainTag, f: impl Fn(&Utterance) -> Result<Waveform>) -> Result<DomainCorpus> {
    let utterances = corpus
        .utterances
        .iter()
        .map(|u| {
            Ok(Utterance {
                waveform: f(u)?,
                domain,
                speaker_id: u.speaker_id.clone(),
                utterance_id: u.utterance_id.clone(),
                pairing_key: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DomainCorpus {
        domain,
        utterances,
        paired_with: None,
    })
}

fn mean_lsd(outputs: &DomainCorpus, wide: &DomainCorpus) -> Result<f64> {
    let pairs = outputs.pairing_bijection(wide)?;
    let mut total = 0.0;
    for &(i, j) in &pairs {
        total += log_spectral_distance(&outputs.utterances[i].waveform, &wide.utterances[j].waveform)?;
    }
    Ok(total / pairs.len() as f64)
}

fn verification(outputs: &DomainCorpus, trials: &TrialList) -> Result<(f64, f64, Vec<f64>)> {
    let embeddings: BTreeMap<String, Vec<f64>> = outputs
        .utterances
        .iter()
        .map(|u| Ok((u.utterance_id.clone(), embed_utterance(&u.waveform)?)))
        .collect::<Result<_>>()?;
    let scores = score_trials(&embeddings, trials)?;
    let labels = trials.labels();
    Ok((compute_eer(&scores, &labels)?, compute_min_dcf(&scores, &labels, P_TARGET)?, scores))
}

/// Evaluates `system` on held-out data.
///
/// * LSD: the bandwidth-extension mapping (last step of the inference path)
///   applied to upsampled narrow_mic, against the paired wide_mic.
/// * Domain AUC: full inference outputs on narrow_tel against wide_mic.
/// * EER / minDCF: exhaustive same/different-speaker trials over the
///   inference outputs on narrow_tel, scored by cosine on toy embeddings.
///
/// The baseline replaces every mapping with plain upsampling.
pub fn evaluate_system(system: &TrainedSystem, heldout: &ThreeDomainCorpus, seed: u64) -> Result<Evaluation> {
    system.validate()?;
    let bwe_name = system.inference_path.last().expect("validated path is non-empty");
    let bwe = &system.mappings[bwe_name];
    let wide = &heldout.wide_mic;

    let bwe_out = mapped_corpus(&heldout.narrow_mic, DomainTag::C_WideMic, |u| {
        bwe.map_waveform(&upsample(&u.waveform)?)
    })?;
    let bwe_base = mapped_corpus(&heldout.narrow_mic, DomainTag::C_WideMic, |u| upsample(&u.waveform))?;
    let with_keys = |mut c: DomainCorpus| {
        for (u, src) in c.utterances.iter_mut().zip(&heldout.narrow_mic.utterances) {
            u.pairing_key = src.pairing_key.clone();
        }
        c
    };
    let (bwe_out, bwe_base) = (with_keys(bwe_out), with_keys(bwe_base));

    let tel = &heldout.narrow_tel;
    let tel_out = mapped_corpus(tel, DomainTag::C_WideMic, |u| system.map_model_rate(&upsample(&u.waveform)?))?;
    let tel_base = mapped_corpus(tel, DomainTag::C_WideMic, |u| upsample(&u.waveform))?;

    let utts: Vec<(String, String)> = tel
        .utterances
        .iter()
        .map(|u| (u.utterance_id.clone(), u.speaker_id.clone()))
        .collect();
    let trials = TrialList::exhaustive(&utts);
    trials.validate()?;

    let (eer, dcf, scores) = verification(&tel_out, &trials)?;
    let (eer_b, dcf_b, baseline_scores) = verification(&tel_base, &trials)?;
    let system_metrics = Metrics {
        lsd_db: mean_lsd(&bwe_out, wide)?,
        domain_auc: domain_discriminability(&tel_out, wide, seed)?,
        eer_percent: eer,
        min_dcf: dcf,
    };
    let baseline = Metrics {
        lsd_db: mean_lsd(&bwe_base, wide)?,
        domain_auc: domain_discriminability(&tel_base, wide, seed)?,
        eer_percent: eer_b,
        min_dcf: dcf_b,
    };
    let report = EvalReport {
        format_version: REPORT_VERSION,
        label: String::new(),
        system: system_metrics,
        baseline,
        meta: EvalMeta {
            seed,
            p_target: P_TARGET,
            lsd_pairs: bwe_out.len(),
            domain_utterances: [tel.len(), wide.len()],
            trials: trials.trials.len(),
            target_trials: trials.labels().iter().filter(|&&l| l).count(),
        },
    };
    report.validate()?;
    Ok(Evaluation {
        report,
        trials,
        scores,
        baseline_scores,
    })
}
