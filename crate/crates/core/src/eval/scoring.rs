use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const P_TARGET: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enroll_utterance_id: String,
    pub test_utterance_id: String,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    /// Every unordered pair of distinct utterances; same speaker means target.
    pub fn exhaustive(utterances: &[(String, String)]) -> Self {
        let mut trials = Vec::new();
        for (i, (ei, si)) in utterances.iter().enumerate() {
            for (ej, sj) in &utterances[i + 1..] {
                trials.push(Trial {
                    enroll_utterance_id: ei.clone(),
                    test_utterance_id: ej.clone(),
                    is_target: si == sj,
                });
            }
        }
        Self { trials }
    }

    pub fn labels(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.is_target).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_classes(&self.labels())
    }

    /// Text form: one `enroll_id test_id target|nontarget` line per trial.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.trials {
            let label = if t.is_target { "target" } else { "nontarget" };
            let _ = writeln!(s, "{} {} {label}", t.enroll_utterance_id, t.test_utterance_id);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |n: usize, reason: &str| Error::Format {
            what: "trial list",
            reason: format!("line {}: {reason}", n + 1),
        };
        let mut trials = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let [enroll, test, label] = fields[..] else {
                return Err(bad(n, "expected three fields"));
            };
            let is_target = match label {
                "target" => true,
                "nontarget" => false,
                other => return Err(bad(n, &format!("unknown label `{other}`"))),
            };
            trials.push(Trial {
                enroll_utterance_id: enroll.to_string(),
                test_utterance_id: test.to_string(),
                is_target,
            });
        }
        if trials.is_empty() {
            return Err(Error::Format {
                what: "trial list",
                reason: "no trials".into(),
            });
        }
        Ok(Self { trials })
    }
}

/// Score file text: one `enroll_id test_id score` line per trial.
pub fn scores_to_text(trials: &TrialList, scores: &[f64]) -> String {
    let mut s = String::new();
    for (t, v) in trials.trials.iter().zip(scores) {
        let _ = writeln!(s, "{} {} {v}", t.enroll_utterance_id, t.test_utterance_id);
    }
    s
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine score of every trial, in trial order.
pub fn score_trials(embeddings: &BTreeMap<String, Vec<f64>>, trials: &TrialList) -> Result<Vec<f64>> {
    let get = |id: &str| {
        embeddings
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no embedding for utterance {id}")))
    };
    trials
        .trials
        .iter()
        .map(|t| Ok(cosine(get(&t.enroll_utterance_id)?, get(&t.test_utterance_id)?)))
        .collect()
}

fn check_classes(labels: &[bool]) -> Result<()> {
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::invalid("scoring needs at least one target and one non-target trial"));
    }
    Ok(())
}

/// `(far, frr)` at thresholds `-inf`, every midpoint between adjacent
/// distinct scores, and `+inf`; a trial is accepted when its score exceeds
/// the threshold.
pub fn error_rates(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {s}")));
    }
    check_classes(labels)?;
    let n_tar = labels.iter().filter(|&&l| l).count() as f64;
    let n_non = labels.len() as f64 - n_tar;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (mut miss, mut fa) = (0usize, labels.len() - n_tar as usize);
    let mut out = vec![(fa as f64 / n_non, 0.0)];
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                miss += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        out.push((fa as f64 / n_non, miss as f64 / n_tar));
    }
    Ok(out)
}

/// Equal error rate in percent, interpolating the FAR/FRR crossing linearly
/// between adjacent thresholds.
pub fn compute_eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let rates = error_rates(scores, labels)?;
    for w in rates.windows(2) {
        let (far0, frr0) = w[0];
        let (far1, frr1) = w[1];
        let d0 = frr0 - far0;
        let d1 = frr1 - far1;
        if d0 == 0.0 {
            return Ok(100.0 * far0);
        }
        if d0 < 0.0 && d1 >= 0.0 {
            let t = d0 / (d0 - d1);
            return Ok(100.0 * (far0 + t * (far1 - far0)));
        }
    }
    let (far, _) = rates[rates.len() - 1];
    Ok(100.0 * far)
}

/// Minimum normalized detection cost with unit costs:
/// `min_t [p FRR(t) + (1 - p) FAR(t)] / min(p, 1 - p)`.
pub fn compute_min_dcf(scores: &[f64], labels: &[bool], p_target: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::invalid(format!("p_target must lie in (0, 1), got {p_target}")));
    }
    let norm = p_target.min(1.0 - p_target);
    Ok(error_rates(scores, labels)?
        .into_iter()
        .map(|(far, frr)| (p_target * frr + (1.0 - p_target) * far) / norm)
        .fold(f64::INFINITY, f64::min))
}
