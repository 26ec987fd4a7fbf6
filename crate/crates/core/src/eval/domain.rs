use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::spectral::embed_utterance;
use crate::error::{Error, Result};
use crate::seeds::{name_key, rng_for};
use crate::signals::{to_model_rate, DomainCorpus};

/// Minimum utterances per corpus for a train/test split.
pub const MIN_PER_SIDE: usize = 4;
const RIDGE: f64 = 1e-2;

/// Train/test halves of one corpus. When the corpus has at least two
/// speakers the halves are speaker-disjoint, so a classifier cannot succeed
/// by recognizing speakers. The permutation depends only on `seed` and the
/// corpus's own utterance ids.
fn split(corpus: &DomainCorpus, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let ids: String = corpus.utterances.iter().map(|u| u.utterance_id.as_str()).collect::<Vec<_>>().join("\n");
    let mut rng = rng_for(seed, &[name_key("domain-split"), name_key(&ids)]);
    let speakers: Vec<&str> = corpus.speakers().into_iter().collect();
    if speakers.len() >= 2 {
        let mut order = speakers.clone();
        order.shuffle(&mut rng);
        let train: BTreeSet<&str> = order[..order.len() / 2].iter().copied().collect();
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, u) in corpus.utterances.iter().enumerate() {
            if train.contains(u.speaker_id.as_str()) {
                tr.push(i);
            } else {
                te.push(i);
            }
        }
        (tr, te)
    } else {
        let mut idx: Vec<usize> = (0..corpus.len()).collect();
        idx.shuffle(&mut rng);
        let te = idx.split_off(idx.len() / 2);
        (idx, te)
    }
}

fn embed_all(corpus: &DomainCorpus) -> Result<Vec<Vec<f64>>> {
    corpus
        .utterances
        .iter()
        .map(|u| embed_utterance(&to_model_rate(&u.waveform)?))
        .collect()
}

/// Probability that a random `x` score exceeds a random `y` score; ties
/// count one half.
pub fn mann_whitney_auc(x: &[f64], y: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in x {
        for b in y {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (x.len() * y.len()) as f64
}

/// Shrinkage LDA direction separating `x` (positive) from `y`.
fn lda_direction(x: &[&Vec<f64>], y: &[&Vec<f64>]) -> Result<DVector<f64>> {
    let d = x[0].len();
    let mean = |rows: &[&Vec<f64>]| {
        let mut m = DVector::zeros(d);
        for r in rows {
            m += DVector::from_column_slice(r);
        }
        m / rows.len() as f64
    };
    let (mx, my) = (mean(x), mean(y));
    let scatter = |rows: &[&Vec<f64>], m: &DVector<f64>| {
        let mut s = DMatrix::zeros(d, d);
        for r in rows {
            let c = DVector::from_column_slice(r) - m;
            s += &c * c.transpose();
        }
        s
    };
    // Sum of the two scatters is exactly symmetric in the argument order.
    let mut cov = scatter(x, &mx) + scatter(y, &my);
    cov /= (x.len() + y.len()) as f64;
    let lambda = RIDGE * cov.trace() / d as f64 + 1e-12;
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::invalid("domain classifier covariance is not positive definite"))?;
    Ok(chol.solve(&(mx - my)))
}

/// Held-out ROC-AUC of a linear classifier separating `x` from `y` on
/// utterance embeddings; 0.5 means the domains are indistinguishable.
pub fn domain_discriminability(x: &DomainCorpus, y: &DomainCorpus, seed: u64) -> Result<f64> {
    for c in [x, y] {
        if c.len() < MIN_PER_SIDE {
            return Err(Error::invalid(format!(
                "{} has {} utterances; domain discriminability needs at least {MIN_PER_SIDE}",
                c.domain,
                c.len()
            )));
        }
    }
    let (ex, ey) = (embed_all(x)?, embed_all(y)?);
    let (xtr, xte) = split(x, seed);
    let (ytr, yte) = split(y, seed);
    let xt: Vec<&Vec<f64>> = xtr.iter().map(|&i| &ex[i]).collect();
    let yt: Vec<&Vec<f64>> = ytr.iter().map(|&i| &ey[i]).collect();
    let w = lda_direction(&xt, &yt)?;
    let score = |v: &Vec<f64>| w.dot(&DVector::from_column_slice(v));
    let sx: Vec<f64> = xte.iter().map(|&i| score(&ex[i])).collect();
    let sy: Vec<f64> = yte.iter().map(|&i| score(&ey[i])).collect();
    Ok(mann_whitney_auc(&sx, &sy))
}
