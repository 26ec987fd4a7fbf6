use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::{Batch, Objective, Rows};
use crate::signals::{to_model_rate, DomainCorpus, DomainTag};

/// Model-rate training signals of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub unpaired: BTreeMap<DomainTag, Rows>,
    /// Aligned `(source, target)` signals of the paired roles.
    pub paired: Option<(Rows, Rows)>,
}

fn model_rate_rows(c: &DomainCorpus) -> Result<Rows> {
    c.utterances
        .iter()
        .map(|u| Ok(to_model_rate(&u.waveform)?.into_samples()))
        .collect()
}

/// Index of the target utterance sharing each source utterance's pairing key.
/// Several source utterances may map to the same target.
pub fn pairing_map(source: &DomainCorpus, target: &DomainCorpus) -> Result<Vec<usize>> {
    let mut by_key = BTreeMap::new();
    for (j, u) in target.utterances.iter().enumerate() {
        let key = u
            .pairing_key
            .as_deref()
            .ok_or_else(|| Error::Unpaired(format!("target utterance {} has no pairing key", u.utterance_id)))?;
        if by_key.insert(key, j).is_some() {
            return Err(Error::Unpaired(format!("pairing key {key} is not unique in {}", target.domain)));
        }
    }
    source
        .utterances
        .iter()
        .map(|u| {
            u.pairing_key
                .as_deref()
                .and_then(|k| by_key.get(k).copied())
                .ok_or_else(|| Error::Unpaired(format!("source utterance {} has no partner", u.utterance_id)))
        })
        .collect()
}

impl TaskData {
    /// Converts resolved role corpora to model rate and aligns paired roles.
    pub fn prepare(objective: &Objective, corpora: &BTreeMap<DomainTag, DomainCorpus>) -> Result<Self> {
        let get = |d: DomainTag| {
            corpora
                .get(&d)
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::Plan(format!("{} has no training data for {d}", objective.name())))
        };
        let mut unpaired = BTreeMap::new();
        for d in objective.unpaired_domains() {
            unpaired.insert(d, model_rate_rows(get(d)?)?);
        }
        let paired = match objective.paired_roles() {
            Some((s, t)) => {
                let (src, tgt) = (get(s)?, get(t)?);
                let map = pairing_map(src, tgt)?;
                let src_rows = match unpaired.get(&s) {
                    Some(rows) => rows.clone(),
                    None => model_rate_rows(src)?,
                };
                let tgt_rows = model_rate_rows(tgt)?;
                let mut target = Vec::with_capacity(map.len());
                for (i, &j) in map.iter().enumerate() {
                    if src_rows[i].len() != tgt_rows[j].len() {
                        return Err(Error::LengthMismatch(format!(
                            "paired utterances {} and {} differ in model-rate length",
                            src.utterances[i].utterance_id, tgt.utterances[j].utterance_id
                        )));
                    }
                    target.push(tgt_rows[j].clone());
                }
                Some((src_rows, target))
            }
            None => None,
        };
        Ok(Self { unpaired, paired })
    }

    /// Fresh batch of random fixed-length crops. Paired rows are cropped at
    /// identical positions.
    pub fn sample(&self, objective: &Objective, batch_size: usize, segment: usize, rng: &mut impl Rng) -> Result<Batch> {
        let mut batch = Batch::default();
        for d in objective.unpaired_domains() {
            let pool = self
                .unpaired
                .get(&d)
                .ok_or_else(|| Error::Plan(format!("no training data for {d}")))?;
            let rows = (0..batch_size)
                .map(|_| {
                    let row = &pool[rng.random_range(0..pool.len())];
                    let off = crop_offset(row.len(), segment, rng)?;
                    Ok(row[off..off + segment].to_vec())
                })
                .collect::<Result<Rows>>()?;
            batch.unpaired.insert(d, rows);
        }
        if objective.paired_roles().is_some() {
            let (src, tgt) = self
                .paired
                .as_ref()
                .ok_or_else(|| Error::Unpaired(format!("{} needs paired data", objective.name())))?;
            let mut s_rows = Vec::with_capacity(batch_size);
            let mut t_rows = Vec::with_capacity(batch_size);
            for _ in 0..batch_size {
                let i = rng.random_range(0..src.len());
                let off = crop_offset(src[i].len(), segment, rng)?;
                s_rows.push(src[i][off..off + segment].to_vec());
                t_rows.push(tgt[i][off..off + segment].to_vec());
            }
            batch = batch.paired(s_rows, t_rows);
        }
        Ok(batch)
    }
}

fn crop_offset(len: usize, segment: usize, rng: &mut impl Rng) -> Result<usize> {
    if len < segment {
        return Err(Error::LengthMismatch(format!(
            "utterance of {len} samples is shorter than the {segment}-sample segment"
        )));
    }
    Ok(rng.random_range(0..=len - segment))
}
