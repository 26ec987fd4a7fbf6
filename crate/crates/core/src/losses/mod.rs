//! Least-squares adversarial, supervised, cycle and identity losses, and the
//! four composite objectives built from them.
//!
//! Expectations are batch means. Multi-period critics contribute one
//! squared-error term per period and the terms are averaged over periods.

mod objective;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::{batch_tensor, MappingModel, ScoreModel};
use crate::signals::DomainTag;

pub use objective::{Batch, ModelSet, Objective, PairedRows, Side};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_sup: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    /// Use the batch mean of squared per-sample errors instead of the
    /// per-utterance Euclidean norm for the supervised term.
    #[serde(default)]
    pub sup_mse: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sup: 0.1,
            lambda_cyc: 10.0,
            lambda_id: 5.0,
            sup_mse: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_sup", self.lambda_sup),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_id", self.lambda_id),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Who minimizes a loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Party {
    Generators,
    Critic(DomainTag),
}

impl Party {
    pub fn label(self) -> String {
        match self {
            Party::Generators => "G".into(),
            Party::Critic(d) => format!("D_{}", d.letter()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub name: String,
    pub party: Party,
    pub weight: f64,
    /// Unweighted value.
    pub value: f64,
}

/// Every named component of an objective and the weighted total of each party.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub terms: Vec<LossTerm>,
    pub totals: BTreeMap<Party, f64>,
}

impl LossBreakdown {
    pub(crate) fn from_terms(terms: Vec<LossTerm>, totals: BTreeMap<Party, f64>) -> Self {
        Self { terms, totals }
    }

    pub fn term(&self, name: &str) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.value)
    }

    pub fn total(&self, party: Party) -> Option<f64> {
        self.totals.get(&party).copied()
    }

    pub fn generator_total(&self) -> Option<f64> {
        self.total(Party::Generators)
    }

    /// `sum weight * value` over the terms of `party`, recomputed from the parts.
    pub fn weighted_sum(&self, party: Party) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.party == party)
            .map(|t| t.weight * t.value)
            .sum()
    }

    /// Largest gap between a reported total and its recomputed weighted sum.
    pub fn decomposition_error(&self) -> f64 {
        self.totals
            .iter()
            .map(|(p, total)| (total - self.weighted_sum(*p)).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.terms.iter().all(|t| t.value.is_finite()) && self.totals.values().all(|v| v.is_finite())
    }

    /// Flat `name -> value` map: `"<party>/<term>"` for components and
    /// `"total/<party>"` for totals.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m: BTreeMap<String, f64> = self
            .terms
            .iter()
            .map(|t| (format!("{}/{}", t.party.label(), t.name), t.value))
            .collect();
        for (p, v) in &self.totals {
            m.insert(format!("total/{}", p.label()), *v);
        }
        m
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_map()).expect("a map of floats always serializes")
    }
}

pub(crate) fn lsgan_critic(g: &mut Graph, real: &[Var], fake: &[Var]) -> Var {
    let w = 1.0 / real.len() as f64;
    let mut parts = Vec::with_capacity(2 * real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let r1 = g.add_scalar(r, -1.0);
        let r2 = g.square(r1);
        parts.push((g.mean(r2), w));
        let f2 = g.square(f);
        parts.push((g.mean(f2), w));
    }
    g.weighted_sum(&parts)
}

pub(crate) fn lsgan_fake_only(g: &mut Graph, fake: &[Var]) -> Var {
    let w = 1.0 / fake.len() as f64;
    let parts: Vec<_> = fake
        .iter()
        .map(|&f| {
            let f2 = g.square(f);
            (g.mean(f2), w)
        })
        .collect();
    g.weighted_sum(&parts)
}

pub(crate) fn lsgan_generator(g: &mut Graph, fake: &[Var]) -> Var {
    let w = 1.0 / fake.len() as f64;
    let parts: Vec<_> = fake
        .iter()
        .map(|&f| {
            let d = g.add_scalar(f, -1.0);
            let d2 = g.square(d);
            (g.mean(d2), w)
        })
        .collect();
    g.weighted_sum(&parts)
}

pub(crate) fn supervised(g: &mut Graph, target: Var, prediction: Var, mse: bool) -> Var {
    let diff = g.sub(target, prediction);
    if mse {
        let sq = g.square(diff);
        g.mean(sq)
    } else {
        let norms = g.row_l2(diff);
        g.mean(norms)
    }
}

pub(crate) fn l1_distance(g: &mut Graph, x: Var, y: Var) -> Var {
    let diff = g.sub(x, y);
    let norms = g.row_l1(diff);
    g.mean(norms)
}

fn input(g: &mut Graph, rows: &[Vec<f64>], what: &'static str) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch(what));
    }
    Ok(g.constant(batch_tensor(rows)?))
}

fn mapped(g: &mut Graph, model: &MappingModel, x: Var) -> Var {
    let p = model.bind(g, false);
    model.apply(g, p, x)
}

fn scored(g: &mut Graph, critic: &ScoreModel, x: Var) -> Result<Vec<Var>> {
    let p = critic.bind(g, false);
    critic.scores(g, p, x)
}

/// Critic loss: `mean (D(real) - 1)^2 + mean D(fake)^2`, averaged over periods.
pub fn adv_loss_d(critic: &ScoreModel, real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let r = input(&mut g, real, "real batch")?;
    let f = input(&mut g, fake, "fake batch")?;
    let sr = scored(&mut g, critic, r)?;
    let sf = scored(&mut g, critic, f)?;
    let loss = lsgan_critic(&mut g, &sr, &sf);
    Ok(g.scalar(loss))
}

/// Generator loss: `mean (1 - D(fake))^2`, averaged over periods.
pub fn adv_loss_g(critic: &ScoreModel, fake: &[Vec<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let f = input(&mut g, fake, "fake batch")?;
    let s = scored(&mut g, critic, f)?;
    let loss = lsgan_generator(&mut g, &s);
    Ok(g.scalar(loss))
}

fn check_paired(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Unpaired(format!("{} source rows vs {} target rows", a.len(), b.len())));
    }
    if let Some(i) = a.iter().zip(b).position(|(x, y)| x.len() != y.len()) {
        return Err(Error::LengthMismatch(format!(
            "pair {i}: {} vs {} samples",
            a[i].len(),
            b[i].len()
        )));
    }
    Ok(())
}

/// Batch mean of `||b - G(a)||_2` over aligned pairs.
pub fn sup_loss(generator: &MappingModel, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    sup_loss_with(generator, a, b, false)
}

pub fn sup_loss_with(generator: &MappingModel, a: &[Vec<f64>], b: &[Vec<f64>], mse: bool) -> Result<f64> {
    check_paired(a, b)?;
    let mut g = Graph::new();
    let x = input(&mut g, a, "source batch")?;
    let y = input(&mut g, b, "target batch")?;
    let pred = mapped(&mut g, generator, x);
    let loss = supervised(&mut g, y, pred, mse);
    Ok(g.scalar(loss))
}

/// `mean ||a - G_ba(G_ab(a))||_1 + mean ||b - G_ab(G_ba(b))||_1`.
pub fn cycle_loss(g_ab: &MappingModel, g_ba: &MappingModel, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let x = input(&mut g, a, "A batch")?;
    let y = input(&mut g, b, "B batch")?;
    let xb = mapped(&mut g, g_ab, x);
    let xa = mapped(&mut g, g_ba, xb);
    let yb = mapped(&mut g, g_ba, y);
    let ya = mapped(&mut g, g_ab, yb);
    let l1 = l1_distance(&mut g, x, xa);
    let l2 = l1_distance(&mut g, y, ya);
    Ok(g.scalar(l1) + g.scalar(l2))
}

/// `mean ||a - G_ba(a)||_1 + mean ||b - G_ab(b)||_1`.
pub fn identity_loss(g_ab: &MappingModel, g_ba: &MappingModel, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let x = input(&mut g, a, "A batch")?;
    let y = input(&mut g, b, "B batch")?;
    let xa = mapped(&mut g, g_ba, x);
    let yb = mapped(&mut g, g_ab, y);
    let l1 = l1_distance(&mut g, x, xa);
    let l2 = l1_distance(&mut g, y, yb);
    Ok(g.scalar(l1) + g.scalar(l2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::DomainTag::{A_NarrowTel as A, B_NarrowMic as B};

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn adversarial_terms_with_stub_critics() {
        let half = ScoreModel::constant(0.5, B);
        close(adv_loss_d(&half, &[vec![0.3]], &[vec![0.1]]).unwrap(), 0.5);
        close(adv_loss_g(&half, &[vec![0.3]]).unwrap(), 0.25);
        let mean = ScoreModel::mean(B);
        close(
            adv_loss_d(&mean, &[vec![1.0, 1.0], vec![0.0, 0.0]], &[vec![0.5, 0.5]]).unwrap(),
            0.75,
        );
        close(adv_loss_g(&mean, &[vec![0.2, 0.2], vec![0.8, 0.8]]).unwrap(), 0.34);
    }

    #[test]
    fn supervised_term_is_an_unsquared_norm() {
        let id = MappingModel::identity(A, B);
        close(sup_loss(&id, &[vec![0.0; 4]], &[vec![1.0; 4]]).unwrap(), 2.0);
        close(sup_loss_with(&id, &[vec![0.0; 4]], &[vec![1.0; 4]], true).unwrap(), 1.0);
        assert!(matches!(sup_loss(&id, &[vec![0.0]], &[]), Err(Error::Unpaired(_))));
        assert!(matches!(
            sup_loss(&id, &[vec![0.0]], &[vec![0.0, 1.0]]),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn empty_batches_are_rejected() {
        let id = MappingModel::identity(A, B);
        let half = ScoreModel::constant(0.5, B);
        assert!(matches!(adv_loss_g(&half, &[]), Err(Error::EmptyBatch(_))));
        assert!(matches!(adv_loss_d(&half, &[vec![1.0]], &[]), Err(Error::EmptyBatch(_))));
        assert!(matches!(cycle_loss(&id, &id, &[], &[vec![1.0]]), Err(Error::EmptyBatch(_))));
        assert!(matches!(identity_loss(&id, &id, &[vec![1.0]], &[]), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn mismatched_lengths_within_a_batch_are_rejected() {
        let half = ScoreModel::constant(0.5, B);
        assert!(matches!(
            adv_loss_d(&half, &[vec![1.0], vec![1.0, 2.0]], &[vec![0.0]]),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            lambda_cyc: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let nan = LossWeights {
            lambda_id: f64::NAN,
            ..Default::default()
        };
        assert!(nan.validate().is_err());
    }
}
