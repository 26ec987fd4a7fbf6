//! Waveform generators and critics.
//!
//! [`MappingModel`] and [`ScoreModel`] pair an architecture with a flat
//! parameter vector. Besides the trainable convolutional networks, both offer
//! parameter-free stand-ins (identity, constant gain, constant or mean score)
//! that make the loss algebra checkable by hand.

mod checkpoint;
mod discriminator;
mod generator;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::seeds::{name_key, rng_for};
use crate::signals::{DomainTag, Waveform, MODEL_RATE};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use discriminator::{DiscriminatorConfig, MIN_FRAMES};
pub use generator::GeneratorConfig;

fn init_uniform(out: &mut Vec<f64>, count: usize, fan_in: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    out.extend((0..count).map(|_| rng.random_range(-bound..bound)));
}

/// Hands out consecutive slices of a flat parameter vector.
struct ParamCursor {
    params: Var,
    offset: usize,
}

impl ParamCursor {
    fn new(params: Var) -> Self {
        Self { params, offset: 0 }
    }

    fn take(&mut self, g: &mut Graph, n: usize, c: usize, l: usize) -> Var {
        let v = g.slice(self.params, self.offset, n, c, l);
        self.offset += n * c * l;
        v
    }

    /// Weight `(cout, cin, k)` followed by bias `(cout)`.
    fn conv(&mut self, g: &mut Graph, cout: usize, cin: usize, k: usize) -> (Var, Var) {
        let w = self.take(g, cout, cin, k);
        let b = self.take(g, 1, 1, cout);
        (w, b)
    }

    fn consumed(&self) -> usize {
        self.offset
    }
}

/// Rows of equal length as a `(n, 1, len)` tensor.
pub fn batch_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let first = rows.first().ok_or(Error::EmptyBatch("waveform batch"))?;
    if rows.iter().any(|r| r.len() != first.len()) {
        return Err(Error::LengthMismatch("batch rows differ in length".into()));
    }
    if first.is_empty() {
        return Err(Error::invalid("batch rows must be non-empty"));
    }
    Ok(Tensor::from_rows(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GeneratorArch {
    Conv(GeneratorConfig),
    Identity,
    /// Multiplies the input by a constant.
    Scale(f64),
}

/// A differentiable waveform-to-waveform map at the model rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingModel {
    pub architecture: GeneratorArch,
    pub parameters: Vec<f64>,
    pub source_domain: DomainTag,
    pub target_domain: DomainTag,
}

/// Seeded generator for `source -> target`. Parameters are drawn from a
/// stream keyed by the config seed and both domains, so the generators of one
/// objective differ even when they share a config.
pub fn build_generator(config: &GeneratorConfig, source: DomainTag, target: DomainTag) -> Result<MappingModel> {
    config.validate()?;
    let mut rng = rng_for(
        config.parameter_seed,
        &[name_key("generator"), name_key(source.letter()), name_key(target.letter())],
    );
    Ok(MappingModel {
        parameters: config.init_params(&mut rng),
        architecture: GeneratorArch::Conv(config.clone()),
        source_domain: source,
        target_domain: target,
    })
}

impl MappingModel {
    pub fn identity(source: DomainTag, target: DomainTag) -> Self {
        Self {
            architecture: GeneratorArch::Identity,
            parameters: Vec::new(),
            source_domain: source,
            target_domain: target,
        }
    }

    pub fn scale(factor: f64, source: DomainTag, target: DomainTag) -> Self {
        Self {
            architecture: GeneratorArch::Scale(factor),
            parameters: Vec::new(),
            source_domain: source,
            target_domain: target,
        }
    }

    pub fn n_params(&self) -> usize {
        match &self.architecture {
            GeneratorArch::Conv(cfg) => cfg.n_params(),
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let GeneratorArch::Conv(cfg) = &self.architecture {
            cfg.validate()?;
        }
        if self.parameters.len() != self.n_params() {
            return Err(Error::Format {
                what: "generator",
                reason: format!("{} parameters, architecture needs {}", self.parameters.len(), self.n_params()),
            });
        }
        Ok(())
    }

    /// Adds the parameters to `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Option<Var> {
        if self.parameters.is_empty() {
            return None;
        }
        let t = Tensor::flat(&self.parameters);
        Some(if trainable { g.param(t) } else { g.constant(t) })
    }

    /// Maps `x: (n, 1, len)` to `(n, 1, len)`.
    pub fn apply(&self, g: &mut Graph, params: Option<Var>, x: Var) -> Var {
        match &self.architecture {
            GeneratorArch::Conv(cfg) => cfg.build(g, params.expect("convolutional generator needs bound parameters"), x),
            GeneratorArch::Identity => x,
            GeneratorArch::Scale(k) => g.scale(x, *k),
        }
    }

    /// Gradient-free forward pass over a batch of equal-length rows.
    pub fn map_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let x = g.constant(batch_tensor(rows)?);
        let p = self.bind(&mut g, false);
        let y = self.apply(&mut g, p, x);
        Ok(g.value(y).rows())
    }

    /// Maps one model-rate waveform.
    pub fn map_waveform(&self, w: &Waveform) -> Result<Waveform> {
        w.require_rate(MODEL_RATE)?;
        let out = self.map_rows(&[w.samples().to_vec()])?;
        let y = out.into_iter().next().expect("one row in, one row out");
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("generator produced a non-finite sample at {i}")));
        }
        Waveform::new(y, MODEL_RATE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CriticArch {
    Periodic(DiscriminatorConfig),
    /// Scores every input with the same constant.
    Constant(f64),
    /// Scores an input by its sample mean.
    Mean,
}

/// A critic returning one score per input and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub architecture: CriticArch,
    pub parameters: Vec<f64>,
    pub domain: DomainTag,
}

pub fn build_discriminator(config: &DiscriminatorConfig, domain: DomainTag) -> Result<ScoreModel> {
    config.validate()?;
    let mut rng = rng_for(config.parameter_seed, &[name_key("discriminator"), name_key(domain.letter())]);
    Ok(ScoreModel {
        parameters: config.init_params(&mut rng),
        architecture: CriticArch::Periodic(config.clone()),
        domain,
    })
}

impl ScoreModel {
    pub fn constant(score: f64, domain: DomainTag) -> Self {
        Self {
            architecture: CriticArch::Constant(score),
            parameters: Vec::new(),
            domain,
        }
    }

    pub fn mean(domain: DomainTag) -> Self {
        Self {
            architecture: CriticArch::Mean,
            parameters: Vec::new(),
            domain,
        }
    }

    pub fn n_params(&self) -> usize {
        match &self.architecture {
            CriticArch::Periodic(cfg) => cfg.n_params(),
            _ => 0,
        }
    }

    pub fn n_periods(&self) -> usize {
        match &self.architecture {
            CriticArch::Periodic(cfg) => cfg.periods.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let CriticArch::Periodic(cfg) = &self.architecture {
            cfg.validate()?;
        }
        if self.parameters.len() != self.n_params() {
            return Err(Error::Format {
                what: "discriminator",
                reason: format!("{} parameters, architecture needs {}", self.parameters.len(), self.n_params()),
            });
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Option<Var> {
        if self.parameters.is_empty() {
            return None;
        }
        let t = Tensor::flat(&self.parameters);
        Some(if trainable { g.param(t) } else { g.constant(t) })
    }

    /// One `(n, 1, 1)` score tensor per period.
    pub fn scores(&self, g: &mut Graph, params: Option<Var>, x: Var) -> Result<Vec<Var>> {
        match &self.architecture {
            CriticArch::Periodic(cfg) => cfg.build(g, params.expect("periodic critic needs bound parameters"), x),
            CriticArch::Constant(c) => {
                let n = g.value(x).n;
                Ok(vec![g.constant(Tensor::filled(n, 1, 1, *c))])
            }
            CriticArch::Mean => Ok(vec![g.row_mean(x)]),
        }
    }

    /// Gradient-free scores, indexed `[period][batch element]`.
    pub fn score_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let x = g.constant(batch_tensor(rows)?);
        let p = self.bind(&mut g, false);
        let s = self.scores(&mut g, p, x)?;
        Ok(s.into_iter().map(|v| g.value(v).data.clone()).collect())
    }
}
