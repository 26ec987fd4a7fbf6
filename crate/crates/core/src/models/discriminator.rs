use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_uniform, ParamCursor};
use crate::autodiff::{ConvGeom, Graph, Var};
use crate::error::{Error, Result};

/// Frames (samples per column) every period view must provide.
pub const MIN_FRAMES: usize = 9;
const LEAKY_SLOPE: f64 = 0.1;

/// Multi-period least-squares critic.
///
/// For each period `p` the waveform is reflect-padded to a multiple of `p`,
/// read as a `frames x p` array and reduced by three strided convolutions
/// along frames (columns share weights) and a global mean to one score.
/// Every period owns a separate sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub periods: Vec<usize>,
    pub initial_channels: usize,
    pub parameter_seed: u64,
}

impl DiscriminatorConfig {
    /// Single-period critic used by supervised objectives.
    pub fn supervised() -> Self {
        Self {
            periods: vec![1],
            initial_channels: 4,
            parameter_seed: 0,
        }
    }

    /// Multi-period critic used by the unsupervised and joint objectives.
    pub fn unsupervised() -> Self {
        Self {
            periods: vec![2, 3, 5],
            initial_channels: 8,
            parameter_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods.is_empty() || self.periods.contains(&0) {
            return Err(Error::Config("discriminator periods must be non-empty and >= 1".into()));
        }
        let mut sorted = self.periods.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.periods.len() {
            return Err(Error::Config("discriminator periods must be distinct".into()));
        }
        if self.initial_channels < 1 {
            return Err(Error::Config("discriminator needs at least one channel".into()));
        }
        Ok(())
    }

    /// Shortest accepted input.
    pub fn min_input_len(&self) -> usize {
        self.periods.iter().max().copied().unwrap_or(1) * MIN_FRAMES
    }

    fn params_per_period(&self) -> usize {
        let c0 = self.initial_channels;
        (c0 * 5 + c0) + (2 * c0 * c0 * 5 + 2 * c0) + (2 * c0 * 3 + 1)
    }

    pub fn n_params(&self) -> usize {
        self.periods.len() * self.params_per_period()
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let c0 = self.initial_channels;
        let mut p = Vec::with_capacity(self.n_params());
        for _ in &self.periods {
            init_uniform(&mut p, c0 * 5 + c0, 5, rng);
            init_uniform(&mut p, 2 * c0 * c0 * 5 + 2 * c0, c0 * 5, rng);
            init_uniform(&mut p, 2 * c0 * 3 + 1, 2 * c0 * 3, rng);
        }
        p
    }

    pub(crate) fn build(&self, g: &mut Graph, params: Var, x: Var) -> Result<Vec<Var>> {
        let len = g.value(x).l;
        if len < self.min_input_len() {
            return Err(Error::LengthMismatch(format!(
                "discriminator input of {len} samples is shorter than {}",
                self.min_input_len()
            )));
        }
        let c0 = self.initial_channels;
        let mut cur = ParamCursor::new(params);
        let mut scores = Vec::with_capacity(self.periods.len());
        for &p in &self.periods {
            let padded = g.pad_reflect(x, (p - len % p) % p);
            let strided = |kernel, stride, padding| ConvGeom {
                kernel,
                stride,
                dilation: 1,
                padding,
                period: p,
            };
            let (w1, b1) = cur.conv(g, c0, 1, 5);
            let (w2, b2) = cur.conv(g, 2 * c0, c0, 5);
            let (w3, b3) = cur.conv(g, 1, 2 * c0, 3);
            let h = g.conv(padded, w1, b1, strided(5, 3, 2));
            let h = g.leaky_relu(h, LEAKY_SLOPE);
            let h = g.conv(h, w2, b2, strided(5, 3, 2));
            let h = g.leaky_relu(h, LEAKY_SLOPE);
            let h = g.conv(h, w3, b3, strided(3, 1, 1));
            scores.push(g.row_mean(h));
        }
        Ok(scores)
    }
}
