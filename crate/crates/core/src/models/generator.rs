use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_uniform, ParamCursor};
use crate::autodiff::{ConvGeom, Graph, Var};
use crate::error::{Error, Result};

/// Dilated convolutional waveform generator.
///
/// `conv_in` lifts the signal to `channels` feature maps, each block adds
/// `conv1x1(tanh(conv_k,d(h)))` back onto `h`, and `conv_out` projects to one
/// output channel. All convolutions are stride 1 with centered zero padding,
/// so the output has exactly the input length. The network predicts the full
/// output signal, not a correction added to its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_blocks: usize,
    pub channels: usize,
    pub kernel_size: usize,
    /// Dilation of block `i` is `dilation_schedule[i % len]`.
    pub dilation_schedule: Vec<usize>,
    pub parameter_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_blocks: 5,
            channels: 8,
            kernel_size: 9,
            dilation_schedule: vec![1, 2, 4, 8, 16],
            parameter_seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks < 1 {
            return Err(Error::Config("generator needs at least one block".into()));
        }
        if self.channels < 4 {
            return Err(Error::Config(format!("generator channels {} < 4", self.channels)));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("generator kernel size {} must be odd", self.kernel_size)));
        }
        if self.dilation_schedule.is_empty() || self.dilation_schedule.contains(&0) {
            return Err(Error::Config("dilation schedule must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        self.dilation_schedule[block % self.dilation_schedule.len()]
    }

    /// Number of input samples that influence one output sample.
    pub fn receptive_field(&self) -> usize {
        let dil_sum: usize = (0..self.n_blocks).map(|b| self.dilation(b)).sum();
        1 + (self.kernel_size - 1) * (dil_sum + 2)
    }

    /// Rejects segments that do not exceed the receptive field.
    pub fn check_segment(&self, segment_len: usize) -> Result<()> {
        let rf = self.receptive_field();
        if rf >= segment_len {
            return Err(Error::Config(format!(
                "generator receptive field {rf} is not below the segment length {segment_len}"
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        let (c, k) = (self.channels, self.kernel_size);
        let conv_in = c * k + c;
        let block = c * c * k + c + c * c + c;
        let conv_out = c * k + 1;
        conv_in + self.n_blocks * block + conv_out
    }

    /// Uniform `±1/sqrt(fan_in)` weights and biases, in layer order.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let (c, k) = (self.channels, self.kernel_size);
        let mut p = Vec::with_capacity(self.n_params());
        init_uniform(&mut p, c * k + c, k, rng);
        for _ in 0..self.n_blocks {
            init_uniform(&mut p, c * c * k + c, c * k, rng);
            init_uniform(&mut p, c * c + c, c, rng);
        }
        init_uniform(&mut p, c * k + 1, c * k, rng);
        p
    }

    pub(crate) fn build(&self, g: &mut Graph, params: Var, x: Var) -> Var {
        let (c, k) = (self.channels, self.kernel_size);
        let mut cur = ParamCursor::new(params);
        let (w, b) = cur.conv(g, c, 1, k);
        let mut h = g.conv(x, w, b, ConvGeom::same(k, 1));
        for blk in 0..self.n_blocks {
            let (wd, bd) = cur.conv(g, c, c, k);
            let (w1, b1) = cur.conv(g, c, c, 1);
            let z = g.conv(h, wd, bd, ConvGeom::same(k, self.dilation(blk)));
            let z = g.tanh(z);
            let z = g.conv(z, w1, b1, ConvGeom::same(1, 1));
            h = g.add(h, z);
        }
        let (w, b) = cur.conv(g, 1, c, k);
        let y = g.conv(h, w, b, ConvGeom::same(k, 1));
        debug_assert_eq!(cur.consumed(), self.n_params());
        y
    }
}
