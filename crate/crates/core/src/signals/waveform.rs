use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Narrowband storage rate of the telephone and narrowband-microphone domains.
pub const NARROWBAND_RATE: u32 = 8000;
/// Wideband storage rate, and the rate every model operates at.
pub const MODEL_RATE: u32 = 16000;

/// A mono signal at a fixed sampling rate.
///
/// Samples are always finite and the signal is never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn require_rate(&self, expected: u32) -> Result<()> {
        if self.sample_rate_hz == expected {
            Ok(())
        } else {
            Err(Error::SampleRate {
                expected,
                found: self.sample_rate_hz,
            })
        }
    }
}
