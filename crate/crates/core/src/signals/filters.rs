//! Linear-phase FIR design, 2x resampling and the synthetic telephone channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::waveform::{Waveform, MODEL_RATE, NARROWBAND_RATE};
use crate::error::{Error, Result};

const RESAMPLER_TAPS: usize = 161;
const RESAMPLER_CUTOFF_HZ: f64 = 3700.0;
const RESAMPLER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn kaiser_window(taps: usize, beta: f64) -> Vec<f64> {
    if taps == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    let m = (taps - 1) as f64;
    let mut w: Vec<f64> = (0..taps)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect();
    mirror(&mut w);
    w
}

/// Force exact symmetry `v[k] == v[len - 1 - k]`.
fn mirror(v: &mut [f64]) {
    let n = v.len();
    for k in 0..n / 2 {
        v[n - 1 - k] = v[k];
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc lowpass with unit DC gain. `taps` must be odd so the
/// group delay is an integer number of samples.
pub fn design_lowpass(taps: usize, cutoff_hz: f64, rate_hz: f64, beta: f64) -> Vec<f64> {
    assert!(taps % 2 == 1, "linear-phase design needs an odd tap count");
    let fc = cutoff_hz / rate_hz;
    let mid = (taps / 2) as f64;
    let window = kaiser_window(taps, beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| 2.0 * fc * sinc(2.0 * fc * (n as f64 - mid)) * window[n])
        .collect();
    mirror(&mut h);
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|c| *c /= dc);
    h
}

/// Windowed-sinc bandpass built as the difference of two lowpass prototypes.
pub fn design_bandpass(taps: usize, low_hz: f64, high_hz: f64, rate_hz: f64, beta: f64) -> Vec<f64> {
    assert!(taps % 2 == 1, "linear-phase design needs an odd tap count");
    let (fl, fh) = (low_hz / rate_hz, high_hz / rate_hz);
    let mid = (taps / 2) as f64;
    let window = kaiser_window(taps, beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - mid;
            (2.0 * fh * sinc(2.0 * fh * t) - 2.0 * fl * sinc(2.0 * fl * t)) * window[n]
        })
        .collect();
    mirror(&mut h);
    h
}

/// Centered ("same") convolution with zero padding: output length equals
/// input length and an odd-length linear-phase filter introduces no delay.
pub fn filter_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let half = h.len() / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            // y[i] = sum_k h[k] x[i + half - k]
            let k_lo = (i + half + 1).saturating_sub(n);
            let k_hi = (i + half).min(h.len() - 1);
            (k_lo..=k_hi).map(|k| h[k] * x[i + half - k]).sum()
        })
        .collect()
}

fn resampler_filter() -> Vec<f64> {
    design_lowpass(
        RESAMPLER_TAPS,
        RESAMPLER_CUTOFF_HZ,
        MODEL_RATE as f64,
        RESAMPLER_BETA,
    )
}

/// Anti-aliased decimation 16 kHz -> 8 kHz. Output length is `ceil(len / 2)`.
pub fn lowpass_downsample(w: &Waveform) -> Result<Waveform> {
    w.require_rate(MODEL_RATE)?;
    let filtered = filter_same(w.samples(), &resampler_filter());
    let out: Vec<f64> = filtered.into_iter().step_by(2).collect();
    Waveform::new(out, NARROWBAND_RATE)
}

/// Interpolation 8 kHz -> 16 kHz by zero stuffing and the same lowpass
/// (gain 2). Output sample `2m` is time-aligned with input sample `m`.
pub fn upsample(w: &Waveform) -> Result<Waveform> {
    w.require_rate(NARROWBAND_RATE)?;
    let h = resampler_filter();
    let x = w.samples();
    let n_out = 2 * x.len();
    let half = h.len() / 2;
    // Polyphase evaluation of filter_same over the zero-stuffed signal.
    let out: Vec<f64> = (0..n_out)
        .map(|i| {
            let k_lo = (i + half + 1).saturating_sub(n_out);
            let k_hi = (i + half).min(h.len() - 1);
            let mut acc = 0.0;
            for k in k_lo..=k_hi {
                let j = i + half - k;
                if j % 2 == 0 {
                    acc += h[k] * x[j / 2];
                }
            }
            2.0 * acc
        })
        .collect();
    Waveform::new(out, MODEL_RATE)
}

/// Model-rate view: narrowband signals are upsampled, wideband returned as is.
pub fn to_model_rate(w: &Waveform) -> Result<Waveform> {
    match w.sample_rate_hz() {
        MODEL_RATE => Ok(w.clone()),
        NARROWBAND_RATE => upsample(w),
        other => Err(Error::SampleRate {
            expected: MODEL_RATE,
            found: other,
        }),
    }
}

/// Parameters of the synthetic telephone channel applied to 8 kHz speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelephoneChannel {
    pub low_hz: f64,
    pub high_hz: f64,
    pub taps: usize,
    pub kaiser_beta: f64,
    /// Drive of the `tanh(drive * x) / drive` compressor.
    pub drive: f64,
    /// Channel noise level relative to the compressed signal; `None` disables noise.
    pub snr_db: Option<f64>,
}

impl Default for TelephoneChannel {
    fn default() -> Self {
        Self {
            low_hz: 300.0,
            high_hz: 3400.0,
            taps: 129,
            kaiser_beta: 5.0,
            drive: 1.2,
            snr_db: Some(35.0),
        }
    }
}

impl TelephoneChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < NARROWBAND_RATE as f64 / 2.0) {
            return Err(Error::Config(format!(
                "telephone band {}..{} Hz must lie inside (0, 4000)",
                self.low_hz, self.high_hz
            )));
        }
        if self.taps % 2 == 0 || self.taps < 3 {
            return Err(Error::Config("telephone filter taps must be odd and >= 3".into()));
        }
        if !(self.drive > 0.0) {
            return Err(Error::Config("compressor drive must be positive".into()));
        }
        Ok(())
    }

    /// Band-pass, compress, then add seeded Gaussian noise. Length-preserving.
    pub fn apply(&self, w: &Waveform, channel_seed: u64) -> Result<Waveform> {
        w.require_rate(NARROWBAND_RATE)?;
        self.validate()?;
        let h = design_bandpass(
            self.taps,
            self.low_hz,
            self.high_hz,
            NARROWBAND_RATE as f64,
            self.kaiser_beta,
        );
        let mut y: Vec<f64> = filter_same(w.samples(), &h)
            .into_iter()
            .map(|v| (self.drive * v).tanh() / self.drive)
            .collect();
        if let Some(snr_db) = self.snr_db {
            let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
            let sigma = rms * 10f64.powf(-snr_db / 20.0);
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(channel_seed);
                for v in y.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * z;
                }
            }
        }
        Waveform::new(y, NARROWBAND_RATE)
    }
}

/// The default telephone channel.
pub fn telephone_channel(w: &Waveform, channel_seed: u64) -> Result<Waveform> {
    TelephoneChannel::default().apply(w, channel_seed)
}
