use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signals::{Waveform, MODEL_RATE};

pub const FRAME: usize = 512;
pub const HOP: usize = 256;
pub const MAGNITUDE_FLOOR: f64 = 1e-8;
pub const MEL_BANDS: usize = 24;
/// Shortest signal `embed_utterance` accepts, in seconds.
pub const MIN_EMBED_SECONDS: f64 = 0.25;

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed STFT magnitudes, `FRAME / 2 + 1` bins per frame. Signals
/// shorter than a frame are zero-padded to one frame.
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(FRAME),
            window: hann(FRAME),
        }
    }
}

impl Stft {
    pub fn n_frames(len: usize) -> usize {
        if len <= FRAME {
            1
        } else {
            1 + (len - FRAME).div_ceil(HOP)
        }
    }

    pub fn magnitudes(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); FRAME];
        (0..Self::n_frames(x.len()))
            .map(|f| {
                let start = f * HOP;
                for (i, b) in buf.iter_mut().enumerate() {
                    let v = x.get(start + i).copied().unwrap_or(0.0);
                    *b = Complex::new(v * self.window[i], 0.0);
                }
                self.fft.process(&mut buf);
                buf[..=FRAME / 2].iter().map(|c| c.norm()).collect()
            })
            .collect()
    }
}

/// Frame-averaged RMS difference of log-magnitude spectra, in dB.
pub fn log_spectral_distance(x: &Waveform, y: &Waveform) -> Result<f64> {
    x.require_rate(MODEL_RATE)?;
    y.require_rate(MODEL_RATE)?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("LSD of {} vs {} samples", x.len(), y.len())));
    }
    let stft = Stft::default();
    let (mx, my) = (stft.magnitudes(x.samples()), stft.magnitudes(y.samples()));
    let db = |m: f64| 20.0 * m.max(MAGNITUDE_FLOOR).log10();
    let total: f64 = mx
        .iter()
        .zip(&my)
        .map(|(fx, fy)| {
            let ms = fx.iter().zip(fy).map(|(&a, &b)| (db(a) - db(b)).powi(2)).sum::<f64>() / fx.len() as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / mx.len() as f64)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over `0..=rate/2`, one row of bin weights per band.
pub fn mel_filterbank(bands: usize, rate: u32) -> Vec<Vec<f64>> {
    let n_bins = FRAME / 2 + 1;
    let top = hz_to_mel(rate as f64 / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = rate as f64 / FRAME as f64;
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Time-averaged log mel band energies, normalized to zero mean and unit
/// variance across bands.
pub fn embed_utterance(w: &Waveform) -> Result<Vec<f64>> {
    w.require_rate(MODEL_RATE)?;
    if w.duration_s() < MIN_EMBED_SECONDS {
        return Err(Error::invalid(format!(
            "embedding needs at least {MIN_EMBED_SECONDS} s, got {} s",
            w.duration_s()
        )));
    }
    let fb = mel_filterbank(MEL_BANDS, MODEL_RATE);
    let frames = Stft::default().magnitudes(w.samples());
    let mut e = vec![0.0; MEL_BANDS];
    for frame in &frames {
        for (acc, filt) in e.iter_mut().zip(&fb) {
            let energy: f64 = filt.iter().zip(frame).map(|(f, m)| f * m * m).sum();
            *acc += (energy + 1e-10).ln();
        }
    }
    let n = frames.len() as f64;
    e.iter_mut().for_each(|v| *v /= n);
    let mean = e.iter().sum::<f64>() / MEL_BANDS as f64;
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / MEL_BANDS as f64;
    let sd = var.sqrt().max(1e-12);
    Ok(e.into_iter().map(|v| (v - mean) / sd).collect())
}
