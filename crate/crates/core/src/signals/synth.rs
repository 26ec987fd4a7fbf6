//! Deterministic synthetic speakers.
//!
//! A speaker is a harmonic source at a fixed fundamental, shaped by a cascade
//! of formant resonators (unit DC gain each) and mixed with breath noise that
//! passes through the same resonators. Utterances of one speaker differ in
//! harmonic phases, syllabic amplitude modulation and noise realization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::waveform::{Waveform, MODEL_RATE};
use crate::error::{Error, Result};
use crate::seeds::rng_for;

const PEAK_LEVEL: f64 = 0.9;
/// Harmonics are generated up to this fraction of the wideband Nyquist rate.
const HARMONIC_CEILING_HZ: f64 = 7600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
}

impl Formant {
    /// Second-order all-pole section `(b0, a1, a2)` with unit DC gain.
    fn coefficients(&self, rate_hz: f64) -> (f64, f64, f64) {
        let r = (-std::f64::consts::PI * self.bandwidth_hz / rate_hz).exp();
        let theta = 2.0 * std::f64::consts::PI * self.freq_hz / rate_hz;
        let a1 = -2.0 * r * theta.cos();
        let a2 = r * r;
        (1.0 + a1 + a2, a1, a2)
    }

    fn magnitude_at(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let (b0, a1, a2) = self.coefficients(rate_hz);
        let w = 2.0 * std::f64::consts::PI * freq_hz / rate_hz;
        let re = 1.0 + a1 * w.cos() + a2 * (2.0 * w).cos();
        let im = -(a1 * w.sin() + a2 * (2.0 * w).sin());
        b0 / (re * re + im * im).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeakerSpec {
    pub f0_hz: f64,
    /// Amplitude of harmonic `k + 1`; the source contains exactly these harmonics.
    pub harmonic_amplitudes: Vec<f64>,
    pub envelope: Vec<Formant>,
    pub noise_mix: f64,
    pub seed: u64,
}

impl SyntheticSpeakerSpec {
    /// Draw a speaker from its seed: f0 in [80, 300] Hz, harmonics up to
    /// 7.6 kHz with a -6 dB/octave tilt, five formants and noise_mix in [0.03, 0.3].
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0x5e_ea_4e_12]);
        let f0_hz = 80.0 * (300.0f64 / 80.0).powf(rng.random::<f64>());
        let n_harm = (HARMONIC_CEILING_HZ / f0_hz).floor() as usize;
        let harmonic_amplitudes = (1..=n_harm)
            .map(|k| {
                let jitter: f64 = StandardNormal.sample(&mut rng);
                (0.25 * jitter).exp() / k as f64
            })
            .collect();
        let ranges = [
            (300.0, 850.0, 60.0, 110.0),
            (900.0, 2300.0, 70.0, 140.0),
            (2300.0, 3300.0, 100.0, 200.0),
            (3500.0, 4800.0, 150.0, 300.0),
            (5200.0, 7000.0, 200.0, 400.0),
        ];
        let envelope = ranges
            .iter()
            .map(|&(f_lo, f_hi, b_lo, b_hi)| Formant {
                freq_hz: rng.random_range(f_lo..f_hi),
                bandwidth_hz: rng.random_range(b_lo..b_hi),
            })
            .collect();
        let noise_mix = rng.random_range(0.03..0.3);
        Self {
            f0_hz,
            harmonic_amplitudes,
            envelope,
            noise_mix,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(80.0..=300.0).contains(&self.f0_hz) {
            return Err(Error::invalid(format!("f0 {} Hz outside [80, 300]", self.f0_hz)));
        }
        if !(0.0..=0.3).contains(&self.noise_mix) {
            return Err(Error::invalid(format!("noise_mix {} outside [0, 0.3]", self.noise_mix)));
        }
        let nyquist = MODEL_RATE as f64 / 2.0;
        for f in &self.envelope {
            if !(f.freq_hz > 0.0 && f.freq_hz < nyquist && f.bandwidth_hz > 0.0) {
                return Err(Error::invalid(format!("invalid formant {f:?}")));
            }
        }
        if self.harmonic_amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("non-finite harmonic amplitude"));
        }
        Ok(())
    }

    fn envelope_gain(&self, freq_hz: f64) -> f64 {
        self.envelope
            .iter()
            .map(|f| f.magnitude_at(freq_hz, MODEL_RATE as f64))
            .product()
    }

    fn envelope_filter(&self, x: &mut [f64]) {
        for f in &self.envelope {
            let (b0, a1, a2) = f.coefficients(MODEL_RATE as f64);
            let (mut y1, mut y2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let y = b0 * *v - a1 * y1 - a2 * y2;
                y2 = y1;
                y1 = y;
                *v = y;
            }
        }
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Synthesize one wideband (16 kHz) utterance of `duration_s` seconds.
pub fn synth_wide_mic(spec: &SyntheticSpeakerSpec, duration_s: f64, utterance_seed: u64) -> Result<Waveform> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }
    spec.validate()?;
    let rate = MODEL_RATE as f64;
    let n = (duration_s * rate).round().max(1.0) as usize;
    let mut rng = rng_for(spec.seed, &[0x07_7e_12, utterance_seed]);
    let nyquist = rate / 2.0;
    let tau = 2.0 * std::f64::consts::PI;

    let mut harmonic = vec![0.0; n];
    for (k, &amp) in spec.harmonic_amplitudes.iter().enumerate() {
        let freq = (k + 1) as f64 * spec.f0_hz;
        let phase = rng.random::<f64>() * tau;
        if freq >= nyquist || amp == 0.0 {
            continue;
        }
        let a = amp * spec.envelope_gain(freq);
        let w = tau * freq / rate;
        for (i, h) in harmonic.iter_mut().enumerate() {
            *h += a * (w * i as f64 + phase).sin();
        }
    }

    let mut signal = harmonic.clone();
    let source_rms = rms(&harmonic);
    if spec.noise_mix > 0.0 && source_rms > 0.0 {
        let mut noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        spec.envelope_filter(&mut noise);
        let noise_rms = rms(&noise);
        if noise_rms > 0.0 {
            let g = spec.noise_mix * source_rms / noise_rms;
            signal.iter_mut().zip(&noise).for_each(|(s, v)| *s += g * v);
        }
    }

    // Syllable-rate amplitude modulation.
    let am_rate = rng.random_range(2.5..5.0);
    let am_phase = rng.random::<f64>() * tau;
    for (i, s) in signal.iter_mut().enumerate() {
        *s *= 0.65 + 0.35 * (tau * am_rate * i as f64 / rate + am_phase).sin();
    }

    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK_LEVEL / peak;
        signal.iter_mut().for_each(|s| *s *= g);
    }
    Waveform::new(signal, MODEL_RATE)
}
