use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::denoiser::Latent;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_SIGNAL_LENGTH: usize = 4096;
const PEAK: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: String,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32, label: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Chirp,
    HarmonicStack,
    FilteredNoise,
    PulseTrain,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] = [
        SignalKind::Chirp,
        SignalKind::HarmonicStack,
        SignalKind::FilteredNoise,
        SignalKind::PulseTrain,
    ];
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::Chirp => "chirp",
            SignalKind::HarmonicStack => "harmonic_stack",
            SignalKind::FilteredNoise => "filtered_noise",
            SignalKind::PulseTrain => "pulse_train",
        })
    }
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chirp" => Ok(SignalKind::Chirp),
            "harmonic_stack" | "harmonic" => Ok(SignalKind::HarmonicStack),
            "filtered_noise" | "noise" => Ok(SignalKind::FilteredNoise),
            "pulse_train" | "pulse" => Ok(SignalKind::PulseTrain),
            other => Err(Error::InvalidConfig(format!("unknown signal kind {other:?}"))),
        }
    }
}

/// Generator parameters drawn from the seed.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalParams {
    Chirp { f_start: f64, f_end: f64 },
    HarmonicStack { fundamental: f64, partials: Vec<(f64, f64)> },
    FilteredNoise { band_low: f64, band_high: f64 },
    PulseTrain { period: usize, carrier: f64, decay: f64 },
}

impl SignalParams {
    pub fn derive(kind: SignalKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(kind as u64 + 1);
        match kind {
            SignalKind::Chirp => SignalParams::Chirp {
                f_start: rng.gen_range(100.0..600.0),
                f_end: rng.gen_range(2000.0..6000.0),
            },
            SignalKind::HarmonicStack => {
                let n = rng.gen_range(4..=10);
                let partials = (1..=n)
                    .map(|k| (rng.gen_range(0.2..1.0) / k as f64, rng.gen_range(0.0..2.0 * PI)))
                    .collect();
                SignalParams::HarmonicStack {
                    fundamental: rng.gen_range(80.0..400.0),
                    partials,
                }
            }
            // Fixed band shape; the seed only drives the noise.
            SignalKind::FilteredNoise => SignalParams::FilteredNoise {
                band_low: 400.0,
                band_high: 2500.0,
            },
            SignalKind::PulseTrain => {
                let period = rng.gen_range(40..=200);
                SignalParams::PulseTrain {
                    period,
                    carrier: rng.gen_range(500.0..3000.0),
                    decay: period as f64 / 6.0,
                }
            }
        }
    }
}

fn normalize(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
}

/// Deterministic abstract-sound surrogate at [`DEFAULT_SAMPLE_RATE`].
pub fn generate_signal(kind: SignalKind, seed: u64, length: usize) -> Result<Signal> {
    if length == 0 {
        return Err(Error::EmptyInput("signal length"));
    }
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let duration = length as f64 / sr;
    let mut samples: Vec<f64> = match SignalParams::derive(kind, seed) {
        SignalParams::Chirp { f_start, f_end } => (0..length)
            .map(|n| {
                let t = n as f64 / sr;
                let phase = 2.0 * PI * (f_start * t + (f_end - f_start) * t * t / (2.0 * duration));
                phase.sin()
            })
            .collect(),
        SignalParams::HarmonicStack { fundamental, partials } => (0..length)
            .map(|n| {
                let t = n as f64 / sr;
                partials
                    .iter()
                    .enumerate()
                    .map(|(k, (amp, ph))| amp * (2.0 * PI * fundamental * (k + 1) as f64 * t + ph).sin())
                    .sum()
            })
            .collect(),
        SignalParams::FilteredNoise { band_low, band_high } => {
            let white = rng::gaussian(seed, rng::key(16, 0), length);
            band_limit(&white, sr, band_low, band_high)
        }
        SignalParams::PulseTrain { period, carrier, decay } => (0..length)
            .map(|n| {
                let k = (n % period) as f64;
                (-k / decay).exp() * (2.0 * PI * carrier * k / sr).cos()
            })
            .collect(),
    };
    normalize(&mut samples);
    Ok(Signal::new(samples, DEFAULT_SAMPLE_RATE, format!("{kind}:{seed}")))
}

/// Band-pass with raised-cosine skirts one octave-eighth wide, applied in the
/// frequency domain.
fn band_limit(x: &[f64], sr: f64, low: f64, high: f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let skirt_lo = low * 0.125;
    let skirt_hi = high * 0.125;
    let gain = |f: f64| -> f64 {
        if f < low - skirt_lo || f > high + skirt_hi {
            0.0
        } else if f < low {
            0.5 - 0.5 * (PI * (f - (low - skirt_lo)) / skirt_lo).cos()
        } else if f > high {
            0.5 + 0.5 * (PI * (f - high) / skirt_hi).cos()
        } else {
            1.0
        }
    };
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = if k <= n / 2 { k } else { n - k };
        *c *= gain(bin as f64 * sr / n as f64);
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Maps signals to latents by box-averaging consecutive windows and back by
/// sample-and-hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentCodec {
    pub dim: usize,
}

impl Default for LatentCodec {
    fn default() -> Self {
        Self {
            dim: crate::denoiser::DEFAULT_LATENT_DIM,
        }
    }
}

impl LatentCodec {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn window(&self, length: usize) -> usize {
        length.div_ceil(self.dim).max(1)
    }

    /// Clean latent (t = 0) for a signal.
    pub fn encode(&self, signal: &Signal) -> Result<Latent> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be positive".into()));
        }
        if signal.is_empty() {
            return Err(Error::EmptyInput("signal"));
        }
        let w = self.window(signal.len());
        let values = (0..self.dim)
            .map(|i| {
                let lo = (i * w).min(signal.len());
                let hi = ((i + 1) * w).min(signal.len());
                signal.samples[lo..hi].iter().sum::<f64>() / w as f64
            })
            .collect();
        Ok(Latent::new(values, 0))
    }

    /// Renders a latent back to `length` samples. No clipping is applied.
    pub fn decode(&self, latent: &Latent, length: usize, sample_rate: u32, label: &str) -> Result<Signal> {
        if latent.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: latent.dim(),
            });
        }
        let w = self.window(length);
        let samples = (0..length).map(|n| latent.values[(n / w).min(self.dim - 1)]).collect();
        Ok(Signal::new(samples, sample_rate, label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::spectrum::spectrogram;

    #[test]
    fn generators_are_deterministic_and_normalized() {
        for kind in SignalKind::ALL {
            let a = generate_signal(kind, 3, 4096).unwrap();
            assert_eq!(a, generate_signal(kind, 3, 4096).unwrap());
            assert_ne!(a.samples, generate_signal(kind, 4, 4096).unwrap().samples);
            assert!(a.samples.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
            assert!((a.peak() - PEAK).abs() < 1e-12);
        }
        assert!(generate_signal(SignalKind::Chirp, 0, 0).is_err());
    }

    #[test]
    fn chirp_ridge_rises() {
        for seed in 0..5 {
            let sig = generate_signal(SignalKind::Chirp, seed, 8192).unwrap();
            let spec = spectrogram(&sig, 1024, 256).unwrap();
            let peaks: Vec<usize> = (0..spec.frames()).map(|f| spec.peak_bin(f)).collect();
            assert!(peaks.windows(2).all(|w| w[1] > w[0]), "seed {seed}: {peaks:?}");
        }
    }

    #[test]
    fn pulse_train_autocorrelation_peaks_at_period() {
        for seed in 0..8 {
            let period = match SignalParams::derive(SignalKind::PulseTrain, seed) {
                SignalParams::PulseTrain { period, .. } => period,
                _ => unreachable!(),
            };
            let sig = generate_signal(SignalKind::PulseTrain, seed, 4096).unwrap();
            let x = &sig.samples;
            let ac = |lag: usize| -> f64 { (0..x.len() - lag).map(|i| x[i] * x[i + lag]).sum() };
            let best = (period / 2..=period * 3 / 2).max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
            assert!(best.abs_diff(period) <= 1, "seed {seed}: best lag {best}, period {period}");
        }
    }

    #[test]
    fn filtered_noise_stays_in_band() {
        let sig = generate_signal(SignalKind::FilteredNoise, 9, 4096).unwrap();
        let spec = spectrogram(&sig, 1024, 256).unwrap();
        let bin_hz = 16_000.0 / 1024.0;
        let mut inside = 0.0;
        let mut outside = 0.0;
        for f in 0..spec.frames() {
            for b in 0..spec.bins() {
                let e = spec.get(f, b).powi(2);
                let hz = b as f64 * bin_hz;
                if (350.0..=2812.5).contains(&hz) {
                    inside += e;
                } else {
                    outside += e;
                }
            }
        }
        assert!(outside < 0.01 * inside, "{outside} vs {inside}");
    }

    #[test]
    fn codec_round_trip_on_block_signal() {
        let codec = LatentCodec::new(4);
        let sig = Signal::new(vec![1.0, 1.0, -0.5, -0.5, 0.25, 0.25, 0.0, 0.0], 8000, "blocks");
        let lat = codec.encode(&sig).unwrap();
        assert_eq!(lat.values, vec![1.0, -0.5, 0.25, 0.0]);
        let back = codec.decode(&lat, 8, 8000, "blocks").unwrap();
        assert_eq!(back.samples, sig.samples);
        assert!(codec.decode(&Latent::new(vec![0.0; 3], 0), 8, 8000, "x").is_err());
    }
}
