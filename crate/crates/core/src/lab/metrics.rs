use serde::{Deserialize, Serialize};

use super::signal::Signal;
use super::spectrum::stft;
use crate::error::{Error, Result};
use crate::stats;

pub const LSD_FRAME: usize = 1024;
pub const LSD_HOP: usize = 256;
pub const LSD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `+∞` only when candidate and reference are identical.
    pub snr_db: f64,
    pub rmse: f64,
    /// Log-spectral distance in dB.
    pub lsd: f64,
}

/// SNR is normalized by the reference energy; RMSE and LSD are symmetric.
pub fn measure(reference: &Signal, candidate: &Signal) -> Result<MetricReport> {
    if reference.len() != candidate.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: candidate.len(),
        });
    }
    if reference.sample_rate != candidate.sample_rate {
        return Err(Error::InvalidConfig(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate, candidate.sample_rate
        )));
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput("signal"));
    }
    let (r, c) = (&reference.samples, &candidate.samples);
    let signal_energy: f64 = r.iter().map(|v| v * v).sum();
    let error_energy: f64 = r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
    let snr_db = if error_energy == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal_energy / error_energy).log10()
    };
    Ok(MetricReport {
        snr_db,
        rmse: stats::rmse(r, c),
        lsd: log_spectral_distance(r, c)?,
    })
}

/// Mean over frames of the RMS difference of floored log power spectra.
/// Inputs shorter than one frame are zero-padded to a single frame.
pub fn log_spectral_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let pad = |x: &[f64]| {
        let mut v = x.to_vec();
        if v.len() < LSD_FRAME {
            v.resize(LSD_FRAME, 0.0);
        }
        v
    };
    let sa = stft(&pad(a), LSD_FRAME, LSD_HOP)?;
    let sb = stft(&pad(b), LSD_FRAME, LSD_HOP)?;
    let to_db = |m: f64| 10.0 * (m * m).max(LSD_FLOOR).log10();
    let mut total = 0.0;
    for f in 0..sa.frames() {
        let sq: f64 = sa
            .frame(f)
            .iter()
            .zip(sb.frame(f))
            .map(|(x, y)| (to_db(*x) - to_db(*y)).powi(2))
            .sum();
        total += (sq / sa.bins() as f64).sqrt();
    }
    Ok(total / sa.frames() as f64)
}
