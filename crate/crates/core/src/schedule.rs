//! Discretized noise schedules in the half log-SNR domain.
//!
//! The λ grid is canonical: `α = 1/√(1+e^{−2λ})` and `σ = 1/√(1+e^{2λ})` are
//! always derived from it, so `α² + σ² = 1` and `λ = ln(α/σ)` hold to rounding
//! at every grid point.
//!
//! Index 0 is the clean end of the grid (largest λ); the last index is the
//! noisiest. Inversion walks the index upward, sampling walks it downward.
//!
//! In DDPM notation `ᾱ_t` (the cumulative product of per-step alphas) equals
//! `α_t²` here.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_NUM_STEPS: usize = 200;
pub const DEFAULT_LAMBDA_MAX: f64 = 10.0;
pub const DEFAULT_LAMBDA_MIN: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// λ spaced uniformly between the bounds.
    LogLinearLambda,
    /// Squared-cosine signal profile: the angle `atan(σ/α)` is linear in t.
    Cosine,
}

/// Coefficients at one point of the noise process, on or off the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub index: Option<usize>,
    pub lambda: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    pub fn from_lambda(lambda: f64) -> Self {
        let (alpha, sigma) = alpha_sigma(lambda);
        Self {
            index: None,
            lambda,
            alpha,
            sigma,
        }
    }
}

/// `(α, σ)` for a given half log-SNR.
pub fn alpha_sigma(lambda: f64) -> (f64, f64) {
    let alpha = 1.0 / (1.0 + (-2.0 * lambda).exp()).sqrt();
    let sigma = 1.0 / (1.0 + (2.0 * lambda).exp()).sqrt();
    (alpha, sigma)
}

/// Log-SNR gap of one step. `h` is always non-negative; direction is kept in
/// the endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGap {
    pub h: f64,
    pub from: usize,
    pub to: usize,
}

impl StepGap {
    /// Inversion steps move toward noise (increasing index).
    pub fn is_inversion(&self) -> bool {
        self.to > self.from
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    lambdas: Vec<f64>,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::build(
            ScheduleKind::LogLinearLambda,
            DEFAULT_NUM_STEPS,
            DEFAULT_LAMBDA_MAX,
            DEFAULT_LAMBDA_MIN,
        )
        .expect("default schedule parameters are valid")
    }
}

impl NoiseSchedule {
    /// Builds a grid of `num_steps` points running from `lambda_max` (index 0)
    /// down to `lambda_min` (last index).
    pub fn build(
        kind: ScheduleKind,
        num_steps: usize,
        lambda_max: f64,
        lambda_min: f64,
    ) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::InvalidSchedule(format!(
                "num_steps must be at least 2, got {num_steps}"
            )));
        }
        if !(lambda_max.is_finite() && lambda_min.is_finite()) {
            return Err(Error::InvalidSchedule("lambda bounds must be finite".into()));
        }
        if lambda_max <= lambda_min {
            return Err(Error::InvalidSchedule(format!(
                "lambda_max ({lambda_max}) must exceed lambda_min ({lambda_min})"
            )));
        }
        let last = (num_steps - 1) as f64;
        let lambdas: Vec<f64> = match kind {
            ScheduleKind::LogLinearLambda => (0..num_steps)
                .map(|i| {
                    if i == num_steps - 1 {
                        lambda_min
                    } else {
                        lambda_max - (lambda_max - lambda_min) * i as f64 / last
                    }
                })
                .collect(),
            ScheduleKind::Cosine => {
                let theta_lo = (-lambda_max).exp().atan();
                let theta_hi = (-lambda_min).exp().atan();
                (0..num_steps)
                    .map(|i| {
                        if i == 0 {
                            lambda_max
                        } else if i == num_steps - 1 {
                            lambda_min
                        } else {
                            let theta = theta_lo + (theta_hi - theta_lo) * i as f64 / last;
                            -theta.tan().ln()
                        }
                    })
                    .collect()
            }
        };
        Self::from_lambdas(kind, lambdas)
    }

    /// Rebuilds a schedule from an explicit λ grid.
    pub fn from_lambdas(kind: ScheduleKind, lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 grid points, got {}",
                lambdas.len()
            )));
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidSchedule("non-finite lambda".into()));
        }
        if let Some(i) = lambdas.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule(format!(
                "lambda must be strictly decreasing (violated at index {})",
                i + 1
            )));
        }
        let (alphas, sigmas) = lambdas.iter().map(|&l| alpha_sigma(l)).unzip();
        Ok(Self {
            kind,
            lambdas,
            alphas,
            sigmas,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of grid points.
    pub fn num_steps(&self) -> usize {
        self.lambdas.len()
    }

    /// Index of the noisiest grid point.
    pub fn last_index(&self) -> usize {
        self.lambdas.len() - 1
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambdas[self.last_index()]
    }

    pub fn check_index(&self, t: usize) -> Result<()> {
        if t < self.lambdas.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: t,
                len: self.lambdas.len(),
            })
        }
    }

    pub fn lambda(&self, t: usize) -> Result<f64> {
        self.check_index(t)?;
        Ok(self.lambdas[t])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_index(t)?;
        Ok(self.alphas[t])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check_index(t)?;
        Ok(self.sigmas[t])
    }

    pub fn level(&self, t: usize) -> Result<NoiseLevel> {
        self.check_index(t)?;
        Ok(NoiseLevel {
            index: Some(t),
            lambda: self.lambdas[t],
            alpha: self.alphas[t],
            sigma: self.sigmas[t],
        })
    }

    pub fn step_gap(&self, from_t: usize, to_t: usize) -> Result<StepGap> {
        self.check_index(from_t)?;
        self.check_index(to_t)?;
        if from_t == to_t {
            return Err(Error::DegenerateStep(from_t));
        }
        Ok(StepGap {
            h: (self.lambdas[from_t] - self.lambdas[to_t]).abs(),
            from: from_t,
            to: to_t,
        })
    }

    /// SHA-256 over the kind and the exact bit patterns of the λ grid.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}", self.kind).as_bytes());
        for l in &self.lambdas {
            hasher.update(l.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_document(&self) -> ScheduleDocument {
        ScheduleDocument {
            kind: self.kind,
            num_steps: self.num_steps(),
            lambda_max: self.lambda_max(),
            lambda_min: self.lambda_min(),
            lambdas: self.lambdas.clone(),
        }
    }

    pub fn from_document(doc: &ScheduleDocument) -> Result<Self> {
        if doc.lambdas.is_empty() {
            return Self::build(doc.kind, doc.num_steps, doc.lambda_max, doc.lambda_min);
        }
        if doc.lambdas.len() != doc.num_steps {
            return Err(Error::InvalidSchedule(format!(
                "num_steps {} disagrees with {} lambdas",
                doc.num_steps,
                doc.lambdas.len()
            )));
        }
        Self::from_lambdas(doc.kind, doc.lambdas.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScheduleDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

/// On-disk form of a schedule. An empty `lambdas` array means "rebuild from
/// the bounds".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub kind: ScheduleKind,
    pub num_steps: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
    #[serde(default)]
    pub lambdas: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn two_point_grid_matches_direct_evaluation() {
        let s = NoiseSchedule::build(ScheduleKind::LogLinearLambda, 2, 0.0, -LN_2).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.alpha(0).unwrap() - inv_sqrt2).abs() < 1e-15);
        assert!((s.sigma(0).unwrap() - inv_sqrt2).abs() < 1e-15);
        assert!((s.alpha(1).unwrap() - 0.447_213_595_499_958).abs() < 1e-15);
        assert!((s.sigma(1).unwrap() - 0.894_427_190_999_915_9).abs() < 1e-15);
    }

    #[test]
    fn unit_snr_point_is_symmetric() {
        let s = NoiseSchedule::build(ScheduleKind::LogLinearLambda, 3, 1.0, -1.0).unwrap();
        assert_eq!(s.lambda(1).unwrap(), 0.0);
        assert_eq!(s.alpha(1).unwrap(), s.sigma(1).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            NoiseSchedule::build(ScheduleKind::LogLinearLambda, 1, 1.0, -1.0),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(matches!(
            NoiseSchedule::build(ScheduleKind::Cosine, 10, -1.0, -1.0),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(matches!(
            NoiseSchedule::build(ScheduleKind::Cosine, 10, -2.0, 1.0),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(NoiseSchedule::from_lambdas(ScheduleKind::LogLinearLambda, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn step_gap_values() {
        let s = NoiseSchedule::build(ScheduleKind::LogLinearLambda, 2, 0.0, -LN_2).unwrap();
        let gap = s.step_gap(0, 1).unwrap();
        assert!((gap.h - LN_2).abs() < 1e-15);
        assert!(gap.is_inversion());
        assert!(!s.step_gap(1, 0).unwrap().is_inversion());
        assert!(matches!(s.step_gap(1, 1), Err(Error::DegenerateStep(1))));
        assert!(matches!(
            s.step_gap(0, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));

        let s = NoiseSchedule::default();
        for t in 0..s.last_index() {
            let gap = s.step_gap(t, t + 1).unwrap();
            assert!((gap.h - 20.0 / 199.0).abs() < 1e-12, "t={t} h={}", gap.h);
        }
    }

    #[test]
    fn cosine_grid_spans_bounds_monotonically() {
        let s = NoiseSchedule::build(ScheduleKind::Cosine, 50, 6.0, -6.0).unwrap();
        assert_eq!(s.lambda_max(), 6.0);
        assert_eq!(s.lambda_min(), -6.0);
        assert!(s.alphas().windows(2).all(|w| w[1] < w[0]));
        assert!(s.sigmas().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = NoiseSchedule::build(ScheduleKind::Cosine, 17, 4.0, -7.5).unwrap();
        let back = NoiseSchedule::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.fingerprint(), back.fingerprint());

        let doc = ScheduleDocument {
            kind: ScheduleKind::LogLinearLambda,
            num_steps: 200,
            lambda_max: 10.0,
            lambda_min: -10.0,
            lambdas: vec![],
        };
        let rebuilt = NoiseSchedule::from_document(&doc).unwrap();
        assert_eq!(rebuilt, NoiseSchedule::default());
    }

    #[test]
    fn fingerprint_separates_schedules() {
        let a = NoiseSchedule::default();
        let b = NoiseSchedule::build(ScheduleKind::Cosine, 200, 10.0, -10.0).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
