//! Conditioned noise prediction, the data-prediction transform, guidance, and
//! the analytic oracles that stand in for a trained network.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::schedule::{NoiseLevel, NoiseSchedule};

pub const DEFAULT_LATENT_DIM: usize = 64;

/// One latent code at a grid timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub values: Vec<f64>,
    pub t: usize,
}

impl Latent {
    pub fn new(values: Vec<f64>, t: usize) -> Self {
        Self { values, t }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionTag {
    Null,
    Reference,
    Custom(String),
}

impl std::fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditionTag::Null => f.write_str("null"),
            ConditionTag::Reference => f.write_str("reference"),
            ConditionTag::Custom(label) => write!(f, "custom:{label}"),
        }
    }
}

/// Prompt condition plus its classifier-free guidance scale. A scale of 1 is
/// the plain conditional prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub tag: ConditionTag,
    pub guidance_scale: f64,
}

impl Condition {
    pub fn null() -> Self {
        Self {
            tag: ConditionTag::Null,
            guidance_scale: 1.0,
        }
    }

    pub fn reference() -> Self {
        Self {
            tag: ConditionTag::Reference,
            guidance_scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.guidance_scale = scale;
        self
    }

    /// Whether a second (null) evaluation is needed to apply guidance.
    pub fn needs_guidance(&self) -> bool {
        self.tag != ConditionTag::Null && self.guidance_scale != 1.0
    }
}

/// Anything that predicts the noise component of a latent.
pub trait NoisePredictor: Sync {
    fn predict_noise_at(&self, x: &[f64], level: &NoiseLevel, cond: &Condition)
        -> Result<Vec<f64>>;

    fn supports(&self, _tag: &ConditionTag) -> bool {
        true
    }
}

/// `ε_θ(x_t, ψ)` at the latent's own grid timestep.
pub fn predict_noise<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x: &Latent,
    cond: &Condition,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let level = schedule.level(x.t)?;
    predictor.predict_noise_at(&x.values, &level, cond)
}

/// Data prediction `(x − σ_t ε)/α_t`.
pub fn model_output(x: &Latent, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let level = schedule.level(x.t)?;
    model_output_at(&x.values, eps, &level)
}

pub fn model_output_at(x: &[f64], eps: &[f64], level: &NoiseLevel) -> Result<Vec<f64>> {
    ensure_same_len(x.len(), eps.len())?;
    if level.alpha == 0.0 {
        return Err(Error::ZeroAlpha(level.index.unwrap_or(usize::MAX)));
    }
    Ok(x.iter()
        .zip(eps)
        .map(|(xi, ei)| (xi - level.sigma * ei) / level.alpha)
        .collect())
}

/// Classifier-free guidance mix `ε_null + s·(ε_cond − ε_null)`.
pub fn guided_noise(eps_cond: &[f64], eps_null: &[f64], scale: f64) -> Result<Vec<f64>> {
    ensure_same_len(eps_null.len(), eps_cond.len())?;
    Ok(eps_cond
        .iter()
        .zip(eps_null)
        .map(|(c, n)| n + scale * (c - n))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleKind {
    /// Implied model output is always `x_ref`.
    ConstantOutput { x_ref: Vec<f64> },
    /// Exact denoiser for data drawn from `N(mu, gamma² I)`.
    GaussianPosterior { mu: Vec<f64>, gamma: f64 },
    /// Reconstructs `x_ref` under the reference condition, defers to
    /// `fallback` otherwise.
    Memorizing {
        x_ref: Vec<f64>,
        fallback: Box<OracleKind>,
    },
}

impl OracleKind {
    fn noise(&self, x: &[f64], level: &NoiseLevel, cond: &Condition) -> Result<Vec<f64>> {
        match self {
            OracleKind::ConstantOutput { x_ref } => constant_output_noise(x, x_ref, level),
            OracleKind::GaussianPosterior { mu, gamma } => {
                ensure_same_len(x.len(), mu.len())?;
                if level.sigma == 0.0 {
                    return Err(Error::ZeroSigma(level.index.unwrap_or(usize::MAX)));
                }
                let g2 = gamma * gamma;
                let denom = level.alpha * level.alpha * g2 + level.sigma * level.sigma;
                Ok(x.iter()
                    .zip(mu)
                    .map(|(xi, mi)| {
                        let mean =
                            (level.alpha * g2 * xi + level.sigma * level.sigma * mi) / denom;
                        (xi - level.alpha * mean) / level.sigma
                    })
                    .collect())
            }
            OracleKind::Memorizing { x_ref, fallback } => match cond.tag {
                ConditionTag::Reference => constant_output_noise(x, x_ref, level),
                _ => fallback.noise(x, level, cond),
            },
        }
    }
}

fn constant_output_noise(x: &[f64], x_ref: &[f64], level: &NoiseLevel) -> Result<Vec<f64>> {
    ensure_same_len(x_ref.len(), x.len())?;
    if level.sigma == 0.0 {
        return Err(Error::ZeroSigma(level.index.unwrap_or(usize::MAX)));
    }
    Ok(x.iter()
        .zip(x_ref)
        .map(|(xi, ri)| (xi - level.alpha * ri) / level.sigma)
        .collect())
}

/// Deterministic analytic denoiser with an exact evaluation counter.
#[derive(Debug)]
pub struct DenoiserOracle {
    kind: OracleKind,
    calls: AtomicU64,
}

impl Clone for DenoiserOracle {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind.clone(),
            calls: AtomicU64::new(self.calls()),
        }
    }
}

impl DenoiserOracle {
    pub fn new(kind: OracleKind) -> Self {
        Self {
            kind,
            calls: AtomicU64::new(0),
        }
    }

    pub fn constant_output(x_ref: Vec<f64>) -> Self {
        Self::new(OracleKind::ConstantOutput { x_ref })
    }

    pub fn gaussian_posterior(mu: Vec<f64>, gamma: f64) -> Self {
        Self::new(OracleKind::GaussianPosterior { mu, gamma })
    }

    /// Memorizing oracle whose null-condition fallback is a Gaussian
    /// posterior centred on the memorized reference.
    pub fn memorizing(x_ref: Vec<f64>, fallback_gamma: f64) -> Self {
        let fallback = OracleKind::GaussianPosterior {
            mu: x_ref.clone(),
            gamma: fallback_gamma,
        };
        Self::new(OracleKind::Memorizing {
            x_ref,
            fallback: Box::new(fallback),
        })
    }

    pub fn kind(&self) -> &OracleKind {
        &self.kind
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl NoisePredictor for DenoiserOracle {
    fn predict_noise_at(
        &self,
        x: &[f64],
        level: &NoiseLevel,
        cond: &Condition,
    ) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.kind.noise(x, level, cond)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub t: Option<usize>,
    pub tag: ConditionTag,
}

/// Wraps a predictor and logs the timestep and condition of every call.
pub struct RecordingPredictor<P> {
    inner: P,
    log: Mutex<Vec<CallRecord>>,
}

impl<P: NoisePredictor> RecordingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }
}

impl<P: NoisePredictor> NoisePredictor for RecordingPredictor<P> {
    fn predict_noise_at(
        &self,
        x: &[f64],
        level: &NoiseLevel,
        cond: &Condition,
    ) -> Result<Vec<f64>> {
        self.log.lock().expect("call log poisoned").push(CallRecord {
            t: level.index,
            tag: cond.tag.clone(),
        });
        self.inner.predict_noise_at(x, level, cond)
    }

    fn supports(&self, tag: &ConditionTag) -> bool {
        self.inner.supports(tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleConfigKind {
    ConstantOutput,
    GaussianPosterior,
    Memorizing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleParameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_ref: Option<Vec<f64>>,
}

/// JSON form of an oracle: `{kind, parameters, reference_signal_path}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub kind: OracleConfigKind,
    #[serde(default)]
    pub parameters: OracleParameters,
    #[serde(default)]
    pub reference_signal_path: Option<String>,
}

impl OracleConfig {
    /// Resolves the config into a concrete oracle. `reference` is the latent
    /// loaded from `reference_signal_path`; explicit `parameters.x_ref` wins.
    pub fn resolve(&self, reference: Option<&[f64]>, dim: usize) -> Result<OracleKind> {
        let x_ref = self
            .parameters
            .x_ref
            .clone()
            .or_else(|| reference.map(<[f64]>::to_vec));
        let gamma = self.parameters.gamma.unwrap_or(1.0);
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
        }
        let need_ref = || {
            x_ref
                .clone()
                .ok_or_else(|| Error::InvalidConfig("oracle needs a reference latent".into()))
        };
        let kind = match self.kind {
            OracleConfigKind::ConstantOutput => OracleKind::ConstantOutput { x_ref: need_ref()? },
            OracleConfigKind::GaussianPosterior => OracleKind::GaussianPosterior {
                mu: self.parameters.mu.clone().unwrap_or_else(|| vec![0.0; dim]),
                gamma,
            },
            OracleConfigKind::Memorizing => {
                let x_ref = need_ref()?;
                let mu = self.parameters.mu.clone().unwrap_or_else(|| x_ref.clone());
                OracleKind::Memorizing {
                    x_ref,
                    fallback: Box::new(OracleKind::GaussianPosterior { mu, gamma }),
                }
            }
        };
        Ok(kind)
    }
}
