//! Inversion with the model output pinned to the clean latent.
//!
//! Holding `x_θ = x0` over a step turns the first-order sampler updates into
//! affine maps that can be solved for the noisier latent directly:
//!
//! ```text
//! SDE: x_t = (σ_t/σ_{t−1}) e^{h} (x_{t−1} − α_{t−1}(1−e^{−2h}) x0)
//! ODE: x_t = (σ_t/σ_{t−1})       (x_{t−1} − α_{t−1}(1−e^{−h})  x0)
//! h = λ_{t−1} − λ_t > 0
//! ```
//!
//! No noise prediction appears on either side, so building a record never
//! evaluates a denoiser. Solving instead for an `x_t` that also feeds
//! `ε_θ(x_t)` would make the update implicit in its own output.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::{model_output_at, Condition, Latent, NoisePredictor};
use crate::error::{ensure_finite, ensure_same_len, Error, Result};
use crate::rng;
use crate::sampler::{NoiseSource, SamplerConfig, SamplerRun, SolverMode, StepRecord, Trajectory};
use crate::schedule::{NoiseLevel, NoiseSchedule, ScheduleDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InversionVariant {
    /// Constant model output, SDE recurrence, stochastic term removed.
    DeterministicSde,
    /// Constant model output, ODE recurrence.
    DeterministicOde,
    /// Independent forward-diffusion draws `x0 + σ_t ε_t`.
    ForwardDiffusion,
    /// SDE recurrence with the stochastic term kept.
    StochasticRetained,
}

impl InversionVariant {
    pub fn is_deterministic(self) -> bool {
        matches!(self, Self::DeterministicSde | Self::DeterministicOde)
    }

    /// Short label: `a` is the deterministic variant, `b` forward diffusion,
    /// `c` the stochastic-retained variant.
    pub fn letter(self) -> char {
        match self {
            Self::DeterministicSde | Self::DeterministicOde => 'a',
            Self::ForwardDiffusion => 'b',
            Self::StochasticRetained => 'c',
        }
    }

    /// Resolves a letter against the sampler mode (`a` depends on it).
    pub fn from_letter(letter: &str, mode: SolverMode) -> Result<Self> {
        match letter.to_ascii_lowercase().as_str() {
            "a" => Ok(match mode {
                SolverMode::Sde => Self::DeterministicSde,
                SolverMode::Ode => Self::DeterministicOde,
            }),
            "b" => Ok(Self::ForwardDiffusion),
            "c" => Ok(Self::StochasticRetained),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

impl fmt::Display for InversionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for InversionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DeterministicSde" => Ok(Self::DeterministicSde),
            "DeterministicOde" => Ok(Self::DeterministicOde),
            "ForwardDiffusion" => Ok(Self::ForwardDiffusion),
            "StochasticRetained" => Ok(Self::StochasticRetained),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

/// Inverted latents `x̂_0 … x̂_{t_max}` (index = timestep, `x̂_0 = x0`) and the
/// noise maps they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionRecord {
    x0: Latent,
    latents: Vec<Latent>,
    noise_maps: Vec<Vec<f64>>,
    variant: InversionVariant,
    schedule_fingerprint: String,
}

impl InversionRecord {
    pub fn x0(&self) -> &Latent {
        &self.x0
    }

    pub fn latents(&self) -> &[Latent] {
        &self.latents
    }

    pub fn latent(&self, t: usize) -> Option<&Latent> {
        self.latents.get(t)
    }

    pub fn noise_maps(&self) -> &[Vec<f64>] {
        &self.noise_maps
    }

    pub fn noise_map(&self, t: usize) -> Option<&[f64]> {
        self.noise_maps.get(t).map(Vec::as_slice)
    }

    pub fn variant(&self) -> InversionVariant {
        self.variant
    }

    pub fn schedule_fingerprint(&self) -> &str {
        &self.schedule_fingerprint
    }

    pub fn t_max(&self) -> usize {
        self.latents.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }

    fn from_latents(
        x0: Latent,
        latents: Vec<Latent>,
        variant: InversionVariant,
        schedule: &NoiseSchedule,
    ) -> Result<Self> {
        let noise_maps = latents
            .iter()
            .map(|x| derive_noise_map(x, &x0, schedule))
            .collect::<Result<Vec<_>>>()?;
        for x in &latents {
            if !x.is_finite() {
                return Err(Error::NonFinite("inverted latent"));
            }
        }
        Ok(Self {
            x0,
            latents,
            noise_maps,
            variant,
            schedule_fingerprint: schedule.fingerprint(),
        })
    }

    /// Header line followed by one [`StepRecord`] per timestep.
    pub fn write_jsonl<W: Write>(&self, mut out: W, schedule: &NoiseSchedule) -> Result<()> {
        let header = RecordHeader {
            variant: self.variant,
            schedule_fingerprint: self.schedule_fingerprint.clone(),
            t_max: self.t_max(),
            dimension: self.dim(),
            schedule: Some(schedule.to_document()),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (x, eps) in self.latents.iter().zip(&self.noise_maps) {
            let rec = StepRecord {
                t: x.t,
                lambda: schedule.lambda(x.t)?,
                state: x.values.clone(),
                noise_draw: None,
                model_output: self.x0.values.clone(),
                noise_map: Some(eps.clone()),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses a record written by [`write_jsonl`](Self::write_jsonl). Noise
    /// maps are re-derived against `schedule`, whose fingerprint must match.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<(Self, Option<ScheduleDocument>)> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or(Error::EmptyInput("inversion record"))??;
        let header: RecordHeader = serde_json::from_str(&header_line)?;
        let mut latents = Vec::with_capacity(header.t_max + 1);
        let mut noise_maps = Vec::with_capacity(header.t_max + 1);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord = serde_json::from_str(&line)?;
            if rec.t != latents.len() {
                return Err(Error::Format(format!(
                    "expected timestep {} in record, found {}",
                    latents.len(),
                    rec.t
                )));
            }
            ensure_same_len(header.dimension, rec.state.len())?;
            noise_maps.push(
                rec.noise_map
                    .ok_or_else(|| Error::Format(format!("missing noise_map at t={}", rec.t)))?,
            );
            latents.push(Latent::new(rec.state, rec.t));
        }
        if latents.len() != header.t_max + 1 {
            return Err(Error::Format(format!(
                "header promises t_max {} but record holds {} latents",
                header.t_max,
                latents.len()
            )));
        }
        let x0 = latents[0].clone();
        Ok((
            Self {
                x0,
                latents,
                noise_maps,
                variant: header.variant,
                schedule_fingerprint: header.schedule_fingerprint,
            },
            header.schedule,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub variant: InversionVariant,
    pub schedule_fingerprint: String,
    pub t_max: usize,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleDocument>,
}

/// Noise map `(x_t − α_t x0)/σ_t`.
pub fn derive_noise_map(x_t: &Latent, x0: &Latent, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    ensure_same_len(x0.dim(), x_t.dim())?;
    let level = schedule.level(x_t.t)?;
    if level.sigma == 0.0 {
        return Err(Error::ZeroSigma(x_t.t));
    }
    Ok(x_t
        .values
        .iter()
        .zip(&x0.values)
        .map(|(x, c)| (x - level.alpha * c) / level.sigma)
        .collect())
}

/// One Eq.-3 step from `prev` (at `from`) to the adjacent noisier `to`.
pub fn invert_sde_step(prev: &[f64], x0: &[f64], from: &NoiseLevel, to: &NoiseLevel) -> Vec<f64> {
    let h = from.lambda - to.lambda;
    let outer = to.sigma / from.sigma * h.exp();
    let pull = from.alpha * -(-2.0 * h).exp_m1();
    prev.iter().zip(x0).map(|(x, c)| outer * (x - pull * c)).collect()
}

/// One Eq.-5 step. `σ_{t−1}(e^{λ_{t−1}} − e^{λ_t})` is evaluated as
/// `α_{t−1}(1 − e^{−h})`, which avoids overflow at large λ.
pub fn invert_ode_step(prev: &[f64], x0: &[f64], from: &NoiseLevel, to: &NoiseLevel) -> Vec<f64> {
    let h = from.lambda - to.lambda;
    let outer = to.sigma / from.sigma;
    let pull = from.alpha * -(-h).exp_m1();
    prev.iter().zip(x0).map(|(x, c)| outer * (x - pull * c)).collect()
}

/// Coefficient `σ_t √(e^{2h} − 1)` of the retained stochastic term.
pub fn stochastic_coefficient(from: &NoiseLevel, to: &NoiseLevel) -> f64 {
    let h = from.lambda - to.lambda;
    to.sigma * (2.0 * h).exp_m1().sqrt()
}

fn validate_inputs(x0: &Latent, schedule: &NoiseSchedule, t_max: usize) -> Result<()> {
    ensure_finite(&x0.values, "x0")?;
    if x0.t != 0 {
        return Err(Error::InvalidConfig(format!(
            "x0 must sit at the clean timestep 0, found t={}",
            x0.t
        )));
    }
    schedule.check_index(t_max)?;
    if schedule.sigma(0)? == 0.0 {
        return Err(Error::ZeroSigma(0));
    }
    Ok(())
}

/// Deterministic recurrence starting from an arbitrary latent at t = 0.
/// With `start = x0` this is [`invert_sde`] / [`invert_ode`].
pub fn invert_from(
    start: &Latent,
    x0: &Latent,
    mode: SolverMode,
    schedule: &NoiseSchedule,
    t_max: usize,
) -> Result<InversionRecord> {
    validate_inputs(x0, schedule, t_max)?;
    ensure_same_len(x0.dim(), start.dim())?;
    ensure_finite(&start.values, "start latent")?;
    let mut latents = Vec::with_capacity(t_max + 1);
    latents.push(Latent::new(start.values.clone(), 0));
    for t in 1..=t_max {
        let from = schedule.level(t - 1)?;
        let to = schedule.level(t)?;
        let prev = &latents[t - 1].values;
        let next = match mode {
            SolverMode::Sde => invert_sde_step(prev, &x0.values, &from, &to),
            SolverMode::Ode => invert_ode_step(prev, &x0.values, &from, &to),
        };
        latents.push(Latent::new(next, t));
    }
    let variant = match mode {
        SolverMode::Sde => InversionVariant::DeterministicSde,
        SolverMode::Ode => InversionVariant::DeterministicOde,
    };
    InversionRecord::from_latents(x0.clone(), latents, variant, schedule)
}

pub fn invert_sde(x0: &Latent, schedule: &NoiseSchedule, t_max: usize) -> Result<InversionRecord> {
    invert_from(x0, x0, SolverMode::Sde, schedule, t_max)
}

pub fn invert_ode(x0: &Latent, schedule: &NoiseSchedule, t_max: usize) -> Result<InversionRecord> {
    invert_from(x0, x0, SolverMode::Ode, schedule, t_max)
}

const FORWARD_DOMAIN: u32 = 1;
const RETAINED_DOMAIN: u32 = 2;

/// Comparison variant: each latent is an independent draw `x0 + σ_t ε_t`.
pub fn invert_forward_diffusion(
    x0: &Latent,
    schedule: &NoiseSchedule,
    t_max: usize,
    seed: u64,
) -> Result<InversionRecord> {
    validate_inputs(x0, schedule, t_max)?;
    let mut latents = vec![x0.clone()];
    for t in 1..=t_max {
        let sigma = schedule.sigma(t)?;
        let eps = rng::gaussian(seed, rng::key(FORWARD_DOMAIN, t as u64), x0.dim());
        latents.push(Latent::new(
            x0.values.iter().zip(&eps).map(|(c, e)| c + sigma * e).collect(),
            t,
        ));
    }
    InversionRecord::from_latents(x0.clone(), latents, InversionVariant::ForwardDiffusion, schedule)
}

/// Comparison variant: Eq.-3 step minus `σ_t √(e^{2h}−1) ε_t`.
pub fn invert_stochastic_retained(
    x0: &Latent,
    schedule: &NoiseSchedule,
    t_max: usize,
    seed: u64,
) -> Result<InversionRecord> {
    invert_stochastic_retained_with(x0, schedule, t_max, |t, dim| {
        rng::gaussian(seed, rng::key(RETAINED_DOMAIN, t as u64), dim)
    })
}

/// As [`invert_stochastic_retained`] with caller-supplied `ε_t`.
pub fn invert_stochastic_retained_with(
    x0: &Latent,
    schedule: &NoiseSchedule,
    t_max: usize,
    mut noise: impl FnMut(usize, usize) -> Vec<f64>,
) -> Result<InversionRecord> {
    validate_inputs(x0, schedule, t_max)?;
    let mut latents = vec![x0.clone()];
    for t in 1..=t_max {
        let from = schedule.level(t - 1)?;
        let to = schedule.level(t)?;
        let base = invert_sde_step(&latents[t - 1].values, &x0.values, &from, &to);
        let coef = stochastic_coefficient(&from, &to);
        let eps = noise(t, x0.dim());
        ensure_same_len(x0.dim(), eps.len())?;
        latents.push(Latent::new(
            base.iter().zip(&eps).map(|(x, e)| x - coef * e).collect(),
            t,
        ));
    }
    InversionRecord::from_latents(x0.clone(), latents, InversionVariant::StochasticRetained, schedule)
}

/// Builds a record of any variant; `mode` picks the deterministic recurrence
/// for variant (a).
pub fn invert(
    variant: InversionVariant,
    x0: &Latent,
    schedule: &NoiseSchedule,
    t_max: usize,
    seed: u64,
) -> Result<InversionRecord> {
    match variant {
        InversionVariant::DeterministicSde => invert_sde(x0, schedule, t_max),
        InversionVariant::DeterministicOde => invert_ode(x0, schedule, t_max),
        InversionVariant::ForwardDiffusion => invert_forward_diffusion(x0, schedule, t_max, seed),
        InversionVariant::StochasticRetained => invert_stochastic_retained(x0, schedule, t_max, seed),
    }
}

/// Predictor that answers with the record's stored noise map at the queried
/// grid timestep, ignoring the latent and the condition.
pub struct NoiseMapReplay<'r> {
    record: &'r InversionRecord,
}

impl<'r> NoiseMapReplay<'r> {
    pub fn new(record: &'r InversionRecord) -> Self {
        Self { record }
    }
}

impl NoisePredictor for NoiseMapReplay<'_> {
    fn predict_noise_at(
        &self,
        x: &[f64],
        level: &NoiseLevel,
        _cond: &Condition,
    ) -> Result<Vec<f64>> {
        let t = level
            .index
            .ok_or_else(|| Error::InvalidConfig("noise-map replay only answers on grid timesteps".into()))?;
        let eps = self.record.noise_map(t).ok_or(Error::MissingLatent(t))?;
        ensure_same_len(x.len(), eps.len())?;
        Ok(eps.to_vec())
    }
}

/// Samples from `x̂_{t_max}` down to t = 0, answering every prediction with
/// the record's noise map at that timestep. Works for any variant.
pub fn replay_with_noise_maps(
    record: &InversionRecord,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    source: &NoiseSource<'_>,
) -> Result<Trajectory> {
    check_fingerprint(record, schedule)?;
    let start = record.latents[record.t_max()].clone();
    let mut run = SamplerRun::new(start, *config, schedule)?;
    run.advance(&NoiseMapReplay::new(record), &Condition::null(), 0, source)?;
    Ok(run.finish())
}

pub(crate) fn check_fingerprint(record: &InversionRecord, schedule: &NoiseSchedule) -> Result<()> {
    if record.schedule_fingerprint != schedule.fingerprint() {
        return Err(Error::InvalidConfig(
            "record was built on a different schedule".into(),
        ));
    }
    Ok(())
}

/// Order-1 replay of a deterministic record with its own noise maps and zero
/// stochastic draws; retraces the inversion trajectory back to `x0`.
pub fn reconstruct_exact(
    record: &InversionRecord,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<Trajectory> {
    let expected_mode = match record.variant {
        InversionVariant::DeterministicSde => SolverMode::Sde,
        InversionVariant::DeterministicOde => SolverMode::Ode,
        other => {
            return Err(Error::VariantModeMismatch {
                variant: other.to_string(),
                mode: config.mode.to_string(),
            })
        }
    };
    if config.mode != expected_mode {
        return Err(Error::VariantModeMismatch {
            variant: record.variant.to_string(),
            mode: config.mode.to_string(),
        });
    }
    if config.order != 1 {
        return Err(Error::InvalidConfig(format!(
            "exact reconstruction uses order 1, got {}",
            config.order
        )));
    }
    replay_with_noise_maps(record, config, schedule, &NoiseSource::Zero)
}

/// Largest per-timestep relative deviation `‖x_t − x̂_t‖∞ / ‖x̂_t‖∞` between a
/// replayed trajectory and the record.
pub fn max_relative_deviation(trajectory: &Trajectory, record: &InversionRecord) -> f64 {
    trajectory
        .states
        .iter()
        .filter_map(|s| record.latent(s.t).map(|r| (s, r)))
        .map(|(s, r)| {
            let scale = r.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let diff = s
                .values
                .iter()
                .zip(&r.values)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if scale > 0.0 {
                diff / scale
            } else {
                diff
            }
        })
        .fold(0.0, f64::max)
}

/// Data prediction implied by a record entry; equals `x0` up to rounding.
pub fn implied_model_output(record: &InversionRecord, t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let x = record.latent(t).ok_or(Error::MissingLatent(t))?;
    model_output_at(&x.values, &record.noise_maps[t], &schedule.level(t)?)
}
