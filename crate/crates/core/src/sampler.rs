//! DPMSolver++ data-prediction samplers (SDE and ODE, orders 1–3).
//!
//! Over one step from level `s` to the cleaner level `t`, with `h = λ_t − λ_s`,
//! the model output is replaced by a polynomial in `u = λ − λ_s` fitted
//! through the most recent model outputs, and the weighted integrals are
//! taken exactly:
//!
//! ```text
//! ODE: x_t = (σ_t/σ_s) x_s           + α_t Σ_k c_k φ_k(1, h)
//! SDE: x_t = (σ_t/σ_s) e^{−h} x_s    + α_t Σ_k c_k φ_k(2, h) + σ_t √(1−e^{−2h}) z
//! φ_k(c, h) = c e^{−ch} ∫_0^h e^{cu} u^k du
//! ```
//!
//! Order 1 is the constant-output update; it is DDIM in the ODE case.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::{guided_noise, model_output_at, Condition, Latent, NoisePredictor};
use crate::error::{ensure_finite, ensure_same_len, Error, Result};
use crate::rng;
use crate::schedule::{NoiseLevel, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Sde,
    Ode,
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::Sde => "sde",
            SolverMode::Ode => "ode",
        })
    }
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sde" => Ok(SolverMode::Sde),
            "ode" => Ok(SolverMode::Ode),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl SolverMode {
    /// Exponential rate of the drift weight: 1 for ODE, 2 for SDE.
    fn rate(self) -> f64 {
        match self {
            SolverMode::Ode => 1.0,
            SolverMode::Sde => 2.0,
        }
    }
}

/// What happens to the multistep buffer when the running latent is replaced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryPolicy {
    #[default]
    Persist,
    Reset,
}


impl FromStr for HistoryPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "persist" => Ok(HistoryPolicy::Persist),
            "reset" => Ok(HistoryPolicy::Reset),
            other => Err(Error::InvalidConfig(format!("unknown history policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SolverMode,
    pub order: usize,
    /// Intermediate-point ratio of the single-step second-order update.
    pub r1: f64,
    pub seed: u64,
    pub multistep: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SolverMode::Ode,
            order: 1,
            r1: 0.5,
            seed: 0,
            multistep: true,
        }
    }
}

impl SamplerConfig {
    pub fn new(mode: SolverMode, order: usize, seed: u64) -> Self {
        Self {
            mode,
            order,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.order) {
            return Err(Error::InvalidConfig(format!(
                "order must be 1, 2 or 3, got {}",
                self.order
            )));
        }
        if !(self.r1 > 0.0 && self.r1 < 1.0) {
            return Err(Error::InvalidConfig(format!("r1 must lie in (0,1), got {}", self.r1)));
        }
        if !self.multistep && self.order == 3 {
            return Err(Error::InvalidConfig(
                "single-step mode supports orders 1 and 2 only".into(),
            ));
        }
        Ok(())
    }
}

/// `φ_k(c, h) = c e^{−ch} ∫_0^h e^{cu} u^k du` for k = 0, 1, 2.
pub fn phi(k: usize, rate: f64, h: f64) -> f64 {
    let x = rate * h;
    if x.abs() < 0.5 {
        // x h^k e^{−x} Σ_n x^n / (n! (n+k+1))
        let mut sum = 0.0;
        let mut term = 1.0;
        for n in 0..30 {
            sum += term / (n + k + 1) as f64;
            term *= x / (n + 1) as f64;
        }
        return x * h.powi(k as i32) * (-x).exp() * sum;
    }
    let p0 = -(-x).exp_m1();
    match k {
        0 => p0,
        1 => h - p0 / rate,
        2 => h * h - 2.0 * h / rate + 2.0 * p0 / (rate * rate),
        _ => panic!("phi is defined for k <= 2"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub lambda: f64,
    pub output: Vec<f64>,
}

/// Most recent data predictions, newest first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelOutputHistory {
    capacity: usize,
    entries: VecDeque<HistoryEntry>,
}

impl ModelOutputHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, lambda: f64, output: Vec<f64>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front(HistoryEntry { lambda, output });
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn newest(&self) -> Option<&HistoryEntry> {
        self.entries.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }
}

fn check_direction(x: &Latent, to_t: usize, schedule: &NoiseSchedule) -> Result<()> {
    schedule.check_index(x.t)?;
    schedule.check_index(to_t)?;
    if to_t > x.t {
        return Err(Error::WrongDirection { from: x.t, to: to_t });
    }
    Ok(())
}

/// Polynomial-in-λ update between two arbitrary noise levels. `coeffs` are the
/// Taylor coefficients of the model output around `λ_from`.
fn exponential_update(
    x: &[f64],
    coeffs: &[&[f64]],
    from: &NoiseLevel,
    to: &NoiseLevel,
    mode: SolverMode,
    noise: Option<&[f64]>,
) -> Vec<f64> {
    let h = to.lambda - from.lambda;
    let rate = mode.rate();
    let weights: Vec<f64> = (0..coeffs.len()).map(|k| to.alpha * phi(k, rate, h)).collect();
    let (carry, noise_scale) = match mode {
        SolverMode::Ode => (to.sigma / from.sigma, 0.0),
        SolverMode::Sde => (
            to.sigma / from.sigma * (-h).exp(),
            to.sigma * (-(-2.0 * h).exp_m1()).sqrt(),
        ),
    };
    (0..x.len())
        .map(|i| {
            let mut v = carry * x[i];
            for (w, c) in weights.iter().zip(coeffs) {
                v += w * c[i];
            }
            if let Some(z) = noise {
                v += noise_scale * z[i];
            }
            v
        })
        .collect()
}

/// First-order SDE update with the model output held at `x_theta`.
pub fn sde_step_order1(
    x: &Latent,
    x_theta: &[f64],
    to_t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<Latent> {
    check_direction(x, to_t, schedule)?;
    ensure_same_len(x.dim(), x_theta.len())?;
    ensure_same_len(x.dim(), noise.len())?;
    if to_t == x.t {
        return Ok(x.clone());
    }
    let from = schedule.level(x.t)?;
    let to = schedule.level(to_t)?;
    let values = exponential_update(&x.values, &[x_theta], &from, &to, SolverMode::Sde, Some(noise));
    Ok(Latent::new(values, to_t))
}

/// First-order ODE update with the model output held at `x_theta`.
pub fn ode_step_order1(
    x: &Latent,
    x_theta: &[f64],
    to_t: usize,
    schedule: &NoiseSchedule,
) -> Result<Latent> {
    check_direction(x, to_t, schedule)?;
    ensure_same_len(x.dim(), x_theta.len())?;
    if to_t == x.t {
        return Ok(x.clone());
    }
    let from = schedule.level(x.t)?;
    let to = schedule.level(to_t)?;
    let values = exponential_update(&x.values, &[x_theta], &from, &to, SolverMode::Ode, None);
    Ok(Latent::new(values, to_t))
}

/// Classical deterministic DDIM update, written in terms of ε.
pub fn ddim_step(x: &Latent, eps: &[f64], to_t: usize, schedule: &NoiseSchedule) -> Result<Latent> {
    check_direction(x, to_t, schedule)?;
    ensure_same_len(x.dim(), eps.len())?;
    if to_t == x.t {
        return Ok(x.clone());
    }
    let (a_s, s_s) = (schedule.alpha(x.t)?, schedule.sigma(x.t)?);
    let (a_t, s_t) = (schedule.alpha(to_t)?, schedule.sigma(to_t)?);
    let values = x
        .values
        .iter()
        .zip(eps)
        .map(|(xi, ei)| a_t * (xi - s_s * ei) / a_s + s_t * ei)
        .collect();
    Ok(Latent::new(values, to_t))
}

/// Taylor coefficients (around the newest entry) of the polynomial through
/// the newest `order` history entries.
fn history_coefficients(history: &ModelOutputHistory, order: usize) -> Vec<Vec<f64>> {
    let pts: Vec<&HistoryEntry> = history.iter().take(order).collect();
    let m0 = &pts[0].output;
    match order {
        1 => vec![m0.clone()],
        2 => {
            let u1 = pts[1].lambda - pts[0].lambda;
            let d1 = m0
                .iter()
                .zip(&pts[1].output)
                .map(|(a, b)| (b - a) / u1)
                .collect();
            vec![m0.clone(), d1]
        }
        3 => {
            let u1 = pts[1].lambda - pts[0].lambda;
            let u2 = pts[2].lambda - pts[0].lambda;
            let (m1, m2) = (&pts[1].output, &pts[2].output);
            let mut c1 = Vec::with_capacity(m0.len());
            let mut c2 = Vec::with_capacity(m0.len());
            for i in 0..m0.len() {
                let d01 = (m1[i] - m0[i]) / u1;
                let d12 = (m2[i] - m1[i]) / (u2 - u1);
                let d012 = (d12 - d01) / u2;
                c1.push(d01 - d012 * u1);
                c2.push(d012);
            }
            vec![m0.clone(), c1, c2]
        }
        _ => unreachable!("order validated to 1..=3"),
    }
}

/// Multistep update of the given order. The newest history entry must be the
/// model output at `x`.
pub fn multistep_step(
    x: &Latent,
    history: &ModelOutputHistory,
    order: usize,
    mode: SolverMode,
    to_t: usize,
    schedule: &NoiseSchedule,
    noise: Option<&[f64]>,
) -> Result<Latent> {
    check_direction(x, to_t, schedule)?;
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidConfig(format!("order must be 1, 2 or 3, got {order}")));
    }
    if history.len() < order {
        return Err(Error::InsufficientHistory {
            order,
            needed: order,
            found: history.len(),
        });
    }
    for entry in history.iter().take(order) {
        ensure_same_len(x.dim(), entry.output.len())?;
    }
    if let Some(z) = noise {
        ensure_same_len(x.dim(), z.len())?;
    }
    if to_t == x.t {
        return Ok(x.clone());
    }
    let from = schedule.level(x.t)?;
    let to = schedule.level(to_t)?;
    let coeffs = history_coefficients(history, order);
    let refs: Vec<&[f64]> = coeffs.iter().map(Vec::as_slice).collect();
    let noise = match mode {
        SolverMode::Sde => noise,
        SolverMode::Ode => None,
    };
    Ok(Latent::new(
        exponential_update(&x.values, &refs, &from, &to, mode, noise),
        to_t,
    ))
}

/// Second-order multistep step; linear correction from two history entries.
pub fn step_order2(
    x: &Latent,
    history: &ModelOutputHistory,
    to_t: usize,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    noise: Option<&[f64]>,
) -> Result<Latent> {
    multistep_step(x, history, 2, config.mode, to_t, schedule, noise)
}

/// Third-order multistep step; quadratic correction from three entries.
pub fn step_order3(
    x: &Latent,
    history: &ModelOutputHistory,
    to_t: usize,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    noise: Option<&[f64]>,
) -> Result<Latent> {
    multistep_step(x, history, 3, config.mode, to_t, schedule, noise)
}

/// Data prediction at `x`, applying classifier-free guidance when the
/// condition asks for it. Returns the prediction and the number of
/// predictor evaluations spent.
pub fn data_prediction<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x: &[f64],
    level: &NoiseLevel,
    cond: &Condition,
) -> Result<(Vec<f64>, usize)> {
    let (eps, calls) = if cond.needs_guidance() {
        let eps_cond = predictor.predict_noise_at(x, level, cond)?;
        let eps_null = predictor.predict_noise_at(x, level, &Condition::null())?;
        (guided_noise(&eps_cond, &eps_null, cond.guidance_scale)?, 2)
    } else {
        (predictor.predict_noise_at(x, level, cond)?, 1)
    };
    ensure_same_len(x.len(), eps.len())?;
    Ok((model_output_at(x, &eps, level)?, calls))
}

/// Single-step second-order update: a deterministic first-order predictor to
/// `λ_s + r1·h`, one extra evaluation there, then the linear-in-λ update.
#[allow(clippy::too_many_arguments)]
pub fn singlestep_order2<P: NoisePredictor + ?Sized>(
    x: &Latent,
    x_theta: &[f64],
    predictor: &P,
    cond: &Condition,
    to_t: usize,
    r1: f64,
    mode: SolverMode,
    schedule: &NoiseSchedule,
    noise: Option<&[f64]>,
) -> Result<(Latent, usize)> {
    check_direction(x, to_t, schedule)?;
    ensure_same_len(x.dim(), x_theta.len())?;
    if to_t == x.t {
        return Ok((x.clone(), 0));
    }
    let from = schedule.level(x.t)?;
    let to = schedule.level(to_t)?;
    let mid = NoiseLevel::from_lambda(from.lambda + r1 * (to.lambda - from.lambda));
    let x_mid = exponential_update(&x.values, &[x_theta], &from, &mid, mode, None);
    let (m_mid, calls) = data_prediction(predictor, &x_mid, &mid, cond)?;
    let u = mid.lambda - from.lambda;
    let slope: Vec<f64> = m_mid.iter().zip(x_theta).map(|(m, s)| (m - s) / u).collect();
    let noise = match mode {
        SolverMode::Sde => noise,
        SolverMode::Ode => None,
    };
    let values = exponential_update(&x.values, &[x_theta, &slope], &from, &to, mode, noise);
    Ok((Latent::new(values, to_t), calls))
}

/// Ordered latent states from the start timestep down to the stop timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Latent>,
    /// Data prediction used by the step that produced `states[i]`; empty for
    /// the starting state.
    pub model_outputs: Vec<Vec<f64>>,
    /// Gaussian vectors consumed by SDE steps, one per step.
    pub noise_draws: Vec<Vec<f64>>,
    pub model_output_history: ModelOutputHistory,
    /// Timestep at which the running latent was replaced, if any.
    pub intervention: Option<usize>,
    /// Total predictor evaluations.
    pub evaluations: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &Latent {
        self.states.last().expect("trajectory always holds its start state")
    }

    pub fn state_at(&self, t: usize) -> Option<&Latent> {
        self.states.iter().find(|s| s.t == t)
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// One JSON object per state: `{t, lambda, state, noise_draw?, model_output}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W, schedule: &NoiseSchedule) -> Result<()> {
        for (i, state) in self.states.iter().enumerate() {
            let noise_draw = if i == 0 {
                None
            } else {
                self.noise_draws.get(i - 1).cloned()
            };
            let rec = StepRecord {
                t: state.t,
                lambda: schedule.lambda(state.t)?,
                state: state.values.clone(),
                noise_draw,
                model_output: self.model_outputs.get(i).cloned().unwrap_or_default(),
                noise_map: None,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trajectory> {
        let mut states = Vec::new();
        let mut model_outputs = Vec::new();
        let mut noise_draws = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord = serde_json::from_str(&line)?;
            states.push(Latent::new(rec.state, rec.t));
            model_outputs.push(rec.model_output);
            if let Some(z) = rec.noise_draw {
                noise_draws.push(z);
            }
        }
        if states.is_empty() {
            return Err(Error::EmptyInput("trajectory"));
        }
        Ok(Trajectory {
            states,
            model_outputs,
            noise_draws,
            model_output_history: ModelOutputHistory::default(),
            intervention: None,
            evaluations: 0,
        })
    }
}

/// One line of the JSON-lines trajectory format, shared with inversion
/// records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub lambda: f64,
    pub state: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_draw: Option<Vec<f64>>,
    #[serde(default)]
    pub model_output: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_map: Option<Vec<f64>>,
}

/// Where SDE steps get their Gaussian vectors.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    /// Counter-based draws keyed by `(config.seed, target timestep)`.
    Seeded,
    /// Deterministic replay: every stochastic term is zero.
    Zero,
    /// Draws recorded by an earlier run, consumed in order.
    Replay(&'a [Vec<f64>]),
}

/// A sampling run that can be advanced in segments, with the running latent
/// replaced between segments.
pub struct SamplerRun<'s> {
    schedule: &'s NoiseSchedule,
    config: SamplerConfig,
    trajectory: Trajectory,
    steps_since_reset: usize,
    replay_cursor: usize,
}

impl<'s> SamplerRun<'s> {
    pub fn new(start: Latent, config: SamplerConfig, schedule: &'s NoiseSchedule) -> Result<Self> {
        config.validate()?;
        schedule.check_index(start.t)?;
        ensure_finite(&start.values, "start latent")?;
        Ok(Self {
            schedule,
            config,
            trajectory: Trajectory {
                states: vec![start],
                model_outputs: vec![Vec::new()],
                noise_draws: Vec::new(),
                model_output_history: ModelOutputHistory::new(config.order),
                intervention: None,
                evaluations: 0,
            },
            steps_since_reset: 0,
            replay_cursor: 0,
        })
    }

    pub fn current(&self) -> &Latent {
        self.trajectory.final_state()
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    fn draw(&mut self, source: &NoiseSource<'_>, to_t: usize, dim: usize) -> Result<Vec<f64>> {
        match source {
            NoiseSource::Seeded => Ok(rng::gaussian(self.config.seed, to_t as u64, dim)),
            NoiseSource::Zero => Ok(vec![0.0; dim]),
            NoiseSource::Replay(draws) => {
                let z = draws.get(self.replay_cursor).cloned().ok_or_else(|| {
                    Error::Format(format!("replay ran out of noise draws at step {}", self.replay_cursor))
                })?;
                self.replay_cursor += 1;
                ensure_same_len(dim, z.len())?;
                Ok(z)
            }
        }
    }

    /// Steps one grid index at a time until the running latent reaches `stop_t`.
    pub fn advance<P: NoisePredictor + ?Sized>(
        &mut self,
        predictor: &P,
        cond: &Condition,
        stop_t: usize,
        source: &NoiseSource<'_>,
    ) -> Result<()> {
        self.schedule.check_index(stop_t)?;
        let start_t = self.current().t;
        if stop_t > start_t {
            return Err(Error::WrongDirection {
                from: start_t,
                to: stop_t,
            });
        }
        while self.current().t > stop_t {
            let x = self.current().clone();
            let to_t = x.t - 1;
            let level = self.schedule.level(x.t)?;
            let (m, calls) = data_prediction(predictor, &x.values, &level, cond)?;
            ensure_finite(&m, "model output")?;
            self.trajectory.evaluations += calls;
            self.trajectory.model_output_history.push(level.lambda, m.clone());

            let order = self
                .config
                .order
                .min(self.steps_since_reset + 1)
                .min(self.trajectory.model_output_history.len());
            let noise = match self.config.mode {
                SolverMode::Sde => Some(self.draw(source, to_t, x.dim())?),
                SolverMode::Ode => None,
            };
            let next = if order >= 2 && !self.config.multistep {
                let (next, extra) = singlestep_order2(
                    &x,
                    &m,
                    predictor,
                    cond,
                    to_t,
                    self.config.r1,
                    self.config.mode,
                    self.schedule,
                    noise.as_deref(),
                )?;
                self.trajectory.evaluations += extra;
                next
            } else {
                multistep_step(
                    &x,
                    &self.trajectory.model_output_history,
                    order,
                    self.config.mode,
                    to_t,
                    self.schedule,
                    noise.as_deref(),
                )?
            };
            if !next.is_finite() {
                return Err(Error::NonFinite("sampler state"));
            }
            self.trajectory.states.push(next);
            self.trajectory.model_outputs.push(m);
            if let Some(z) = noise {
                self.trajectory.noise_draws.push(z);
            }
            self.steps_since_reset += 1;
        }
        Ok(())
    }

    /// Replaces the running latent in place (same timestep).
    pub fn intervene(&mut self, values: Vec<f64>, policy: HistoryPolicy) -> Result<()> {
        let current = self.current();
        ensure_same_len(current.dim(), values.len())?;
        ensure_finite(&values, "intervention latent")?;
        let t = current.t;
        let last = self.trajectory.states.len() - 1;
        self.trajectory.states[last] = Latent::new(values, t);
        self.trajectory.intervention = Some(t);
        if policy == HistoryPolicy::Reset {
            self.trajectory.model_output_history.clear();
            self.steps_since_reset = 0;
        }
        Ok(())
    }

    pub fn finish(self) -> Trajectory {
        self.trajectory
    }
}

/// Baseline sampling loop from `start.t` down to `stop_t`.
pub fn sample<P: NoisePredictor + ?Sized>(
    start: &Latent,
    predictor: &P,
    cond: &Condition,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    stop_t: usize,
) -> Result<Trajectory> {
    let mut run = SamplerRun::new(start.clone(), *config, schedule)?;
    run.advance(predictor, cond, stop_t, &NoiseSource::Seeded)?;
    Ok(run.finish())
}

/// Re-runs a recorded trajectory using its own noise draws.
pub fn replay<P: NoisePredictor + ?Sized>(
    trajectory: &Trajectory,
    predictor: &P,
    cond: &Condition,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<Trajectory> {
    let start = trajectory.states[0].clone();
    let stop_t = trajectory.final_state().t;
    let mut run = SamplerRun::new(start, *config, schedule)?;
    run.advance(predictor, cond, stop_t, &NoiseSource::Replay(&trajectory.noise_draws))?;
    Ok(run.finish())
}

/// Standard-normal start latent at the noisiest grid point.
pub fn pure_noise(seed: u64, dim: usize, schedule: &NoiseSchedule) -> Latent {
    Latent::new(rng::gaussian(seed, rng::START_KEY, dim), schedule.last_index())
}
