//! Two-phase latent-intervention fusion.
//!
//! Phase 1 samples from pure noise under the reference condition down to the
//! intervention timestep. There the running latent is replaced by the
//! inverted latent of the original at the same timestep (the `x_s` slot of the
//! update). Phase 2 finishes under the null condition. Under
//! [`HistoryPolicy::Persist`] the multistep buffer keeps the reference-phase
//! model outputs across the intervention.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, ConditionTag, Latent, NoisePredictor};
use crate::error::{ensure_same_len, Error, Result};
use crate::inversion::{check_fingerprint, InversionRecord};
use crate::sampler::{pure_noise, HistoryPolicy, NoiseSource, SamplerConfig, SamplerRun, SolverMode, Trajectory};
use crate::schedule::NoiseSchedule;
use crate::stats::rmse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// `None` runs the reference phase all the way to t = 0.
    pub intervention_t: Option<usize>,
    pub mode: SolverMode,
    pub order: usize,
    pub seed: u64,
    pub reference_cond: Condition,
    pub post_cond: Condition,
    pub history_policy: HistoryPolicy,
}

impl FusionConfig {
    pub fn new(intervention_t: Option<usize>, mode: SolverMode, order: usize, seed: u64) -> Self {
        Self {
            intervention_t,
            mode,
            order,
            seed,
            reference_cond: Condition::reference(),
            post_cond: Condition::null(),
            history_policy: HistoryPolicy::Persist,
        }
    }

    pub fn with_history(mut self, policy: HistoryPolicy) -> Self {
        self.history_policy = policy;
        self
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig::new(self.mode, self.order, self.seed)
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.post_cond.tag != ConditionTag::Null {
            return Err(Error::InvalidConfig(format!(
                "second fusion phase runs under the null condition, got {}",
                self.post_cond.tag
            )));
        }
        if self.reference_cond.tag != ConditionTag::Reference {
            return Err(Error::InvalidConfig(format!(
                "first fusion phase runs under the reference condition, got {}",
                self.reference_cond.tag
            )));
        }
        if let Some(t) = self.intervention_t {
            schedule.check_index(t)?;
        }
        self.sampler_config().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub to_original: f64,
    pub to_reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub fused: Latent,
    pub trajectory: Trajectory,
    /// Latent-space RMSE to the original `x0` and to the reference.
    pub distances: Distances,
}

pub fn fuse<P: NoisePredictor + ?Sized>(
    record: &InversionRecord,
    predictor: &P,
    reference: &[f64],
    config: &FusionConfig,
    schedule: &NoiseSchedule,
) -> Result<FusionResult> {
    config.validate(schedule)?;
    check_fingerprint(record, schedule)?;
    ensure_same_len(record.dim(), reference.len())?;
    for cond in [&config.reference_cond, &config.post_cond] {
        if !predictor.supports(&cond.tag) {
            return Err(Error::UnsupportedCondition(cond.tag.to_string()));
        }
    }
    let inverted = match config.intervention_t {
        Some(t) => Some(record.latent(t).ok_or(Error::MissingLatent(t))?),
        None => None,
    };

    let start = pure_noise(config.seed, record.dim(), schedule);
    let mut run = SamplerRun::new(start, config.sampler_config(), schedule)?;
    let phase1_stop = config.intervention_t.unwrap_or(0);
    run.advance(predictor, &config.reference_cond, phase1_stop, &NoiseSource::Seeded)?;
    if let Some(latent) = inverted {
        run.intervene(latent.values.clone(), config.history_policy)?;
        run.advance(predictor, &config.post_cond, 0, &NoiseSource::Seeded)?;
    }
    let trajectory = run.finish();
    let fused = trajectory.final_state().clone();
    let distances = Distances {
        to_original: rmse(&fused.values, &record.x0().values),
        to_reference: rmse(&fused.values, reference),
    };
    Ok(FusionResult {
        fused,
        trajectory,
        distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub order: usize,
    pub mode: SolverMode,
    pub intervention_t: usize,
    pub dist_original: f64,
    pub dist_reference: f64,
    pub seed: u64,
}

/// Runs [`fuse`] for every `(order, t)` cell; rows are ordered by
/// `(order, mode, t)`.
pub fn sweep_intervention<P: NoisePredictor + ?Sized>(
    record: &InversionRecord,
    predictor: &P,
    reference: &[f64],
    base: &FusionConfig,
    orders: &[usize],
    t_values: &[usize],
    schedule: &NoiseSchedule,
) -> Result<Vec<SweepRow>> {
    for &t in t_values {
        if record.latent(t).is_none() {
            return Err(Error::MissingLatent(t));
        }
    }
    let cells: Vec<(usize, usize)> = orders
        .iter()
        .flat_map(|&o| t_values.iter().map(move |&t| (o, t)))
        .collect();
    let mut rows = cells
        .par_iter()
        .map(|&(order, t)| {
            let config = FusionConfig {
                intervention_t: Some(t),
                order,
                ..base.clone()
            };
            fuse(record, predictor, reference, &config, schedule).map(|r| SweepRow {
                order,
                mode: config.mode,
                intervention_t: t,
                dist_original: r.distances.to_original,
                dist_reference: r.distances.to_reference,
                seed: config.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        (a.order, a.mode, a.intervention_t).cmp(&(b.order, b.mode, b.intervention_t))
    });
    Ok(rows)
}

/// CSV with header `order,mode,intervention_t,dist_original,dist_reference,seed`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "order",
        "mode",
        "intervention_t",
        "dist_original",
        "dist_reference",
        "seed",
    ])?;
    for r in rows {
        w.write_record([
            r.order.to_string(),
            r.mode.to_string(),
            r.intervention_t.to_string(),
            format!("{:.17e}", r.dist_original),
            format!("{:.17e}", r.dist_reference),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserOracle, RecordingPredictor};
    use crate::inversion::{invert_ode, NoiseMapReplay};
    use crate::rng;
    use crate::schedule::ScheduleKind;
    use crate::stats::spearman;

    fn setup(dim: usize) -> (NoiseSchedule, InversionRecord, Vec<f64>) {
        let s = NoiseSchedule::build(ScheduleKind::LogLinearLambda, 201, 10.0, -10.0).unwrap();
        let x0 = Latent::new(rng::gaussian(1, 0, dim), 0);
        let x_ref = rng::gaussian(2, 0, dim);
        let rec = invert_ode(&x0, &s, 200).unwrap();
        (s, rec, x_ref)
    }

    #[test]
    fn intervention_at_clean_timestep_returns_x0() {
        let (s, rec, x_ref) = setup(16);
        let oracle = DenoiserOracle::memorizing(x_ref.clone(), 1.0);
        for (mode, order) in [(SolverMode::Ode, 1), (SolverMode::Sde, 3)] {
            let cfg = FusionConfig::new(Some(0), mode, order, 5);
            let out = fuse(&rec, &oracle, &x_ref, &cfg, &s).unwrap();
            assert_eq!(out.fused, *rec.x0());
            assert_eq!(out.distances.to_original, 0.0);
        }
    }

    #[test]
    fn immediate_intervention_with_noise_maps_reconstructs() {
        let (s, _, x_ref) = setup(16);
        let x0 = Latent::new(rng::gaussian(9, 0, 16), 0);
        // Phase 2 of the stochastic solver draws fresh noise, so only the
        // deterministic pairing is an exact inverse here.
        for (mode, rec) in [(SolverMode::Ode, invert_ode(&x0, &s, 200).unwrap())] {
            let replay = NoiseMapReplay::new(&rec);
            let mut cfg = FusionConfig::new(Some(200), mode, 1, 0);
            cfg.reference_cond = Condition::reference();
            let out = fuse(&rec, &replay, &x_ref, &cfg, &s).unwrap();
            let scale = x0.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (a, b) in out.fused.values.iter().zip(&x0.values) {
                assert!((a - b).abs() <= 1e-6 * scale, "{mode}");
            }
        }
    }

    #[test]
    fn phase_discipline() {
        let (s, rec, x_ref) = setup(8);
        let logged = RecordingPredictor::new(DenoiserOracle::memorizing(x_ref.clone(), 1.0));
        let cfg = FusionConfig::new(Some(120), SolverMode::Sde, 2, 3);
        fuse(&rec, &logged, &x_ref, &cfg, &s).unwrap();
        let calls = logged.calls();
        assert_eq!(calls.len(), 200);
        for c in &calls {
            let t = c.t.unwrap();
            if t > 120 {
                assert_eq!(c.tag, ConditionTag::Reference, "t={t}");
            } else {
                assert_eq!(c.tag, ConditionTag::Null, "t={t}");
            }
        }
        assert_eq!(logged.inner().calls(), 200);
    }

    #[test]
    fn no_intervention_converges_to_reference() {
        let (s, rec, x_ref) = setup(32);
        let oracle = DenoiserOracle::memorizing(x_ref.clone(), 1.0);
        let cfg = FusionConfig::new(None, SolverMode::Ode, 1, 8);
        let out = fuse(&rec, &oracle, &x_ref, &cfg, &s).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let start = &out.trajectory.states[0].values;
        let last = s.last_index();
        let bound = s.sigma(0).unwrap() / s.sigma(last).unwrap()
            * (norm(start) + s.alpha(last).unwrap() * norm(&x_ref))
            + (1.0 - s.alpha(0).unwrap()) * norm(&x_ref);
        let err: Vec<f64> = out.fused.values.iter().zip(&x_ref).map(|(a, b)| a - b).collect();
        assert!(norm(&err) <= bound);
    }

    #[test]
    fn deterministic_per_seed() {
        let (s, rec, x_ref) = setup(8);
        let oracle = DenoiserOracle::memorizing(x_ref.clone(), 1.0);
        let cfg = FusionConfig::new(Some(80), SolverMode::Sde, 3, 21);
        let a = fuse(&rec, &oracle, &x_ref, &cfg, &s).unwrap();
        let b = fuse(&rec, &oracle, &x_ref, &cfg, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn history_policy_changes_higher_order_output() {
        let (s, rec, x_ref) = setup(8);
        let oracle = DenoiserOracle::memorizing(x_ref.clone(), 1.0);
        let persist = FusionConfig::new(Some(120), SolverMode::Ode, 3, 4);
        let reset = persist.clone().with_history(HistoryPolicy::Reset);
        let a = fuse(&rec, &oracle, &x_ref, &persist, &s).unwrap();
        let b = fuse(&rec, &oracle, &x_ref, &reset, &s).unwrap();
        assert_ne!(a.fused, b.fused);
    }

    #[test]
    fn sweep_transition_is_monotone() {
        let (s, rec, x_ref) = setup(64);
        let oracle = DenoiserOracle::memorizing(x_ref.clone(), 1.0);
        let base = FusionConfig::new(None, SolverMode::Ode, 1, 7);
        let ts = [0, 40, 80, 120, 160, 200];
        let rows = sweep_intervention(&rec, &oracle, &x_ref, &base, &[1], &ts, &s).unwrap();
        assert_eq!(rows.len(), 6);
        let t: Vec<f64> = rows.iter().map(|r| r.intervention_t as f64).collect();
        let d_orig: Vec<f64> = rows.iter().map(|r| r.dist_original).collect();
        let d_ref: Vec<f64> = rows.iter().map(|r| r.dist_reference).collect();
        assert!(d_orig.windows(2).all(|w| w[1] >= w[0]), "{d_orig:?}");
        assert!(d_ref.windows(2).all(|w| w[1] <= w[0]), "{d_ref:?}");
        assert!(spearman(&t, &d_orig) >= 0.8);
        assert!(spearman(&t, &d_ref) <= -0.8);
    }

    #[test]
    fn sweep_cardinality_and_single_row() {
        let (s, rec, x_ref) = setup(8);
        let oracle = DenoiserOracle::memorizing(x_ref.clone(), 1.0);
        let base = FusionConfig::new(None, SolverMode::Ode, 1, 2);
        assert!(sweep_intervention(&rec, &oracle, &x_ref, &base, &[1, 2, 3], &[], &s)
            .unwrap()
            .is_empty());
        let rows = sweep_intervention(&rec, &oracle, &x_ref, &base, &[1, 2, 3], &[0, 80, 120, 140, 160], &s).unwrap();
        assert_eq!(rows.len(), 15);
        let one = sweep_intervention(&rec, &oracle, &x_ref, &base, &[2], &[140], &s).unwrap();
        let direct = fuse(&rec, &oracle, &x_ref, &FusionConfig::new(Some(140), SolverMode::Ode, 2, 2), &s).unwrap();
        assert_eq!(one[0].dist_original, direct.distances.to_original);
        assert_eq!(one[0].dist_reference, direct.distances.to_reference);

        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("order,mode,intervention_t,dist_original,dist_reference,seed\n"));
        assert_eq!(text.lines().count(), 16);
    }

    #[test]
    fn missing_latent_and_bad_conditions() {
        let s = NoiseSchedule::build(ScheduleKind::LogLinearLambda, 201, 10.0, -10.0).unwrap();
        let x0 = Latent::new(vec![0.1; 4], 0);
        let rec = invert_ode(&x0, &s, 50).unwrap();
        let oracle = DenoiserOracle::memorizing(vec![0.0; 4], 1.0);
        let cfg = FusionConfig::new(Some(60), SolverMode::Ode, 1, 0);
        assert!(matches!(
            fuse(&rec, &oracle, &[0.0; 4], &cfg, &s),
            Err(Error::MissingLatent(60))
        ));
        let mut cfg = FusionConfig::new(Some(10), SolverMode::Ode, 1, 0);
        cfg.post_cond = Condition::reference();
        assert!(matches!(fuse(&rec, &oracle, &[0.0; 4], &cfg, &s), Err(Error::InvalidConfig(_))));
    }

    struct NullOnly(DenoiserOracle);

    impl NoisePredictor for NullOnly {
        fn predict_noise_at(&self, x: &[f64], level: &crate::schedule::NoiseLevel, cond: &Condition) -> Result<Vec<f64>> {
            self.0.predict_noise_at(x, level, cond)
        }

        fn supports(&self, tag: &ConditionTag) -> bool {
            *tag == ConditionTag::Null
        }
    }

    #[test]
    fn unsupported_condition_is_reported() {
        let (s, rec, x_ref) = setup(4);
        let p = NullOnly(DenoiserOracle::gaussian_posterior(vec![0.0; 4], 1.0));
        let cfg = FusionConfig::new(Some(100), SolverMode::Ode, 1, 0);
        assert!(matches!(
            fuse(&rec, &p, &x_ref, &cfg, &s),
            Err(Error::UnsupportedCondition(_))
        ));
    }
}
