use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use dpmfuse::denoiser::{Condition, DenoiserOracle, Latent, OracleConfig, OracleKind};
use dpmfuse::fusion::{fuse as run_fusion, sweep_intervention, write_sweep_csv, FusionConfig};
use dpmfuse::inversion::{
    derive_noise_map, invert as run_inversion, max_relative_deviation, reconstruct_exact,
    InversionRecord, InversionVariant,
};
use dpmfuse::lab::signal::{DEFAULT_SAMPLE_RATE, DEFAULT_SIGNAL_LENGTH};
use dpmfuse::lab::{
    compare_inversion_variants, generate_signal, measure, spectrogram, LatentCodec, Signal,
    SignalKind,
};
use dpmfuse::sampler::{pure_noise, sample as run_sampler, SamplerConfig, SolverMode};
use dpmfuse::schedule::NoiseSchedule;
use dpmfuse::stats::spearman;
use serde_json::{json, Value};

use crate::exit::{ensure_finite, Coded, Exit};
use crate::io::{load_latent, load_record, read_json_file, sidecar_manifest, Outputs};
use crate::{
    Cond, CompareArgs, FuseArgs, GenArgs, InvertArgs, RenderArgs, RoundtripArgs, SampleArgs,
    SweepArgs,
};

/// Relative tolerance for exact-replay checks.
const REPLAY_TOLERANCE: f64 = 1e-6;

fn snr_db(clean: &[f64], estimate: &[f64]) -> f64 {
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    let noise: f64 = clean.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

/// JSON has no infinity; report it as null.
fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

struct Render {
    codec: LatentCodec,
    length: usize,
    sample_rate: u32,
}

impl Render {
    fn new(dim: usize, args: &RenderArgs, like: Option<&Signal>) -> Self {
        Self {
            codec: LatentCodec::new(dim),
            length: args.length.or(like.map(Signal::len)).unwrap_or(DEFAULT_SIGNAL_LENGTH),
            sample_rate: args
                .sample_rate
                .or(like.map(|s| s.sample_rate))
                .unwrap_or(DEFAULT_SAMPLE_RATE),
        }
    }

    fn signal(&self, latent: &Latent, label: &str) -> Result<Signal> {
        ensure_finite(&latent.values, label)?;
        Ok(self.codec.decode(latent, self.length, self.sample_rate, label)?)
    }
}

/// Resolves `--config` into an oracle, falling back to `default` when no
/// config is given. A `reference_signal_path` in the config is resolved
/// relative to the config file.
fn build_oracle(
    config: Option<&Path>,
    reference: Option<&Latent>,
    dim: usize,
    default: impl FnOnce() -> Result<OracleKind>,
) -> Result<DenoiserOracle> {
    let Some(path) = config else {
        return Ok(DenoiserOracle::new(default()?));
    };
    let cfg: OracleConfig = read_json_file(path)?;
    let from_file = match (&cfg.reference_signal_path, reference) {
        (Some(p), None) => {
            let base = path.parent().unwrap_or(Path::new("."));
            Some(load_latent(&base.join(p), &LatentCodec::new(dim))?.latent)
        }
        _ => None,
    };
    let x_ref = reference.or(from_file.as_ref()).map(|l| l.values.as_slice());
    Ok(DenoiserOracle::new(cfg.resolve(x_ref, dim)?))
}

pub fn gen(args: GenArgs) -> Result<Value> {
    let signal = generate_signal(args.kind, args.seed, args.length)?;
    let mut outputs = Outputs::new();
    outputs.write_wav(&args.out, &signal)?;
    if let Some(path) = &args.spectrogram {
        let spec = spectrogram(&signal, args.frame, args.hop)?;
        let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        outputs.write_with(path, |w| {
            if csv {
                spec.write_csv(w)?;
            } else {
                spec.write_pgm(w)?;
            }
            Ok(())
        })?;
    }
    let manifest_path = sidecar_manifest(&args.out);
    let manifest = outputs.finish(&manifest_path, "gen", None, args.seed, None)?;
    Ok(json!({
        "command": "gen",
        "kind": args.kind.to_string(),
        "samples": signal.len(),
        "sample_rate": signal.sample_rate,
        "manifest": manifest_path,
        "outputs": manifest.outputs,
    }))
}

/// Largest relative error of `α_t x0 + σ_t ε_t` against the stored latents.
fn noise_map_error(record: &InversionRecord, schedule: &NoiseSchedule) -> Result<f64> {
    let x0 = record.x0();
    let mut worst = 0.0_f64;
    for t in 1..=record.t_max() {
        let latent = &record.latents()[t];
        let eps = derive_noise_map(latent, x0, schedule)?;
        let (a, s) = (schedule.alpha(t)?, schedule.sigma(t)?);
        let scale = latent.values.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
        for ((x, u), e) in latent.values.iter().zip(&x0.values).zip(&eps) {
            worst = worst.max((a * u + s * e - x).abs() / scale);
        }
    }
    Ok(worst)
}

pub fn invert(args: InvertArgs) -> Result<Value> {
    let schedule = args.schedule.build()?;
    let mode = SolverMode::from(args.mode);
    let variant = args.variant.resolve(mode);
    let t_max = args.t_max.unwrap_or(schedule.last_index());
    let loaded = load_latent(&args.input, &LatentCodec::new(args.dim))?;
    let record = run_inversion(variant, &loaded.latent, &schedule, t_max, args.seed)?;
    for latent in record.latents() {
        ensure_finite(&latent.values, "inverted latents")?;
    }

    let mut outputs = Outputs::new();
    outputs.write_with(&args.out, |w| Ok(record.write_jsonl(w, &schedule)?))?;
    let manifest_path = sidecar_manifest(&args.out);
    outputs.finish(&manifest_path, "invert", None, args.seed, Some(&schedule))?;

    let mut summary = json!({
        "command": "invert",
        "record": args.out,
        "manifest": manifest_path,
        "variant": variant.letter().to_string(),
        "mode": mode.to_string(),
        "t_max": t_max,
        "dimension": record.dim(),
        "schedule_fingerprint": schedule.fingerprint(),
    });
    if args.verify {
        let map_error = noise_map_error(&record, &schedule)?;
        let mut passed = map_error <= 1e-9;
        let mut check = json!({ "noise_map_error": map_error });
        if variant.is_deterministic() {
            let traj = reconstruct_exact(&record, &SamplerConfig::new(mode, 1, args.seed), &schedule)?;
            let dev = max_relative_deviation(&traj, &record);
            passed &= dev <= REPLAY_TOLERANCE;
            check["replay_max_relative_deviation"] = json!(dev);
            check["reconstruction_snr_db"] =
                finite_or_null(snr_db(&record.x0().values, &traj.final_state().values));
        }
        check["passed"] = json!(passed);
        summary["verify"] = check;
        if !passed {
            eprintln!("{summary}");
            bail!(Coded::new(Exit::Verification, "record failed verification"));
        }
    }
    Ok(summary)
}

pub fn sample(args: SampleArgs) -> Result<Value> {
    let schedule = args.schedule.build()?;
    let codec = LatentCodec::new(args.dim);
    let reference = args
        .reference
        .as_deref()
        .map(|p| load_latent(p, &codec))
        .transpose()?;
    let ref_latent = reference.as_ref().map(|r| &r.latent);
    let oracle = build_oracle(args.config.as_deref(), ref_latent, args.dim, || {
        Ok(OracleKind::GaussianPosterior {
            mu: vec![0.0; args.dim],
            gamma: 1.0,
        })
    })?;
    let cond = match args.cond {
        Cond::Null => Condition::null(),
        Cond::Reference => Condition::reference(),
    }
    .with_scale(args.guidance);
    let config = SamplerConfig::new(args.mode.into(), args.order, args.seed);
    let start = pure_noise(args.seed, args.dim, &schedule);
    let traj = run_sampler(&start, &oracle, &cond, &config, &schedule, 0)?;
    let render = Render::new(args.dim, &args.render, reference.as_ref().and_then(|r| r.signal.as_ref()));
    let rendered = render.signal(traj.final_state(), "sample")?;

    let mut outputs = Outputs::new();
    let traj_path = args.out.join("trajectory.jsonl");
    let wav_path = args.out.join("sample.wav");
    outputs.write_with(&traj_path, |w| Ok(traj.write_jsonl(w, &schedule)?))?;
    outputs.write_wav(&wav_path, &rendered)?;
    let manifest_path = args.out.join("manifest.json");
    let manifest = outputs.finish(&manifest_path, "sample", args.config.as_deref(), args.seed, Some(&schedule))?;
    Ok(json!({
        "command": "sample",
        "evaluations": traj.evaluations,
        "steps": traj.steps(),
        "manifest": manifest_path,
        "outputs": manifest.outputs,
    }))
}

struct FusionInputs {
    record: InversionRecord,
    schedule: NoiseSchedule,
    reference: Latent,
    reference_signal: Option<Signal>,
    oracle: DenoiserOracle,
}

fn fusion_inputs(record: &Path, reference: &Path, config: Option<&Path>) -> Result<FusionInputs> {
    let (record, schedule) = load_record(record)?;
    let dim = record.dim();
    let loaded = load_latent(reference, &LatentCodec::new(dim))?;
    if loaded.latent.dim() != dim {
        bail!(Coded::new(
            Exit::Usage,
            format!("reference has dimension {}, record has {dim}", loaded.latent.dim())
        ));
    }
    let x_ref = loaded.latent.values.clone();
    let oracle = build_oracle(config, Some(&loaded.latent), dim, || {
        Ok(OracleKind::Memorizing {
            x_ref: x_ref.clone(),
            fallback: Box::new(OracleKind::GaussianPosterior { mu: x_ref, gamma: 1.0 }),
        })
    })?;
    Ok(FusionInputs {
        record,
        schedule,
        reference: loaded.latent,
        reference_signal: loaded.signal,
        oracle,
    })
}

fn check_timesteps(record: &InversionRecord, ts: &[usize]) -> Result<()> {
    for &t in ts {
        if record.latent(t).is_none() {
            bail!(Coded::new(
                Exit::MissingTimestep,
                format!("timestep {t} is not in the record (t_max = {})", record.t_max())
            ));
        }
    }
    Ok(())
}

fn rank_summary(rows: &[dpmfuse::SweepRow], order: usize) -> Value {
    let sel: Vec<_> = rows.iter().filter(|r| r.order == order).collect();
    let t: Vec<f64> = sel.iter().map(|r| r.intervention_t as f64).collect();
    let orig: Vec<f64> = sel.iter().map(|r| r.dist_original).collect();
    let reference: Vec<f64> = sel.iter().map(|r| r.dist_reference).collect();
    json!({
        "order": order,
        "spearman_original": finite_or_null(spearman(&t, &orig)),
        "spearman_reference": finite_or_null(spearman(&t, &reference)),
    })
}

pub fn fuse(args: FuseArgs) -> Result<Value> {
    let inputs = fusion_inputs(&args.record, &args.reference, args.config.as_deref())?;
    check_timesteps(&inputs.record, &args.intervene_t)?;
    let order = usize::from(args.order);
    let base = FusionConfig::new(None, args.mode.into(), order, args.seed).with_history(args.history.into());
    let mut outputs = Outputs::new();

    if args.intervene_t.len() > 1 {
        let rows = sweep_intervention(
            &inputs.record,
            &inputs.oracle,
            &inputs.reference.values,
            &base,
            &[order],
            &args.intervene_t,
            &inputs.schedule,
        )?;
        for r in &rows {
            ensure_finite(&[r.dist_original, r.dist_reference], "sweep distances")?;
        }
        let csv_path = args.out.join("sweep.csv");
        outputs.write_with(&csv_path, |w| Ok(write_sweep_csv(&rows, w)?))?;
        let manifest_path = args.out.join("manifest.json");
        let manifest = outputs.finish(
            &manifest_path,
            "fuse",
            args.config.as_deref(),
            args.seed,
            Some(&inputs.schedule),
        )?;
        return Ok(json!({
            "command": "fuse",
            "rows": rows.len(),
            "ranks": rank_summary(&rows, order),
            "manifest": manifest_path,
            "outputs": manifest.outputs,
        }));
    }

    let t = args.intervene_t[0];
    let config = FusionConfig {
        intervention_t: Some(t),
        ..base
    };
    let result = run_fusion(
        &inputs.record,
        &inputs.oracle,
        &inputs.reference.values,
        &config,
        &inputs.schedule,
    )?;
    let render = Render::new(inputs.record.dim(), &args.render, inputs.reference_signal.as_ref());
    let fused = render.signal(&result.fused, "fused")?;
    let original = render.signal(inputs.record.x0(), "original")?;
    let reference = render.signal(&inputs.reference, "reference")?;
    let metrics = json!({
        "intervention_t": t,
        "order": order,
        "mode": config.mode.to_string(),
        "history": format!("{:?}", config.history_policy).to_lowercase(),
        "latent_rmse_original": result.distances.to_original,
        "latent_rmse_reference": result.distances.to_reference,
        "vs_original": report(&original, &fused)?,
        "vs_reference": report(&reference, &fused)?,
        "evaluations": result.trajectory.evaluations,
    });

    let wav_path = args.out.join("fused.wav");
    let traj_path = args.out.join("trajectory.jsonl");
    let metrics_path = args.out.join("metrics.json");
    outputs.write_wav(&wav_path, &fused)?;
    outputs.write_with(&traj_path, |w| Ok(result.trajectory.write_jsonl(w, &inputs.schedule)?))?;
    outputs.write_json(&metrics_path, &metrics)?;
    let manifest_path = args.out.join("manifest.json");
    let manifest = outputs.finish(
        &manifest_path,
        "fuse",
        args.config.as_deref(),
        args.seed,
        Some(&inputs.schedule),
    )?;
    Ok(json!({
        "command": "fuse",
        "metrics": metrics,
        "manifest": manifest_path,
        "outputs": manifest.outputs,
    }))
}

fn report(reference: &Signal, candidate: &Signal) -> Result<Value> {
    let m = measure(reference, candidate)?;
    Ok(json!({
        "snr_db": finite_or_null(m.snr_db),
        "rmse": m.rmse,
        "lsd": m.lsd,
    }))
}

pub fn compare(args: CompareArgs) -> Result<Value> {
    let schedule = args.schedule.build()?;
    let kinds = if args.kinds.is_empty() {
        SignalKind::ALL.to_vec()
    } else {
        args.kinds.clone()
    };
    let signals = kinds
        .iter()
        .map(|&k| generate_signal(k, args.seed, args.length))
        .collect::<dpmfuse::Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (args.seed..args.seed + args.trials).collect();
    let config = SamplerConfig::new(args.mode.into(), 1, args.seed);
    let codec = LatentCodec::new(args.dim);
    let table = compare_inversion_variants(&signals, &schedule, &config, &seeds, &codec)?;

    let mut outputs = Outputs::new();
    let csv_path = args.out.join("compare.csv");
    outputs.write_with(&csv_path, |w| Ok(table.write_csv(w)?))?;
    for signal in &signals {
        let spec = spectrogram(signal, 512, 128)?;
        let path: PathBuf = args.out.join(format!("{}.pgm", signal.label.replace(':', "_")));
        outputs.write_with(&path, |w| Ok(spec.write_pgm(w)?))?;
    }
    let manifest_path = args.out.join("manifest.json");
    let manifest = outputs.finish(&manifest_path, "compare", None, args.seed, Some(&schedule))?;
    let means: Vec<Value> = table
        .means
        .iter()
        .map(|m| {
            json!({
                "variant": m.variant.to_string(),
                "trials": m.trials,
                "mean_snr_db": finite_or_null(m.mean_snr_db),
                "mean_rmse": finite_or_null(m.mean_rmse),
                "mean_lsd": finite_or_null(m.mean_lsd),
            })
        })
        .collect();
    Ok(json!({
        "command": "compare",
        "rows": table.rows.len(),
        "means": means,
        "manifest": manifest_path,
        "outputs": manifest.outputs,
    }))
}

pub fn sweep(args: SweepArgs) -> Result<Value> {
    let inputs = fusion_inputs(&args.record, &args.reference, args.config.as_deref())?;
    check_timesteps(&inputs.record, &args.t_values)?;
    let base = FusionConfig::new(None, args.mode.into(), 1, args.seed).with_history(args.history.into());
    let rows = sweep_intervention(
        &inputs.record,
        &inputs.oracle,
        &inputs.reference.values,
        &base,
        &args.orders,
        &args.t_values,
        &inputs.schedule,
    )?;
    for r in &rows {
        ensure_finite(&[r.dist_original, r.dist_reference], "sweep distances")?;
    }
    let mut outputs = Outputs::new();
    let csv_path = args.out.join("sweep.csv");
    outputs.write_with(&csv_path, |w| Ok(write_sweep_csv(&rows, w)?))?;
    let manifest_path = args.out.join("manifest.json");
    let manifest = outputs.finish(
        &manifest_path,
        "sweep",
        args.config.as_deref(),
        args.seed,
        Some(&inputs.schedule),
    )?;
    let mut orders = args.orders.clone();
    orders.sort_unstable();
    orders.dedup();
    Ok(json!({
        "command": "sweep",
        "rows": rows.len(),
        "ranks": orders.iter().map(|&o| rank_summary(&rows, o)).collect::<Vec<_>>(),
        "manifest": manifest_path,
        "outputs": manifest.outputs,
    }))
}

pub fn roundtrip(args: RoundtripArgs) -> Result<Value> {
    let (record, schedule) = load_record(&args.record)?;
    let mode = match record.variant() {
        InversionVariant::DeterministicSde => SolverMode::Sde,
        InversionVariant::DeterministicOde => SolverMode::Ode,
        other => bail!(Coded::new(
            Exit::Usage,
            format!("roundtrip needs a variant a record, got {}", other.letter())
        )),
    };
    let config = SamplerConfig::new(mode, 1, 0);
    let traj = reconstruct_exact(&record, &config, &schedule)?;
    ensure_finite(&traj.final_state().values, "reconstruction")?;
    let dev = max_relative_deviation(&traj, &record);
    let snr = snr_db(&record.x0().values, &traj.final_state().values);

    let mut summary = json!({
        "command": "roundtrip",
        "variant": record.variant().letter().to_string(),
        "mode": mode.to_string(),
        "t_max": record.t_max(),
        "max_relative_deviation": dev,
        "reconstruction_snr_db": finite_or_null(snr),
        "tolerance": REPLAY_TOLERANCE,
        "passed": dev <= REPLAY_TOLERANCE,
    });
    if let Some(dir) = &args.out {
        let render = Render::new(record.dim(), &args.render, None);
        let mut outputs = Outputs::new();
        outputs.write_with(&dir.join("replay.jsonl"), |w| Ok(traj.write_jsonl(w, &schedule)?))?;
        outputs.write_wav(&dir.join("original.wav"), &render.signal(record.x0(), "original")?)?;
        outputs.write_wav(
            &dir.join("reconstructed.wav"),
            &render.signal(traj.final_state(), "reconstructed")?,
        )?;
        let manifest_path = dir.join("manifest.json");
        let manifest = outputs.finish(&manifest_path, "roundtrip", None, 0, Some(&schedule))?;
        summary["manifest"] = json!(manifest_path);
        summary["outputs"] = json!(manifest.outputs);
    }
    if dev > REPLAY_TOLERANCE {
        eprintln!("{summary}");
        bail!(Coded::new(
            Exit::Verification,
            format!("replay deviation {dev:e} exceeds {REPLAY_TOLERANCE:e}")
        ));
    }
    Ok(summary)
}
