//! Reconstruction quality of the three inversion variants under one shared
//! measurement path: invert to the noisiest grid point, sample back with each
//! record's own noise maps (stochastic terms zeroed), render, measure against
//! the rendered original.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{measure, MetricReport};
use super::signal::{LatentCodec, Signal};
use crate::error::{Error, Result};
use crate::inversion::{invert, replay_with_noise_maps, InversionVariant};
use crate::sampler::{NoiseSource, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub signal: String,
    pub seed: u64,
    /// `a`, `b` or `c`.
    pub variant: char,
    pub snr_db: f64,
    pub rmse: f64,
    pub lsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: char,
    pub trials: usize,
    pub mean_snr_db: f64,
    pub mean_rmse: f64,
    pub mean_lsd: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub means: Vec<VariantSummary>,
}

impl ComparisonTable {
    pub fn summary(&self, variant: char) -> Option<&VariantSummary> {
        self.means.iter().find(|m| m.variant == variant)
    }

    /// Rows for one variant, in trial order.
    pub fn variant_rows(&self, variant: char) -> Vec<&ComparisonRow> {
        self.rows.iter().filter(|r| r.variant == variant).collect()
    }

    /// CSV: per-trial rows followed by one `mean` row per variant.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["signal", "seed", "variant", "snr_db", "rmse", "lsd"])?;
        for r in &self.rows {
            w.write_record([
                r.signal.clone(),
                r.seed.to_string(),
                r.variant.to_string(),
                format!("{:.17e}", r.snr_db),
                format!("{:.17e}", r.rmse),
                format!("{:.17e}", r.lsd),
            ])?;
        }
        for m in &self.means {
            w.write_record([
                "mean".to_string(),
                String::new(),
                m.variant.to_string(),
                format!("{:.17e}", m.mean_snr_db),
                format!("{:.17e}", m.mean_rmse),
                format!("{:.17e}", m.mean_lsd),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn trial(
    signal: &Signal,
    seed: u64,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    codec: &LatentCodec,
) -> Result<Vec<ComparisonRow>> {
    let x0 = codec.encode(signal)?;
    let original = codec.decode(&x0, signal.len(), signal.sample_rate, &signal.label)?;
    let config = SamplerConfig { seed, ..*config };
    let variants = [
        InversionVariant::from_letter("a", config.mode)?,
        InversionVariant::ForwardDiffusion,
        InversionVariant::StochasticRetained,
    ];
    variants
        .iter()
        .map(|&variant| {
            let record = invert(variant, &x0, schedule, schedule.last_index(), seed)?;
            let traj = replay_with_noise_maps(&record, &config, schedule, &NoiseSource::Zero)?;
            let rendered = codec.decode(traj.final_state(), signal.len(), signal.sample_rate, &signal.label)?;
            let MetricReport { snr_db, rmse, lsd } = measure(&original, &rendered)?;
            Ok(ComparisonRow {
                signal: signal.label.clone(),
                seed,
                variant: variant.letter(),
                snr_db,
                rmse,
                lsd,
            })
        })
        .collect()
}

/// One row per (signal, seed, variant), plus per-variant means.
pub fn compare_inversion_variants(
    signals: &[Signal],
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    seeds: &[u64],
    codec: &LatentCodec,
) -> Result<ComparisonTable> {
    if signals.is_empty() {
        return Err(Error::EmptyInput("signals"));
    }
    config.validate()?;
    let cells: Vec<(usize, u64)> = (0..signals.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let rows: Vec<ComparisonRow> = cells
        .par_iter()
        .map(|&(i, seed)| trial(&signals[i], seed, schedule, config, codec))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let means = ['a', 'b', 'c']
        .iter()
        .filter_map(|&v| {
            let sel: Vec<&ComparisonRow> = rows.iter().filter(|r| r.variant == v).collect();
            if sel.is_empty() {
                return None;
            }
            let col = |f: fn(&ComparisonRow) -> f64| mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            Some(VariantSummary {
                variant: v,
                trials: sel.len(),
                mean_snr_db: col(|r| r.snr_db),
                mean_rmse: col(|r| r.rmse),
                mean_lsd: col(|r| r.lsd),
            })
        })
        .collect();
    Ok(ComparisonTable { rows, means })
}
