//! Ablation sweeps: train fresh models under controlled variations and
//! tabulate validation retrieval.

use std::path::Path;

use crate::attention::BlockVariant;
use crate::embed::SampleStrategy;
use crate::harness::dataset::SyntheticDataset;
use crate::harness::metrics::RetrievalResult;
use crate::model::{Model, ModelConfig};
use crate::training::{train, TrainConfig, TrainError};

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub result: RetrievalResult,
}

/// Per-label means across seeds, in first-seen label order.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub label: String,
    pub runs: usize,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mean_rank: f64,
}

fn run_cell(
    ds: &SyntheticDataset,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    label: String,
    seed: u64,
) -> Result<AblationRow, TrainError> {
    let mut model = Model::new(model_cfg, ds.geometry(), seed)?;
    let out = train(&mut model, ds.train(), ds.val(), train_cfg, seed)?;
    Ok(AblationRow {
        label,
        seed,
        result: out.final_eval,
    })
}

/// Which attention pathways matter: one fresh model per (variant, seed).
pub fn block_variant_sweep(
    ds: &SyntheticDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for variant in [
        BlockVariant::VideoOnly,
        BlockVariant::A2vOnly,
        BlockVariant::A2vV2a,
        BlockVariant::JointAv,
    ] {
        for &seed in seeds {
            let mut mc = *model_cfg;
            mc.variant = variant;
            rows.push(run_cell(ds, mc, train_cfg, variant.to_string(), seed)?);
        }
    }
    Ok(rows)
}

/// How many leading layers exchange with audio.
pub fn av_depth_sweep(
    ds: &SyntheticDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    depths: &[usize],
    seeds: &[u64],
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for &k in depths {
        for &seed in seeds {
            let mut mc = *model_cfg;
            mc.av_blocks = k;
            rows.push(run_cell(ds, mc, train_cfg, format!("k={k}"), seed)?);
        }
    }
    Ok(rows)
}

/// Uniform vs per-segment random frame sampling during training.
pub fn sampling_sweep(
    ds: &SyntheticDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for strategy in [SampleStrategy::Uniform, SampleStrategy::RandomSegment] {
        let label = match strategy {
            SampleStrategy::Uniform => "uniform",
            SampleStrategy::RandomSegment => "random_segment",
        };
        for &seed in seeds {
            let mut tc = *train_cfg;
            tc.sampling = strategy;
            rows.push(run_cell(ds, *model_cfg, &tc, label.to_string(), seed)?);
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut out: Vec<AblationSummary> = Vec::new();
    for row in rows {
        let entry = match out.iter_mut().find(|s| s.label == row.label) {
            Some(e) => e,
            None => {
                out.push(AblationSummary {
                    label: row.label.clone(),
                    runs: 0,
                    r_at_1: 0.0,
                    r_at_5: 0.0,
                    r_at_10: 0.0,
                    mean_rank: 0.0,
                });
                out.last_mut().unwrap()
            }
        };
        entry.runs += 1;
        entry.r_at_1 += row.result.r_at_1;
        entry.r_at_5 += row.result.r_at_5;
        entry.r_at_10 += row.result.r_at_10;
        entry.mean_rank += row.result.mean_rank;
    }
    for s in &mut out {
        let n = s.runs as f64;
        s.r_at_1 /= n;
        s.r_at_5 /= n;
        s.r_at_10 /= n;
        s.mean_rank /= n;
    }
    out
}

pub fn write_rows_csv(path: &Path, rows: &[AblationRow]) -> Result<(), TrainError> {
    let mut out = String::from("label,seed,r_at_1,r_at_5,r_at_10,mean_rank\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label, r.seed, r.result.r_at_1, r.result.r_at_5, r.result.r_at_10, r.result.mean_rank
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn format_summary(summaries: &[AblationSummary]) -> String {
    let mut out = format!(
        "{:<16} {:>4} {:>7} {:>7} {:>7} {:>8}\n",
        "label", "runs", "R@1", "R@5", "R@10", "MnR"
    );
    for s in summaries {
        out.push_str(&format!(
            "{:<16} {:>4} {:>7.1} {:>7.1} {:>7.1} {:>8.2}\n",
            s.label, s.runs, s.r_at_1, s.r_at_5, s.r_at_10, s.mean_rank
        ));
    }
    out
}
