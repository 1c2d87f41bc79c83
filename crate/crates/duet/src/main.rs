use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use duet::checkpoint;
use duet::config::Config;
use duet::cost::{self, ArchConfig};
use duet::harness::{ablate, dataset, saliency};
use duet::model::Model;
use duet::training::{self, train};

#[derive(Parser)]
#[command(
    name = "duet",
    version,
    about = "Dual-pathway audiovisual retrieval workbench: synthetic data, training, ablations, and cost analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a default config TOML to edit from.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic dataset described by the config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the dataset files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a generated dataset; writes loss.csv, checkpoint.json and
    /// eval.json into the run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory from `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieval metrics for a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Val)]
        split: Split,
    },
    /// Train a grid of models and tabulate validation retrieval.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = AblateKind::Variants)]
        kind: AblateKind,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Audiovisual depths to sweep (kind=depth only).
        #[arg(long, value_delimiter = ',')]
        depths: Vec<usize>,
        /// Optional CSV for the per-run rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic compute budget: production-scale presets, or a config's
    /// desk-scale model with --config.
    Cost {
        /// Frames for the dual-pathway preset.
        #[arg(long, default_value_t = 32)]
        frames: usize,
        /// Frames for the dense attention-only baseline.
        #[arg(long, default_value_t = 96)]
        dense_frames: usize,
        #[arg(long)]
        calibration: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export a clip's audio-to-patch saliency map (JSON + PGM).
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Clip index within the dataset.
        #[arg(long, default_value_t = 0)]
        clip: usize,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per patch cell in the PGM.
        #[arg(long, default_value_t = 16)]
        cell: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateKind {
    Variants,
    Depth,
    Sampling,
}

fn load_dataset(dir: &Path) -> Result<dataset::SyntheticDataset> {
    dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn load_config(path: &Path) -> Result<Config> {
    Config::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<(Model, u64)> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::InitConfig { out } => {
            Config::default().save(&out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Generate { config, out } => {
            let cfg = load_config(&config)?;
            let ds = dataset::generate(&cfg.dataset, cfg.seed)?;
            dataset::save(&ds, &out)?;
            println!(
                "wrote {} clips ({} train / {} val) to {}",
                ds.examples.len(),
                ds.train().len(),
                ds.val().len(),
                out.display()
            );
            println!(
                "latents: {} video-visible + {} audio-only dims, {} levels",
                ds.spec.k_video(),
                ds.spec.k_audio(),
                ds.spec.levels
            );
        }
        Cmd::Train { config, data, out } => {
            let cfg = load_config(&config)?;
            let ds = load_dataset(&data)?;
            if cfg.dataset != ds.spec {
                eprintln!("note: dataset on disk differs from the config's [dataset] section; using the on-disk data");
            }
            std::fs::create_dir_all(&out)?;
            let mut model = Model::new(cfg.model, ds.geometry(), cfg.seed)?;
            let outcome = train(&mut model, ds.train(), ds.val(), &cfg.train, cfg.seed)?;
            training::write_loss_csv(&out.join("loss.csv"), &outcome.records)?;
            checkpoint::save(&model, cfg.seed, &out.join("checkpoint.json"))?;
            std::fs::write(
                out.join("eval.json"),
                serde_json::to_string_pretty(&outcome.final_eval)?,
            )?;
            let first = outcome.records.first().map(|r| r.loss).unwrap_or(f64::NAN);
            let last = outcome.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!("trained {} steps: loss {first:.4} -> {last:.4}", outcome.records.len());
            println!("val: {}", outcome.final_eval);
            println!("artifacts in {}", out.display());
        }
        Cmd::Eval {
            checkpoint: ck,
            data,
            split,
        } => {
            let (model, _) = load_checkpoint(&ck)?;
            let ds = load_dataset(&data)?;
            let examples = match split {
                Split::Train => ds.train(),
                Split::Val => ds.val(),
                Split::All => &ds.examples,
            };
            let result = training::evaluate(&model, examples)?;
            println!("{result}");
        }
        Cmd::Ablate {
            config,
            data,
            kind,
            seeds,
            depths,
            out,
        } => {
            let cfg = load_config(&config)?;
            let ds = load_dataset(&data)?;
            let rows = match kind {
                AblateKind::Variants => {
                    ablate::block_variant_sweep(&ds, &cfg.model, &cfg.train, &seeds)?
                }
                AblateKind::Depth => {
                    let depths = if depths.is_empty() {
                        (0..=cfg.model.layers).collect()
                    } else {
                        depths
                    };
                    ablate::av_depth_sweep(&ds, &cfg.model, &cfg.train, &depths, &seeds)?
                }
                AblateKind::Sampling => ablate::sampling_sweep(&ds, &cfg.model, &cfg.train, &seeds)?,
            };
            if let Some(path) = out {
                ablate::write_rows_csv(&path, &rows)?;
                println!("rows written to {}", path.display());
            }
            print!("{}", ablate::format_summary(&ablate::summarize(&rows)));
        }
        Cmd::Cost {
            frames,
            dense_frames,
            calibration,
            config,
        } => match config {
            Some(path) => {
                let cfg = load_config(&path)?;
                let geom = cfg.dataset.geometry();
                let mut arch = ArchConfig::from_model(
                    &cfg.model,
                    &geom,
                    cfg.dataset.text_len,
                    cfg.train.batch_size,
                );
                if let Some(c) = calibration {
                    arch.calibration = c;
                }
                println!("{}", cost::estimate(&arch));
            }
            None => {
                let mut dual = cost::dual_pathway_b32(frames);
                let mut dense = cost::vit_b32_dense(dense_frames);
                if let Some(c) = calibration {
                    dual.calibration = c;
                    dense.calibration = c;
                }
                let dual_report = cost::estimate(&dual);
                let dense_report = cost::estimate(&dense);
                println!("== dual-pathway, {frames} frames ==");
                println!("{dual_report}\n");
                println!("== dense attention-only baseline, {dense_frames} frames ==");
                println!("{dense_report}\n");
                println!(
                    "{}",
                    cost::compare(
                        &format!("dual@{frames}"),
                        &dual_report,
                        &format!("dense@{dense_frames}"),
                        &dense_report
                    )
                );
            }
        },
        Cmd::Saliency {
            checkpoint: ck,
            data,
            clip,
            out,
            cell,
        } => {
            let (model, _) = load_checkpoint(&ck)?;
            let ds = load_dataset(&data)?;
            let Some(ex) = ds.examples.get(clip) else {
                bail!("clip {clip} out of range (dataset has {})", ds.examples.len());
            };
            let (json_path, pgm_path) = saliency::export(&model, ex, &out, cell)?;
            println!("wrote {}", json_path.display());
            println!("wrote {}", pgm_path.display());
        }
    }
    Ok(())
}
