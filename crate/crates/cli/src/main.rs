use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rulfuse::dataset::{synth, DatasetBundle, DatasetId};
use rulfuse::harness::{self, Split, TrainConfig, FEWSHOT_RATIOS};
use rulfuse::vlma::EncoderVariant;

#[derive(Parser)]
#[command(
    name = "rulfuse",
    version,
    about = "Multi-modal RUL regression on C-MAPSS-format data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file; missing keys keep their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {o:?}");
            };
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded synthetic dataset in C-MAPSS text format.
    Synth {
        #[arg(long, default_value = "data")]
        dir: PathBuf,
        /// Subsets to write (default: all four).
        #[arg(long, value_delimiter = ',')]
        dataset: Vec<DatasetId>,
        #[arg(long, default_value_t = synth::DEFAULT_SEED)]
        seed: u64,
    },
    /// Parse, select, normalise and window a subset; print its manifest.
    Ingest(ConfigArgs),
    /// Masked-autoencoder pretraining of the ViT encoder alone.
    PretrainMae(ConfigArgs),
    /// Two-stage training followed by test evaluation.
    Train(ConfigArgs),
    /// Evaluate a run directory's checkpoint.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        dataset: Option<DatasetId>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train and evaluate once per few-shot ratio.
    Fewshot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
    /// Train and evaluate once per visual encoder.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<EncoderVariant>,
    },
    /// Redraw the RUL chart of a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
    /// Dump per-window temporal and language-model embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of a constant predictor on the test split.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 125.0)]
        value: f64,
    },
}

fn print_path(label: &str, p: &Path) {
    println!("{label:<12} {}", p.display());
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Synth { dir, dataset, seed } => {
            let ids = if dataset.is_empty() {
                DatasetId::ALL.to_vec()
            } else {
                dataset
            };
            std::fs::create_dir_all(&dir)?;
            for id in ids {
                synth::write_dataset(&dir, id, seed)?;
                println!("wrote {id} to {}", dir.display());
            }
        }
        Cmd::Ingest(a) => {
            let cfg = a.load()?;
            let b = DatasetBundle::load(&cfg.data_dir, cfg.dataset, &cfg.load_options()?)?;
            println!("{}", serde_json::to_string_pretty(&b.manifest)?);
        }
        Cmd::PretrainMae(a) => {
            let cfg = a.load()?;
            let r = harness::pretrain_mae_run(&cfg)?;
            println!(
                "MAE {} steps: fixed-mask loss {:.6} -> {:.6}",
                r.curve.len(),
                r.initial_eval,
                r.final_eval
            );
            print_path("output", &cfg.out_dir);
        }
        Cmd::Train(a) => {
            let art = harness::train(&a.load()?)?;
            println!(
                "test RMSE {:.4}  Score {:.3}  MAE {:.4}  MAPE {:.2}%  (best epoch {})",
                art.report.rmse, art.report.score, art.report.mae, art.report.mape, art.best_epoch
            );
            print_path("checkpoint", &art.checkpoint);
            print_path("metrics", &art.metrics_json);
            print_path("predictions", &art.predictions_csv);
            print_path("curve", &art.curve_csv);
        }
        Cmd::Eval {
            run,
            split,
            dataset,
            data_dir,
        } => {
            let r = harness::evaluate(&run, split, dataset, data_dir.as_deref())?;
            println!("{}", r.to_json());
        }
        Cmd::Fewshot { cfg, ratios } => {
            let ratios = if ratios.is_empty() {
                FEWSHOT_RATIOS.to_vec()
            } else {
                ratios
            };
            let cfg = cfg.load()?;
            println!(
                "{:>6} {:>6} {:>10} {:>8} {:>8} {:>8}",
                "ratio", "units", "score", "mae", "mape", "rmse"
            );
            for r in harness::fewshot_sweep(&cfg, &ratios)? {
                println!(
                    "{:>6} {:>6} {:>10.3} {:>8.3} {:>8.2} {:>8.3}",
                    r.ratio, r.units, r.report.score, r.report.mae, r.report.mape, r.report.rmse
                );
            }
        }
        Cmd::Ablate { cfg, variants } => {
            let variants = if variants.is_empty() {
                EncoderVariant::ALL.to_vec()
            } else {
                variants
            };
            let cfg = cfg.load()?;
            for (v, a) in harness::ablate_encoder(&cfg, &variants)? {
                println!("{:<8} RMSE {:.4}  Score {:.3}", v.name(), a.report.rmse, a.report.score);
            }
        }
        Cmd::Plot { run } => {
            for p in harness::render_plots(&run)? {
                print_path("plot", &p);
            }
        }
        Cmd::ExportEmbeddings { run, split, out } => {
            let n = harness::export_embeddings(&run, split, &out)?;
            println!("{n} rows written to {}", out.display());
        }
        Cmd::Baseline { cfg, value } => {
            let r = harness::constant_baseline(&cfg.load()?, value)?;
            println!("{}", r.to_json());
        }
    }
    Ok(())
}
