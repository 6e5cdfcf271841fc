//! `spatial-mtl`: dataset generation, feature extraction, training,
//! prediction, ensembling and reporting.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spatial_mtl::ensemble::{self, EnsembleWeights, PredictionRecord, RelationTaxonomy};
use spatial_mtl::featex::{self, EdgeParams};
use spatial_mtl::harness::{
    compute_metrics, emit_comparison_table, group_by_model, plot_outputs, HarnessError, NamedReport, Result,
    RunConfig, RunReport,
};
use spatial_mtl::model::{self, Checkpoint, Model, Variant};
use spatial_mtl::scenegen::{self, build_dataset, load_split, write_smap, SPLITS};
use spatial_mtl::write_atomic;

#[derive(Parser)]
#[command(name = "spatial-mtl", version, about = "Spatial multitask vision-language toolkit")]
struct Cli {
    /// Run configuration (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset with train/val/test splits.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract edge, normalised depth and coordinate maps from a split.
    Featex {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.1)]
        low: f64,
        #[arg(long, default_value_t = 0.3)]
        high: f64,
    },
    /// Train one model variant and write its best checkpoint.
    Train(TrainArgs),
    /// Write one prediction record per instance of a split.
    Predict {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the checkpoint's variant name.
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit ensemble weights from validation predictions, one file per model.
    EnsembleFit {
        #[arg(long = "val", required = true, num_args = 1..)]
        val: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine test predictions with fitted weights.
    EnsemblePredict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "test", required = true, num_args = 1..)]
        test: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics, comparison table and charts for prediction files.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// Model whose gain is reported; defaults to "ensemble" when present.
        #[arg(long)]
        ensemble: Option<String>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    variant: Variant,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Same weight for all three reconstruction losses.
    #[arg(long)]
    lambda: Option<f64>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    ensemble::read_jsonl(&read(path)?).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

fn split_dir(data: &Path, split: &str) -> Result<PathBuf> {
    if !SPLITS.contains(&split) {
        return Err(HarnessError::Usage(format!("unknown split {split:?}; expected one of {SPLITS:?}")));
    }
    Ok(data.join(split))
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let taxonomy = RelationTaxonomy::builtin();
    match cli.command {
        Command::GenData { n, seed, out } => {
            if let Some(n) = n {
                cfg.dataset.n = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.paths.data_dir = o;
            }
            let data = build_dataset(cfg.dataset.n, cfg.seed, &cfg.dataset.scene, cfg.dataset.fractions)?;
            scenegen::write_dataset(&cfg.paths.data_dir, &data)?;
            write(&cfg.paths.data_dir.join("run_config.json"), cfg.to_json().as_bytes())?;
            println!(
                "wrote {} samples ({} train / {} val / {} test) to {}",
                cfg.dataset.n,
                data.train.len(),
                data.val.len(),
                data.test.len(),
                cfg.paths.data_dir.display()
            );
        }
        Command::Featex {
            data,
            split,
            out,
            sigma,
            low,
            high,
        } => {
            let dir = split_dir(data.as_ref().unwrap_or(&cfg.paths.data_dir), &split)?;
            let params = EdgeParams {
                gaussian_sigma: sigma,
                low_threshold: low,
                high_threshold: high,
            };
            params.validate()?;
            let k = cfg.dataset.scene.intrinsics;
            let examples = load_split(&dir)?;
            for e in &examples {
                let gray = featex::to_grayscale(&e.image)?;
                let edges = featex::canny_edges(&gray, &params)?;
                write(&out.join(&split).join("edges").join(format!("{}.smap", e.id)), &write_smap(&edges)?)?;
                if let Some(maps) = &e.maps {
                    let depth = featex::normalize_depth(&maps.depth);
                    let coords = featex::backproject(&maps.depth, &k);
                    write(&out.join(&split).join("depth").join(format!("{}.smap", e.id)), &write_smap(&depth)?)?;
                    write(
                        &out.join(&split).join("coords").join(format!("{}.smap", e.id)),
                        &write_smap(&coords.coords)?,
                    )?;
                }
            }
            println!("extracted features for {} {split} examples into {}", examples.len(), out.display());
        }
        Command::Train(a) => {
            if let Some(d) = a.data {
                cfg.paths.data_dir = d;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let t = &mut cfg.training;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.lr = a.lr.unwrap_or(t.lr);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.patience = a.patience.unwrap_or(t.patience);
            cfg.model.variant = a.variant;
            if let Some(l) = a.lambda {
                cfg.model.loss_weights = spatial_mtl::autodiff::LossWeights::uniform(l);
            }
            let mcfg = cfg.model_config();
            mcfg.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
            let train = load_split(&cfg.paths.data_dir.join("train"))?;
            let val = load_split(&cfg.paths.data_dir.join("val"))?;
            let (ck, report) = model::train(Model::new(mcfg)?, &train, &val, &cfg.training)?;
            ck.save(&a.out)?;
            let mut side = a.out.clone().into_os_string();
            side.push(".train.json");
            let mut text = serde_json::to_string_pretty(&report).expect("report serialises");
            text.push('\n');
            write(Path::new(&side), text.as_bytes())?;
            let mut side = a.out.clone().into_os_string();
            side.push(".config.json");
            write(Path::new(&side), cfg.to_json().as_bytes())?;
            println!(
                "{}: best epoch {:?}, validation accuracy {:.4}",
                cfg.model.variant,
                report.best_epoch,
                report.best_val_accuracy.unwrap_or(0.0)
            );
        }
        Command::Predict {
            data,
            split,
            checkpoint,
            model_id,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let dir = split_dir(data.as_ref().unwrap_or(&cfg.paths.data_dir), &split)?;
            let examples = load_split(&dir)?;
            let id = model_id.unwrap_or_else(|| ck.model.config.variant.to_string());
            let records = model::predict(&ck.model, &examples, &id)?;
            write(&out, ensemble::write_jsonl(&records).as_bytes())?;
            println!("{id}: {} predictions, accuracy {:.4}", records.len(), model::accuracy(&records));
        }
        Command::EnsembleFit { val, out } => {
            let per_model = val.iter().map(|p| read_predictions(p)).collect::<Result<Vec<_>>>()?;
            let w = ensemble::fit_weights(&per_model, &taxonomy)?;
            write(&out, w.to_json().as_bytes())?;
            println!("fitted weights for {} models over {} cells", w.model_ids.len(), w.cells.len());
        }
        Command::EnsemblePredict { weights, test, out } => {
            let w = EnsembleWeights::from_json(&read(&weights)?)?;
            let per_model = test.iter().map(|p| read_predictions(p)).collect::<Result<Vec<_>>>()?;
            let records = ensemble::ensemble_predict(&per_model, &w, &taxonomy)?;
            write(&out, ensemble::write_jsonl(&records).as_bytes())?;
            println!("ensemble: {} predictions, accuracy {:.4}", records.len(), model::accuracy(&records));
        }
        Command::Report {
            predictions,
            ensemble,
            out,
        } => {
            let mut records = Vec::new();
            for p in &predictions {
                records.extend(read_predictions(p)?);
            }
            if records.is_empty() {
                return Err(HarnessError::Data("no records".into()));
            }
            let groups = group_by_model(&records);
            let reports = groups
                .iter()
                .map(|(name, recs)| Ok((name.clone(), compute_metrics(recs, &taxonomy)?)))
                .collect::<Result<Vec<_>>>()?;
            let target = ensemble.or_else(|| {
                reports
                    .iter()
                    .any(|(n, _)| n == ensemble::ENSEMBLE_MODEL_ID)
                    .then(|| ensemble::ENSEMBLE_MODEL_ID.to_string())
            });
            let comparison = match target {
                Some(t) if reports.len() >= 2 => Some(emit_comparison_table(&reports, &t)?),
                Some(t) => return Err(HarnessError::Usage(format!("comparison against {t:?} needs two or more models"))),
                None => None,
            };
            plot_outputs(&reports, &out)?;
            let report = RunReport {
                models: reports
                    .into_iter()
                    .map(|(model, metrics)| NamedReport { model, metrics })
                    .collect(),
                comparison,
            };
            let text = report.render();
            write(&out.join("report.txt"), text.as_bytes())?;
            write(&out.join("report.json"), report.to_json().as_bytes())?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {line}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
