use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eeg_seizure::detector::{curve_csv, DetectorModel, TrainConfig, TrainingData};
use eeg_seizure::factor_graph::{
    build_function_nodes, detect, marginals, message_sequence, read_scores_csv, write_detections_csv,
    TransitionModel,
};
use eeg_seizure::metrics::aggregate;
use eeg_seizure::nn::{load_checkpoint, save_checkpoint};
use eeg_seizure::pipeline::{
    aggregate_json, dataset_mi, load_dataset, read_metrics_csv, run_pipeline, transitions_for,
    write_synthetic_dataset, PreparedFile, RunConfig, TransitionSource, Variant,
};
use eeg_seizure::split::Strategy;
use eeg_seizure::{Error, Result};

#[derive(Parser)]
#[command(name = "eeg-seizure", version, about = "Seizure detection on multichannel scalp EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    mi_cache_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated variants: cnn-only, cnn+fg, cnn+smile, full.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    /// six-fold, all-patient or per-patient.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = &self.mi_cache_dir {
            cfg.mi_cache_dir = Some(v.clone());
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.clone();
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
            cfg.per_patient_epochs = v;
        }
        if let Some(v) = self.threshold {
            cfg.fg.detection.threshold = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic EDF dataset into the data directory.
    Synth(Common),
    /// Load and segment the dataset; print per-file block counts as JSON.
    Preprocess(Common),
    /// Compute (or refresh) the per-block MI feature cache.
    MiCache(Common),
    /// Train one detector on every file of the dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Fuse MI features into the head.
        #[arg(long)]
        with_mi: bool,
        /// Checkpoint path; `<output_dir>/model.ckpt` by default.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score recordings with a trained model, or smooth an existing score CSV.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "scores")]
        model: Option<PathBuf>,
        /// `block_index,score` CSV; runs only the factor graph.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every split, seed and variant and write metrics.
    Evaluate(Common),
    /// Aggregate a metrics CSV into mean and standard deviation per variant.
    Report {
        metrics: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn mi_for(cfg: &RunConfig, files: &[PreparedFile], with_mi: bool) -> Result<Option<Vec<Vec<Vec<f64>>>>> {
    if with_mi {
        Ok(Some(dataset_mi(files, &cfg.smile, &cfg.mi_cache_dir())?))
    } else {
        Ok(None)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = c.load()?;
            let files = write_synthetic_dataset(&cfg.synth, &cfg.data_dir)?;
            eprintln!("wrote {} files to {}", files.len(), cfg.data_dir.display());
        }
        Command::Preprocess(c) => {
            let cfg = c.load()?;
            let files = load_dataset(&cfg.data_dir, &cfg.prep)?;
            let rows: Vec<serde_json::Value> = files
                .iter()
                .map(|f| {
                    let labels = f.series.labels();
                    serde_json::json!({
                        "patient": f.file.patient,
                        "file": f.file.file,
                        "duration": f.duration,
                        "blocks": labels.len(),
                        "seizure_blocks": labels.iter().filter(|&&l| l == 1).count(),
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows).expect("serializable"));
        }
        Command::MiCache(c) => {
            let cfg = c.load()?;
            let files = load_dataset(&cfg.data_dir, &cfg.prep)?;
            let mi = dataset_mi(&files, &cfg.smile, &cfg.mi_cache_dir())?;
            let blocks: usize = mi.iter().map(Vec::len).sum();
            eprintln!("{blocks} blocks cached in {}", cfg.mi_cache_dir().display());
        }
        Command::Train { common, with_mi, model } => {
            let cfg = common.load()?;
            let files = load_dataset(&cfg.data_dir, &cfg.prep)?;
            let mi = mi_for(&cfg, &files, with_mi)?;
            let series: Vec<_> = files.iter().map(|f| f.series.clone()).collect();
            let data = TrainingData::all(&series, mi.as_deref());
            let mi_dim = mi.as_ref().and_then(|m| m.iter().flatten().next().map(Vec::len)).unwrap_or(0);
            let seed = cfg.seeds[0];
            let mut det = DetectorModel::new(&cfg.cnn, mi_dim, seed)?;
            let train = TrainConfig { seed, ..cfg.train.clone() };
            let curve = eeg_seizure::detector::train_detector(&mut det, &data, &train)?;
            let path = model.unwrap_or_else(|| cfg.output_dir.join("model.ckpt"));
            write(&path, save_checkpoint(&det.to_checkpoint()))?;
            write(&path.with_extension("curve.csv"), curve_csv(&curve))?;
            eprintln!("saved {}", path.display());
        }
        Command::Infer { common, model, scores, out } => {
            let cfg = common.load()?;
            // No training labels here, so an estimated matrix falls back to the default one.
            let transitions = match cfg.fg.transitions {
                TransitionSource::Estimated => TransitionModel::default(),
                _ => transitions_for(&cfg.fg, &[]),
            };
            let detection = &cfg.fg.detection;
            if let Some(p) = scores {
                let s = read_scores_csv(&read(&p)?)?;
                let m = marginals(&message_sequence(&build_function_nodes(&s, &transitions, detection)?)?)?;
                return emit(out.as_deref(), &write_detections_csv(&s, &m, &detect(&m, detection)));
            }
            let path = model.unwrap_or_else(|| cfg.output_dir.join("model.ckpt"));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let det = DetectorModel::from_checkpoint(&load_checkpoint(&bytes)?)?;
            let files = load_dataset(&cfg.data_dir, &cfg.prep)?;
            let mi = mi_for(&cfg, &files, det.mi_dim > 0)?;
            let mut text = String::from("patient,file,t,score,marginal,detection\n");
            for (i, f) in files.iter().enumerate() {
                let s = det.predict(&f.series, mi.as_ref().map(|m| m[i].as_slice()))?;
                let m = marginals(&message_sequence(&build_function_nodes(&s, &transitions, detection)?)?)?;
                let d = detect(&m, detection);
                for (k, b) in f.series.blocks.iter().enumerate() {
                    text.push_str(&format!(
                        "{},{},{},{:.6},{:.6},{}\n",
                        f.file.patient, f.file.file, b.t, s[k], m[k][1], d[k]
                    ));
                }
            }
            emit(out.as_deref(), &text)?;
        }
        Command::Evaluate(c) => {
            let cfg = c.load()?;
            let report = run_pipeline(&cfg)?;
            print!("{}", report.metrics_csv);
            eprintln!("results in {}", cfg.output_dir.display());
        }
        Command::Report { metrics } => {
            let by_variant = read_metrics_csv(&read(&metrics)?)?;
            let agg = by_variant
                .into_iter()
                .filter_map(|(v, reports)| aggregate(&reports).map(|a| (v, a)))
                .collect();
            println!("{}", aggregate_json(&agg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
