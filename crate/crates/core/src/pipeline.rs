//! End-to-end orchestration: dataset loading, preprocessing, MI features,
//! detector training, factor-graph smoothing and evaluation.
//!
//! A dataset directory holds `<patient>/<file>.edf` with a sibling
//! `<file>.json` seizure manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{curve_csv, train_detector, CnnConfig, DetectorModel, TrainConfig, TrainingData};
use crate::edf::{parse_edf, write_edf, HeaderOverrides, Manifest, Recording};
use crate::error::{Error, Result};
use crate::factor_graph::{
    build_function_nodes, detect, marginals, message_sequence, DetectionConfig, TransitionModel,
};
use crate::metrics::{aggregate, Aggregate, MetricsReport};
use crate::nn::{checkpoint_digest, save_checkpoint};
use crate::prep::{
    apply_montage, default_montage, notch_recording, parse_montage, segment_blocks, trim_around_seizures,
    BlockSeries, NotchConfig,
};
use crate::rng::derive_seed;
use crate::smile::{mi_features, MiCache, SmileConfig};
use crate::split::{make_split, Catalog, CatalogFile, FileRef, SplitPlan, Strategy};
use crate::synth::{synthesize_recording, DatasetConfig};

/// Ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cnn-only")]
    CnnOnly,
    #[serde(rename = "cnn+fg")]
    CnnFg,
    #[serde(rename = "cnn+smile")]
    CnnSmile,
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::CnnOnly, Variant::CnnFg, Variant::CnnSmile, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CnnOnly => "cnn-only",
            Variant::CnnFg => "cnn+fg",
            Variant::CnnSmile => "cnn+smile",
            Variant::Full => "full",
        }
    }

    pub fn uses_mi(self) -> bool {
        matches!(self, Variant::CnnSmile | Variant::Full)
    }

    pub fn uses_fg(self) -> bool {
        matches!(self, Variant::CnnFg | Variant::Full)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    /// Derive bipolar channels; off when the inputs already are bipolar.
    pub apply_montage: bool,
    /// Montage text file; the built-in 18 pairs when absent.
    pub montage: Option<PathBuf>,
    pub notch: NotchConfig,
    pub trim_factor: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            apply_montage: true,
            montage: None,
            notch: NotchConfig::default(),
            trim_factor: 10.0,
        }
    }
}

/// Where the factor graph's transition matrix comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionSource {
    /// 0.8954 onset / 0.179 offset switching probabilities.
    #[default]
    Default,
    /// Counted from the training labels of each run.
    Estimated,
    /// `onset` / `offset` below.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgConfig {
    pub transitions: TransitionSource,
    pub onset: f64,
    pub offset: f64,
    pub detection: DetectionConfig,
    /// Threshold on the raw score for the variants without a factor graph.
    pub direct_threshold: f64,
}

impl Default for FgConfig {
    fn default() -> Self {
        let t = TransitionModel::default();
        FgConfig {
            transitions: TransitionSource::Default,
            onset: t.p[0][1],
            offset: t.p[1][0],
            detection: DetectionConfig::default(),
            direct_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Shared MI cache; `<output_dir>/mi-cache` when absent.
    pub mi_cache_dir: Option<PathBuf>,
    pub strategy: Strategy,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub prep: PrepConfig,
    pub smile: SmileConfig,
    pub cnn: CnnConfig,
    pub train: TrainConfig,
    /// Epochs for the per-patient strategy (`train.epochs` otherwise).
    pub per_patient_epochs: usize,
    pub fg: FgConfig,
    pub save_checkpoints: bool,
    /// Generator settings used by `synth`.
    pub synth: DatasetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            mi_cache_dir: None,
            strategy: Strategy::SixFold,
            variants: Variant::ALL.to_vec(),
            seeds: vec![0],
            prep: PrepConfig::default(),
            smile: SmileConfig::default(),
            cnn: CnnConfig::default(),
            train: TrainConfig::default(),
            per_patient_epochs: 20,
            fg: FgConfig::default(),
            save_checkpoints: false,
            synth: DatasetConfig::default(),
        }
    }
}

impl RunConfig {
    /// TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no variants selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        let invalid = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        if self.variants.iter().any(|v| v.uses_mi()) {
            self.smile.validate().map_err(|e| invalid(&e))?;
        }
        self.cnn.validate().map_err(|e| invalid(&e))?;
        self.fg.detection.validate().map_err(|e| invalid(&e))?;
        if !(self.fg.direct_threshold > 0.0 && self.fg.direct_threshold < 1.0) {
            return Err(Error::Config("direct_threshold must lie in (0, 1)".into()));
        }
        if !(self.prep.trim_factor >= 0.0) {
            return Err(Error::Config("trim_factor must be non-negative".into()));
        }
        Ok(())
    }

    pub fn mi_cache_dir(&self) -> PathBuf {
        self.mi_cache_dir.clone().unwrap_or_else(|| self.output_dir.join("mi-cache"))
    }

    fn epochs_for(&self, strategy: Strategy) -> usize {
        match strategy {
            Strategy::PerPatient => self.per_patient_epochs,
            _ => self.train.epochs,
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write a synthetic dataset in the directory layout `load_dataset` reads.
pub fn write_synthetic_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Vec<FileRef>> {
    let files = cfg.files()?;
    files
        .par_iter()
        .map(|f| {
            let (rec, _) = synthesize_recording(&f.config)?;
            let overrides = HeaderOverrides {
                patient_id: Some(f.patient.clone()),
                recording_id: Some(f.file.clone()),
                physical_dim: Some("uV".into()),
                ..Default::default()
            };
            let base = dir.join(&f.patient).join(&f.file);
            write(&base.with_extension("edf"), write_edf(&rec, &overrides)?)?;
            write(&base.with_extension("json"), Manifest::from_recording(format!("{}.edf", f.file), &rec).to_json())?;
            Ok(FileRef { patient: f.patient.clone(), file: f.file.clone() })
        })
        .collect()
}

/// Recording with manifest annotations applied.
pub fn load_recording(edf_path: &Path) -> Result<Recording> {
    let bytes = fs::read(edf_path).map_err(|e| Error::io(edf_path, e))?;
    let mut rec = parse_edf(&bytes)?;
    let manifest_path = edf_path.with_extension("json");
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Manifest::from_json(&text)?.apply(&mut rec)?;
    }
    Ok(rec)
}

/// EDF paths grouped by patient directory, sorted.
pub fn list_dataset(dir: &Path) -> Result<Vec<(FileRef, PathBuf)>> {
    let read = |d: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| Error::io(d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let mut out = Vec::new();
    for pdir in read(dir)?.into_iter().filter(|p| p.is_dir()) {
        let patient = pdir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for f in read(&pdir)? {
            if f.extension().is_some_and(|e| e.eq_ignore_ascii_case("edf")) {
                let file = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                out.push((FileRef { patient: patient.clone(), file }, f));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no EDF files under {}", dir.display())));
    }
    Ok(out)
}

/// Montage, notch, trim and segment one recording.
pub fn prepare_recording(rec: &Recording, cfg: &PrepConfig) -> Result<BlockSeries> {
    let rec = if cfg.apply_montage {
        let pairs = match &cfg.montage {
            Some(path) => parse_montage(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
            None => default_montage(),
        };
        apply_montage(rec, &pairs)?
    } else {
        rec.clone()
    };
    let rec = notch_recording(&rec, cfg.notch)?;
    let rec = trim_around_seizures(&rec, cfg.trim_factor)?;
    Ok(segment_blocks(&rec)?)
}

/// One preprocessed file.
#[derive(Debug, Clone)]
pub struct PreparedFile {
    pub file: FileRef,
    /// Seconds, before trimming.
    pub duration: f64,
    pub series: BlockSeries,
}

/// Load and preprocess every file that contains a seizure.
pub fn load_dataset(dir: &Path, cfg: &PrepConfig) -> Result<Vec<PreparedFile>> {
    let listed = list_dataset(dir)?;
    let loaded: Vec<Option<PreparedFile>> = listed
        .par_iter()
        .map(|(file, path)| {
            let rec = load_recording(path).map_err(|e| e.in_stage("ingest"))?;
            if rec.seizures().next().is_none() {
                return Ok(None);
            }
            let series = prepare_recording(&rec, cfg).map_err(|e| e.in_stage("prep"))?;
            Ok(Some(PreparedFile { file: file.clone(), duration: rec.duration(), series }))
        })
        .collect::<Result<_>>()?;
    let files: Vec<PreparedFile> = loaded.into_iter().flatten().collect();
    if files.is_empty() {
        return Err(Error::Config(format!("no seizure-bearing recordings under {}", dir.display())));
    }
    Ok(files)
}

pub fn catalog(files: &[PreparedFile]) -> Catalog {
    let mut cat = Catalog::new();
    for f in files {
        cat.entry(f.file.patient.clone())
            .or_default()
            .push(CatalogFile { name: f.file.file.clone(), duration: f.duration });
    }
    cat
}

/// Stable per-file key used to derive MI seeds.
pub fn file_key(file: &FileRef) -> u64 {
    let d = Sha256::digest(format!("{}/{}", file.patient, file.file));
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn cache_paths(dir: &Path, file: &FileRef) -> (PathBuf, PathBuf) {
    let base = dir.join(&file.patient).join(&file.file);
    (base.with_extension("mi"), base.with_extension("mi.json"))
}

/// MI vectors for one file, read from `cache_dir` when a matching cache
/// exists and written there otherwise.
pub fn file_mi(file: &PreparedFile, smile: &SmileConfig, cache_dir: &Path) -> Result<Vec<Vec<f64>>> {
    let (bin, side) = cache_paths(cache_dir, &file.file);
    if let (Ok(bytes), Ok(text)) = (fs::read(&bin), fs::read_to_string(&side)) {
        if let Ok(cache) = MiCache::from_parts(&bytes, &text) {
            if cache.matches(smile, file.series.n_blocks(), file.series.n_channels()) {
                return Ok(cache.records);
            }
        }
    }
    let records = mi_features(&file.series, file_key(&file.file), smile)?;
    let cache = MiCache::new(smile, records)?;
    write(&bin, cache.to_bytes())?;
    write(&side, cache.sidecar_json())?;
    Ok(cache.records)
}

pub fn dataset_mi(files: &[PreparedFile], smile: &SmileConfig, cache_dir: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    files
        .iter()
        .map(|f| file_mi(f, smile, cache_dir).map_err(|e| e.in_stage("mi")))
        .collect()
}

/// Metrics and per-block outputs of one variant on one split run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub run: usize,
    pub variant: Variant,
    pub report: MetricsReport,
    pub labels: Vec<u8>,
    /// Ranking scores: seizure marginals for factor-graph variants, raw
    /// detector scores otherwise.
    pub scores: Vec<f64>,
    pub predictions: Vec<u8>,
    /// The underlying detector's scores thresholded directly.
    pub direct_predictions: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub results: Vec<RunResult>,
    pub metrics_csv: String,
    pub aggregate: BTreeMap<String, Aggregate>,
    /// `(seed, run, model) -> sha256` of each trained checkpoint.
    pub checkpoints: Vec<(u64, usize, String, String)>,
}

impl PipelineReport {
    pub fn for_variant(&self, v: Variant) -> impl Iterator<Item = &RunResult> {
        self.results.iter().filter(move |r| r.variant == v)
    }
}

pub const METRICS_HEADER: &str = "seed,strategy,run,variant,auc_roc,auc_pr,f1,precision,recall,accuracy";

fn metrics_row(strategy: Strategy, r: &RunResult) -> String {
    let v = r.report.values();
    format!(
        "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        r.seed, strategy, r.run, r.variant, v[0], v[1], v[2], v[3], v[4], v[5]
    )
}

/// Transition matrix for one run.
pub fn transitions_for(cfg: &FgConfig, train: &[&PreparedFile]) -> TransitionModel {
    match cfg.transitions {
        TransitionSource::Default => TransitionModel::default(),
        TransitionSource::Fixed => TransitionModel::from_switch(cfg.onset, cfg.offset),
        TransitionSource::Estimated => {
            let labels: Vec<Vec<u8>> = train.iter().map(|f| f.series.labels()).collect();
            TransitionModel::estimate_from_labels(labels.iter().map(Vec::as_slice))
        }
    }
}

/// Train one detector on the given files. Returns the model and its
/// training-curve CSV.
pub fn train_model(
    cfg: &RunConfig,
    files: &[&PreparedFile],
    mi: Option<&[&Vec<Vec<f64>>]>,
    epochs: usize,
    seed: u64,
) -> Result<(DetectorModel, String)> {
    let series: Vec<BlockSeries> = files.iter().map(|f| f.series.clone()).collect();
    let mi_owned: Option<Vec<Vec<Vec<f64>>>> = mi.map(|m| m.iter().map(|v| (*v).clone()).collect());
    let mi_dim = mi_owned
        .as_ref()
        .and_then(|m| m.iter().flatten().next().map(Vec::len))
        .unwrap_or(0);
    let data = TrainingData::all(&series, mi_owned.as_deref());
    let mut model = DetectorModel::new(&cfg.cnn, mi_dim, seed)?;
    let train_cfg = TrainConfig { epochs, seed, ..cfg.train.clone() };
    let curve = train_detector(&mut model, &data, &train_cfg)?;
    Ok((model, curve_csv(&curve)))
}

/// Detector scores and factor-graph marginals for one test file.
fn score_file(
    model: &DetectorModel,
    file: &PreparedFile,
    mi: Option<&Vec<Vec<f64>>>,
    transitions: &TransitionModel,
    detection: &DetectionConfig,
) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let scores = model.predict(&file.series, mi.map(Vec::as_slice))?;
    let nodes = build_function_nodes(&scores, transitions, detection)?;
    let marg = marginals(&message_sequence(&nodes)?)?;
    Ok((scores, marg))
}

fn detections_csv(files: &[&PreparedFile], scores: &[f64], marg: Option<&[[f64; 2]]>, preds: &[u8]) -> String {
    let mut out = String::from("patient,file,t,label,score,marginal,detection\n");
    let mut k = 0;
    for f in files {
        for b in &f.series.blocks {
            let m = marg.map_or(String::new(), |m| format!("{:.6}", m[k][1]));
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{}\n",
                f.file.patient, f.file.file, b.t, b.label, scores[k], m, preds[k]
            ));
            k += 1;
        }
    }
    out
}

/// Run every seed and split run of `cfg`, writing metrics, aggregates,
/// detections and training curves under `cfg.output_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let files = load_dataset(&cfg.data_dir, &cfg.prep)?;
    run_pipeline_on(cfg, &files)
}

pub fn run_pipeline_on(cfg: &RunConfig, files: &[PreparedFile]) -> Result<PipelineReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    let needs_mi = cfg.variants.iter().any(|v| v.uses_mi());
    let needs_plain = cfg.variants.iter().any(|v| !v.uses_mi());
    let mi = if needs_mi { Some(dataset_mi(files, &cfg.smile, &cfg.mi_cache_dir())?) } else { None };
    let cat = catalog(files);
    let index: BTreeMap<FileRef, usize> = files.iter().enumerate().map(|(i, f)| (f.file.clone(), i)).collect();

    let mut results = Vec::new();
    let mut checkpoints = Vec::new();
    for &seed in &cfg.seeds {
        let plans: Vec<SplitPlan> = make_split(&cat, cfg.strategy, seed)?;
        for plan in &plans {
            let pick = |refs: &[FileRef]| refs.iter().map(|r| index[r]).collect::<Vec<usize>>();
            let (tr, te) = (pick(&plan.train), pick(&plan.test));
            let train_files: Vec<&PreparedFile> = tr.iter().map(|&i| &files[i]).collect();
            let test_files: Vec<&PreparedFile> = te.iter().map(|&i| &files[i]).collect();
            let epochs = cfg.epochs_for(cfg.strategy);
            let transitions = transitions_for(&cfg.fg, &train_files);
            let mut detection = cfg.fg.detection.clone();
            if detection.prior_correction {
                let labels: Vec<u8> = train_files.iter().flat_map(|f| f.series.labels()).collect();
                let p1 = labels.iter().filter(|&&l| l != 0).count() as f64 / labels.len() as f64;
                detection.class_prior = [1.0 - p1, p1];
            }
            let labels: Vec<u8> = test_files.iter().flat_map(|f| f.series.labels()).collect();

            let mut outputs: BTreeMap<bool, (Vec<f64>, Vec<[f64; 2]>)> = BTreeMap::new();
            for with_mi in [false, true] {
                if (with_mi && !needs_mi) || (!with_mi && !needs_plain) {
                    continue;
                }
                let kind = if with_mi { "fused" } else { "cnn" };
                let train_mi: Option<Vec<&Vec<Vec<f64>>>> =
                    mi.as_ref().filter(|_| with_mi).map(|m| tr.iter().map(|&i| &m[i]).collect());
                let model_seed = derive_seed(seed, &[plan.run as u64, with_mi as u64]);
                let (model, curve) = train_model(cfg, &train_files, train_mi.as_deref(), epochs, model_seed)
                    .map_err(|e| e.in_stage("train"))?;
                write(&out.join("curves").join(format!("seed{seed}_run{}_{kind}.csv", plan.run)), curve)?;
                let ckpt = save_checkpoint(&model.to_checkpoint());
                checkpoints.push((seed, plan.run, kind.to_string(), checkpoint_digest(&ckpt)));
                if cfg.save_checkpoints {
                    write(&out.join("models").join(format!("seed{seed}_run{}_{kind}.ckpt", plan.run)), &ckpt)?;
                }
                let mut scores = Vec::new();
                let mut marg = Vec::new();
                for &i in &te {
                    let file_mi = mi.as_ref().filter(|_| with_mi).map(|m| &m[i]);
                    let (s, m) = score_file(&model, &files[i], file_mi, &transitions, &detection)
                        .map_err(|e| e.in_stage("infer"))?;
                    scores.extend(s);
                    marg.extend(m);
                }
                outputs.insert(with_mi, (scores, marg));
            }

            for &variant in &cfg.variants {
                let (scores, marg) = &outputs[&variant.uses_mi()];
                let direct: Vec<u8> = scores.iter().map(|&p| (p > cfg.fg.direct_threshold) as u8).collect();
                let (rank, preds) = if variant.uses_fg() {
                    (marg.iter().map(|m| m[1]).collect::<Vec<f64>>(), detect(marg, &detection))
                } else {
                    (scores.clone(), direct.clone())
                };
                let report = MetricsReport::evaluate(&rank, &preds, &labels).map_err(|e| Error::from(e).in_stage("metrics"))?;
                write(
                    &out.join("detections").join(format!("seed{seed}_run{}_{}.csv", plan.run, variant.name().replace('+', "-"))),
                    detections_csv(&test_files, scores, variant.uses_fg().then_some(marg.as_slice()), &preds),
                )?;
                results.push(RunResult {
                    seed,
                    run: plan.run,
                    variant,
                    report,
                    labels: labels.clone(),
                    scores: rank,
                    predictions: preds,
                    direct_predictions: direct,
                });
            }
        }
    }

    let mut metrics_csv = format!("{METRICS_HEADER}\n");
    for r in &results {
        metrics_csv.push_str(&metrics_row(cfg.strategy, r));
    }
    let mut agg = BTreeMap::new();
    for &v in &cfg.variants {
        let reports: Vec<MetricsReport> = results.iter().filter(|r| r.variant == v).map(|r| r.report).collect();
        if let Some(a) = aggregate(&reports) {
            agg.insert(v.name().to_string(), a);
        }
    }
    write(&out.join("metrics.csv"), &metrics_csv)?;
    write(&out.join("aggregate.json"), aggregate_json(&agg))?;
    Ok(PipelineReport { results, metrics_csv, aggregate: agg, checkpoints })
}

/// Fixed-precision JSON so identical runs give identical bytes.
pub fn aggregate_json(agg: &BTreeMap<String, Aggregate>) -> String {
    let round = |v: f64| (v * 1e6).round() / 1e6;
    let mut root = serde_json::Map::new();
    for (name, a) in agg {
        let mut m = serde_json::Map::new();
        m.insert("runs".into(), a.runs.into());
        for ((field, mean), std) in MetricsReport::FIELDS.iter().zip(a.mean.values()).zip(a.std.values()) {
            m.insert((*field).into(), serde_json::json!({"mean": round(mean), "std": round(std)}));
        }
        root.insert(name.clone(), m.into());
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(root)).expect("serializable")
}

/// Parse a metrics CSV written by [`run_pipeline`] back into per-variant
/// reports.
pub fn read_metrics_csv(text: &str) -> Result<BTreeMap<String, Vec<MetricsReport>>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Config(format!("metrics csv: {e}")))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("metrics csv: bad number in column {i}")))
        };
        let report = MetricsReport {
            auc_roc: num(4)?,
            auc_pr: num(5)?,
            f1: num(6)?,
            precision: num(7)?,
            recall: num(8)?,
            accuracy: num(9)?,
        };
        out.entry(rec.get(3).unwrap_or_default().to_string()).or_default().push(report);
    }
    Ok(out)
}
