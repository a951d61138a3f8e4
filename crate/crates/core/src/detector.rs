//! 1D CNN over the 4 s block context, fused with the MI vector through a
//! logistic head.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    bce_with_logits, sigmoid, AdamState, Checkpoint, Conv1d, Dense, Dropout, Layer, LrSchedule, MaxPool1d, Network,
    NnError, Padding, Tensor,
};
use crate::prep::BlockSeries;
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("receptive field of {samples} samples is below the required {required}")]
    ReceptiveField { samples: usize, required: usize },
}

fn one() -> usize {
    1
}

/// One stage of the feature extractor. Convolutions and the dense layer are
/// followed by a ReLU; the tensor is flattened before the first dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    Pool {
        size: usize,
    },
    Dropout {
        rate: f64,
    },
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub input_len: usize,
    pub sample_rate: f64,
    pub layers: Vec<LayerSpec>,
    /// Required receptive field in seconds.
    pub min_receptive_seconds: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        use LayerSpec::*;
        let conv = |kernel, channels| Conv { kernel, channels, stride: 1, padding: Padding::Valid };
        CnnConfig {
            in_channels: 18,
            input_len: 4 * 256,
            sample_rate: 256.0,
            layers: vec![
                conv(11, 32),
                Pool { size: 4 },
                conv(9, 64),
                Pool { size: 4 },
                conv(9, 64),
                Pool { size: 4 },
                Dropout { rate: 0.5 },
                Dense { units: 128 },
            ],
            min_receptive_seconds: 0.9,
        }
    }
}

impl CnnConfig {
    /// Same layer categories at a size that trains in seconds on one core.
    pub fn compact() -> Self {
        use LayerSpec::*;
        let conv = |kernel, channels, stride| Conv { kernel, channels, stride, padding: Padding::Valid };
        CnnConfig {
            layers: vec![
                conv(8, 4, 8),
                Pool { size: 2 },
                conv(5, 8, 1),
                Pool { size: 2 },
                conv(5, 8, 1),
                Pool { size: 2 },
                Dropout { rate: 0.5 },
                Dense { units: 16 },
            ],
            ..CnnConfig::default()
        }
    }

    pub fn required_receptive_field(&self) -> usize {
        (self.min_receptive_seconds * self.sample_rate).ceil() as usize
    }

    /// Output width of the extractor.
    pub fn latent_dim(&self) -> Result<usize, DetectorError> {
        let (mut ch, mut len) = (self.in_channels, self.input_len);
        let mut flat: Option<usize> = None;
        for spec in &self.layers {
            match *spec {
                LayerSpec::Conv { kernel, channels, stride, padding } => {
                    if flat.is_some() {
                        return Err(DetectorError::InvalidConfig("conv after dense".into()));
                    }
                    let probe = Conv1d {
                        weight: Tensor::zeros(&[channels, ch, kernel]),
                        bias: Tensor::zeros(&[channels]),
                        stride,
                        padding,
                    };
                    len = probe.output_len(len)?;
                    ch = channels;
                }
                LayerSpec::Pool { size } => {
                    if flat.is_some() {
                        return Err(DetectorError::InvalidConfig("pool after dense".into()));
                    }
                    len = MaxPool1d::new(size).output_len(len)?;
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(DetectorError::InvalidConfig(format!("dropout rate {rate}")));
                    }
                }
                LayerSpec::Dense { units } => flat = Some(units),
            }
        }
        Ok(flat.unwrap_or(ch * len))
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.in_channels == 0 || self.input_len == 0 {
            return Err(DetectorError::InvalidConfig("empty input shape".into()));
        }
        self.latent_dim()?;
        let samples = receptive_field(self);
        let required = self.required_receptive_field();
        if samples < required {
            return Err(DetectorError::ReceptiveField { samples, required });
        }
        Ok(())
    }
}

/// Input samples seen by one output unit of the conv/pool stack.
pub fn receptive_field(config: &CnnConfig) -> usize {
    let (mut r, mut j) = (1usize, 1usize);
    for spec in &config.layers {
        let (k, s) = match *spec {
            LayerSpec::Conv { kernel, stride, .. } => (kernel, stride.max(1)),
            LayerSpec::Pool { size } => (size, size.max(1)),
            _ => continue,
        };
        r += (k - 1) * j;
        j *= s;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: CnnConfig,
    pub cnn: Network,
    /// Logistic head over `[mi, z]`.
    pub head: Dense,
    pub mi_dim: usize,
}

impl DetectorModel {
    pub fn new(config: &CnnConfig, mi_dim: usize, seed: u64) -> Result<Self, DetectorError> {
        config.validate()?;
        let mut rng = rng_from(seed, &[0xC0]);
        let mut layers = Vec::new();
        let mut ch = config.in_channels;
        let mut len = config.input_len;
        let mut flat = false;
        for spec in &config.layers {
            match *spec {
                LayerSpec::Conv { kernel, channels, stride, padding } => {
                    let conv = Conv1d::new(ch, channels, kernel, stride, padding, &mut rng);
                    len = conv.output_len(len)?;
                    ch = channels;
                    layers.push(Layer::Conv1d(conv));
                    layers.push(Layer::Relu);
                }
                LayerSpec::Pool { size } => {
                    let pool = MaxPool1d::new(size);
                    len = pool.output_len(len)?;
                    layers.push(Layer::MaxPool1d(pool));
                }
                LayerSpec::Dropout { rate } => layers.push(Layer::Dropout(Dropout { rate })),
                LayerSpec::Dense { units } => {
                    let inputs = if flat { ch } else { ch * len };
                    if !flat {
                        layers.push(Layer::Flatten);
                        flat = true;
                    }
                    layers.push(Layer::Dense(Dense::new(inputs, units, &mut rng)));
                    layers.push(Layer::Relu);
                    ch = units;
                }
            }
        }
        if !flat {
            layers.push(Layer::Flatten);
        }
        let latent = config.latent_dim()?;
        Ok(DetectorModel {
            config: config.clone(),
            cnn: Network::new(layers),
            head: Dense::zeros(mi_dim + latent, 1),
            mi_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.head.inputs() - self.mi_dim
    }

    fn input_tensor(&self, input: &[f64]) -> Result<Tensor, DetectorError> {
        let (c, l) = (self.config.in_channels, self.config.input_len);
        if input.len() != c * l {
            return Err(DetectorError::DimMismatch { what: "cnn input", expected: c * l, got: input.len() });
        }
        Ok(Tensor::from_vec(&[c, l], input.to_vec())?)
    }

    /// Latent features of one `[channels, samples]` block (dropout off).
    pub fn cnn_features(&self, input: &[f64]) -> Result<Vec<f64>, DetectorError> {
        Ok(self.cnn.infer(&self.input_tensor(input)?)?.into_data())
    }

    fn fused(&self, mi: &[f64], z: &[f64]) -> Result<Tensor, DetectorError> {
        if mi.len() != self.mi_dim {
            return Err(DetectorError::DimMismatch { what: "mi features", expected: self.mi_dim, got: mi.len() });
        }
        if z.len() != self.latent_dim() {
            return Err(DetectorError::DimMismatch { what: "latent", expected: self.latent_dim(), got: z.len() });
        }
        let y: Vec<f64> = mi.iter().chain(z).copied().collect();
        Ok(Tensor::from_vec(&[1, y.len()], y)?)
    }

    pub fn logit(&self, mi: &[f64], z: &[f64]) -> Result<f64, DetectorError> {
        Ok(self.head.forward(&self.fused(mi, z)?)?.data()[0])
    }

    /// `sigmoid(w . [mi, z] + b)`.
    pub fn fuse_and_score(&self, mi: &[f64], z: &[f64]) -> Result<f64, DetectorError> {
        Ok(sigmoid(self.logit(mi, z)?))
    }

    pub fn score(&self, input: &[f64], mi: &[f64]) -> Result<f64, DetectorError> {
        self.fuse_and_score(mi, &self.cnn_features(input)?)
    }

    /// Scores for every block of a series, in block order.
    pub fn predict(&self, series: &BlockSeries, mi: Option<&[Vec<f64>]>) -> Result<Vec<f64>, DetectorError> {
        (0..series.n_blocks())
            .into_par_iter()
            .map(|k| self.score(&series.cnn_input(k), mi.map_or(&[][..], |m| &m[k])))
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.cnn.params();
        p.push(&self.head.weight);
        p.push(&self.head.bias);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.cnn.params_mut();
        p.push(&mut self.head.weight);
        p.push(&mut self.head.bias);
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.cnn.param_names("cnn.");
        n.push("head.weight".into());
        n.push("head.bias".into());
        n
    }

    /// Loss and parameter gradients for one labelled example.
    fn example_grads(&self, input: &[f64], mi: &[f64], label: f64, seed: u64) -> Result<(f64, Vec<Tensor>), DetectorError> {
        let mut rng = rng_from(seed, &[]);
        let (z, trace) = self.cnn.forward_train(&self.input_tensor(input)?, &mut rng)?;
        let y = self.fused(mi, z.data())?;
        let logit = self.head.forward(&y)?.data()[0];
        let (loss, dlogit) = bce_with_logits(logit, label);
        let (gy, gw, gb) = self.head.backward(&y, &Tensor::from_vec(&[1, 1], vec![dlogit])?)?;
        let gz = Tensor::from_vec(z.shape(), gy.data()[self.mi_dim..].to_vec())?;
        let (_, mut grads) = self.cnn.backward(&trace, &gz)?;
        grads.push(gw);
        grads.push(gb);
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: serde_json::json!({
                "kind": "detector",
                "config": self.config,
                "mi_dim": self.mi_dim,
            }),
            tensors: self
                .param_names()
                .into_iter()
                .zip(self.params().into_iter().cloned())
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, DetectorError> {
        let bad = |m: String| DetectorError::Nn(NnError::Checkpoint(m));
        let config: CnnConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| bad(format!("config: {e}")))?;
        let mi_dim = ckpt.meta["mi_dim"].as_u64().ok_or_else(|| bad("missing mi_dim".into()))? as usize;
        let mut model = DetectorModel::new(&config, mi_dim, 0)?;
        let names = model.param_names();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = ckpt.tensor(name).ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if t.shape() != p.shape() {
                return Err(bad(format!("tensor `{name}` has shape {:?}", t.shape())));
            }
            *p = t.clone();
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Half from each class per batch.
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            schedule: LrSchedule::default(),
            seed: 0,
        }
    }
}

/// Labelled training examples: `(series index, block index)` into `series`.
pub struct TrainingData<'a> {
    pub series: &'a [BlockSeries],
    /// Per series, per block MI vectors; `None` for CNN-only models.
    pub mi: Option<&'a [Vec<Vec<f64>>]>,
    pub items: Vec<(usize, usize)>,
}

impl<'a> TrainingData<'a> {
    /// Every block of every series.
    pub fn all(series: &'a [BlockSeries], mi: Option<&'a [Vec<Vec<f64>>]>) -> Self {
        let items = series
            .iter()
            .enumerate()
            .flat_map(|(s, b)| (0..b.n_blocks()).map(move |k| (s, k)))
            .collect();
        TrainingData { series, mi, items }
    }

    pub fn label(&self, item: (usize, usize)) -> u8 {
        self.series[item.0].blocks[item.1].label
    }

    fn mi_of(&self, item: (usize, usize)) -> &[f64] {
        self.mi.map_or(&[][..], |m| &m[item.0][item.1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,lr\n");
    for r in curve {
        out.push_str(&format!("{},{:.8},{:e}\n", r.epoch, r.loss, r.lr));
    }
    out
}

/// Class-balanced batch stream: each batch holds `half` majority items taken
/// from successive shuffled passes over the majority class and `half`
/// minority items drawn with replacement.
pub struct BalancedSampler {
    majority: Vec<usize>,
    minority: Vec<usize>,
    half: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: crate::rng::Rng,
}

impl BalancedSampler {
    pub fn new(labels: &[u8], batch_size: usize, seed: u64) -> Result<Self, DetectorError> {
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(DetectorError::SingleClass);
        }
        if batch_size < 2 || batch_size % 2 != 0 {
            return Err(DetectorError::InvalidConfig("batch_size must be even".into()));
        }
        let (majority, minority) = if neg.len() >= pos.len() { (neg, pos) } else { (pos, neg) };
        Ok(BalancedSampler {
            order: Vec::new(),
            cursor: 0,
            half: batch_size / 2,
            majority,
            minority,
            rng: rng_from(seed, &[0xBA]),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.majority.len().div_ceil(self.half)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(2 * self.half);
        while batch.len() < self.half {
            if self.cursor == self.order.len() {
                self.order = self.majority.clone();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        for _ in 0..self.half {
            batch.push(self.minority[self.rng.random_range(0..self.minority.len())]);
        }
        batch
    }
}

/// Trains CNN and head jointly on binary cross-entropy with Adam and the
/// plateau schedule driven by the epoch's mean training loss.
pub fn train_detector(
    model: &mut DetectorModel,
    data: &TrainingData<'_>,
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>, DetectorError> {
    if data.mi.is_some() != (model.mi_dim > 0) {
        return Err(DetectorError::DimMismatch {
            what: "mi features",
            expected: model.mi_dim,
            got: usize::from(data.mi.is_some()),
        });
    }
    let labels: Vec<u8> = data.items.iter().map(|&it| data.label(it)).collect();
    let mut sampler = BalancedSampler::new(&labels, config.batch_size, config.seed)?;
    let mut adam = AdamState::new(model.params());
    let names = model.param_names();
    let mut schedule = LrSchedule::new(
        config.schedule.initial,
        config.schedule.factor,
        config.schedule.floor,
        config.schedule.patience,
    );
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = schedule.current();
        let n_batches = sampler.batches_per_epoch();
        let mut epoch_loss = 0.0;
        for b in 0..n_batches {
            let batch = sampler.next_batch();
            let model_ref = &*model;
            let results: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let item = data.items[i];
                    let seed = derive_seed(config.seed, &[epoch as u64, b as u64, pos as u64]);
                    model_ref.example_grads(
                        &data.series[item.0].cnn_input(item.1),
                        data.mi_of(item),
                        labels[i] as f64,
                        seed,
                    )
                })
                .collect::<Result<_, _>>()?;
            let mut grads = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                crate::nn::accumulate(&mut grads, g);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            adam.step(&mut model.params_mut(), &grads, &names, lr)?;
            epoch_loss += loss * scale;
        }
        epoch_loss /= n_batches as f64;
        if !epoch_loss.is_finite() {
            return Err(NnError::NonFinite { param: format!("epoch {epoch} loss") }.into());
        }
        curve.push(EpochRecord { epoch, loss: epoch_loss, lr });
        schedule.step(epoch_loss);
    }
    Ok(curve)
}
