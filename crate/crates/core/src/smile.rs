//! Neural mutual-information estimation with the clipped Donsker-Varadhan
//! (SMILE) objective.
//!
//! A small statistics network `T(x, y)` scores aligned sample pairs (joint) and
//! shuffled pairs (product of marginals). The reported estimate is
//! `mean T(joint) - ln mean clip(exp T(marginal), e^-tau, e^tau)`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dependence::{channel_pairs, pair_count, PairwiseVector};
use crate::nn::{AdamState, Dense, Layer, Network, NnError, Tensor};
use crate::prep::BlockSeries;
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum SmileError {
    #[error("clip bounds inverted: lower {lower} > upper {upper}")]
    InvertedBounds { lower: f64, upper: f64 },
    #[error("objective needs non-empty joint and marginal samples")]
    Empty,
    #[error("windows differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("window of {len} samples is shorter than the required {min}")]
    TooShort { len: usize, min: usize },
    #[error("objective diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid smile config: {0}")]
    InvalidConfig(String),
    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<SmileError>,
    },
    #[error("mi cache: {0}")]
    Cache(String),
}

pub fn clip(v: f64, lower: f64, upper: f64) -> Result<f64, SmileError> {
    if lower > upper {
        return Err(SmileError::InvertedBounds { lower, upper });
    }
    Ok(v.min(upper).max(lower))
}

/// Clipped DV objective in nats.
pub fn smile_objective(t_joint: &[f64], t_marginal: &[f64], tau: f64) -> Result<f64, SmileError> {
    Ok(smile_objective_grad(t_joint, t_marginal, tau)?.0)
}

/// Objective and its gradients with respect to each joint and marginal score.
/// Marginal scores whose exponent sits on a clip boundary get zero gradient.
pub fn smile_objective_grad(
    t_joint: &[f64],
    t_marginal: &[f64],
    tau: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>), SmileError> {
    if t_joint.is_empty() || t_marginal.is_empty() {
        return Err(SmileError::Empty);
    }
    let (lo, hi) = ((-tau).exp(), tau.exp());
    let nj = t_joint.len() as f64;
    let nm = t_marginal.len() as f64;
    let clipped: Vec<f64> = t_marginal
        .iter()
        .map(|&t| clip(t.exp(), lo, hi))
        .collect::<Result<_, _>>()?;
    let denom = clipped.iter().sum::<f64>() / nm;
    let value = t_joint.iter().sum::<f64>() / nj - denom.ln();
    let gj = vec![1.0 / nj; t_joint.len()];
    let gm = t_marginal
        .iter()
        .zip(&clipped)
        .map(|(&t, &c)| {
            let e = t.exp();
            if e > lo && e < hi {
                -c / (nm * denom)
            } else {
                0.0
            }
        })
        .collect();
    Ok((value, gj, gm))
}

/// Unclipped Donsker-Varadhan value `mean T(joint) - ln mean exp T(marginal)`.
pub fn dv_objective(t_joint: &[f64], t_marginal: &[f64]) -> f64 {
    let nj = t_joint.len() as f64;
    let nm = t_marginal.len() as f64;
    let m = t_marginal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + (t_marginal.iter().map(|t| (t - m).exp()).sum::<f64>() / nm).ln();
    t_joint.iter().sum::<f64>() / nj - lse
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Jensen-Shannon critic objective; its maximizer is the log density ratio.
fn js_grad(t_joint: &[f64], t_marginal: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nj = t_joint.len() as f64;
    let nm = t_marginal.len() as f64;
    let value = -t_joint.iter().map(|&t| softplus(-t)).sum::<f64>() / nj
        - t_marginal.iter().map(|&t| softplus(t)).sum::<f64>() / nm;
    let gj = t_joint.iter().map(|&t| crate::nn::sigmoid(-t) / nj).collect();
    let gm = t_marginal.iter().map(|&t| -crate::nn::sigmoid(t) / nm).collect();
    (value, gj, gm)
}

/// How the critic's parameters are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CriticTraining {
    /// Ascend the Jensen-Shannon surrogate and report the clipped DV value.
    /// The clipped DV objective alone is unbounded in a constant offset of T.
    #[default]
    JsSurrogate,
    /// Ascend the clipped DV objective directly.
    ClippedDv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmileConfig {
    pub tau: f64,
    /// Pairs per step: half joint, half shuffled.
    pub batch_size: usize,
    /// Gradient steps per window.
    pub epochs: usize,
    pub lr: f64,
    pub ema_window: usize,
    pub hidden: (usize, usize),
    pub seed: u64,
    pub warm_start: bool,
    pub training: CriticTraining,
}

impl Default for SmileConfig {
    fn default() -> Self {
        SmileConfig {
            tau: 0.9,
            batch_size: 256,
            epochs: 200,
            lr: 1e-4,
            ema_window: 10,
            hidden: (64, 64),
            seed: 0,
            warm_start: false,
            training: CriticTraining::JsSurrogate,
        }
    }
}

impl SmileConfig {
    pub fn validate(&self) -> Result<(), SmileError> {
        let bad = |m: &str| Err(SmileError::InvalidConfig(m.into()));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad("batch_size must be even and at least 2");
        }
        if self.epochs == 0 || self.ema_window == 0 || self.ema_window > self.epochs {
            return bad("need 1 <= ema_window <= epochs");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.hidden.0 == 0 || self.hidden.1 == 0 {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; keys MI caches.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("serializable")))
    }
}

/// Two-hidden-layer ReLU critic on `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticsNetwork {
    pub net: Network,
}

impl StatisticsNetwork {
    pub fn new(hidden: (usize, usize), rng: &mut Rng) -> Self {
        StatisticsNetwork {
            net: Network::new(vec![
                Layer::Dense(Dense::new(2, hidden.0, rng)),
                Layer::Relu,
                Layer::Dense(Dense::new(hidden.0, hidden.1, rng)),
                Layer::Relu,
                Layer::Dense(Dense::new(hidden.1, 1, rng)),
            ]),
        }
    }

    /// Scores for a `[batch, 2]` input.
    pub fn scores(&self, pairs: &Tensor) -> Result<Vec<f64>, NnError> {
        Ok(self.net.infer(pairs)?.into_data())
    }
}

fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if !(var > 1e-24) {
        return None;
    }
    let sd = var.sqrt();
    Some(v.iter().map(|a| (a - mean) / sd).collect())
}

/// Minimum window accepted by [`estimate_mi`].
pub const MIN_WINDOW: usize = 16;

/// Train a fresh critic on one pair of windows and return the MI estimate.
pub fn estimate_mi(x: &[f64], y: &[f64], config: &SmileConfig, rng: &mut Rng) -> Result<f64, SmileError> {
    let mut critic = StatisticsNetwork::new(config.hidden, rng);
    estimate_mi_with(&mut critic, x, y, config, rng)
}

/// As [`estimate_mi`], continuing from an existing critic.
pub fn estimate_mi_with(
    critic: &mut StatisticsNetwork,
    x: &[f64],
    y: &[f64],
    config: &SmileConfig,
    rng: &mut Rng,
) -> Result<f64, SmileError> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(SmileError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < MIN_WINDOW {
        return Err(SmileError::TooShort { len: x.len(), min: MIN_WINDOW });
    }
    // A constant channel carries no information about the other.
    let (Some(xs), Some(ys)) = (standardize(x), standardize(y)) else {
        return Ok(0.0);
    };
    let n = xs.len();
    let half = config.batch_size / 2;
    let mut adam = AdamState::new(critic.net.params());
    let names = critic.net.param_names("critic.");
    let mut tail = Vec::with_capacity(config.ema_window);
    let mut input = vec![0.0; config.batch_size * 2];
    let mut perm: Vec<usize> = (0..half).collect();
    let mut idx = vec![0usize; half];
    for epoch in 0..config.epochs {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        perm.shuffle(rng);
        for k in 0..half {
            let (a, b) = (idx[k], idx[perm[k]]);
            input[2 * k] = xs[a];
            input[2 * k + 1] = ys[a];
            input[2 * (half + k)] = xs[a];
            input[2 * (half + k) + 1] = ys[b];
        }
        let batch = Tensor::from_vec(&[config.batch_size, 2], input.clone()).expect("sized");
        let (out, trace) = critic
            .net
            .forward_train(&batch, rng)
            .map_err(|_| SmileError::Diverged { epoch })?;
        let t = out.data();
        let (tj, tm) = t.split_at(half);
        let (value, _, _) = smile_objective_grad(tj, tm, config.tau)?;
        if !value.is_finite() {
            return Err(SmileError::Diverged { epoch });
        }
        let (gj, gm) = match config.training {
            CriticTraining::JsSurrogate => {
                let (_, gj, gm) = js_grad(tj, tm);
                (gj, gm)
            }
            CriticTraining::ClippedDv => {
                let (_, gj, gm) = smile_objective_grad(tj, tm, config.tau)?;
                (gj, gm)
            }
        };
        // Ascent: feed the negated objective gradient to the minimizer.
        let grad: Vec<f64> = gj.iter().chain(&gm).map(|g| -g).collect();
        let grad = Tensor::from_vec(&[config.batch_size, 1], grad).expect("sized");
        let (_, grads) = critic
            .net
            .backward(&trace, &grad)
            .map_err(|_| SmileError::Diverged { epoch })?;
        adam.step(&mut critic.net.params_mut(), &grads, &names, config.lr)
            .map_err(|_| SmileError::Diverged { epoch })?;
        if epoch + config.ema_window >= config.epochs {
            tail.push(value);
        }
    }
    let est = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(est.max(0.0))
}

/// Seed for one (block, pair) estimate.
pub fn pair_seed(config: &SmileConfig, block_key: u64, i: usize, j: usize) -> u64 {
    derive_seed(config.seed, &[block_key, i as u64, j as u64])
}

/// MI over every canonical channel pair of block `k`'s MI context.
/// `block_key` identifies the block across files so seeds never collide.
pub fn mi_feature_vector(
    series: &BlockSeries,
    k: usize,
    block_key: u64,
    config: &SmileConfig,
) -> Result<PairwiseVector, SmileError> {
    let ctx = series.mi_context(k);
    let n = ctx.len();
    let pairs: Vec<(usize, usize)> = channel_pairs(n).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut rng = rng_from(pair_seed(config, block_key, i, j), &[]);
            estimate_mi(ctx[i], ctx[j], config, &mut rng).map_err(|e| SmileError::Pair {
                i,
                j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(PairwiseVector { n_channels: n, values })
}

/// MI vectors for every block of a series, in block order. With
/// `warm_start`, each pair's critic carries over from the previous block.
pub fn mi_features(series: &BlockSeries, series_key: u64, config: &SmileConfig) -> Result<Vec<Vec<f64>>, SmileError> {
    config.validate()?;
    let block_key = |k: usize| derive_seed(series_key, &[series.blocks[k].t as u64]);
    if !config.warm_start {
        return (0..series.n_blocks())
            .map(|k| mi_feature_vector(series, k, block_key(k), config).map(|v| v.values))
            .collect();
    }
    let n = series.n_channels();
    let pairs: Vec<(usize, usize)> = channel_pairs(n).collect();
    let per_pair = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut rng = rng_from(pair_seed(config, series_key, i, j), &[]);
            let mut critic = StatisticsNetwork::new(config.hidden, &mut rng);
            (0..series.n_blocks())
                .map(|k| {
                    let ctx = series.mi_context(k);
                    let mut rng = rng_from(pair_seed(config, block_key(k), i, j), &[]);
                    estimate_mi_with(&mut critic, ctx[i], ctx[j], config, &mut rng)
                })
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| SmileError::Pair { i, j, source: Box::new(e) })
        })
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    Ok((0..series.n_blocks())
        .map(|k| per_pair.iter().map(|p| p[k]).collect())
        .collect())
}

const CACHE_MAGIC: &[u8; 4] = b"SZMI";
const CACHE_VERSION: u32 = 1;

/// Sidecar describing how a cache was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiCacheInfo {
    pub seed: u64,
    pub config_hash: String,
    pub n_blocks: usize,
    pub dim: usize,
}

/// Per-block MI records: `SZMI | u32 version | u32 n_blocks | u32 dim | f64 LE...`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiCache {
    pub info: MiCacheInfo,
    pub records: Vec<Vec<f64>>,
}

impl MiCache {
    pub fn new(config: &SmileConfig, records: Vec<Vec<f64>>) -> Result<Self, SmileError> {
        let dim = records.first().map_or(0, Vec::len);
        if records.iter().any(|r| r.len() != dim) {
            return Err(SmileError::Cache("records differ in length".into()));
        }
        Ok(MiCache {
            info: MiCacheInfo {
                seed: config.seed,
                config_hash: config.config_hash(),
                n_blocks: records.len(),
                dim,
            },
            records,
        })
    }

    pub fn matches(&self, config: &SmileConfig, n_blocks: usize, n_channels: usize) -> bool {
        self.info.seed == config.seed
            && self.info.config_hash == config.config_hash()
            && self.info.n_blocks == n_blocks
            && self.info.dim == pair_count(n_channels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.info.n_blocks * self.info.dim);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.info.n_blocks as u32).to_le_bytes());
        out.extend_from_slice(&(self.info.dim as u32).to_le_bytes());
        for v in self.records.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&self.info).expect("serializable")
    }

    pub fn from_parts(bytes: &[u8], sidecar: &str) -> Result<Self, SmileError> {
        let bad = |m: &str| SmileError::Cache(m.into());
        let info: MiCacheInfo =
            serde_json::from_str(sidecar).map_err(|e| SmileError::Cache(format!("sidecar: {e}")))?;
        if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
            return Err(bad("missing magic header"));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        if word(4) != CACHE_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (n, dim) = (word(8), word(12));
        if n != info.n_blocks || dim != info.dim {
            return Err(bad("sidecar disagrees with cache header"));
        }
        if bytes.len() != 16 + 8 * n * dim {
            return Err(bad("payload length does not match header"));
        }
        let values: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let records = if dim == 0 {
            vec![Vec::new(); n]
        } else {
            values.chunks(dim).map(<[f64]>::to_vec).collect()
        };
        Ok(MiCache { info, records })
    }
}
