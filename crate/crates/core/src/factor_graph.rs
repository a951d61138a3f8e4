//! Two-state chain factor graph over per-block soft scores.
//!
//! Function node `f_i(s_i, s_{i-1}) = P(s_i | s_{i-1}) L_i(s_i)` with
//! `L_i(1) = p_i` and `L_i(0) = 1 - p_i`; the first node uses a prior instead
//! of a transition. Marginals come from normalized forward/backward
//! sum-product messages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FactorGraphError {
    #[error("score {score} at block {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("invalid transition matrix: {0}")]
    InvalidTransitions(String),
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
    #[error("empty chain")]
    Empty,
    #[error("all-zero message at block {block}")]
    ZeroMessage { block: usize },
    #[error("zero marginal normalizer at block {block}")]
    ZeroNormalizer { block: usize },
    #[error("forward and backward messages differ in length ({forward} vs {backward})")]
    LengthMismatch { forward: usize, backward: usize },
    #[error("enumeration limited to {max} blocks, got {n}")]
    TooLong { n: usize, max: usize },
    #[error("score csv: {0}")]
    Csv(String),
}

/// Row-stochastic `P(s_i = col | s_{i-1} = row)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub p: [[f64; 2]; 2],
}

impl Default for TransitionModel {
    /// 0.8954 for non-seizure to seizure, 0.179 for seizure to non-seizure.
    fn default() -> Self {
        TransitionModel::from_switch(0.8954, 0.179)
    }
}

impl TransitionModel {
    /// From the switching probabilities `P(1|0)` and `P(0|1)`.
    pub fn from_switch(onset: f64, offset: f64) -> Self {
        TransitionModel {
            p: [[1.0 - onset, onset], [offset, 1.0 - offset]],
        }
    }

    pub fn validate(&self) -> Result<(), FactorGraphError> {
        for (r, row) in self.p.iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(FactorGraphError::InvalidTransitions(format!("row {r} has entries outside [0, 1]")));
            }
            if (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return Err(FactorGraphError::InvalidTransitions(format!("row {r} sums to {}", row[0] + row[1])));
            }
        }
        Ok(())
    }

    /// Stationary distribution; uniform when the chain never switches.
    pub fn stationary(&self) -> [f64; 2] {
        let (a, b) = (self.p[0][1], self.p[1][0]);
        if a + b <= 0.0 {
            return [0.5, 0.5];
        }
        [b / (a + b), a / (a + b)]
    }

    /// Maximum-likelihood transitions from label sequences, with one pseudo
    /// count per cell so unseen switches keep nonzero probability.
    pub fn estimate_from_labels<'a>(sequences: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut counts = [[1.0f64; 2]; 2];
        for seq in sequences {
            for w in seq.windows(2) {
                counts[(w[0] != 0) as usize][(w[1] != 0) as usize] += 1.0;
            }
        }
        let row = |r: [f64; 2]| {
            let s = r[0] + r[1];
            [r[0] / s, 1.0 - r[0] / s]
        };
        TransitionModel {
            p: [row(counts[0]), row(counts[1])],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub threshold: f64,
    /// Distribution of the first block's state; `None` uses the stationary
    /// distribution of the transitions.
    pub prior: Option<[f64; 2]>,
    /// Divide each likelihood by `class_prior` (turns a posterior score into
    /// a scaled likelihood).
    pub prior_correction: bool,
    pub class_prior: [f64; 2],
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold: 0.7,
            prior: None,
            prior_correction: false,
            class_prior: [0.5, 0.5],
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), FactorGraphError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(FactorGraphError::InvalidConfig(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        if let Some(p) = self.prior {
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || p[0] + p[1] <= 0.0 {
                return Err(FactorGraphError::InvalidConfig("prior must be non-negative and not all zero".into()));
            }
        }
        if self.prior_correction && self.class_prior.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(FactorGraphError::InvalidConfig("class prior must be positive".into()));
        }
        Ok(())
    }
}

/// Function-node values for a chain of `n` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePotentials {
    /// `f_1(s_1)`: prior times likelihood.
    pub first: [f64; 2],
    /// `f_i(s_i, s_{i-1})` for `i >= 2`, indexed `[s_{i-1}][s_i]`.
    pub pairwise: Vec<[[f64; 2]; 2]>,
}

impl NodePotentials {
    pub fn len(&self) -> usize {
        1 + self.pairwise.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn build_function_nodes(
    scores: &[f64],
    transitions: &TransitionModel,
    cfg: &DetectionConfig,
) -> Result<NodePotentials, FactorGraphError> {
    transitions.validate()?;
    cfg.validate()?;
    if scores.is_empty() {
        return Err(FactorGraphError::Empty);
    }
    let likelihood = |index: usize, p: f64| {
        if !(0.0..=1.0).contains(&p) {
            return Err(FactorGraphError::ScoreOutOfRange { index, score: p });
        }
        let mut l = [1.0 - p, p];
        if cfg.prior_correction {
            l[0] /= cfg.class_prior[0];
            l[1] /= cfg.class_prior[1];
        }
        Ok(l)
    };
    let prior = cfg.prior.unwrap_or_else(|| transitions.stationary());
    let l0 = likelihood(0, scores[0])?;
    let first = [prior[0] * l0[0], prior[1] * l0[1]];
    let pairwise = scores[1..]
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let l = likelihood(k + 1, p)?;
            let t = &transitions.p;
            Ok([
                [t[0][0] * l[0], t[0][1] * l[1]],
                [t[1][0] * l[0], t[1][1] * l[1]],
            ])
        })
        .collect::<Result<_, _>>()?;
    Ok(NodePotentials { first, pairwise })
}

/// Normalized messages; the unnormalized message at `k` is
/// `values[k] * exp(log_scale[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Messages {
    pub values: Vec<[f64; 2]>,
    pub log_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageSequence {
    pub forward: Messages,
    pub backward: Messages,
}

fn normalize(m: [f64; 2], block: usize) -> Result<([f64; 2], f64), FactorGraphError> {
    let s = m[0] + m[1];
    if !(s > 0.0) || !s.is_finite() {
        return Err(FactorGraphError::ZeroMessage { block });
    }
    Ok(([m[0] / s, m[1] / s], s.ln()))
}

pub fn forward_messages(nodes: &NodePotentials) -> Result<Messages, FactorGraphError> {
    let n = nodes.len();
    let mut values = Vec::with_capacity(n);
    let mut log_scale = Vec::with_capacity(n);
    let (m, s) = normalize(nodes.first, 0)?;
    values.push(m);
    log_scale.push(s);
    for (k, f) in nodes.pairwise.iter().enumerate() {
        let prev = values[k];
        let raw = [
            f[0][0] * prev[0] + f[1][0] * prev[1],
            f[0][1] * prev[0] + f[1][1] * prev[1],
        ];
        let (m, s) = normalize(raw, k + 1)?;
        values.push(m);
        log_scale.push(log_scale[k] + s);
    }
    Ok(Messages { values, log_scale })
}

pub fn backward_messages(nodes: &NodePotentials) -> Result<Messages, FactorGraphError> {
    let n = nodes.len();
    let mut values = vec![[0.0; 2]; n];
    let mut log_scale = vec![0.0; n];
    let (m, s) = normalize([1.0, 1.0], n - 1)?;
    values[n - 1] = m;
    log_scale[n - 1] = s;
    for k in (0..n - 1).rev() {
        let f = &nodes.pairwise[k];
        let next = values[k + 1];
        let raw = [
            f[0][0] * next[0] + f[0][1] * next[1],
            f[1][0] * next[0] + f[1][1] * next[1],
        ];
        let (m, s) = normalize(raw, k)?;
        values[k] = m;
        log_scale[k] = log_scale[k + 1] + s;
    }
    Ok(Messages { values, log_scale })
}

pub fn message_sequence(nodes: &NodePotentials) -> Result<MessageSequence, FactorGraphError> {
    let (forward, backward) = rayon::join(|| forward_messages(nodes), || backward_messages(nodes));
    Ok(MessageSequence {
        forward: forward?,
        backward: backward?,
    })
}

/// Per-block `[P(s=0 | all), P(s=1 | all)]`.
pub fn marginals(msgs: &MessageSequence) -> Result<Vec<[f64; 2]>, FactorGraphError> {
    let (f, b) = (&msgs.forward.values, &msgs.backward.values);
    if f.len() != b.len() {
        return Err(FactorGraphError::LengthMismatch {
            forward: f.len(),
            backward: b.len(),
        });
    }
    f.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (a, c))| {
            let m = [a[0] * c[0], a[1] * c[1]];
            let s = m[0] + m[1];
            if !(s > 0.0) {
                return Err(FactorGraphError::ZeroNormalizer { block: k });
            }
            Ok([m[0] / s, m[1] / s])
        })
        .collect()
}

pub const BRUTE_FORCE_MAX: usize = 16;

/// Marginals by summing the product of all function nodes over every state
/// sequence.
pub fn brute_force_marginals(nodes: &NodePotentials) -> Result<Vec<[f64; 2]>, FactorGraphError> {
    let n = nodes.len();
    if n > BRUTE_FORCE_MAX {
        return Err(FactorGraphError::TooLong { n, max: BRUTE_FORCE_MAX });
    }
    let mut acc = vec![[0.0; 2]; n];
    let mut total = 0.0;
    for bits in 0u32..(1 << n) {
        let s = |k: usize| ((bits >> k) & 1) as usize;
        let mut w = nodes.first[s(0)];
        for k in 1..n {
            w *= nodes.pairwise[k - 1][s(k - 1)][s(k)];
        }
        total += w;
        for (k, a) in acc.iter_mut().enumerate() {
            a[s(k)] += w;
        }
    }
    if !(total > 0.0) {
        return Err(FactorGraphError::ZeroNormalizer { block: 0 });
    }
    Ok(acc.into_iter().map(|a| [a[0] / total, a[1] / total]).collect())
}

/// `1` where the normalized seizure marginal is strictly above the threshold.
pub fn detect(marginals: &[[f64; 2]], cfg: &DetectionConfig) -> Vec<u8> {
    marginals
        .iter()
        .map(|m| (m[1] / (m[0] + m[1]) > cfg.threshold) as u8)
        .collect()
}

/// Scores to seizure marginals `P(s_k = 1 | all scores)`.
pub fn smooth(scores: &[f64], transitions: &TransitionModel, cfg: &DetectionConfig) -> Result<Vec<f64>, FactorGraphError> {
    let nodes = build_function_nodes(scores, transitions, cfg)?;
    Ok(marginals(&message_sequence(&nodes)?)?.into_iter().map(|m| m[1]).collect())
}

/// Reads `block_index,score` rows (header required), ordered by block index.
pub fn read_scores_csv(text: &str) -> Result<Vec<f64>, FactorGraphError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for rec in reader.deserialize::<(usize, f64)>() {
        rows.push(rec.map_err(|e| FactorGraphError::Csv(e.to_string()))?);
    }
    rows.sort_by_key(|r| r.0);
    for (k, (idx, _)) in rows.iter().enumerate() {
        if *idx != k {
            return Err(FactorGraphError::Csv(format!("block indices must run 0..n, missing {k}")));
        }
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn write_detections_csv(scores: &[f64], marginals: &[[f64; 2]], detections: &[u8]) -> String {
    let mut out = String::from("block_index,score,marginal,detection\n");
    for (k, ((s, m), d)) in scores.iter().zip(marginals).zip(detections).enumerate() {
        out.push_str(&format!("{k},{s:.6},{:.6},{d}\n", m[1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(scores: &[f64]) -> NodePotentials {
        build_function_nodes(scores, &TransitionModel::default(), &DetectionConfig::default()).unwrap()
    }

    #[test]
    fn node_values() {
        let n = nodes(&[0.5, 0.8, 1.0]);
        assert!((n.pairwise[0][0][1] - 0.8954 * 0.8).abs() < 1e-15);
        assert_eq!(n.pairwise[1][0][0], 0.0);
        assert_eq!(n.pairwise[1][1][0], 0.0);
        let t = TransitionModel::default();
        let half = nodes(&[0.5, 0.5]);
        for a in 0..2 {
            for b in 0..2 {
                assert!((half.pairwise[0][a][b] - 0.5 * t.p[a][b]).abs() < 1e-15);
            }
        }
        assert!(matches!(
            build_function_nodes(&[1.2], &t, &DetectionConfig::default()),
            Err(FactorGraphError::ScoreOutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn transition_defaults() {
        let t = TransitionModel::default();
        t.validate().unwrap();
        assert!((t.p[0][0] - 0.1046).abs() < 1e-12 && (t.p[1][1] - 0.821).abs() < 1e-12);
        let pi = t.stationary();
        assert!((pi[0] * t.p[0][1] - pi[1] * t.p[1][0]).abs() < 1e-15);
        let est = TransitionModel::estimate_from_labels([&[0u8, 0, 0, 1, 1, 0][..]]);
        assert!((est.p[0][1] - 2.0 / 5.0).abs() < 1e-15);
        assert!((est.p[1][0] - 2.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn base_and_uniform_cases() {
        let cfg = DetectionConfig { prior: Some([0.3, 0.7]), ..Default::default() };
        let one = build_function_nodes(&[0.9], &TransitionModel::default(), &cfg).unwrap();
        let f = forward_messages(&one).unwrap();
        let z = 0.3 * 0.1 + 0.7 * 0.9;
        assert!((f.values[0][1] - 0.63 / z).abs() < 1e-15);
        assert_eq!(backward_messages(&one).unwrap().values[0], [0.5, 0.5]);

        let uniform = NodePotentials { first: [1.0, 1.0], pairwise: vec![[[1.0; 2]; 2]; 5] };
        let m = message_sequence(&uniform).unwrap();
        assert!(m.forward.values.iter().chain(&m.backward.values).all(|v| *v == [0.5, 0.5]));
        assert!(marginals(&m).unwrap().iter().all(|v| *v == [0.5, 0.5]));
    }

    #[test]
    fn neutral_backward() {
        let msgs = MessageSequence {
            forward: Messages { values: vec![[0.9, 0.1]], log_scale: vec![0.0] },
            backward: Messages { values: vec![[0.5, 0.5]], log_scale: vec![0.0] },
        };
        let m = marginals(&msgs).unwrap();
        assert!((m[0][0] - 0.9).abs() < 1e-15 && (m[0][1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn deterministic_likelihoods() {
        let t = TransitionModel::from_switch(0.5, 0.5);
        let cfg = DetectionConfig { prior: Some([0.5, 0.5]), ..Default::default() };
        let n = build_function_nodes(&[1.0, 0.0], &t, &cfg).unwrap();
        let b = brute_force_marginals(&n).unwrap();
        assert_eq!(b[0][1], 1.0);
        assert_eq!(b[1][1], 0.0);
    }

    #[test]
    fn strict_threshold() {
        let cfg = DetectionConfig::default();
        assert_eq!(detect(&[[0.29, 0.71], [0.3, 0.7], [0.5, 0.5]], &cfg), vec![1, 0, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let s = read_scores_csv("block_index,score\n1,0.25\n0,0.5\n").unwrap();
        assert_eq!(s, vec![0.5, 0.25]);
        assert!(read_scores_csv("block_index,score\n0,0.5\n2,0.1\n").is_err());
        let text = write_detections_csv(&s, &[[0.4, 0.6], [0.1, 0.9]], &[0, 1]);
        assert!(text.ends_with("1,0.250000,0.900000,1\n"));
    }
}
