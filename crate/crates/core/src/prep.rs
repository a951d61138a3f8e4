//! Recording preprocessing: bipolar montage, line-noise notch, trimming
//! around seizures and segmentation into labelled 1 s blocks.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{Annotation, Recording};

#[derive(Debug, Error, PartialEq)]
pub enum PrepError {
    #[error("montage electrode `{0}` not found in recording")]
    MissingElectrode(String),
    #[error("montage line {line}: {text:?} is not `ANODE-CATHODE [label]`")]
    MontageSyntax { line: usize, text: String },
    #[error("notch frequency {f0} Hz must lie in (0, {nyquist}) Hz")]
    InvalidNotch { f0: f64, nyquist: f64 },
    #[error("notch quality factor {0} must be positive")]
    InvalidQ(f64),
    #[error("recording has no seizure annotation to trim around")]
    NoSeizures,
    #[error("recording lasts {duration} s; at least {required} s are needed")]
    TooShort { duration: f64, required: f64 },
}

/// Bipolar channel `anode - cathode`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MontagePair {
    pub anode_label: String,
    pub cathode_label: String,
    pub output_label: String,
}

impl MontagePair {
    pub fn new(anode: &str, cathode: &str) -> Self {
        MontagePair {
            anode_label: anode.into(),
            cathode_label: cathode.into(),
            output_label: format!("{anode}-{cathode}"),
        }
    }
}

/// The 18 bipolar derivations, in order.
pub const DEFAULT_MONTAGE: [(&str, &str); 18] = [
    ("FP1", "F7"),
    ("F7", "T7"),
    ("T7", "P7"),
    ("P7", "O1"),
    ("FP1", "F3"),
    ("F3", "T3"),
    ("T3", "P3"),
    ("P3", "O1"),
    ("FP2", "F4"),
    ("F4", "C4"),
    ("C4", "P4"),
    ("P4", "O2"),
    ("FP2", "F8"),
    ("F8", "T8"),
    ("T8", "P8"),
    ("P8", "O2"),
    ("FZ", "CZ"),
    ("CZ", "PZ"),
];

pub fn default_montage() -> Vec<MontagePair> {
    DEFAULT_MONTAGE
        .iter()
        .map(|(a, c)| MontagePair::new(a, c))
        .collect()
}

/// Distinct electrodes referenced by the default montage, in first-use order.
pub fn default_electrodes() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (a, c) in DEFAULT_MONTAGE {
        for e in [a, c] {
            if !out.iter().any(|x| x == e) {
                out.push(e.to_string());
            }
        }
    }
    out
}

/// Parse a montage text config. One pair per line, `ANODE-CATHODE` or
/// `ANODE CATHODE [OUTPUT]`; `#` starts a comment.
pub fn parse_montage(text: &str) -> Result<Vec<MontagePair>, PrepError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let pair = match fields.as_slice() {
            [single] => match single.split_once('-') {
                Some((a, c)) if !a.is_empty() && !c.is_empty() => MontagePair::new(a, c),
                _ => None.ok_or_else(|| PrepError::MontageSyntax {
                    line: i + 1,
                    text: raw.into(),
                })?,
            },
            [a, c] => MontagePair::new(a, c),
            [a, c, out] => MontagePair {
                anode_label: (*a).into(),
                cathode_label: (*c).into(),
                output_label: (*out).into(),
            },
            _ => {
                return Err(PrepError::MontageSyntax {
                    line: i + 1,
                    text: raw.into(),
                })
            }
        };
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn apply_montage(recording: &Recording, pairs: &[MontagePair]) -> Result<Recording, PrepError> {
    let lookup = |label: &str| {
        recording
            .channel(label)
            .ok_or_else(|| PrepError::MissingElectrode(label.to_string()))
    };
    let mut samples = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = lookup(&p.anode_label)?;
        let c = lookup(&p.cathode_label)?;
        samples.push(a.iter().zip(c).map(|(x, y)| x - y).collect());
    }
    Ok(Recording {
        channel_labels: pairs.iter().map(|p| p.output_label.clone()).collect(),
        sample_rate: recording.sample_rate,
        samples,
        annotations: recording.annotations.clone(),
    })
}

/// Second-order IIR section, normalised so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Standard notch (band-reject) section centred at `f0` with quality `q`.
    pub fn notch(f0: f64, fs: f64, q: f64) -> Result<Self, PrepError> {
        let nyquist = fs / 2.0;
        if !(f0 > 0.0 && f0 < nyquist) {
            return Err(PrepError::InvalidNotch { f0, nyquist });
        }
        if !(q > 0.0) {
            return Err(PrepError::InvalidQ(q));
        }
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        Ok(Biquad {
            b: [1.0 / a0, -2.0 * cos / a0, 1.0 / a0],
            a: [1.0, -2.0 * cos / a0, (1.0 - alpha) / a0],
        })
    }

    /// |H(e^{jw})| at frequency `f` for sample rate `fs`.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            re.hypot(im)
        };
        eval(&self.b) / eval(&self.a)
    }

    /// Causal single pass, transposed direct form II, zero initial state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let (mut z1, mut z2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = b0 * x + z1;
                z1 = b1 * x - a1 * y + z2;
                z2 = b2 * x - a2 * y;
                y
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotchConfig {
    pub f0: f64,
    pub q: f64,
}

impl Default for NotchConfig {
    fn default() -> Self {
        NotchConfig { f0: 60.0, q: 30.0 }
    }
}

pub fn notch_filter(signal: &[f64], f0: f64, fs: f64, q: f64) -> Result<Vec<f64>, PrepError> {
    Ok(Biquad::notch(f0, fs, q)?.filter(signal))
}

/// Apply the same notch to every channel.
pub fn notch_recording(recording: &Recording, cfg: NotchConfig) -> Result<Recording, PrepError> {
    let biquad = Biquad::notch(cfg.f0, recording.sample_rate, cfg.q)?;
    Ok(Recording {
        samples: recording.samples.iter().map(|c| biquad.filter(c)).collect(),
        ..recording.clone()
    })
}

fn merge_intervals(mut spans: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Keep `factor` seizure-durations of context on each side of every seizure.
/// Disjoint kept spans are concatenated and annotations shifted accordingly.
pub fn trim_around_seizures(recording: &Recording, factor: f64) -> Result<Recording, PrepError> {
    let total = recording.duration();
    let spans: Vec<(f64, f64)> = recording
        .seizures()
        .map(|a| {
            let pad = factor * a.duration;
            ((a.onset - pad).max(0.0), (a.end() + pad).min(total))
        })
        .collect();
    if spans.is_empty() {
        return Err(PrepError::NoSeizures);
    }
    let kept = merge_intervals(spans);

    let fs = recording.sample_rate;
    let len = recording.len();
    let to_index = |t: f64| ((t * fs).round() as usize).min(len);
    let ranges: Vec<Range<usize>> = kept.iter().map(|&(s, e)| to_index(s)..to_index(e)).collect();

    let samples = recording
        .samples
        .iter()
        .map(|c| ranges.iter().flat_map(|r| c[r.clone()].iter().copied()).collect())
        .collect();

    // Map a time inside a kept span to its position in the concatenated output.
    let mut annotations = Vec::new();
    for a in &recording.annotations {
        let mut offset = 0.0;
        for r in &ranges {
            let (s, e) = (r.start as f64 / fs, r.end as f64 / fs);
            if a.onset >= s && a.onset < e {
                let end = a.end().min(e);
                annotations.push(Annotation {
                    onset: a.onset - s + offset,
                    duration: end - a.onset,
                    label: a.label.clone(),
                });
                break;
            }
            offset += e - s;
        }
    }

    Ok(Recording {
        channel_labels: recording.channel_labels.clone(),
        sample_rate: fs,
        samples,
        annotations,
    })
}

/// Seconds of `[start, end)` covered by seizure annotations.
pub fn seizure_overlap(annotations: &[Annotation], start: f64, end: f64) -> f64 {
    let spans = annotations
        .iter()
        .filter(|a| a.label.eq_ignore_ascii_case("seizure"))
        .map(|a| (a.onset, a.end()))
        .collect();
    merge_intervals(spans)
        .into_iter()
        .map(|(s, e)| (e.min(end) - s.max(start)).max(0.0))
        .sum()
}

/// Block label: 1 iff at least half of `[t, t + 1)` lies inside a seizure.
pub fn block_label(annotations: &[Annotation], t: f64) -> u8 {
    u8::from(seizure_overlap(annotations, t, t + 1.0) >= 0.5)
}

pub const BLOCK_SECONDS: usize = 1;
pub const CNN_CONTEXT_SECONDS: usize = 4;
pub const MI_CONTEXT_SECONDS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Start time of the block in whole seconds.
    pub t: usize,
    pub label: u8,
    /// Sample range of the 4 s CNN context, `[t - 3, t + 1)`.
    pub cnn_range: Range<usize>,
    /// Sample range of the MI context, `[max(0, t - 31), t + 1)`.
    pub mi_range: Range<usize>,
}

/// Per-second blocks over one recording. Context windows are sample ranges
/// into the shared channel data rather than copies.
#[derive(Debug, Clone)]
pub struct BlockSeries {
    pub sample_rate: f64,
    pub channel_labels: Vec<String>,
    pub channels: Arc<Vec<Vec<f64>>>,
    pub blocks: Vec<Block>,
}

impl BlockSeries {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.blocks.iter().map(|b| b.label).collect()
    }

    pub fn cnn_context(&self, k: usize) -> Vec<&[f64]> {
        let r = &self.blocks[k].cnn_range;
        self.channels.iter().map(|c| &c[r.clone()]).collect()
    }

    pub fn mi_context(&self, k: usize) -> Vec<&[f64]> {
        let r = &self.blocks[k].mi_range;
        self.channels.iter().map(|c| &c[r.clone()]).collect()
    }

    /// CNN context flattened row-major as `[channels, samples]`.
    pub fn cnn_input(&self, k: usize) -> Vec<f64> {
        self.cnn_context(k).concat()
    }
}

pub fn segment_blocks(recording: &Recording) -> Result<BlockSeries, PrepError> {
    let fs = recording.sample_rate;
    let duration = recording.duration();
    if duration < CNN_CONTEXT_SECONDS as f64 {
        return Err(PrepError::TooShort {
            duration,
            required: CNN_CONTEXT_SECONDS as f64,
        });
    }
    let at = |sec: usize| (sec as f64 * fs).round() as usize;
    let len = recording.len();
    let mut blocks = Vec::new();
    let mut t = CNN_CONTEXT_SECONDS;
    while at(t + BLOCK_SECONDS) <= len {
        let end = at(t + BLOCK_SECONDS);
        blocks.push(Block {
            t,
            label: block_label(&recording.annotations, t as f64),
            cnn_range: at(t + 1 - CNN_CONTEXT_SECONDS)..end,
            mi_range: at((t + 1).saturating_sub(MI_CONTEXT_SECONDS))..end,
        });
        t += 1;
    }
    Ok(BlockSeries {
        sample_rate: fs,
        channel_labels: recording.channel_labels.clone(),
        channels: Arc::new(recording.samples.clone()),
        blocks,
    })
}
