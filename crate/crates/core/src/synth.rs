//! Labelled synthetic multichannel EEG.
//!
//! Background is independent per-channel noise. Inside each seizure interval
//! a single band-limited oscillation (a few sinusoids with random phases) is
//! added to every channel with a per-channel gain, which raises both the
//! amplitude and the inter-channel dependence.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{Annotation, Recording};
use crate::prep::{block_label, default_electrodes};
use crate::rng::rng_from;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    White,
    Pink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_channels: usize,
    /// Seconds.
    pub duration: f64,
    pub sample_rate: f64,
    /// `(onset, duration)` pairs in seconds.
    pub seizure_intervals: Vec<(f64, f64)>,
    pub shared_gain: f64,
    /// Hz range of the shared seizure oscillation.
    pub seizure_band: (f64, f64),
    /// Number of sinusoids summed into the seizure oscillation.
    pub seizure_components: usize,
    pub noise_sigma: f64,
    pub noise: NoiseKind,
    /// Amplitude of an optional 60 Hz mains component on every channel.
    pub line_noise: f64,
    pub seed: u64,
    /// Seed for the per-channel seizure gains; `seed` when unset.
    pub topography_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_channels: default_electrodes().len(),
            duration: 60.0,
            sample_rate: 256.0,
            seizure_intervals: Vec::new(),
            shared_gain: 2.0,
            seizure_band: (2.0, 5.0),
            seizure_components: 3,
            noise_sigma: 1.0,
            noise: NoiseKind::White,
            line_noise: 0.0,
            seed: 0,
            topography_seed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_channels == 0 {
            return bad("n_channels must be positive".into());
        }
        if !(self.duration > 0.0) || !(self.sample_rate > 0.0) {
            return bad("duration and sample_rate must be positive".into());
        }
        if !(self.shared_gain >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("shared_gain and noise_sigma must be non-negative".into());
        }
        let (lo, hi) = self.seizure_band;
        if !(lo > 0.0 && lo <= hi && hi < self.sample_rate / 2.0) {
            return bad(format!("seizure band ({lo}, {hi}) Hz is not inside (0, fs/2)"));
        }
        if self.seizure_components == 0 {
            return bad("seizure_components must be positive".into());
        }
        let mut spans = self.seizure_intervals.clone();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (i, &(on, dur)) in spans.iter().enumerate() {
            if on < 0.0 || dur <= 0.0 || on + dur > self.duration {
                return bad(format!(
                    "seizure [{on}, {}) outside [0, {}]",
                    on + dur,
                    self.duration
                ));
            }
            if let Some(&(next, _)) = spans.get(i + 1) {
                if next < on + dur {
                    return bad(format!("seizures at {on} s and {next} s overlap"));
                }
            }
        }
        Ok(())
    }

    fn labels(&self) -> Vec<String> {
        let electrodes = default_electrodes();
        (0..self.n_channels)
            .map(|i| electrodes.get(i).cloned().unwrap_or_else(|| format!("E{i}")))
            .collect()
    }
}

/// Paul Kellet's economy pink-noise filter applied to a white stream.
fn pinken(white: &mut [f64]) {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for w in white.iter_mut() {
        b0 = 0.99765 * b0 + *w * 0.0990460;
        b1 = 0.96300 * b1 + *w * 0.2965164;
        b2 = 0.57000 * b2 + *w * 1.0526913;
        *w = (b0 + b1 + b2 + *w * 0.1848) * 0.2;
    }
}

/// Generate a recording and its per-second ground-truth labels
/// (block `[t, t + 1)` for `t = 0, 1, ...`).
pub fn synthesize_recording(config: &SynthConfig) -> Result<(Recording, Vec<u8>), SynthError> {
    config.validate()?;
    let fs = config.sample_rate;
    let n = (config.duration * fs).round() as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut samples: Vec<Vec<f64>> = (0..config.n_channels)
        .map(|c| {
            let mut rng = rng_from(config.seed, &[0, c as u64]);
            let mut ch: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            if config.noise == NoiseKind::Pink {
                pinken(&mut ch);
                let rms = (ch.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
                if rms > 0.0 {
                    ch.iter_mut().for_each(|v| *v /= rms);
                }
            }
            ch.iter_mut().for_each(|v| *v *= config.noise_sigma);
            ch
        })
        .collect();

    let mut gain_rng = rng_from(config.topography_seed.unwrap_or(config.seed), &[1]);
    let gains: Vec<f64> = (0..config.n_channels)
        .map(|_| gain_rng.random_range(0.5..=1.5))
        .collect();

    let tau = std::f64::consts::TAU;
    let (lo, hi) = config.seizure_band;
    let k = config.seizure_components;
    let norm = (k as f64 / 2.0).sqrt();
    for (i, &(onset, dur)) in config.seizure_intervals.iter().enumerate() {
        let mut rng = rng_from(config.seed, &[2, i as u64]);
        let comps: Vec<(f64, f64)> = (0..k)
            .map(|_| (rng.random_range(lo..=hi), rng.random_range(0.0..tau)))
            .collect();
        let start = (onset * fs).round() as usize;
        let end = (((onset + dur) * fs).round() as usize).min(n);
        for idx in start..end {
            let t = idx as f64 / fs;
            let s: f64 = comps.iter().map(|(f, ph)| (tau * f * t + ph).sin()).sum::<f64>() / norm;
            for (ch, g) in samples.iter_mut().zip(&gains) {
                ch[idx] += config.shared_gain * g * s;
            }
        }
    }

    if config.line_noise != 0.0 {
        for ch in samples.iter_mut() {
            for (idx, v) in ch.iter_mut().enumerate() {
                *v += config.line_noise * (tau * 60.0 * idx as f64 / fs).sin();
            }
        }
    }

    let annotations: Vec<Annotation> = config
        .seizure_intervals
        .iter()
        .map(|&(on, dur)| Annotation::seizure(on, dur))
        .collect();
    let labels = (0..config.duration.floor() as usize)
        .map(|t| block_label(&annotations, t as f64))
        .collect();

    let mut recording = Recording::new(config.labels(), fs, samples);
    recording.annotations = annotations;
    Ok((recording, labels))
}

/// Layout of a multi-patient synthetic dataset. Each file carries one seizure
/// placed uniformly at random away from the file edges. Files of one patient
/// share the same seizure topography.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_patients: usize,
    pub files_per_patient: usize,
    /// Seconds per file.
    pub file_duration: f64,
    /// Seizure duration range in seconds.
    pub seizure_duration: (f64, f64),
    /// Per-patient multiplicative jitter on `shared_gain` and `noise_sigma`.
    pub patient_jitter: f64,
    pub base: SynthConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_patients: 8,
            files_per_patient: 2,
            file_duration: 120.0,
            seizure_duration: (20.0, 30.0),
            patient_jitter: 0.2,
            base: SynthConfig {
                line_noise: 0.5,
                ..SynthConfig::default()
            },
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFile {
    pub patient: String,
    pub file: String,
    pub config: SynthConfig,
}

impl DatasetConfig {
    /// Per-file generator configs, in patient then file order.
    pub fn files(&self) -> Result<Vec<SyntheticFile>, SynthError> {
        let (dmin, dmax) = self.seizure_duration;
        if !(dmin > 0.0 && dmin <= dmax && dmax * 3.0 < self.file_duration) {
            return Err(SynthError::InvalidConfig(format!(
                "seizure durations ({dmin}, {dmax}) do not fit {} s files",
                self.file_duration
            )));
        }
        let mut out = Vec::new();
        for p in 0..self.n_patients {
            let mut prng = rng_from(self.seed, &[10, p as u64]);
            let j = self.patient_jitter;
            let gain = self.base.shared_gain * prng.random_range(1.0 - j..=1.0 + j);
            let sigma = self.base.noise_sigma * prng.random_range(1.0 - j..=1.0 + j);
            for f in 0..self.files_per_patient {
                let mut frng = rng_from(self.seed, &[11, p as u64, f as u64]);
                let dur = frng.random_range(dmin..=dmax);
                let margin = dur;
                let onset = frng.random_range(margin..=self.file_duration - dur - margin);
                let config = SynthConfig {
                    duration: self.file_duration,
                    seizure_intervals: vec![(onset, dur)],
                    shared_gain: gain,
                    noise_sigma: sigma,
                    seed: crate::rng::derive_seed(self.seed, &[12, p as u64, f as u64]),
                    topography_seed: Some(crate::rng::derive_seed(self.seed, &[13, p as u64])),
                    ..self.base.clone()
                };
                out.push(SyntheticFile {
                    patient: format!("syn{:02}", p + 1),
                    file: format!("syn{:02}_{:02}", p + 1, f + 1),
                    config,
                });
            }
        }
        Ok(out)
    }
}
