mod common;

use std::path::Path;

use common::*;
use eeg_seizure::edf::Recording;
use eeg_seizure::pipeline::{prepare_recording, RunConfig};
use eeg_seizure::prep::segment_blocks;
use eeg_seizure::rng::rng_from;
use eeg_seizure::smile::{estimate_mi, mi_feature_vector, SmileConfig};
use eeg_seizure::synth::{synthesize_recording, SynthConfig};

fn shipped_config() -> RunConfig {
    RunConfig::from_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")).unwrap()
}

#[test]
fn gaussian_closed_form() {
    let out = smile_oracle();
    println!("{}", out.detail);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn independent_gaussians_near_zero() {
    let m = smile_median(0.0, &oracle_smile_config(), 5);
    assert!(m.abs() <= 0.1, "{m}");
}

#[test]
fn estimates_increase_with_correlation() {
    let cfg = oracle_smile_config();
    let est: Vec<f64> = [0.0, 0.3, 0.6, 0.9].iter().map(|&r| smile_median(r, &cfg, 5)).collect();
    println!("{est:?}");
    assert!(est.windows(2).all(|w| w[0] < w[1]), "{est:?}");
}

#[test]
fn identical_channels_report_large_mi() {
    let cfg = oracle_smile_config();
    for s in 0..5 {
        let (x, _) = gaussian_pair(0.0, 8192, s);
        let v = estimate_mi(&x, &x, &cfg, &mut rng_from(s, &[7])).unwrap();
        assert!(v >= 1.5, "seed {s}: {v}");
    }
}

#[test]
fn constant_channel_gives_zero() {
    let (x, _) = gaussian_pair(0.0, 1024, 1);
    let y = vec![3.0; 1024];
    assert_eq!(estimate_mi(&x, &y, &SmileConfig::default(), &mut rng_from(0, &[])).unwrap(), 0.0);
}

#[test]
fn duplicated_channel_is_the_largest_entry() {
    let fs = 256.0;
    let n = 40 * 256;
    let mut samples: Vec<Vec<f64>> = (0..6).map(|c| normal_vec(&mut rng_from(c, &[5]), n)).collect();
    samples[5] = samples[2].clone();
    let rec = Recording::new((0..6).map(|c| format!("C{c}")).collect(), fs, samples);
    let series = segment_blocks(&rec).unwrap();
    let cfg = shipped_config().smile;
    let v = mi_feature_vector(&series, series.n_blocks() - 1, 17, &cfg).unwrap();
    assert_eq!(v.values.len(), 15);
    let max = v.values.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(v.get(2, 5), max, "{:?}", v.values);
    assert_eq!(v.get(5, 2), v.get(2, 5));
}

#[test]
fn seizure_blocks_carry_more_mi() {
    let run = shipped_config();
    let synth = SynthConfig {
        duration: 120.0,
        seizure_intervals: vec![(60.0, 30.0)],
        shared_gain: 4.0,
        seed: 5,
        ..run.synth.base.clone()
    };
    let (rec, _) = synthesize_recording(&synth).unwrap();
    let series = prepare_recording(&rec, &run.prep).unwrap();
    let mut mean = [0.0f64; 2];
    let mut count = [0usize; 2];
    for (k, b) in series.blocks.iter().enumerate() {
        // Late seizure blocks, whose MI window is mostly seizure, and background well before it.
        let pick = (b.label == 1 && (80..=89).contains(&b.t)) || (b.label == 0 && (40..=50).contains(&b.t));
        if pick {
            let v = mi_feature_vector(&series, k, b.t as u64, &run.smile).unwrap();
            mean[b.label as usize] += v.mean();
            count[b.label as usize] += 1;
        }
    }
    let (bg, sz) = (mean[0] / count[0] as f64, mean[1] / count[1] as f64);
    println!("background {bg:.4}, seizure {sz:.4}");
    assert!(sz > bg);
}
