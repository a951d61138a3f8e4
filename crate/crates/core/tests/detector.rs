use eeg_seizure::detector::{
    train_detector, BalancedSampler, CnnConfig, DetectorModel, LayerSpec, TrainConfig, TrainingData,
};
use eeg_seizure::edf::{Annotation, Recording};
use eeg_seizure::nn::{checkpoint_digest, load_checkpoint, save_checkpoint, sigmoid, LrSchedule, Padding, Tensor};
use eeg_seizure::prep::{segment_blocks, BlockSeries};
use eeg_seizure::rng::rng_from;
use rand_distr::{Distribution, Normal};

const FS: f64 = 32.0;

/// Two channels of unit noise; seizure seconds carry 4x amplitude.
fn toy_series(seed: u64) -> BlockSeries {
    let seconds = 200;
    let seizures = [(40.0, 40.0), (120.0, 40.0)];
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = rng_from(seed, &[]);
    let samples = (0..2)
        .map(|_| {
            (0..seconds * FS as usize)
                .map(|i| {
                    let t = i as f64 / FS;
                    let amp = if seizures.iter().any(|(on, d)| t >= *on && t < on + d) { 4.0 } else { 1.0 };
                    amp * normal.sample(&mut rng)
                })
                .collect()
        })
        .collect();
    let mut rec = Recording::new(vec!["A".into(), "B".into()], FS, samples);
    rec.annotations = seizures.iter().map(|&(on, d)| Annotation::seizure(on, d)).collect();
    segment_blocks(&rec).unwrap()
}

fn toy_config() -> CnnConfig {
    CnnConfig {
        in_channels: 2,
        input_len: 4 * FS as usize,
        sample_rate: FS,
        layers: vec![
            LayerSpec::Conv { kernel: 4, channels: 4, stride: 2, padding: Padding::Valid },
            LayerSpec::Pool { size: 2 },
            LayerSpec::Dense { units: 8 },
        ],
        min_receptive_seconds: 0.0,
    }
}

fn toy_train() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 64,
        schedule: LrSchedule::new(0.01, 0.5, 1e-5, 5),
        seed: 3,
    }
}

#[test]
fn separable_toy_reaches_high_training_accuracy() {
    let series = vec![toy_series(1)];
    let data = TrainingData::all(&series, None);
    let mut model = DetectorModel::new(&toy_config(), 0, 11).unwrap();
    let curve = train_detector(&mut model, &data, &toy_train()).unwrap();
    assert_eq!(curve.len(), 20);
    assert!(curve.last().unwrap().loss < curve[0].loss);
    let scores = model.predict(&series[0], None).unwrap();
    let labels = series[0].labels();
    let correct = scores.iter().zip(&labels).filter(|(s, l)| (**s > 0.5) == (**l == 1)).count();
    let acc = correct as f64 / labels.len() as f64;
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn fixed_seed_gives_identical_checkpoint() {
    let series = vec![toy_series(2)];
    let mi: Vec<Vec<Vec<f64>>> = vec![series[0].blocks.iter().map(|b| vec![b.t as f64 / 200.0, 0.5]).collect()];
    let train = TrainConfig { epochs: 3, ..toy_train() };
    let run = || {
        let data = TrainingData::all(&series, Some(&mi));
        let mut model = DetectorModel::new(&toy_config(), 2, 5).unwrap();
        train_detector(&mut model, &data, &train).unwrap();
        save_checkpoint(&model.to_checkpoint())
    };
    let (a, b) = (run(), run());
    assert_eq!(checkpoint_digest(&a), checkpoint_digest(&b));

    let restored = DetectorModel::from_checkpoint(&load_checkpoint(&a).unwrap()).unwrap();
    let fresh = DetectorModel::from_checkpoint(&load_checkpoint(&b).unwrap()).unwrap();
    let p = restored.predict(&series[0], Some(&mi[0])).unwrap();
    let q = fresh.predict(&series[0], Some(&mi[0])).unwrap();
    assert_eq!(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), q.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn hand_set_head_matches_sigmoid() {
    let mut model = DetectorModel::new(&toy_config(), 2, 0).unwrap();
    let n = model.head.inputs();
    let w: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.3).collect();
    model.head.weight = Tensor::from_vec(&[1, n], w.clone()).unwrap();
    model.head.bias = Tensor::from_vec(&[1], vec![0.25]).unwrap();
    let mi = [0.4, -1.2];
    let z: Vec<f64> = (0..n - 2).map(|i| (i as f64).sin()).collect();
    let direct = w.iter().zip(mi.iter().chain(&z)).map(|(a, b)| a * b).sum::<f64>() + 0.25;
    assert!((model.fuse_and_score(&mi, &z).unwrap() - sigmoid(direct)).abs() < 1e-12);
    // Large positive bias drives the score to 1.
    model.head.bias = Tensor::from_vec(&[1], vec![60.0]).unwrap();
    assert!(model.fuse_and_score(&mi, &z).unwrap() > 1.0 - 1e-12);
}

#[test]
fn cnn_features_have_declared_width_and_are_non_negative() {
    let cfg = CnnConfig::compact();
    let model = DetectorModel::new(&cfg, 0, 1).unwrap();
    let x: Vec<f64> = Normal::new(0.0, 1.0)
        .unwrap()
        .sample_iter(rng_from(2, &[]))
        .take(cfg.in_channels * cfg.input_len)
        .collect();
    let z = model.cnn_features(&x).unwrap();
    assert_eq!(z.len(), cfg.latent_dim().unwrap());
    assert!(z.iter().all(|v| *v >= 0.0));
    assert!(model.cnn_features(&x[1..]).is_err());
}

#[test]
fn balanced_sampler_rejects_single_class() {
    assert!(BalancedSampler::new(&[0, 0, 0], 4, 0).is_err());
    let mut s = BalancedSampler::new(&[0, 0, 0, 0, 0, 1], 4, 0).unwrap();
    let labels = [0, 0, 0, 0, 0, 1];
    for _ in 0..10 {
        let b = s.next_batch();
        assert_eq!(b.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(b.len(), 4);
    }
}
