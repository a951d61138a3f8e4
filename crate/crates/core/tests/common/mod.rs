//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use eeg_seizure::edf::{header_for, parse_edf_full, write_edf, HeaderOverrides, Manifest, Recording};
use eeg_seizure::factor_graph::{build_function_nodes, marginals, message_sequence, DetectionConfig, TransitionModel};
use eeg_seizure::metrics::{auc_pr, auc_roc};
use eeg_seizure::nn::{Conv1d, Dense, Dropout, Layer, MaxPool1d, Network, Padding, Tensor};
use eeg_seizure::prep::{notch_filter, Biquad};
use eeg_seizure::rng::{rng_from, Rng};
use eeg_seizure::smile::{estimate_mi, SmileConfig};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self, n: usize, name: &str) -> String {
        format!(
            "criterion {n} [{}] {name}: {} ({:.2} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (pass, detail) = f();
    Outcome { pass, detail, elapsed: t.elapsed() }
}

// ---- factor graph ----

/// Seizure marginals by enumerating every state sequence of the chain
/// `prior(s1) L1(s1) prod_k T(s_{k-1}, s_k) L_k(s_k)`.
pub fn enumerate_marginals(scores: &[f64], t: &[[f64; 2]; 2], prior: [f64; 2]) -> Vec<f64> {
    let n = scores.len();
    let lik = |k: usize, s: usize| if s == 1 { scores[k] } else { 1.0 - scores[k] };
    let mut on = vec![0.0; n];
    let mut z = 0.0;
    for bits in 0u32..(1 << n) {
        let s = |k: usize| ((bits >> k) & 1) as usize;
        let mut w = prior[s(0)] * lik(0, s(0));
        for k in 1..n {
            w *= t[s(k - 1)][s(k)] * lik(k, s(k));
        }
        z += w;
        for (k, o) in on.iter_mut().enumerate() {
            if s(k) == 1 {
                *o += w;
            }
        }
    }
    on.into_iter().map(|o| o / z).collect()
}

pub fn random_transitions(rng: &mut Rng) -> TransitionModel {
    let a = rng.random_range(0.02..0.98);
    let b = rng.random_range(0.02..0.98);
    TransitionModel { p: [[a, 1.0 - a], [b, 1.0 - b]] }
}

pub fn fg_brute_force(chains: usize, seed: u64) -> Outcome {
    timed(|| {
        let mut rng = rng_from(seed, &[]);
        let mut worst: f64 = 0.0;
        for _ in 0..chains {
            let n = rng.random_range(1..=14);
            let tm = random_transitions(&mut rng);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let p0 = rng.random_range(0.05..0.95);
            let cfg = DetectionConfig { prior: Some([1.0 - p0, p0]), ..Default::default() };
            let nodes = build_function_nodes(&scores, &tm, &cfg).unwrap();
            let got = marginals(&message_sequence(&nodes).unwrap()).unwrap();
            let want = enumerate_marginals(&scores, &tm.p, [1.0 - p0, p0]);
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g[1] - w).abs()).max((g[0] - (1.0 - w)).abs());
            }
        }
        (worst <= 1e-9, format!("{chains} chains, max abs error {worst:.2e} (bound 1e-9)"))
    })
}

// ---- gradients ----

pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_vec(shape, normal_vec(rng, shape.iter().product())).unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`: relative error, with a floor so entries
/// that are zero in both computations do not divide by zero.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

const FD_STEP: f64 = 1e-5;

fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Max relative error between a layer's analytic input/parameter gradients
/// and central differences of `sum(r * layer(x))`. Dropout reuses the same
/// seeded mask on every evaluation.
pub fn layer_grad_error(layer: &Layer, x: &Tensor, mask_seed: u64, r_seed: u64) -> f64 {
    let fwd = |l: &Layer, x: &Tensor| l.forward(x, Some(&mut rng_from(mask_seed, &[]))).unwrap();
    let (y, cache) = fwd(layer, x);
    let r = tensor(&mut rng_from(r_seed, &[]), y.shape());
    let (gx, gp) = layer.backward(&cache, &r).unwrap();
    let loss = |l: &Layer, x: &Tensor| weighted_sum(&fwd(l, x).0, &r);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut a, mut b) = (x.clone(), x.clone());
        a.data_mut()[i] += FD_STEP;
        b.data_mut()[i] -= FD_STEP;
        let num = (loss(layer, &a) - loss(layer, &b)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gx.data()[i], num));
    }
    for (p, g) in gp.iter().enumerate() {
        for i in 0..g.len() {
            let (mut a, mut b) = (layer.clone(), layer.clone());
            a.params_mut()[p].data_mut()[i] += FD_STEP;
            b.params_mut()[p].data_mut()[i] -= FD_STEP;
            let num = (loss(&a, x) - loss(&b, x)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[i], num));
        }
    }
    worst
}

/// As [`layer_grad_error`] for a whole network.
pub fn network_grad_error(net: &Network, x: &Tensor, mask_seed: u64, r_seed: u64) -> f64 {
    let fwd = |n: &Network, x: &Tensor| n.forward_train(x, &mut rng_from(mask_seed, &[])).unwrap();
    let (y, trace) = fwd(net, x);
    let r = tensor(&mut rng_from(r_seed, &[]), y.shape());
    let (gx, gp) = net.backward(&trace, &r).unwrap();
    let loss = |n: &Network, x: &Tensor| weighted_sum(&fwd(n, x).0, &r);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut a, mut b) = (x.clone(), x.clone());
        a.data_mut()[i] += FD_STEP;
        b.data_mut()[i] -= FD_STEP;
        worst = worst.max(rel_err(gx.data()[i], (loss(net, &a) - loss(net, &b)) / (2.0 * FD_STEP)));
    }
    for (p, g) in gp.iter().enumerate() {
        for i in 0..g.len() {
            let (mut a, mut b) = (net.clone(), net.clone());
            a.params_mut()[p].data_mut()[i] += FD_STEP;
            b.params_mut()[p].data_mut()[i] -= FD_STEP;
            worst = worst.max(rel_err(g.data()[i], (loss(&a, x) - loss(&b, x)) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// One random case per layer kind, cycling; returns (kind, error).
pub fn grad_case(case: usize, rng: &mut Rng) -> (&'static str, f64) {
    let seed = rng.random::<u64>();
    let c = rng.random_range(1..=4);
    let len = rng.random_range(6..=20);
    match case % 9 {
        0 | 1 => {
            let padding = if case % 9 == 0 { Padding::Valid } else { Padding::Same };
            let k = rng.random_range(1..=5.min(len));
            let conv = Conv1d::new(c, rng.random_range(1..=4), k, rng.random_range(1..=3), padding, rng);
            let mut layer = Layer::Conv1d(conv);
            // Non-zero biases so their gradients are exercised from a generic point.
            for v in layer.params_mut()[1].data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            ("conv1d", layer_grad_error(&layer, &tensor(rng, &[c, len]), seed, seed.wrapping_add(1)))
        }
        2 => {
            let (i, o) = (rng.random_range(1..=12), rng.random_range(1..=6));
            let layer = Layer::Dense(Dense::new(i, o, rng));
            let batch = rng.random_range(0..=4);
            let x = if batch == 0 { tensor(rng, &[i]) } else { tensor(rng, &[batch, i]) };
            ("dense", layer_grad_error(&layer, &x, seed, seed.wrapping_add(1)))
        }
        3 => {
            let layer = Layer::MaxPool1d(MaxPool1d::new(rng.random_range(2..=4)));
            ("maxpool1d", layer_grad_error(&layer, &tensor(rng, &[c, len]), seed, seed.wrapping_add(1)))
        }
        4 => ("relu", layer_grad_error(&Layer::Relu, &tensor(rng, &[c, len]), seed, seed.wrapping_add(1))),
        5 => ("sigmoid", layer_grad_error(&Layer::Sigmoid, &tensor(rng, &[c, len]), seed, seed.wrapping_add(1))),
        6 => {
            let layer = Layer::Dropout(Dropout { rate: rng.random_range(0.1..0.7) });
            ("dropout", layer_grad_error(&layer, &tensor(rng, &[c, len]), seed, seed.wrapping_add(1)))
        }
        7 => ("flatten", layer_grad_error(&Layer::Flatten, &tensor(rng, &[c, len]), seed, seed.wrapping_add(1))),
        _ => {
            let (k, out) = (3, rng.random_range(2..=4));
            let conv = Conv1d::new(c, out, k, 1, Padding::Same, rng);
            let pooled = len / 2;
            let net = Network::new(vec![
                Layer::Conv1d(conv),
                Layer::Relu,
                Layer::MaxPool1d(MaxPool1d::new(2)),
                Layer::Dropout(Dropout { rate: 0.3 }),
                Layer::Flatten,
                Layer::Dense(Dense::new(out * pooled, 3, rng)),
                Layer::Sigmoid,
            ]);
            ("network", network_grad_error(&net, &tensor(rng, &[c, len]), seed, seed.wrapping_add(1)))
        }
    }
}

pub fn gradient_checks(shapes: usize, seed: u64, bound: f64) -> Outcome {
    timed(|| {
        let mut rng = rng_from(seed, &[]);
        let mut worst = (0.0f64, "");
        for case in 0..shapes {
            let (kind, e) = grad_case(case, &mut rng);
            if e > worst.0 {
                worst = (e, kind);
            }
        }
        (
            worst.0 <= bound,
            format!("{shapes} shapes, max relative error {:.2e} ({}) (bound {bound:.0e})", worst.0, worst.1),
        )
    })
}

// ---- SMILE ----

pub fn gaussian_pair(rho: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from(seed, &[0x6a05]);
    let d = Normal::new(0.0, 1.0).unwrap();
    let c = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let a: f64 = d.sample(&mut rng);
            let b: f64 = d.sample(&mut rng);
            (a, rho * a + c * b)
        })
        .unzip()
}

pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

/// Critic settings for 8192-sample windows.
pub fn oracle_smile_config() -> SmileConfig {
    SmileConfig {
        epochs: 400,
        batch_size: 512,
        lr: 3e-3,
        hidden: (32, 32),
        ema_window: 40,
        ..SmileConfig::default()
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Median over seeds of the SMILE estimate for one correlation.
pub fn smile_median(rho: f64, cfg: &SmileConfig, seeds: u64) -> f64 {
    let mut est: Vec<f64> = (0..seeds)
        .map(|s| {
            let (x, y) = gaussian_pair(rho, 8192, s);
            estimate_mi(&x, &y, cfg, &mut rng_from(s, &[7])).unwrap()
        })
        .collect();
    median(&mut est)
}

pub fn smile_oracle() -> Outcome {
    timed(|| {
        let cfg = oracle_smile_config();
        let mut pass = true;
        let mut parts = Vec::new();
        let mut prev = f64::NEG_INFINITY;
        let mut slowest: f64 = 0.0;
        for rho in [0.0, 0.5, 0.9] {
            let t = Instant::now();
            let m = smile_median(rho, &cfg, 5);
            slowest = slowest.max(t.elapsed().as_secs_f64());
            let truth = gaussian_mi(rho);
            pass &= (m - truth).abs() <= 0.2 && m >= prev;
            prev = m;
            parts.push(format!("rho {rho}: {m:.3} vs {truth:.4}"));
        }
        pass &= slowest < 180.0;
        (pass, format!("{}; monotone; slowest rho {slowest:.1} s (bound 180 s)", parts.join(", ")))
    })
}

// ---- notch ----

/// Steady-state gain (dB) of the notch at `f`, measured by projecting the
/// second half of the filtered sinusoid onto sin/cos at `f`.
pub fn measured_gain_db(f: f64, fs: f64) -> f64 {
    let n = (20.0 * fs) as usize;
    let x: Vec<f64> = (0..n).map(|i| (std::f64::consts::TAU * f * i as f64 / fs).sin()).collect();
    let y = notch_filter(&x, 60.0, fs, 30.0).unwrap();
    let amp = |s: &[f64]| {
        let (mut a, mut b) = (0.0, 0.0);
        for (i, v) in s.iter().enumerate().skip(n / 2) {
            let w = std::f64::consts::TAU * f * i as f64 / fs;
            a += v * w.sin();
            b += v * w.cos();
        }
        (a * a + b * b).sqrt()
    };
    20.0 * (amp(&y) / amp(&x)).log10()
}

pub fn notch_attenuation() -> Outcome {
    timed(|| {
        let fs = 256.0;
        let biquad = Biquad::notch(60.0, fs, 30.0).unwrap();
        let stop = -measured_gain_db(60.0, fs);
        let mut pass = stop >= 30.0;
        let mut parts = vec![format!("60 Hz: {stop:.1} dB")];
        for f in [10.0, 55.0, 65.0, 100.0] {
            let att = -measured_gain_db(f, fs);
            let analytic = -20.0 * biquad.magnitude(f, fs).log10();
            pass &= att <= 1.0 && (att - analytic).abs() < 0.01;
            parts.push(format!("{f} Hz: {att:.3} dB (analytic {analytic:.3})"));
        }
        (pass, parts.join(", "))
    })
}

// ---- metrics ----

pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Average precision from an explicit sweep over every distinct threshold.
pub fn sweep_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 1).count() as f64;
        let called = scores.iter().filter(|s| **s >= t).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / called;
        prev_recall = recall;
    }
    ap
}

/// Random scores on a coarse grid (so ties are common) with both classes.
pub fn random_instance(rng: &mut Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(2..=30);
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}

pub fn metric_oracles(instances: usize, seed: u64) -> Outcome {
    timed(|| {
        let mut rng = rng_from(seed, &[]);
        let (mut roc, mut pr): (f64, f64) = (0.0, 0.0);
        for _ in 0..instances {
            let (s, l) = random_instance(&mut rng);
            roc = roc.max((auc_roc(&s, &l).unwrap() - pairwise_auc(&s, &l)).abs());
            pr = pr.max((auc_pr(&s, &l).unwrap() - sweep_ap(&s, &l)).abs());
        }
        (
            roc <= 1e-9 && pr <= 1e-9,
            format!("{instances} instances with ties, max |roc err| {roc:.1e}, max |ap err| {pr:.1e} (bound 1e-9)"),
        )
    })
}

// ---- EDF ----

pub fn random_recording(rng: &mut Rng) -> (Recording, HeaderOverrides) {
    let channels = rng.random_range(1..=20);
    let fs = [64.0, 128.0, 200.0, 256.0][rng.random_range(0..4)];
    let record = [0.5, 1.0, 2.0][rng.random_range(0..3)];
    let records = rng.random_range(0..=4);
    let n = (fs * record) as usize * records;
    let amp = rng.random_range(1.0..500.0);
    let labels = (0..channels)
        .map(|c| {
            let len = rng.random_range(1..=16);
            let mut s: String = (0..len).map(|_| rng.random_range(b'A'..=b'Z') as char).collect();
            s.replace_range(0..1, &format!("{}", c % 10));
            s
        })
        .collect();
    let samples = (0..channels).map(|_| (0..n).map(|_| rng.random_range(-amp..amp)).collect()).collect();
    let mut rec = Recording::new(labels, fs, samples);
    let duration = n as f64 / fs;
    if duration > 0.0 {
        rec.annotations = (0..rng.random_range(0..3))
            .map(|_| {
                let onset = rng.random_range(0.0..duration);
                eeg_seizure::edf::Annotation::seizure(onset, rng.random_range(0.0..=duration - onset))
            })
            .collect();
    }
    let overrides = HeaderOverrides {
        patient_id: Some(format!("P{:03}", rng.random_range(0..1000))),
        recording_id: Some(format!("R{}", rng.random_range(0..100))),
        start_date: Some(format!("{:02}.{:02}.{:02}", rng.random_range(1..=28), rng.random_range(1..=12), rng.random_range(0..100))),
        record_duration: Some(record),
        ..Default::default()
    };
    (rec, overrides)
}

/// Returns the largest sample error in LSB units, or an error description.
pub fn edf_round_trip(rec: &Recording, overrides: &HeaderOverrides) -> Result<f64, String> {
    let expected = header_for(rec, overrides).map_err(|e| e.to_string())?;
    let bytes = write_edf(rec, overrides).map_err(|e| e.to_string())?;
    let (header, back) = parse_edf_full(&bytes).map_err(|e| e.to_string())?;
    if header != expected {
        return Err(format!("header mismatch: {header:?} vs {expected:?}"));
    }
    if back.channel_labels != rec.channel_labels || back.sample_rate != rec.sample_rate {
        return Err("labels or rate differ".into());
    }
    let mut worst: f64 = 0.0;
    for ((a, b), sig) in rec.samples.iter().zip(&back.samples).zip(&header.signals) {
        if a.len() != b.len() {
            return Err(format!("length {} vs {}", a.len(), b.len()));
        }
        let lsb = (sig.phys_max - sig.phys_min) / f64::from(sig.dig_max - sig.dig_min);
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs() / lsb);
        }
    }
    let manifest = Manifest::from_json(&Manifest::from_recording("x.edf", rec).to_json()).map_err(|e| e.to_string())?;
    if manifest.annotations() != rec.annotations {
        return Err("manifest annotations differ".into());
    }
    Ok(worst)
}

pub fn edf_round_trips(count: usize, seed: u64) -> Outcome {
    timed(|| {
        let mut rng = rng_from(seed, &[]);
        let mut worst: f64 = 0.0;
        for i in 0..count {
            let (rec, ov) = random_recording(&mut rng);
            match edf_round_trip(&rec, &ov) {
                Ok(e) => worst = worst.max(e),
                Err(e) => return (false, format!("recording {i}: {e}")),
            }
        }
        (worst <= 1.0, format!("{count} recordings, headers exact, max sample error {worst:.3} LSB (bound 1)"))
    })
}
