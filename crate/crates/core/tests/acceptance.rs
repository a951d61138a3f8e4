//! Acceptance run: one PASS/FAIL line per criterion. Criteria 7-9 run the
//! shipped synthetic configuration end to end (several minutes on one core).

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use eeg_seizure::metrics::median;
use eeg_seizure::pipeline::{file_mi, load_dataset, run_pipeline, write_synthetic_dataset, RunConfig, Variant};

fn pipeline_criteria() -> Vec<(usize, &'static str, Outcome)> {
    let root = tempfile::tempdir().expect("tempdir");
    let mut cfg =
        RunConfig::from_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")).unwrap();
    cfg.data_dir = root.path().join("data");
    cfg.output_dir = root.path().join("run1");
    cfg.mi_cache_dir = Some(root.path().join("mi-cache"));

    let t = Instant::now();
    let first = write_synthetic_dataset(&cfg.synth, &cfg.data_dir).and_then(|_| run_pipeline(&cfg));
    let elapsed7 = t.elapsed();
    let first = match first {
        Ok(r) => r,
        Err(e) => {
            let fail = |_: usize| Outcome { pass: false, detail: format!("pipeline error: {e}"), elapsed: elapsed7 };
            return vec![
                (7, "synthetic trend", fail(7)),
                (8, "ablation wiring", fail(8)),
                (9, "determinism", fail(9)),
            ];
        }
    };

    let metric = |v: Variant, f: fn(&eeg_seizure::metrics::MetricsReport) -> f64| -> Vec<f64> {
        first.for_variant(v).map(|r| f(&r.report)).collect()
    };
    let full_roc = metric(Variant::Full, |m| m.auc_roc);
    let full_pr = metric(Variant::Full, |m| m.auc_pr);
    let cnn_roc = metric(Variant::CnnOnly, |m| m.auc_roc);
    let cnn_pr = metric(Variant::CnnOnly, |m| m.auc_pr);
    let mean_full = full_roc.iter().sum::<f64>() / full_roc.len() as f64;
    let min_full = full_roc.iter().cloned().fold(f64::MAX, f64::min);
    let (mf, mc) = (median(&full_roc).unwrap(), median(&cnn_roc).unwrap());
    let (pf, pc) = (median(&full_pr).unwrap(), median(&cnn_pr).unwrap());
    let c7 = Outcome {
        pass: mean_full >= 0.90 && mf >= mc && pf >= pc && elapsed7.as_secs() < 1800,
        detail: format!(
            "{} seeds; full AUC-ROC mean {mean_full:.4} (min {min_full:.4}, bound 0.90); median AUC-ROC full {mf:.4} vs cnn-only {mc:.4}; median AUC-PR full {pf:.4} vs cnn-only {pc:.4}; runtime bound 1800 s",
            full_roc.len()
        ),
        elapsed: elapsed7,
    };

    let t = Instant::now();
    let mut missing = Vec::new();
    for v in Variant::ALL {
        let n = first.for_variant(v).filter(|r| r.report.values().iter().all(|m| m.is_finite())).count();
        if n != cfg.seeds.len() {
            missing.push(v.name());
        }
    }
    let fg_changed: Vec<usize> = [Variant::CnnFg, Variant::Full]
        .iter()
        .map(|&v| {
            first
                .for_variant(v)
                .map(|r| r.predictions.iter().zip(&r.direct_predictions).filter(|(a, b)| a != b).count())
                .sum()
        })
        .collect();
    let c8 = Outcome {
        pass: missing.is_empty() && fg_changed.iter().all(|&n| n > 0),
        detail: format!(
            "4 variants x 6 metrics reported{}; blocks where factor-graph detection differs from direct thresholding: cnn+fg {}, full {}",
            if missing.is_empty() { String::new() } else { format!(" (missing: {missing:?})") },
            fg_changed[0],
            fg_changed[1]
        ),
        elapsed: t.elapsed(),
    };

    let t = Instant::now();
    let again = RunConfig { output_dir: root.path().join("run2"), ..cfg.clone() };
    let repeat = run_pipeline(&again);
    let csv_same = repeat.is_ok()
        && fs::read(cfg.output_dir.join("metrics.csv")).ok() == fs::read(again.output_dir.join("metrics.csv")).ok();
    // The repeat reuses the MI cache, so recompute one file's MI from scratch as well.
    let mi_same = load_dataset(&cfg.data_dir, &cfg.prep)
        .ok()
        .and_then(|files| {
            let f = files.first()?;
            let fresh = root.path().join("mi-fresh");
            file_mi(f, &cfg.smile, &fresh).ok()?;
            let rel = Path::new(&f.file.patient).join(&f.file.file).with_extension("mi");
            Some(fs::read(fresh.join(&rel)).ok()? == fs::read(cfg.mi_cache_dir().join(&rel)).ok()?)
        })
        .unwrap_or(false);
    let c9 = Outcome {
        pass: csv_same && mi_same,
        detail: format!("metrics.csv byte-identical on repeat: {csv_same}; recomputed MI cache byte-identical: {mi_same}"),
        elapsed: t.elapsed(),
    };
    vec![(7, "synthetic trend", c7), (8, "ablation wiring", c8), (9, "determinism", c9)]
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters pass arguments; run only on a plain invocation or an explicit match.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }

    let mut lines = Vec::new();
    let mut all = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        let line = o.line(n, name);
        println!("{line}");
        all &= o.pass;
        lines.push(line);
    };
    report(1, "factor-graph brute force", fg_brute_force(200, 77));
    let g = gradient_checks(50, 2024, 1e-4);
    let g = Outcome { pass: g.pass && g.elapsed.as_secs() < 60, ..g };
    report(2, "gradient fidelity", g);
    report(3, "SMILE Gaussian oracle", smile_oracle());
    let n = notch_attenuation();
    let n = Outcome { pass: n.pass && n.elapsed.as_secs_f64() < 1.0, ..n };
    report(4, "notch filter", n);
    let m = metric_oracles(100, 4242);
    let m = Outcome { pass: m.pass && m.elapsed.as_secs_f64() < 5.0, ..m };
    report(5, "metric oracles", m);
    let e = edf_round_trips(20, 99);
    let e = Outcome { pass: e.pass && e.elapsed.as_secs_f64() < 5.0, ..e };
    report(6, "EDF round trip", e);
    for (n, name, o) in pipeline_criteria() {
        report(n, name, o);
    }
    println!("acceptance: {}", if all { "all criteria pass" } else { "FAILURES above" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
