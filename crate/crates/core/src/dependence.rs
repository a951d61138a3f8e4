//! Classical inter-channel dependence measures and the canonical pair order
//! shared by every per-block pairwise feature vector.

use std::str::FromStr;

use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DependenceError {
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {required} samples, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("zero variance input")]
    ZeroVariance,
    #[error("need at least two channels, got {0}")]
    TooFewChannels(usize),
    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<DependenceError>,
    },
    #[error("unknown measure `{0}` (expected pearson, dcor, plv or smile)")]
    UnknownMeasure(String),
}

fn check(x: &[f64], y: &[f64], min: usize) -> Result<(), DependenceError> {
    if x.len() != y.len() {
        return Err(DependenceError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(DependenceError::TooShort {
            required: min,
            got: x.len(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, DependenceError> {
    check(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(DependenceError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Row means and grand mean of the pairwise distance matrix `|x_i - x_j|`.
fn distance_means(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len();
    let rows: Vec<f64> = x
        .iter()
        .map(|a| x.iter().map(|b| (a - b).abs()).sum::<f64>() / n as f64)
        .collect();
    let grand = mean(&rows);
    (rows, grand)
}

/// Squared distance covariance (V-statistic) from precomputed row means.
fn dcov2(x: &[f64], y: &[f64], (rx, gx): &(Vec<f64>, f64), (ry, gy): &(Vec<f64>, f64)) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (xi, yi) = (x[i], y[i]);
        let (ci, di) = (gx - rx[i], gy - ry[i]);
        let mut row = 0.0;
        for j in 0..n {
            let a = (xi - x[j]).abs() - rx[j] + ci;
            let b = (yi - y[j]).abs() - ry[j] + di;
            row += a * b;
        }
        acc += row;
    }
    acc / (n * n) as f64
}

/// Distance correlation (biased V-statistic form). Returns 0 when either
/// input has zero distance variance.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64, DependenceError> {
    check(x, y, 2)?;
    let mx = distance_means(x);
    let my = distance_means(y);
    let vx = dcov2(x, x, &mx, &mx);
    let vy = dcov2(y, y, &my, &my);
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(0.0);
    }
    let c = dcov2(x, y, &mx, &my).max(0.0);
    Ok((c / (vx * vy).sqrt()).sqrt().clamp(0.0, 1.0))
}

/// Analytic signal via the one-sided spectrum.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

fn demeaned(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

/// Phase-locking value of the instantaneous phase difference. Inputs are
/// de-meaned first so a DC offset does not bias the phase.
pub fn instantaneous_phase_synchrony(x: &[f64], y: &[f64]) -> Result<f64, DependenceError> {
    check(x, y, 8)?;
    let ax = analytic_signal(&demeaned(x));
    let ay = analytic_signal(&demeaned(y));
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, b) in ax.iter().zip(&ay) {
        let d = a.arg() - b.arg();
        acc += Complex64::new(d.cos(), d.sin());
    }
    Ok((acc.norm() / x.len() as f64).clamp(0.0, 1.0))
}

/// Number of unordered channel pairs.
pub fn pair_count(n_channels: usize) -> usize {
    n_channels * n_channels.saturating_sub(1) / 2
}

/// Canonical pair order: `(i, j)` with `j > i`, `i` ascending then `j` ascending.
pub fn channel_pairs(n_channels: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_channels).flat_map(move |i| (i + 1..n_channels).map(move |j| (i, j)))
}

/// Position of pair `(i, j)`, `i < j`, in the canonical order.
pub fn pair_index(i: usize, j: usize, n_channels: usize) -> usize {
    debug_assert!(i < j && j < n_channels);
    i * n_channels - i * (i + 1) / 2 + (j - i - 1)
}

/// One value per channel pair in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseVector {
    pub n_channels: usize,
    pub values: Vec<f64>,
}

impl PairwiseVector {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.values[pair_index(a, b, self.n_channels)]
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Pearson,
    DistanceCorrelation,
    PhaseSynchrony,
    /// Neural MI; computed by [`crate::smile`], not by [`Measure::apply`].
    Smile,
}

impl FromStr for Measure {
    type Err = DependenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(Measure::Pearson),
            "dcor" => Ok(Measure::DistanceCorrelation),
            "plv" => Ok(Measure::PhaseSynchrony),
            "smile" => Ok(Measure::Smile),
            _ => Err(DependenceError::UnknownMeasure(s.into())),
        }
    }
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Pearson => "pearson",
            Measure::DistanceCorrelation => "dcor",
            Measure::PhaseSynchrony => "plv",
            Measure::Smile => "smile",
        }
    }

    pub fn apply(self, x: &[f64], y: &[f64]) -> Result<f64, DependenceError> {
        match self {
            Measure::Pearson => pearson(x, y),
            Measure::DistanceCorrelation => distance_correlation(x, y),
            Measure::PhaseSynchrony => instantaneous_phase_synchrony(x, y),
            Measure::Smile => Err(DependenceError::UnknownMeasure(
                "smile is estimated by the smile module".into(),
            )),
        }
    }
}

/// Apply `measure` to every canonical pair of `channels`. Pairs are computed
/// independently; output order is always canonical.
pub fn pairwise_vector<F>(channels: &[&[f64]], measure: F) -> Result<PairwiseVector, DependenceError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, DependenceError> + Sync,
{
    let n = channels.len();
    if n < 2 {
        return Err(DependenceError::TooFewChannels(n));
    }
    let pairs: Vec<(usize, usize)> = channel_pairs(n).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| {
            measure(channels[i], channels[j]).map_err(|e| DependenceError::Pair {
                i,
                j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(PairwiseVector {
        n_channels: n,
        values,
    })
}

/// Pairwise vector per block over the 4 s CNN context window.
pub fn pairwise_matrix(
    series: &crate::prep::BlockSeries,
    measure: Measure,
) -> Result<Vec<PairwiseVector>, DependenceError> {
    (0..series.n_blocks())
        .map(|k| pairwise_vector(&series.cnn_context(k), |x, y| measure.apply(x, y)))
        .collect()
}
