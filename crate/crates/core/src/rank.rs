//! Rank selection from the eigenvalue profile of a high-rank fit.
//!
//! The estimate is the largest index whose eigengap clears a threshold
//! `delta`. `delta` is calibrated from the noise eigenvalues just past the
//! current estimate: five consecutive eigenvalues are regressed on
//! `(j - 1)^(2/3)` and `delta` is twice the absolute slope. Calibration and
//! estimation alternate until the estimate stops changing.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::canonical::CanonicalFit;
use crate::error::{DmfError, Result};

pub const WINDOW: usize = 5;
pub const MAX_CALIBRATION_ROUNDS: usize = 20;
/// Gaps at or below this fraction of the leading eigenvalue never count.
pub const NO_SIGNAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMode {
    /// Eigenvalues of the column covariance of the fitted predictor.
    #[default]
    Covariance,
    /// Eigenvalues of `eta^T eta`.
    Gram,
}

impl FromStr for ProfileMode {
    type Err = DmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariance" | "cov" => Ok(Self::Covariance),
            "gram" => Ok(Self::Gram),
            other => Err(DmfError::InvalidArgument(format!(
                "unknown profile mode {other:?}; expected covariance or gram"
            ))),
        }
    }
}

/// Descending eigenvalues of `eta`'s column covariance or Gram matrix.
/// Tiny negative values from rounding are clamped to zero.
pub fn eigen_profile(eta: &DMatrix<f64>, mode: ProfileMode) -> Vec<f64> {
    let (n, p) = eta.shape();
    let m = match mode {
        ProfileMode::Gram => eta.transpose() * eta,
        ProfileMode::Covariance => {
            let mut c = eta.clone();
            for mut col in c.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
            (c.transpose() * c) / (n.max(2) - 1) as f64
        }
    };
    let mut eig: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().map(|&e| e.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.truncate(p);
    eig
}

/// Profile of a fit, checking it has enough components for `q_max`.
pub fn eigen_profile_fit(fit: &CanonicalFit, mode: ProfileMode, q_max: usize) -> Result<Vec<f64>> {
    if fit.rank() < q_max + WINDOW {
        return Err(DmfError::InvalidArgument(format!(
            "rank selection with q_max = {q_max} needs a fit of rank at least {}, got {}; refit with a higher rank",
            q_max + WINDOW,
            fit.rank()
        )));
    }
    Ok(eigen_profile(&fit.eta(), mode))
}

/// `p - 5`, the largest `q_max` a `p`-column profile supports.
pub fn default_q_max(p: usize) -> usize {
    p.saturating_sub(WINDOW)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub eigenvalues: Vec<f64>,
    /// `gaps[i] = eigenvalues[i] - eigenvalues[i + 1]`.
    pub gaps: Vec<f64>,
    pub delta: f64,
    pub q_hat: usize,
    pub q_max: usize,
    /// True when no gap clears the threshold.
    pub no_signal: bool,
    /// `(delta, q_hat)` after each calibration round.
    pub rounds: Vec<(f64, usize)>,
    pub converged: bool,
}

impl RankReport {
    /// Two-column text: index (from 1) and eigenvalue.
    pub fn profile_text(&self) -> String {
        let mut out = String::from("index\teigenvalue\n");
        for (i, e) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}", i + 1, e);
        }
        out
    }
}

/// Largest `i <= q_max` (1-based) whose gap is at least `delta` and above
/// the no-signal floor, or 0.
fn eigengap_rank(eig: &[f64], q_max: usize, delta: f64) -> usize {
    let floor = NO_SIGNAL_TOL * eig[0];
    (1..=q_max)
        .rev()
        .find(|&i| {
            let gap = eig[i - 1] - eig[i];
            gap >= delta && gap > floor
        })
        .unwrap_or(0)
}

/// Slope of `eig[j-1 .. j-1+WINDOW]` regressed on `(k - 1)^(2/3)`,
/// `k = j .. j + WINDOW - 1`.
fn window_slope(eig: &[f64], j: usize) -> f64 {
    let xs: Vec<f64> = (j..j + WINDOW).map(|k| ((k - 1) as f64).powf(2.0 / 3.0)).collect();
    let ys = &eig[j - 1..j - 1 + WINDOW];
    let xm = xs.iter().sum::<f64>() / WINDOW as f64;
    let ym = ys.iter().sum::<f64>() / WINDOW as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    sxy / sxx
}

/// Estimates the rank from a descending eigenvalue profile.
pub fn estimate_rank(eigenvalues: &[f64], q_max: usize) -> Result<RankReport> {
    if q_max == 0 {
        return Err(DmfError::InvalidArgument("q_max must be positive".into()));
    }
    if eigenvalues.len() < q_max + WINDOW {
        return Err(DmfError::InvalidArgument(format!(
            "q_max = {q_max} needs at least {} eigenvalues, got {}",
            q_max + WINDOW,
            eigenvalues.len()
        )));
    }
    if eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(DmfError::InvalidArgument("eigenvalues must be finite".into()));
    }
    let slack = 1e-12 * eigenvalues[0].abs();
    if eigenvalues.windows(2).any(|w| w[1] > w[0] + slack) {
        return Err(DmfError::InvalidArgument("eigenvalues must be nonincreasing".into()));
    }

    let eig = eigenvalues;
    let mut j = q_max + 1;
    let mut previous: Option<usize> = None;
    let mut rounds = Vec::new();
    let mut converged = false;
    let (mut delta, mut q_hat) = (0.0, 0);
    for _ in 0..MAX_CALIBRATION_ROUNDS {
        delta = 2.0 * window_slope(eig, j).abs();
        q_hat = eigengap_rank(eig, q_max, delta);
        rounds.push((delta, q_hat));
        if previous == Some(q_hat) {
            converged = true;
            break;
        }
        previous = Some(q_hat);
        j = q_hat + 1;
    }
    let gaps: Vec<f64> = eig.windows(2).map(|w| w[0] - w[1]).collect();
    Ok(RankReport {
        eigenvalues: eig.to_vec(),
        gaps,
        delta,
        q_hat,
        q_max,
        no_signal: q_hat == 0,
        rounds,
        converged,
    })
}
