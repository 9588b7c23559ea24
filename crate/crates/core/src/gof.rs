//! Generalized Hosmer-Lemeshow test for the adequacy of a family and link,
//! plus Pearson residuals.
//!
//! Positive-weight entries are binned into equal-count groups by the fitted
//! linear predictor. Each group contributes its residual sum scaled by
//! `1/sqrt(N)` and the matching model variance scaled by `1/N`, where `N`
//! counts positive-weight entries. The statistic is the sum of squared
//! standardized group sums and is referred to a chi-square law.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::canonical::CanonicalFit;
use crate::engine::DataMatrix;
use crate::error::{DmfError, Result};
use crate::family::{Family, Link, MeanMap};

pub const MIN_GROUPS: usize = 15;
pub const MAX_DEFAULT_GROUPS: usize = 200;
pub const ENTRIES_PER_GROUP: usize = 50;
const MIN_GROUP_SIZE: usize = 10;

/// `max(15, floor(N / 50))`, capped at 200.
pub fn default_groups(observed: usize) -> usize {
    (observed / ENTRIES_PER_GROUP).clamp(MIN_GROUPS, MAX_DEFAULT_GROUPS)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GhlOptions {
    /// Number of quantile groups; `None` uses [`default_groups`].
    pub groups: Option<usize>,
    /// Also test the lowest group, giving `G` degrees of freedom.
    pub include_first_group: bool,
}

impl GhlOptions {
    pub fn groups(groups: usize) -> Self {
        Self {
            groups: Some(groups),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub family: String,
    pub link: String,
    /// Upper group boundaries on the linear predictor scale.
    pub cuts: Vec<f64>,
    /// Entries per group, lowest group first.
    pub sizes: Vec<usize>,
    /// Scaled residual sums of the tested groups.
    pub t: Vec<f64>,
    /// Scaled model variances of the tested groups.
    pub d: Vec<f64>,
    /// `t / sqrt(d)`.
    pub standardized: Vec<f64>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Mean Pearson residual over positive-weight entries.
    pub mean_pearson: f64,
    pub warnings: Vec<String>,
    /// `(x - mu)^2 / V(mu)`, zero on zero-weight entries.
    #[serde(skip)]
    pub pearson: DMatrix<f64>,
}

impl GofReport {
    /// Sample variance of the standardized group residuals.
    pub fn residual_variance(&self) -> f64 {
        sample_variance(&self.standardized)
    }
}

/// Standardized group residuals, for QQ or density plots.
pub fn group_residuals(report: &GofReport) -> &[f64] {
    &report.standardized
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Runs the test on the fitted linear predictor of a canonical fit.
pub fn ghl_test_fit(
    data: &DataMatrix,
    fit: &CanonicalFit,
    family: &Family,
    link: &Link,
    options: &GhlOptions,
) -> Result<GofReport> {
    ghl_test(data, &fit.eta(), family, link, options)
}

/// Runs the test on a fitted linear predictor `eta`.
///
/// The model variance of an entry is `scale * V(mu) / (w * trials)` where
/// `scale` is the dispersion of Gaussian and Gamma families and one
/// otherwise (the negative binomial size already sits inside `V`).
pub fn ghl_test(
    data: &DataMatrix,
    eta: &DMatrix<f64>,
    family: &Family,
    link: &Link,
    options: &GhlOptions,
) -> Result<GofReport> {
    if eta.shape() != (data.nrows(), data.ncols()) {
        return Err(DmfError::InvalidArgument(format!(
            "predictor is {:?} but data is {:?}",
            eta.shape(),
            (data.nrows(), data.ncols())
        )));
    }
    let map = MeanMap::new(*family, *link)?;
    let x = data.x();
    let w = data.w();

    // (eta, residual, variance) for every positive-weight entry
    let mut entries: Vec<(f64, f64, f64)> = Vec::with_capacity(data.observed());
    let mut pearson = DMatrix::zeros(data.nrows(), data.ncols());
    let mut pearson_sum = 0.0;
    for j in 0..data.ncols() {
        for i in 0..data.nrows() {
            let wij = w[(i, j)];
            if wij <= 0.0 {
                continue;
            }
            let e = eta[(i, j)];
            if !e.is_finite() {
                return Err(DmfError::InvalidArgument(format!("fitted predictor at ({i}, {j}) is not finite")));
            }
            let mu = map.mean(e);
            let var = family.variance(mu);
            let resid = x[(i, j)] - mu;
            let pr = resid * resid / var;
            pearson[(i, j)] = pr;
            pearson_sum += pr;
            entries.push((e, resid, family.observation_variance(mu, wij)));
        }
    }
    let total = entries.len();
    if total == 0 {
        return Err(DmfError::DegenerateGrouping("no positive-weight entries".into()));
    }
    let mut warnings = Vec::new();
    let requested = options.groups.unwrap_or_else(|| default_groups(total));
    if requested < 3 {
        return Err(DmfError::InvalidArgument(format!("at least 3 groups are needed, got {requested}")));
    }
    if requested < MIN_GROUPS {
        warnings.push(format!("{requested} groups is below the recommended minimum of {MIN_GROUPS}"));
    }

    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lo = entries[0].0;
    let hi = entries[total - 1].0;
    if lo == hi {
        return Err(DmfError::DegenerateGrouping("fitted linear predictor is constant".into()));
    }

    // k/G quantiles; duplicates mean an empty group, merged into its neighbor
    let mut cuts: Vec<f64> = Vec::with_capacity(requested);
    for k in 1..=requested {
        let idx = ((k * total).div_ceil(requested)).max(1) - 1;
        let u = entries[idx.min(total - 1)].0;
        if cuts.last().is_some_and(|&last| u <= last) {
            continue;
        }
        cuts.push(u);
    }
    if cuts.len() < requested {
        warnings.push(format!(
            "tied predictor values left {} empty groups; merged into neighbors, {} groups remain",
            requested - cuts.len(),
            cuts.len()
        ));
    }
    if cuts.len() < 2 {
        return Err(DmfError::DegenerateGrouping("fewer than two distinct groups".into()));
    }

    let g = cuts.len();
    let mut sizes = vec![0usize; g];
    let mut tsum = vec![0.0; g];
    let mut dsum = vec![0.0; g];
    let mut k = 0;
    for &(e, resid, var) in &entries {
        while e > cuts[k] {
            k += 1;
        }
        sizes[k] += 1;
        tsum[k] += resid;
        dsum[k] += var;
    }
    let small = sizes.iter().filter(|&&s| s < MIN_GROUP_SIZE).count();
    if small > 0 {
        warnings.push(format!("{small} groups have fewer than {MIN_GROUP_SIZE} entries"));
    }

    let first = if options.include_first_group { 0 } else { 1 };
    let norm = total as f64;
    let t: Vec<f64> = tsum[first..].iter().map(|s| s / norm.sqrt()).collect();
    let d: Vec<f64> = dsum[first..].iter().map(|s| s / norm).collect();
    let standardized: Vec<f64> = t
        .iter()
        .zip(&d)
        .map(|(&t, &d)| if t == 0.0 { 0.0 } else { t / d.sqrt() })
        .collect();
    let statistic: f64 = standardized.iter().map(|r| r * r).sum();
    let df = standardized.len();
    let p_value = chi_square_sf(statistic, df);

    Ok(GofReport {
        family: family.to_string(),
        link: link.to_string(),
        cuts,
        sizes,
        t,
        d,
        standardized,
        statistic,
        df,
        p_value,
        mean_pearson: pearson_sum / norm,
        warnings,
        pearson,
    })
}

/// Upper tail of the chi-square law with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df is positive");
    dist.sf(x).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_case(seed: u64) -> (DataMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = DMatrix::from_fn(40, 10, |_, _| rng.random_range(-2.0..2.0));
        let x = eta.map(|e| e + rng.random_range(-1.0..1.0));
        (DataMatrix::new(x), eta)
    }

    #[test]
    fn saturated_gaussian_is_perfect() {
        let (_, eta) = gaussian_case(1);
        let data = DataMatrix::new(eta.clone());
        let r = ghl_test(&data, &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(15)).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.df, 14);
        assert!(group_residuals(&r).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn statistic_is_sum_of_squares() {
        let (data, eta) = gaussian_case(2);
        let r = ghl_test(&data, &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(20)).unwrap();
        let ss: f64 = r.standardized.iter().map(|z| z * z).sum();
        assert_relative_eq!(r.statistic, ss, max_relative = 1e-10);
        assert_eq!(r.df, 19);
        assert_eq!(r.sizes.iter().sum::<usize>(), 400);
        assert_eq!(r.sizes, vec![20; 20]);
        // upper tail oracle: chi-square(2) sf is exp(-x/2)
        assert_relative_eq!(chi_square_sf(3.0, 2), (-1.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn hand_computed_groups() {
        // 6 entries, 3 groups of two; the lowest group is excluded
        let eta = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let x = DMatrix::from_row_slice(2, 3, &[0.5, 1.0, 2.0, 2.0, 5.0, 5.5]);
        let r = ghl_test(
            &DataMatrix::new(x),
            &eta,
            &Family::gaussian_with_variance(2.0),
            &Link::Identity,
            &GhlOptions::groups(3),
        )
        .unwrap();
        assert_eq!(r.cuts, vec![1.0, 3.0, 5.0]);
        let n = 6.0f64;
        // group 2: eta 2, 3 with residuals 0, -1; group 3: eta 4, 5 with 1, 0.5
        assert_relative_eq!(r.t[0], -1.0 / n.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(r.t[1], 1.5 / n.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(r.d[0], 4.0 / n, max_relative = 1e-14);
        let expected = (1.0 + 2.25) / 4.0;
        assert_relative_eq!(r.statistic, expected, max_relative = 1e-12);

        let all = GhlOptions {
            groups: Some(3),
            include_first_group: true,
        };
        let x = DMatrix::from_row_slice(2, 3, &[0.5, 1.0, 2.0, 2.0, 5.0, 5.5]);
        let r = ghl_test(&DataMatrix::new(x), &eta, &Family::gaussian_with_variance(2.0), &Link::Identity, &all).unwrap();
        assert_eq!(r.df, 3);
        assert_relative_eq!(r.statistic, (0.25 + 1.0 + 2.25) / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn constant_predictor_is_rejected() {
        let eta = DMatrix::from_element(5, 4, 0.3);
        let err = ghl_test(&DataMatrix::new(eta.clone()), &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::default());
        assert!(matches!(err, Err(DmfError::DegenerateGrouping(_))));
    }

    #[test]
    fn ties_merge_groups() {
        let eta = DMatrix::from_fn(10, 10, |i, _| if i < 8 { 0.0 } else { i as f64 });
        let r = ghl_test(&DataMatrix::new(eta.clone()), &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(10))
            .unwrap();
        assert_eq!(r.cuts, vec![0.0, 8.0, 9.0]);
        assert_eq!(r.sizes, vec![80, 10, 10]);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn zero_weight_entries_are_ignored() {
        let (data, eta) = gaussian_case(3);
        let (x, mut w) = data.clone().into_parts();
        w[(0, 0)] = 0.0;
        let mut x2 = x.clone();
        x2[(0, 0)] = 1e6;
        let a = ghl_test(&DataMatrix::with_weights(x, w.clone()).unwrap(), &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(15))
            .unwrap();
        let b = ghl_test(&DataMatrix::with_weights(x2, w).unwrap(), &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(15))
            .unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(a.sizes.iter().sum::<usize>(), 399);
    }

    #[test]
    fn permutation_invariance() {
        let (data, eta) = gaussian_case(4);
        let base = ghl_test(&data, &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(16)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows: Vec<usize> = (0..40).collect();
        let mut cols: Vec<usize> = (0..10).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let px = DMatrix::from_fn(40, 10, |i, j| data.x()[(rows[i], cols[j])]);
        let pe = DMatrix::from_fn(40, 10, |i, j| eta[(rows[i], cols[j])]);
        let other = ghl_test(&DataMatrix::new(px), &pe, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(16)).unwrap();
        assert_relative_eq!(base.statistic, other.statistic, max_relative = 1e-10);
    }

    #[test]
    fn shift_invariance_of_grouping() {
        let (data, eta) = gaussian_case(5);
        let a = ghl_test(&data, &eta, &Family::gaussian(), &Link::Identity, &GhlOptions::groups(15)).unwrap();
        let shifted_x = data.x().map(|v| v + 3.0);
        let b = ghl_test(&DataMatrix::new(shifted_x), &eta.map(|e| e + 3.0), &Family::gaussian(), &Link::Identity, &GhlOptions::groups(15))
            .unwrap();
        assert_eq!(a.sizes, b.sizes);
        assert_relative_eq!(a.statistic, b.statistic, max_relative = 1e-9);
    }

    #[test]
    fn default_group_count() {
        assert_eq!(default_groups(100), 15);
        assert_eq!(default_groups(20_000), 200);
        assert_eq!(default_groups(50_000), 200);
        assert_eq!(default_groups(5_000), 100);
    }

    #[test]
    fn pearson_residuals() {
        let eta = DMatrix::from_row_slice(1, 2, &[0.0, 2.0f64.ln()]);
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 0.0]);
        let r = ghl_test(&DataMatrix::new(x), &eta, &Family::poisson(), &Link::Log, &GhlOptions::groups(3));
        // only two entries: three groups collapse to two
        let r = r.unwrap();
        assert_relative_eq!(r.pearson[(0, 0)], 4.0, max_relative = 1e-12);
        assert_relative_eq!(r.pearson[(0, 1)], 2.0, max_relative = 1e-12);
        assert_relative_eq!(r.mean_pearson, 3.0, max_relative = 1e-12);
    }
}
