//! Seeded experiments built on [`simulate_dmf`]: family significance,
//! dispersion sensitivity, power grids and rank recovery.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{simulate_dmf, FactorLaw, SimDesign};
use crate::canonical::CanonicalFit;
use crate::engine::{dmf_fit, DataMatrix, ModelSpec};
use crate::error::Result;
use crate::family::{estimate_dispersion_mom, estimate_gamma_dispersion_mom, Family, FamilyKind, Link, MomNumerator};
use crate::gof::{ghl_test, GhlOptions};
use crate::rank::{default_q_max, eigen_profile, estimate_rank, ProfileMode};

/// One long-format record; `value` is `None` when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub design: String,
    pub replicate: usize,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub records: Vec<Record>,
}

impl ResultTable {
    pub fn push(&mut self, design: &str, replicate: usize, metric: &str, value: Option<f64>) {
        self.records.push(Record {
            design: design.to_string(),
            replicate,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.records.extend(other.records);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All entries of one metric for one design, in replicate order.
    pub fn column(&self, design: &str, metric: &str) -> Vec<Option<f64>> {
        self.records
            .iter()
            .filter(|r| r.design == design && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// The non-missing entries of [`ResultTable::column`].
    pub fn values(&self, design: &str, metric: &str) -> Vec<f64> {
        self.column(design, metric).into_iter().flatten().collect()
    }

    /// Fraction of non-missing entries satisfying `pred`, or `None` if all
    /// are missing.
    pub fn rate(&self, design: &str, metric: &str, pred: impl Fn(f64) -> bool) -> Option<f64> {
        let v = self.values(design, metric);
        if v.is_empty() {
            return None;
        }
        Some(v.iter().filter(|&&x| pred(x)).count() as f64 / v.len() as f64)
    }

    pub fn median(&self, design: &str, metric: &str) -> Option<f64> {
        median(self.values(design, metric))
    }

    /// Comma-separated text with a header; missing values print as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("design,replicate,metric,value\n");
        for r in &self.records {
            let value = r.value.map_or_else(|| "NA".to_string(), |v| format!("{v:?}"));
            let _ = writeln!(out, "{},{},{},{}", r.design, r.replicate, r.metric, value);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// How the dispersion of a fitted family is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionChoice {
    /// Use the family as given.
    #[default]
    Fixed,
    /// Replace it by the moment estimate from the data.
    Mom,
}

/// A family, link and rank to fit to simulated data, then test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub label: String,
    pub family: Family,
    pub link: Link,
    pub rank: usize,
    pub dispersion: DispersionChoice,
    /// Group count for the family test; `None` uses the default.
    pub groups: Option<usize>,
}

impl FitSpec {
    pub fn new(label: &str, family: Family, link: Link, rank: usize) -> Self {
        Self {
            label: label.to_string(),
            family,
            link,
            rank,
            dispersion: DispersionChoice::Fixed,
            groups: None,
        }
    }

    pub fn mom(mut self) -> Self {
        self.dispersion = DispersionChoice::Mom;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = Some(groups);
        self
    }
}

/// Metrics recorded for every fit.
pub const FIT_METRICS: [&str; 7] = [
    "p_value",
    "statistic",
    "residual_variance",
    "mean_pearson",
    "deviance",
    "converged",
    "dispersion",
];

/// Resolves the fitted family, fits, identifies and runs the family test.
/// Returns values in the order of [`FIT_METRICS`].
pub fn fit_and_test(data: &DataMatrix, spec: &FitSpec, seed: u64) -> Result<[f64; 7]> {
    let family = match (spec.dispersion, spec.family.kind()) {
        (DispersionChoice::Mom, FamilyKind::NegativeBinomial) => {
            let est = estimate_dispersion_mom(data.entries(), MomNumerator::SquaredMean)?;
            spec.family.with_dispersion(est.value)?
        }
        (DispersionChoice::Mom, FamilyKind::Gamma) => {
            spec.family.with_dispersion(estimate_gamma_dispersion_mom(data.entries())?)?
        }
        _ => spec.family,
    };
    let model = ModelSpec::new(family, spec.link, spec.rank).seed(seed);
    let raw = dmf_fit(data, &model)?;
    let fit = CanonicalFit::from_raw(&raw);
    let options = GhlOptions {
        groups: spec.groups,
        include_first_group: false,
    };
    let report = ghl_test(data, &fit.eta(), &family, &spec.link, &options)?;
    Ok([
        report.p_value,
        report.statistic,
        report.residual_variance(),
        report.mean_pearson,
        raw.deviance(),
        if raw.converged { 1.0 } else { 0.0 },
        family.dispersion(),
    ])
}

fn record_fit(table: &mut ResultTable, design: &str, replicate: usize, label: &str, outcome: Result<[f64; 7]>) {
    match outcome {
        Ok(values) => {
            for (metric, v) in FIT_METRICS.iter().zip(values) {
                table.push(design, replicate, &format!("{label}.{metric}"), Some(v));
            }
        }
        Err(e) => {
            debug!("{design} replicate {replicate} {label}: {e}");
            for metric in FIT_METRICS {
                table.push(design, replicate, &format!("{label}.{metric}"), None);
            }
        }
    }
}

/// A generator plus the fits compared on its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCase {
    pub design: SimDesign,
    pub fits: Vec<FitSpec>,
}

/// Runs every replicate of every case; replicates run in parallel but the
/// table is assembled in `(case, replicate)` order.
pub fn run_significance(cases: &[SignificanceCase]) -> Result<ResultTable> {
    let mut table = ResultTable::default();
    for case in cases {
        case.design.validate()?;
        let parts: Vec<ResultTable> = (0..case.design.replicates)
            .into_par_iter()
            .map(|rep| {
                let mut t = ResultTable::default();
                match simulate_dmf(&case.design, rep) {
                    Ok(draw) => {
                        for fit in &case.fits {
                            let outcome = fit_and_test(&draw.data, fit, case.design.seed ^ rep as u64);
                            record_fit(&mut t, &case.design.name, rep, &fit.label, outcome);
                        }
                    }
                    Err(e) => {
                        for fit in &case.fits {
                            record_fit(&mut t, &case.design.name, rep, &fit.label, Err(crate::error::DmfError::InvalidArgument(e.to_string())));
                        }
                    }
                }
                t
            })
            .collect();
        for part in parts {
            table.extend(part);
        }
    }
    Ok(table)
}

const SIGNIFICANCE_Q: usize = 5;

/// Factor laws of the family significance cases: `N(1, 0.5/q)` rows and
/// `N(0, 0.5/q)` loadings, the second parameter read as a variance.
fn significance_laws(q: usize) -> (FactorLaw, FactorLaw) {
    let sd = (0.5 / q as f64).sqrt();
    (FactorLaw::Normal { mean: 1.0, sd }, FactorLaw::Normal { mean: 0.0, sd })
}

fn significance_design(name: &str, family: Family, link: Link, center: f64, replicates: usize, seed: u64) -> SimDesign {
    let (lambda_law, v_law) = significance_laws(SIGNIFICANCE_Q);
    SimDesign {
        name: name.to_string(),
        family,
        link,
        n: 1000,
        p: 20,
        q: SIGNIFICANCE_Q,
        lambda_law,
        v_law,
        center,
        sigma: 1.0,
        replicates,
        seed,
    }
}

/// Rank used to fit a design: one extra component absorbs a nonzero center.
pub fn fit_rank(design: &SimDesign) -> usize {
    if design.center != 0.0 {
        design.q + 1
    } else {
        design.q
    }
}

/// The three family significance cases: gamma/log against
/// gaussian/identity, negative binomial/log against poisson/log, and
/// binomial/cloglog against binomial/logit (with `trials` trials).
pub fn significance_cases(replicates: usize, trials: f64, seed: u64) -> Vec<SignificanceCase> {
    let specs = [
        ("case1-gamma", Family::gamma(1.0), Link::Log, 0.5, ("gaussian-identity", Family::gaussian(), Link::Identity)),
        (
            "case2-negbin",
            Family::negative_binomial(5.0),
            Link::Log,
            0.5,
            ("poisson-log", Family::poisson(), Link::Log),
        ),
        (
            "case3-binomial",
            Family::binomial(trials),
            Link::Cloglog,
            0.0,
            ("binomial-logit", Family::binomial(trials), Link::Logit),
        ),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(k, (name, family, link, center, (cmp_label, cmp_family, cmp_link)))| {
            let design = significance_design(name, family, link, center, replicates, seed.wrapping_add(k as u64));
            let rank = fit_rank(&design);
            let fits = vec![
                FitSpec::new("true", family, link, rank),
                FitSpec::new(cmp_label, cmp_family, cmp_link, rank),
            ];
            SignificanceCase { design, fits }
        })
        .collect()
}

/// Negative binomial (size 5) data fitted with the true size, the moment
/// estimate and a Poisson family.
pub fn dispersion_sensitivity_case(replicates: usize, seed: u64) -> SignificanceCase {
    let design = significance_design("sensitivity-negbin", Family::negative_binomial(5.0), Link::Log, 0.5, replicates, seed);
    let rank = fit_rank(&design);
    SignificanceCase {
        fits: vec![
            FitSpec::new("negbin-true", Family::negative_binomial(5.0), Link::Log, rank),
            FitSpec::new("negbin-mom", Family::negative_binomial(5.0), Link::Log, rank).mom(),
            FitSpec::new("poisson", Family::poisson(), Link::Log, rank),
        ],
        design,
    }
}

/// A named family and link, used both to generate and to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFamily {
    pub label: String,
    pub family: Family,
    pub link: Link,
}

impl NamedFamily {
    pub fn new(label: &str, family: Family, link: Link) -> Self {
        Self {
            label: label.to_string(),
            family,
            link,
        }
    }
}

/// Poisson/log, binomial(90)/logit, gamma(1)/log and negative binomial(5)/log.
pub fn power_families() -> Vec<NamedFamily> {
    vec![
        NamedFamily::new("poisson", Family::poisson(), Link::Log),
        NamedFamily::new("binomial", Family::binomial(90.0), Link::Logit),
        NamedFamily::new("gamma", Family::gamma(1.0), Link::Log),
        NamedFamily::new("negbin", Family::negative_binomial(5.0), Link::Log),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub generators: Vec<NamedFamily>,
    pub fits: Vec<NamedFamily>,
    /// `(n, p)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub sigmas: Vec<f64>,
    pub q: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PowerGrid {
    /// The full grid: `n` in {200, 600}, `p` from `0.2n` to `0.7n`, sigma
    /// from 0.1 to 0.4, ten replicates.
    pub fn full() -> Self {
        let mut sizes = Vec::new();
        for n in [200usize, 600] {
            for tenth in 2..=7 {
                sizes.push((n, n * tenth / 10));
            }
        }
        Self {
            generators: power_families(),
            fits: power_families(),
            sizes,
            sigmas: vec![0.1, 0.2, 0.3, 0.4],
            q: 5,
            replicates: 10,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Rejection rate of one (generator, fit) pair in one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEntry {
    pub generator: String,
    pub fit: String,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    /// `None` when every replicate failed.
    pub power: Option<f64>,
    pub completed: usize,
}

pub fn power_cell_name(generator: &str, n: usize, p: usize, sigma: f64) -> String {
    format!("{generator}-n{n}-p{p}-s{sigma}")
}

/// Rejection rates at `alpha` with `G = np/50` groups and no center.
pub fn run_power_grid(grid: &PowerGrid) -> Result<(ResultTable, Vec<PowerEntry>)> {
    let mut cases = Vec::new();
    let mut cells = Vec::new();
    let mut index = 0u64;
    for generator in &grid.generators {
        for &(n, p) in &grid.sizes {
            for &sigma in &grid.sigmas {
                let name = power_cell_name(&generator.label, n, p, sigma);
                let design = SimDesign {
                    name: name.clone(),
                    family: generator.family,
                    link: generator.link,
                    n,
                    p,
                    q: grid.q,
                    lambda_law: FactorLaw::standard_normal(),
                    v_law: FactorLaw::standard_normal(),
                    center: 0.0,
                    sigma,
                    replicates: grid.replicates,
                    seed: grid.seed.wrapping_add(index),
                };
                index += 1;
                let groups = (n * p / 50).max(3);
                let fits = grid
                    .fits
                    .iter()
                    .map(|f| FitSpec::new(&f.label, f.family, f.link, grid.q).groups(groups))
                    .collect();
                cases.push(SignificanceCase { design, fits });
                cells.push((generator.label.clone(), n, p, sigma, name));
            }
        }
    }
    let table = run_significance(&cases)?;
    let mut entries = Vec::new();
    for (generator, n, p, sigma, name) in cells {
        for fit in &grid.fits {
            let pv = table.values(&name, &format!("{}.p_value", fit.label));
            let power = (!pv.is_empty()).then(|| pv.iter().filter(|&&x| x <= grid.alpha).count() as f64 / pv.len() as f64);
            entries.push(PowerEntry {
                generator: generator.clone(),
                fit: fit.label.clone(),
                n,
                p,
                sigma,
                power,
                completed: pv.len(),
            });
        }
    }
    Ok((table, entries))
}

/// Looks up one power value.
pub fn power_of(entries: &[PowerEntry], generator: &str, fit: &str, n: usize, p: usize, sigma: f64) -> Option<f64> {
    entries
        .iter()
        .find(|e| e.generator == generator && e.fit == fit && e.n == n && e.p == p && e.sigma == sigma)
        .and_then(|e| e.power)
}

/// The six rank recovery cases at `n = 500`, `p = 50` for the given family.
/// The center is 5 except for binomial families, where it is 0.
pub fn rank_cases(family: Family, link: Link, replicates: usize, seed: u64) -> Vec<SimDesign> {
    let (n, p) = (500usize, 50usize);
    let center = if family.kind() == FamilyKind::Binomial { 0.0 } else { 5.0 };
    let wide = FactorLaw::Uniform {
        half_width: n as f64 / 50.0,
    };
    let weak = 0.1;
    let laws = [
        (6, FactorLaw::standard_normal(), FactorLaw::standard_normal()),
        (6, wide, FactorLaw::IdentityBlock),
        (15, FactorLaw::standard_normal(), FactorLaw::standard_normal()),
        (15, wide, FactorLaw::IdentityBlock),
        (
            6,
            FactorLaw::Normal { mean: 0.0, sd: weak },
            FactorLaw::Normal { mean: 0.0, sd: weak },
        ),
        (6, FactorLaw::Uniform { half_width: weak }, FactorLaw::IdentityBlock),
    ];
    laws.into_iter()
        .enumerate()
        .map(|(k, (q, lambda_law, v_law))| SimDesign {
            name: format!("rank-case{}", k + 1),
            family,
            link,
            n,
            p,
            q,
            lambda_law,
            v_law,
            center,
            sigma: 1.0,
            replicates,
            seed: seed.wrapping_add(k as u64),
        })
        .collect()
}

/// Fits each replicate at full column rank, estimates the rank from the
/// eigenvalue profile and records `q_hat` and whether it equals the truth.
pub fn run_rank_cases(designs: &[SimDesign], mode: ProfileMode) -> Result<ResultTable> {
    let mut table = ResultTable::default();
    for design in designs {
        design.validate()?;
        let parts: Vec<ResultTable> = (0..design.replicates)
            .into_par_iter()
            .map(|rep| {
                let mut t = ResultTable::default();
                let outcome = rank_replicate(design, rep, mode);
                if let Err(e) = &outcome {
                    debug!("{} replicate {rep}: {e}", design.name);
                }
                let q_hat = outcome.ok();
                t.push(&design.name, rep, "q_hat", q_hat.map(|q| q as f64));
                t.push(&design.name, rep, "correct", q_hat.map(|q| if q == design.q { 1.0 } else { 0.0 }));
                t
            })
            .collect();
        for part in parts {
            table.extend(part);
        }
    }
    Ok(table)
}

fn rank_replicate(design: &SimDesign, rep: usize, mode: ProfileMode) -> Result<usize> {
    let draw = simulate_dmf(design, rep)?;
    let p = design.p;
    let spec = ModelSpec::new(design.family, design.link, p.min(design.n)).seed(design.seed ^ rep as u64);
    let raw = dmf_fit(&draw.data, &spec)?;
    let eig = eigen_profile(&raw.eta, mode);
    Ok(estimate_rank(&eig, default_q_max(p))?.q_hat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_helpers() {
        let mut t = ResultTable::default();
        t.push("a", 0, "m", Some(0.2));
        t.push("a", 1, "m", None);
        t.push("a", 2, "m", Some(0.8));
        t.push("b", 0, "m", Some(1.0));
        assert_eq!(t.values("a", "m"), vec![0.2, 0.8]);
        assert_eq!(t.rate("a", "m", |x| x > 0.5), Some(0.5));
        assert_eq!(t.median("a", "m"), Some(0.5));
        assert_eq!(t.to_csv(), "design,replicate,metric,value\na,0,m,0.2\na,1,m,NA\na,2,m,0.8\nb,0,m,1.0\n");
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
    }

    fn small_case() -> SignificanceCase {
        let mut case = significance_cases(2, 90.0, 5).remove(1);
        case.design.n = 60;
        case.design.p = 10;
        case
    }

    #[test]
    fn significance_is_deterministic() {
        let cases = vec![small_case()];
        let a = run_significance(&cases).unwrap();
        let b = run_significance(&cases).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        // every (replicate, metric) pair appears once per fit
        assert_eq!(a.len(), 2 * 2 * FIT_METRICS.len());
    }

    #[test]
    fn failed_fits_are_missing() {
        let mut case = small_case();
        // gamma cannot fit counts with zeros
        case.fits.push(FitSpec::new("gamma", Family::gamma(1.0), Link::Log, 2));
        let t = run_significance(&[case]).unwrap();
        assert!(t.column("case2-negbin", "gamma.p_value").iter().all(|v| v.is_none()));
        assert_eq!(t.column("case2-negbin", "true.p_value").len(), 2);
    }

    #[test]
    fn rank_cases_shape() {
        let cases = rank_cases(Family::poisson(), Link::Log, 3, 0);
        assert_eq!(cases.len(), 6);
        assert_eq!(cases[2].q, 15);
        assert_eq!(cases[0].center, 5.0);
        let b = rank_cases(Family::binomial(10.0), Link::Logit, 3, 0);
        assert_eq!(b[0].center, 0.0);
    }
}
