//! Alternating Fisher-scoring fit of a rank-`q` deviance factorization.
//!
//! Each cycle normalizes the columns of `V`, regresses every row of the
//! working response on `V` (the `Lambda` step), normalizes the columns of
//! `Lambda`, then regresses every column of the working response on
//! `Lambda` (the `V` step). Both steps are weighted least squares problems
//! with the IRLS variance weights, so rows (and columns) can be solved
//! independently.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Axis, DmfError, Result};
use crate::family::{Family, Link, MeanMap};

/// Observations with aligned nonnegative entry weights.
///
/// A zero weight marks a structural zero: the entry is ignored by the fit
/// and its value may be anything, including NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    x: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(x: DMatrix<f64>) -> Self {
        let w = DMatrix::from_element(x.nrows(), x.ncols(), 1.0);
        Self { x, w }
    }

    pub fn with_weights(x: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        if x.shape() != w.shape() {
            return Err(DmfError::InvalidArgument(format!(
                "data is {:?} but weights are {:?}",
                x.shape(),
                w.shape()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(DmfError::InvalidArgument("empty data matrix".into()));
        }
        for (idx, &wv) in w.iter().enumerate() {
            if !(wv.is_finite() && wv >= 0.0) {
                return Err(DmfError::InvalidArgument(format!(
                    "weight at ({}, {}) must be finite and nonnegative, got {wv}",
                    idx % w.nrows(),
                    idx / w.nrows()
                )));
            }
        }
        Ok(Self { x, w })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.x, self.w)
    }

    /// Number of entries with positive weight.
    pub fn observed(&self) -> usize {
        self.w.iter().filter(|&&w| w > 0.0).count()
    }

    /// `(x, w)` pairs in column-major order.
    pub fn entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.w.iter().copied())
    }

    /// Checks the data domain on positive-weight entries and that every row
    /// and column has at least `rank` of them.
    pub fn validate(&self, family: &Family, rank: usize) -> Result<()> {
        let (n, p) = self.x.shape();
        let mut col_counts = vec![0usize; p];
        let mut row_counts = vec![0usize; n];
        for j in 0..p {
            for i in 0..n {
                if self.w[(i, j)] > 0.0 {
                    let x = self.x[(i, j)];
                    if !family.in_domain(x) {
                        return Err(DmfError::Domain(format!(
                            "entry ({i}, {j}) = {x} is outside the {} domain",
                            family.kind().name()
                        )));
                    }
                    row_counts[i] += 1;
                    col_counts[j] += 1;
                }
            }
        }
        for (index, &positive) in row_counts.iter().enumerate() {
            if positive < rank {
                return Err(DmfError::Underdetermined {
                    axis: Axis::Row,
                    index,
                    positive,
                    needed: rank,
                });
            }
        }
        for (index, &positive) in col_counts.iter().enumerate() {
            if positive < rank {
                return Err(DmfError::Underdetermined {
                    axis: Axis::Column,
                    index,
                    positive,
                    needed: rank,
                });
            }
        }
        Ok(())
    }
}

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_REL_TOL: f64 = 1e-6;
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Everything needed to run a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub link: Link,
    pub rank: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family, link: Link, rank: usize) -> Self {
        Self {
            family,
            link,
            rank,
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
            jitter: DEFAULT_JITTER,
            seed: 0,
        }
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.rank == 0 || self.rank > n.min(p) {
            return Err(DmfError::InvalidArgument(format!(
                "rank must be in 1..={} for a {n}x{p} matrix, got {}",
                n.min(p),
                self.rank
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(DmfError::InvalidArgument("rel_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(DmfError::InvalidArgument("max_iter must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(DmfError::InvalidArgument("jitter must be nonnegative".into()));
        }
        if !self.link.compatible_with(&self.family) {
            return Err(DmfError::InvalidArgument(format!(
                "the {} link cannot be used with the {} family",
                self.link,
                self.family.kind().name()
            )));
        }
        Ok(())
    }
}

/// Output of [`dmf_fit`] before identification.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFit {
    pub lambda: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub mu: DMatrix<f64>,
    /// Total weighted deviance after each full cycle.
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl RawFit {
    pub fn deviance(&self) -> f64 {
        self.deviance_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn rank(&self) -> usize {
        self.lambda.ncols()
    }
}

/// `Z = eta + (X - mu) / m'(eta)`.
pub fn working_response(
    x: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    mu: &DMatrix<f64>,
    link: &Link,
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let mut z = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            let d = link.mu_eta(eta[(i, j)]);
            if !(d.abs() >= 1e-14) {
                return Err(DmfError::DegenerateWeight {
                    row: i,
                    col: j,
                    value: d,
                });
            }
            z[(i, j)] = eta[(i, j)] + (x[(i, j)] - mu[(i, j)]) / d;
        }
    }
    Ok(z)
}

/// IRLS weights `S = w * m'(eta)^2 / V(mu)`, exactly zero where `w` is zero.
///
/// `w` is the prior weight, so binomial trials multiply it.
pub fn variance_weights(
    w: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    mu: &DMatrix<f64>,
    family: &Family,
    link: &Link,
) -> Result<DMatrix<f64>> {
    let (n, p) = w.shape();
    let mut s = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            let wij = w[(i, j)];
            if wij == 0.0 {
                continue;
            }
            let var = family.variance(mu[(i, j)]);
            if !(var > 0.0) {
                return Err(DmfError::DegenerateVariance { row: i, col: j });
            }
            let d = link.mu_eta(eta[(i, j)]);
            s[(i, j)] = family.prior_weight(wij) * d * d / var;
        }
    }
    Ok(s)
}

const SINGULAR_CONDITION: f64 = 1e12;

/// Accumulates `X^T S X` and `X^T S y` for a small weighted regression.
#[derive(Debug, Clone)]
struct NormalEquations {
    q: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    positive: usize,
}

impl NormalEquations {
    fn new(q: usize) -> Self {
        Self {
            q,
            a: vec![0.0; q * q],
            b: vec![0.0; q],
            positive: 0,
        }
    }

    #[inline]
    fn add(&mut self, row: &[f64], y: f64, w: f64) {
        if w <= 0.0 {
            return;
        }
        self.positive += 1;
        let q = self.q;
        for r in 0..q {
            let wr = w * row[r];
            self.b[r] += wr * y;
            let arow = &mut self.a[r * q..r * q + r + 1];
            for (c, a) in arow.iter_mut().enumerate() {
                *a += wr * row[c];
            }
        }
    }

    fn solve(&self, jitter: f64) -> Result<Vec<f64>> {
        let q = self.q;
        if self.positive < q {
            return Err(DmfError::UnderdeterminedSystem {
                positive: self.positive,
                needed: q,
            });
        }
        let trace: f64 = (0..q).map(|r| self.a[r * q + r]).sum();
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(DmfError::Singular);
        }
        let base_ridge = jitter * trace / q as f64;
        let mut ridge = 0.0;
        let mut last_ok = None;
        for attempt in 0..8 {
            if let Some((l, cond)) = cholesky(&self.a, q, ridge) {
                if cond <= SINGULAR_CONDITION || attempt == 7 {
                    return Ok(cholesky_solve(&l, q, &self.b));
                }
                last_ok = Some(l);
            }
            if base_ridge == 0.0 {
                break;
            }
            ridge = if ridge == 0.0 { base_ridge } else { ridge * 100.0 };
        }
        match last_ok {
            Some(l) => Ok(cholesky_solve(&l, q, &self.b)),
            None => Err(DmfError::Singular),
        }
    }
}

/// Lower Cholesky factor of the lower triangle of `a + ridge * I`, with a
/// cheap condition estimate `(max l_ii / min l_ii)^2`.
fn cholesky(a: &[f64], q: usize, ridge: f64) -> Option<(Vec<f64>, f64)> {
    let mut l = vec![0.0; q * q];
    let mut dmax: f64 = 0.0;
    let mut dmin = f64::INFINITY;
    for r in 0..q {
        for c in 0..=r {
            let mut s = a[r * q + c];
            if r == c {
                s += ridge;
            }
            for k in 0..c {
                s -= l[r * q + k] * l[c * q + k];
            }
            if r == c {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                let d = s.sqrt();
                l[r * q + r] = d;
                dmax = dmax.max(d);
                dmin = dmin.min(d);
            } else {
                l[r * q + c] = s / l[c * q + c];
            }
        }
    }
    let ratio = dmax / dmin;
    Some((l, ratio * ratio))
}

fn cholesky_solve(l: &[f64], q: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for r in 0..q {
        let mut s = y[r];
        for k in 0..r {
            s -= l[r * q + k] * y[k];
        }
        y[r] = s / l[r * q + r];
    }
    for r in (0..q).rev() {
        let mut s = y[r];
        for k in r + 1..q {
            s -= l[k * q + r] * y[k];
        }
        y[r] = s / l[r * q + r];
    }
    y
}

/// Weighted least squares `argmin_beta sum_l w_l (y_l - x_l . beta)^2` via the
/// normal equations, with a ridge of `jitter * trace / q` added when the
/// system is numerically singular.
pub fn wls_solve(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    jitter: f64,
) -> Result<DVector<f64>> {
    let (k, q) = design.shape();
    if response.len() != k || weights.len() != k {
        return Err(DmfError::InvalidArgument(format!(
            "design has {k} rows but response has {} and weights {}",
            response.len(),
            weights.len()
        )));
    }
    let mut ne = NormalEquations::new(q);
    let mut row = vec![0.0; q];
    for l in 0..k {
        for c in 0..q {
            row[c] = design[(l, c)];
        }
        ne.add(&row, response[l], weights[l]);
    }
    Ok(DVector::from_vec(ne.solve(jitter)?))
}

/// The initial linear predictor `g(mu0)`, where `mu0` is a family-specific
/// nudge of the data into the mean domain; zero-weight entries are first
/// replaced by the positive-weight mean of their column.
pub fn initial_linear_predictor(
    data: &DataMatrix,
    family: &Family,
    link: &Link,
) -> Result<DMatrix<f64>> {
    let map = MeanMap::new(*family, *link)?;
    let (n, p) = (data.nrows(), data.ncols());
    let mut eta = DMatrix::zeros(n, p);
    for j in 0..p {
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..n {
            if data.w[(i, j)] > 0.0 {
                sum += data.x[(i, j)];
                count += 1;
            }
        }
        if count == 0 {
            return Err(DmfError::Init { column: j });
        }
        let col_mean = sum / count as f64;
        for i in 0..n {
            let x = if data.w[(i, j)] > 0.0 {
                data.x[(i, j)]
            } else {
                col_mean
            };
            eta[(i, j)] = map.link_of_clamped(family.initial_mean(x));
        }
    }
    Ok(eta)
}

/// Starting loadings: the first `q` columns of the transposed initial
/// linear predictor. When those are numerically dependent a small seeded
/// perturbation is added so the first regression is well posed.
pub fn initialize(
    data: &DataMatrix,
    family: &Family,
    link: &Link,
    rank: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let eta0 = initial_linear_predictor(data, family, link)?;
    Ok(loadings_from_predictor(&eta0, rank, seed))
}

fn loadings_from_predictor(eta0: &DMatrix<f64>, rank: usize, seed: u64) -> DMatrix<f64> {
    let (n, p) = eta0.shape();
    let q = rank.min(n);
    let mut v0 = DMatrix::from_fn(p, rank, |j, k| if k < q { eta0[(k, j)] } else { 0.0 });
    let sv = v0.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 1e-8 * smax) {
        let rms = (eta0.iter().map(|e| e * e).sum::<f64>() / (n * p) as f64).sqrt();
        let scale = 1e-2 * rms.max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, scale).expect("positive scale");
        for v in v0.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    v0
}

const MAX_HALVINGS: usize = 5;
const ACCEPT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Factor {
    Lambda,
    V,
}

/// Stateful driver of the scoring cycles; [`dmf_fit`] runs it to
/// convergence, but single cycles can be stepped for inspection.
#[derive(Debug, Clone)]
pub struct Fitter<'a> {
    data: &'a DataMatrix,
    spec: ModelSpec,
    map: MeanMap,
    lambda: DMatrix<f64>,
    v: DMatrix<f64>,
    eta: DMatrix<f64>,
    mu: DMatrix<f64>,
    deviance: f64,
    has_lambda: bool,
    trace: Vec<f64>,
    iterations: usize,
}

impl<'a> Fitter<'a> {
    /// Starts from the data-driven initialization.
    pub fn new(data: &'a DataMatrix, spec: &ModelSpec) -> Result<Self> {
        spec.validate(data.nrows(), data.ncols())?;
        data.validate(&spec.family, spec.rank)?;
        let map = MeanMap::new(spec.family, spec.link)?;
        let eta0 = initial_linear_predictor(data, &spec.family, &spec.link)?;
        let v = loadings_from_predictor(&eta0, spec.rank, spec.seed);
        let mu = eta0.map(|e| map.mean(e));
        let deviance = total_deviance(data, &spec.family, &mu);
        Ok(Self {
            data,
            spec: spec.clone(),
            map,
            lambda: DMatrix::zeros(data.nrows(), spec.rank),
            v,
            eta: eta0,
            mu,
            deviance,
            has_lambda: false,
            trace: Vec::new(),
            iterations: 0,
        })
    }

    /// Starts from given factors.
    pub fn from_factors(
        data: &'a DataMatrix,
        spec: &ModelSpec,
        lambda: DMatrix<f64>,
        v: DMatrix<f64>,
    ) -> Result<Self> {
        spec.validate(data.nrows(), data.ncols())?;
        data.validate(&spec.family, spec.rank)?;
        if lambda.shape() != (data.nrows(), spec.rank) || v.shape() != (data.ncols(), spec.rank) {
            return Err(DmfError::InvalidArgument(format!(
                "factors must be {}x{q} and {}x{q}",
                data.nrows(),
                data.ncols(),
                q = spec.rank
            )));
        }
        let map = MeanMap::new(spec.family, spec.link)?;
        let eta = &lambda * v.transpose();
        let mu = eta.map(|e| map.mean(e));
        let deviance = total_deviance(data, &spec.family, &mu);
        if !deviance.is_finite() {
            return Err(DmfError::Divergence { iteration: 0 });
        }
        Ok(Self {
            data,
            spec: spec.clone(),
            map,
            lambda,
            v,
            eta,
            mu,
            deviance,
            has_lambda: true,
            trace: Vec::new(),
            iterations: 0,
        })
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn eta(&self) -> &DMatrix<f64> {
        &self.eta
    }

    pub fn deviance(&self) -> f64 {
        self.deviance
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// One full `Lambda`-step / `V`-step cycle. Returns the deviance after it.
    pub fn cycle(&mut self) -> Result<f64> {
        let iteration = self.iterations + 1;

        normalize_columns(&mut self.v, self.has_lambda.then_some(&mut self.lambda));
        let (z, s) = self.working_quantities();
        let cand = self.regress(Factor::Lambda, &z, &s)?;
        if self.has_lambda {
            self.line_search(Factor::Lambda, cand);
        } else {
            let (eta, mu, dev) = self.evaluate(&cand, &self.v);
            if !dev.is_finite() {
                return Err(DmfError::Divergence { iteration });
            }
            self.lambda = cand;
            self.eta = eta;
            self.mu = mu;
            self.deviance = dev;
            self.has_lambda = true;
        }

        normalize_columns(&mut self.lambda, Some(&mut self.v));
        let (z, s) = self.working_quantities();
        let cand = self.regress(Factor::V, &z, &s)?;
        self.line_search(Factor::V, cand);

        if !self.deviance.is_finite() {
            return Err(DmfError::Divergence { iteration });
        }
        self.iterations = iteration;
        self.trace.push(self.deviance);
        Ok(self.deviance)
    }

    /// Cycles until the relative deviance change drops below `rel_tol` or
    /// `max_iter` cycles have run.
    pub fn run(mut self) -> Result<RawFit> {
        let mut converged = false;
        let mut previous: Option<f64> = None;
        while self.iterations < self.spec.max_iter {
            let dev = self.cycle()?;
            if let Some(prev) = previous {
                if (prev - dev).abs() / (prev + 1e-12) < self.spec.rel_tol {
                    converged = true;
                    break;
                }
            }
            previous = Some(dev);
        }
        Ok(self.into_raw_fit(converged))
    }

    pub fn into_raw_fit(self, converged: bool) -> RawFit {
        RawFit {
            lambda: self.lambda,
            v: self.v,
            eta: self.eta,
            mu: self.mu,
            deviance_trace: self.trace,
            converged,
            iterations: self.iterations,
        }
    }

    /// Working response and variance weights at the current predictor;
    /// both are zero on zero-weight entries.
    fn working_quantities(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, p) = self.eta.shape();
        let family = &self.spec.family;
        let mut z = DMatrix::zeros(n, p);
        let mut s = DMatrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                let w = self.data.w[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let eta = self.eta[(i, j)];
                let (mu, d) = self.map.eval(eta);
                let var = family.variance(mu);
                z[(i, j)] = eta + (self.data.x[(i, j)] - mu) / d;
                s[(i, j)] = family.prior_weight(w) * d * d / var;
            }
        }
        (z, s)
    }

    /// Solves all row (or column) regressions for a candidate factor.
    fn regress(&self, which: Factor, z: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let q = self.spec.rank;
        let jitter = self.spec.jitter;
        let (design, count, other) = match which {
            Factor::Lambda => (&self.v, self.data.nrows(), self.data.ncols()),
            Factor::V => (&self.lambda, self.data.ncols(), self.data.nrows()),
        };
        // row-major copy of the design for contiguous access
        let mut rows = vec![0.0; other * q];
        for l in 0..other {
            for k in 0..q {
                rows[l * q + k] = design[(l, k)];
            }
        }
        let solved: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|t| {
                let mut ne = NormalEquations::new(q);
                for l in 0..other {
                    let (zz, ss) = match which {
                        Factor::Lambda => (z[(t, l)], s[(t, l)]),
                        Factor::V => (z[(l, t)], s[(l, t)]),
                    };
                    ne.add(&rows[l * q..(l + 1) * q], zz, ss);
                }
                ne.solve(jitter)
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(count, q, |t, k| solved[t][k]))
    }

    fn evaluate(&self, lambda: &DMatrix<f64>, v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let eta = lambda * v.transpose();
        let mu = eta.map(|e| self.map.mean(e));
        let dev = total_deviance(self.data, &self.spec.family, &mu);
        (eta, mu, dev)
    }

    /// Accepts the candidate, or a step toward it halved up to
    /// `MAX_HALVINGS` times, as soon as the deviance does not increase.
    /// Keeps the current factor when no step qualifies.
    fn line_search(&mut self, which: Factor, cand: DMatrix<f64>) -> bool {
        let base = self.deviance;
        let current = match which {
            Factor::Lambda => self.lambda.clone(),
            Factor::V => self.v.clone(),
        };
        let mut step = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let trial = if step == 1.0 {
                cand.clone()
            } else {
                &current + (&cand - &current) * step
            };
            let (eta, mu, dev) = match which {
                Factor::Lambda => self.evaluate(&trial, &self.v),
                Factor::V => self.evaluate(&self.lambda, &trial),
            };
            if dev.is_finite() && dev <= base + ACCEPT_SLACK * base.abs() {
                match which {
                    Factor::Lambda => self.lambda = trial,
                    Factor::V => self.v = trial,
                }
                self.eta = eta;
                self.mu = mu;
                self.deviance = dev;
                return true;
            }
            step *= 0.5;
        }
        false
    }
}

/// Scales each column of `m` to unit norm, multiplying the matching column
/// of `partner` by the same factor so the product is unchanged.
fn normalize_columns(m: &mut DMatrix<f64>, partner: Option<&mut DMatrix<f64>>) {
    let norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    for (k, &nrm) in norms.iter().enumerate() {
        if nrm > 0.0 && nrm.is_finite() {
            m.column_mut(k).unscale_mut(nrm);
        }
    }
    if let Some(partner) = partner {
        for (k, &nrm) in norms.iter().enumerate() {
            if nrm > 0.0 && nrm.is_finite() {
                partner.column_mut(k).scale_mut(nrm);
            }
        }
    }
}

/// `sum_ij w_ij * trials * L(x_ij, mu_ij)` over positive-weight entries.
pub fn total_deviance(data: &DataMatrix, family: &Family, mu: &DMatrix<f64>) -> f64 {
    data.x
        .iter()
        .zip(data.w.iter())
        .zip(mu.iter())
        .filter(|((_, &w), _)| w > 0.0)
        .map(|((&x, &w), &m)| family.prior_weight(w) * family.unit_deviance(x, m))
        .sum()
}

/// Fits a rank-`spec.rank` deviance factorization of `data`.
pub fn dmf_fit(data: &DataMatrix, spec: &ModelSpec) -> Result<RawFit> {
    Fitter::new(data, spec)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::Rng;

    #[test]
    fn working_response_examples() {
        let x = dmatrix![1.0, -2.0; 3.5, 0.0];
        let eta = dmatrix![0.3, 1.0; -4.0, 2.0];
        let z = working_response(&x, &eta, &eta, &Link::Identity).unwrap();
        assert_eq!(z, x);

        let z = working_response(&dmatrix![2.0], &dmatrix![0.0], &dmatrix![1.0], &Link::Log).unwrap();
        assert_eq!(z[(0, 0)], 1.0);

        let z = working_response(&dmatrix![1.0], &dmatrix![0.0], &dmatrix![0.5], &Link::Logit).unwrap();
        assert_eq!(z[(0, 0)], 2.0);

        let err = working_response(&dmatrix![1.0], &dmatrix![-800.0], &dmatrix![0.0], &Link::Log);
        assert!(matches!(err, Err(DmfError::DegenerateWeight { row: 0, col: 0, .. })));
    }

    #[test]
    fn variance_weight_examples() {
        let ones = DMatrix::from_element(2, 2, 1.0);
        let eta = dmatrix![0.1, -0.2; 3.0, 0.0];
        let s = variance_weights(&ones, &eta, &eta, &Family::gaussian(), &Link::Identity).unwrap();
        assert_eq!(s, ones);

        let s = variance_weights(&dmatrix![2.0, 0.0], &dmatrix![0.0, 0.0], &dmatrix![1.0, 1.0], &Family::poisson(), &Link::Log)
            .unwrap();
        assert_eq!(s, dmatrix![2.0, 0.0]);

        let s = variance_weights(&dmatrix![1.0], &dmatrix![0.0], &dmatrix![0.5], &Family::bernoulli(), &Link::Logit)
            .unwrap();
        assert_eq!(s[(0, 0)], 0.25);

        let err = variance_weights(&dmatrix![1.0], &dmatrix![0.0], &dmatrix![0.0], &Family::poisson(), &Link::Log);
        assert!(matches!(err, Err(DmfError::DegenerateVariance { .. })));
    }

    #[test]
    fn wls_identity_design() {
        let design = DMatrix::<f64>::identity(3, 3);
        let coef = wls_solve(&design, &[1.5, -2.0, 7.0], &[1.0; 3], 0.0).unwrap();
        assert_eq!(coef.as_slice(), &[1.5, -2.0, 7.0]);
    }

    #[test]
    fn wls_matches_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let design = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let coef = wls_solve(&design, &y, &[1.0; 20], DEFAULT_JITTER).unwrap();
        let qr = design.clone().qr();
        let qty = qr.q().transpose() * DVector::from_column_slice(&y);
        let oracle = qr.r().solve_upper_triangular(&qty).unwrap();
        for k in 0..3 {
            assert_relative_eq!(coef[k], oracle[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn wls_zero_weight_deletes_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let design = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut w: Vec<f64> = (0..10).map(|_| rng.random_range(0.5..2.0)).collect();
        w[4] = 0.0;
        let full = wls_solve(&design, &y, &w, 0.0).unwrap();
        let keep: Vec<usize> = (0..10).filter(|&l| l != 4).collect();
        let reduced = DMatrix::from_fn(9, 2, |r, c| design[(keep[r], c)]);
        let ry: Vec<f64> = keep.iter().map(|&l| y[l]).collect();
        let rw: Vec<f64> = keep.iter().map(|&l| w[l]).collect();
        let other = wls_solve(&reduced, &ry, &rw, 0.0).unwrap();
        assert_eq!(full, other);
    }

    #[test]
    fn wls_underdetermined() {
        let design = DMatrix::<f64>::identity(3, 3);
        let err = wls_solve(&design, &[1.0; 3], &[1.0, 0.0, 0.0], DEFAULT_JITTER);
        assert!(matches!(err, Err(DmfError::UnderdeterminedSystem { positive: 1, needed: 3 })));
    }

    #[test]
    fn wls_singular_gets_ridge() {
        // duplicated column: exactly singular normal equations
        let design = DMatrix::from_fn(6, 2, |r, _| r as f64 + 1.0);
        let coef = wls_solve(&design, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 6], DEFAULT_JITTER).unwrap();
        assert_relative_eq!(coef[0] + coef[1], 1.0, epsilon = 1e-6);
        assert!(matches!(
            wls_solve(&design, &[1.0; 6], &[1.0; 6], 0.0),
            Err(DmfError::Singular)
        ));
    }

    #[test]
    fn initialization_examples() {
        let data = DataMatrix::new(dmatrix![0.0, 3.0; 1.0, 2.0]);
        let eta = initial_linear_predictor(&data, &Family::poisson(), &Link::Log).unwrap();
        assert_relative_eq!(eta[(0, 0)], 0.1f64.ln(), epsilon = 1e-15);

        let x = dmatrix![1.0, -2.0, 0.5; 3.0, 4.0, -1.0; 0.0, 2.0, 2.0];
        let v0 = initialize(&DataMatrix::new(x.clone()), &Family::gaussian(), &Link::Identity, 2, 0).unwrap();
        assert_eq!(v0, x.rows(0, 2).transpose());

        let data = DataMatrix::new(dmatrix![1.0, 0.0; 0.0, 1.0]);
        let eta = initial_linear_predictor(&data, &Family::bernoulli(), &Link::Logit).unwrap();
        assert_relative_eq!(Link::Logit.invert(eta[(0, 0)]), 0.75, epsilon = 1e-14);
    }

    #[test]
    fn initialization_imputes_zero_weight_entries() {
        let x = dmatrix![1.0, 5.0; f64::NAN, 7.0; 3.0, 9.0];
        let w = dmatrix![1.0, 1.0; 0.0, 1.0; 1.0, 1.0];
        let data = DataMatrix::with_weights(x, w).unwrap();
        let eta = initial_linear_predictor(&data, &Family::gaussian(), &Link::Identity).unwrap();
        assert_eq!(eta[(1, 0)], 2.0);

        let w = dmatrix![0.0, 1.0; 0.0, 1.0; 0.0, 1.0];
        let data = DataMatrix::with_weights(DMatrix::zeros(3, 2), w).unwrap();
        assert!(matches!(
            initial_linear_predictor(&data, &Family::gaussian(), &Link::Identity),
            Err(DmfError::Init { column: 0 })
        ));
    }

    #[test]
    fn validation_errors() {
        let data = DataMatrix::new(dmatrix![1.0, -1.0; 2.0, 3.0]);
        let spec = ModelSpec::new(Family::poisson(), Link::Log, 1);
        assert!(matches!(dmf_fit(&data, &spec), Err(DmfError::Domain(_))));

        let data = DataMatrix::with_weights(
            dmatrix![1.0, 1.0, 2.0; 2.0, 3.0, 1.0],
            dmatrix![1.0, 0.0, 0.0; 1.0, 1.0, 1.0],
        )
        .unwrap();
        let spec = ModelSpec::new(Family::poisson(), Link::Log, 2);
        assert!(matches!(
            dmf_fit(&data, &spec),
            Err(DmfError::Underdetermined { axis: Axis::Row, index: 0, positive: 1, needed: 2 })
        ));
        let spec = ModelSpec::new(Family::poisson(), Link::Log, 3);
        assert!(matches!(dmf_fit(&data, &spec), Err(DmfError::InvalidArgument(_))));
        let spec = ModelSpec::new(Family::bernoulli(), Link::Inverse, 1);
        assert!(matches!(dmf_fit(&data, &spec), Err(DmfError::InvalidArgument(_))));
    }

    #[test]
    fn saturated_poisson_reproduces_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(8, 4, |_, _| rng.random_range(1..30) as f64);
        let data = DataMatrix::new(x.clone());
        let spec = ModelSpec::new(Family::poisson(), Link::Log, 4).rel_tol(1e-12).max_iter(500);
        let fit = dmf_fit(&data, &spec).unwrap();
        for (m, x) in fit.mu.iter().zip(x.iter()) {
            assert_relative_eq!(*m, *x, max_relative = 1e-6);
        }
    }

    #[test]
    fn eta_is_product_of_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(12, 2, |_, k| if k == 0 { 2.0f64 } else { rng.random_range(-0.5..0.5) });
        let b = DMatrix::from_fn(6, 2, |_, _| rng.random_range(0.5f64..1.0));
        let x = (&a * b.transpose()).map(|e| {
            rand_distr::Poisson::new(e.exp()).unwrap().sample(&mut rng)
        });
        let data = DataMatrix::new(x);
        let fit = dmf_fit(&data, &ModelSpec::new(Family::poisson(), Link::Log, 2)).unwrap();
        assert_eq!(fit.eta, &fit.lambda * fit.v.transpose());
        let map = MeanMap::new(Family::poisson(), Link::Log).unwrap();
        assert_eq!(fit.mu, fit.eta.map(|e| map.mean(e)));
        assert!(fit.converged);
    }
}
