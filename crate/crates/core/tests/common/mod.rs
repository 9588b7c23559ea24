//! Shared helpers for the integration tests: independent oracles and data.
#![allow(dead_code)]

use dmf::simlab::{simulate_dmf, FactorLaw, SimDesign};
use dmf::{DataMatrix, Family, Link};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// Rank-`q` truncation of `x` built from the eigendecomposition of `XᵀX`,
/// plus the top `q` singular values.
pub fn truncated_svd(x: &DMatrix<f64>, q: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = (x.transpose() * x).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vq = DMatrix::from_fn(x.ncols(), q, |i, k| eig.eigenvectors[(i, order[k])]);
    let sv = order[..q].iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect();
    (x * &vq * vq.transpose(), sv)
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Small generated data set from a rank-`q` model.
pub fn simulated(family: Family, link: Link, n: usize, p: usize, q: usize, center: f64, seed: u64) -> DataMatrix {
    let design = SimDesign {
        name: "test".into(),
        family,
        link,
        n,
        p,
        q,
        lambda_law: FactorLaw::Normal { mean: 0.0, sd: 0.5 },
        v_law: FactorLaw::Normal { mean: 0.0, sd: 0.5 },
        center,
        sigma: 1.0,
        replicates: 1,
        seed,
    };
    simulate_dmf(&design, 0).expect("simulation").data
}

/// Family/link pairs exercised by the property suites, with a generator
/// center that keeps the mean inside the link's range.
pub fn family_links() -> Vec<(Family, Link, f64)> {
    vec![
        (Family::gaussian(), Link::Identity, 0.0),
        (Family::poisson(), Link::Log, 1.0),
        (Family::gamma(2.0), Link::Log, 0.0),
        (Family::gamma(2.0), Link::Inverse, 2.0),
        (Family::bernoulli(), Link::Logit, 0.0),
        (Family::bernoulli(), Link::Cloglog, -0.5),
        (Family::bernoulli(), Link::Probit, 0.0),
        (Family::binomial(20.0), Link::Logit, 0.0),
        (Family::negative_binomial(5.0), Link::Log, 1.0),
        (Family::negative_binomial(5.0), Link::NegBinCanonical { size: 5.0 }, -1.0),
    ]
}

/// Deviance of a rank-one model written out from the textbook formulas,
/// without any clamping of the mean.
#[derive(Clone, Copy, Debug)]
pub enum OracleModel {
    PoissonLog,
    GammaLog,
    BernoulliLogit,
}

impl OracleModel {
    fn unit(self, x: f64, eta: f64) -> f64 {
        match self {
            OracleModel::PoissonLog => {
                let mu = eta.exp();
                let xl = if x > 0.0 { x * (x / mu).ln() } else { 0.0 };
                xl - (x - mu)
            }
            OracleModel::GammaLog => {
                let mu = eta.exp();
                (x - mu) / mu - (x / mu).ln()
            }
            OracleModel::BernoulliLogit => {
                // -log-likelihood, since the saturated value is zero
                if x > 0.5 {
                    softplus(-eta)
                } else {
                    softplus(eta)
                }
            }
        }
    }

    pub fn deviance(self, x: &DMatrix<f64>, params: &DVector<f64>) -> f64 {
        let (n, p) = x.shape();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..p {
                total += self.unit(x[(i, j)], params[i] * params[n + j]);
            }
        }
        total
    }
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

fn gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut y = x.clone();
    for k in 0..x.len() {
        let h = 1e-6 * (1.0 + x[k].abs());
        y[k] = x[k] + h;
        let up = f(&y);
        y[k] = x[k] - h;
        let down = f(&y);
        y[k] = x[k];
        g[k] = (up - down) / (2.0 * h);
    }
    g
}

/// BFGS with central-difference gradients and Armijo backtracking.
pub fn bfgs(f: &dyn Fn(&DVector<f64>) -> f64, start: DVector<f64>, max_iter: usize) -> (DVector<f64>, f64) {
    let m = start.len();
    let mut x = start;
    let mut fx = f(&x);
    let mut g = gradient(f, &x);
    let mut h = DMatrix::<f64>::identity(m, m);
    for _ in 0..max_iter {
        if g.norm() < 1e-10 {
            break;
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(m, m);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &x + step * &dir;
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                next = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn)) = next else { break };
        let gn = gradient(f, &xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(m, m);
            let a = &eye - rho * &s * y.transpose();
            h = &a * &h * a.transpose() + rho * &s * s.transpose();
        }
        let done = (fx - fxn).abs() < 1e-15 * (1.0 + fx.abs());
        x = xn;
        fx = fxn;
        g = gn;
        if done {
            break;
        }
    }
    (x, fx)
}

/// Best BFGS result over `restarts` random starts: deviance and the largest
/// |η| of the minimizer.
pub fn black_box_fit(model: OracleModel, x: &DMatrix<f64>, restarts: usize, seed: u64) -> (f64, f64) {
    let (n, p) = x.shape();
    let mut r = rng(seed);
    let f = |params: &DVector<f64>| model.deviance(x, params);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..restarts {
        let start = DVector::from_fn(n + p, |_, _| r.sample::<f64, _>(StandardNormal));
        let (par, dev) = bfgs(&f, start, 5000);
        if dev < best.0 {
            let mut eta = 0.0f64;
            for i in 0..n {
                for j in 0..p {
                    eta = eta.max((par[i] * par[n + j]).abs());
                }
            }
            best = (dev, eta);
        }
    }
    best
}
