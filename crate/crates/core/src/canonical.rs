//! Identified form of a factorization and centering against known row
//! structure.

use nalgebra::DMatrix;

use crate::engine::RawFit;
use crate::error::{DmfError, Result};

/// Relative size below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-12;

/// `Lambda = U diag(d)` with orthonormal `U` and `V` and descending `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFit {
    pub u: DMatrix<f64>,
    pub d: Vec<f64>,
    pub v: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// Number of singular values above `RANK_TOL * d[0]`.
    pub effective_rank: usize,
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl CanonicalFit {
    pub fn from_raw(raw: &RawFit) -> Self {
        let mut fit = identify(&raw.lambda, &raw.v);
        fit.deviance_trace = raw.deviance_trace.clone();
        fit.converged = raw.converged;
        fit.iterations = raw.iterations;
        fit
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn eta(&self) -> DMatrix<f64> {
        &self.lambda * self.v.transpose()
    }

    pub fn deviance(&self) -> Option<f64> {
        self.deviance_trace.last().copied()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.effective_rank < self.rank()
    }

    /// Warning text when the product has lower numerical rank than stored.
    pub fn rank_warning(&self) -> Option<String> {
        self.is_rank_deficient().then(|| {
            format!(
                "factorization has numerical rank {} but {} components were requested",
                self.effective_rank,
                self.rank()
            )
        })
    }

    /// Keeps the leading `rank` components.
    pub fn truncate(&self, rank: usize) -> Self {
        let r = rank.min(self.rank());
        Self {
            u: self.u.columns(0, r).into_owned(),
            d: self.d[..r].to_vec(),
            v: self.v.columns(0, r).into_owned(),
            lambda: self.lambda.columns(0, r).into_owned(),
            effective_rank: self.effective_rank.min(r),
            deviance_trace: self.deviance_trace.clone(),
            converged: self.converged,
            iterations: self.iterations,
        }
    }
}

/// Rank-`q` SVD of `lambda * v^T`, computed from thin QR factors of each
/// side and the SVD of the small `q x q` core.
///
/// Signs are fixed so the largest-magnitude entry of each column of `V`
/// is positive.
pub fn identify(lambda: &DMatrix<f64>, v: &DMatrix<f64>) -> CanonicalFit {
    let q = lambda.ncols();
    assert_eq!(q, v.ncols(), "factor ranks differ");
    let (q1, r1) = thin_qr(lambda);
    let (q2, r2) = thin_qr(v);
    let core = &r1 * r2.transpose();
    let svd = core.svd(true, true);
    let a = svd.u.expect("requested");
    let bt = svd.v_t.expect("requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]));

    let u_all = &q1 * &a;
    let v_all = &q2 * bt.transpose();
    let (n, p) = (lambda.nrows(), v.nrows());
    let mut u = DMatrix::zeros(n, q);
    let mut vv = DMatrix::zeros(p, q);
    let mut d = Vec::with_capacity(q);
    for (k, &src) in order.iter().enumerate() {
        let mut ucol = u_all.column(src).into_owned();
        let mut vcol = v_all.column(src).into_owned();
        let pivot = vcol.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(k, &ucol);
        vv.set_column(k, &vcol);
        d.push(sv[src]);
    }
    let lead = d.first().copied().unwrap_or(0.0);
    let effective_rank = d.iter().filter(|&&s| s > RANK_TOL * lead && s > 0.0).count();
    let lambda = DMatrix::from_fn(n, q, |i, k| u[(i, k)] * d[k]);
    CanonicalFit {
        u,
        d,
        v: vv,
        lambda,
        effective_rank,
        deviance_trace: Vec::new(),
        converged: true,
        iterations: 0,
    }
}

/// Thin QR with an orthonormal `Q` even when rows < columns.
fn thin_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    if r.nrows() == m.ncols() {
        return (q, r);
    }
    // fewer rows than columns: pad R with zero rows and Q with zero columns
    let k = m.ncols();
    let mut rr = DMatrix::zeros(k, k);
    rr.rows_mut(0, r.nrows()).copy_from(&r);
    let mut qq = DMatrix::zeros(m.nrows(), k);
    qq.columns_mut(0, q.ncols()).copy_from(&q);
    (qq, rr)
}

/// A fit split into a known-row-structure part `lambda0 * v0^T` and an
/// identified residual part orthogonal to `lambda0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredFit {
    pub lambda0: DMatrix<f64>,
    pub v0: DMatrix<f64>,
    pub residual: CanonicalFit,
}

impl CenteredFit {
    pub fn eta(&self) -> DMatrix<f64> {
        &self.lambda0 * self.v0.transpose() + self.residual.eta()
    }
}

/// Projects `lambda * v^T` onto the column space of `lambda0` and its
/// complement. The residual keeps `residual_rank` components (default: the
/// rank of the fit); fit at rank `q + q0` and ask for `q` to get a residual of
/// rank `q` after projection.
pub fn center(raw: &RawFit, lambda0: &DMatrix<f64>, residual_rank: Option<usize>) -> Result<CenteredFit> {
    center_factors(&raw.lambda, &raw.v, lambda0, residual_rank).map(|mut c| {
        c.residual.deviance_trace = raw.deviance_trace.clone();
        c.residual.converged = raw.converged;
        c.residual.iterations = raw.iterations;
        c
    })
}

pub fn center_factors(
    lambda: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda0: &DMatrix<f64>,
    residual_rank: Option<usize>,
) -> Result<CenteredFit> {
    let (n, q0) = lambda0.shape();
    if n != lambda.nrows() {
        return Err(DmfError::InvalidArgument(format!(
            "lambda0 has {n} rows but the fit has {}",
            lambda.nrows()
        )));
    }
    if q0 == 0 || q0 > n {
        return Err(DmfError::InvalidArgument(format!("lambda0 must have 1..={n} columns")));
    }
    let qr = lambda0.clone().qr();
    let r0 = qr.r();
    let diag_max = (0..q0).map(|k| r0[(k, k)].abs()).fold(0.0, f64::max);
    if (0..q0).any(|k| !(r0[(k, k)].abs() > 1e-10 * diag_max)) {
        return Err(DmfError::RankDeficient("lambda0 is not of full column rank".into()));
    }
    let q0m = qr.q();
    // coefficients of lambda on lambda0: (L0^T L0)^{-1} L0^T lambda = R0^{-1} Q0^T lambda
    let proj = q0m.transpose() * lambda;
    let coef = r0
        .solve_upper_triangular(&proj)
        .ok_or_else(|| DmfError::RankDeficient("lambda0 is not of full column rank".into()))?;
    let v0 = v * coef.transpose();
    let resid_lambda = lambda - &q0m * proj;
    let residual = identify(&resid_lambda, v);
    let residual = match residual_rank {
        Some(r) => residual.truncate(r),
        None => residual,
    };
    Ok(CenteredFit {
        lambda0: lambda0.clone(),
        v0,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    fn random_rotation(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
        random(rng, q, q).qr().q()
    }

    #[test]
    fn canonical_form_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lambda = random(&mut rng, 30, 4);
        let v = random(&mut rng, 12, 4);
        let fit = identify(&lambda, &v);
        let vtv = fit.v.transpose() * &fit.v;
        assert!((vtv - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        let ltl = fit.lambda.transpose() * &fit.lambda;
        let dd = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(4, fit.d.iter().map(|d| d * d)));
        assert!((ltl - dd).abs().max() < 1e-10 * fit.d[0].powi(2));
        assert!(fit.d.windows(2).all(|w| w[0] >= w[1]));
        assert!(rel_frob(&fit.eta(), &(&lambda * v.transpose())) < 1e-10);
        assert_eq!(fit.effective_rank, 4);
    }

    #[test]
    fn rank_one_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda = random(&mut rng, 9, 1);
        let v = random(&mut rng, 5, 1);
        let fit = identify(&lambda, &v);
        assert_relative_eq!(fit.d[0], lambda.norm() * v.norm(), max_relative = 1e-12);
    }

    #[test]
    fn matches_direct_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = random(&mut rng, 15, 3);
        let v = random(&mut rng, 7, 3);
        let fit = identify(&lambda, &v);
        let svd = (&lambda * v.transpose()).svd(true, true);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for k in 0..3 {
            assert_relative_eq!(fit.d[k], sv[k], max_relative = 1e-10);
        }
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lambda = random(&mut rng, 20, 3);
        let v = random(&mut rng, 8, 3);
        let base = identify(&lambda, &v);
        for _ in 0..20 {
            let m = random_rotation(&mut rng, 3);
            let other = identify(&(&lambda * m.transpose()), &(&v * &m.transpose()).map(|x| x));
            // lambda M^T (v M^T)^T = lambda M^T M v^T = lambda v^T
            assert!((other.v.clone() - &base.v).abs().max() < 1e-9);
            assert!((other.lambda.clone() - &base.lambda).abs().max() < 1e-9);
        }
    }

    #[test]
    fn idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let once = identify(&random(&mut rng, 10, 2), &random(&mut rng, 6, 2));
        let twice = identify(&once.lambda, &once.v);
        assert!((twice.lambda - &once.lambda).abs().max() < 1e-12);
        assert!((twice.v - &once.v).abs().max() < 1e-12);
    }

    #[test]
    fn deficient_rank_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut lambda = random(&mut rng, 10, 3);
        let c0 = lambda.column(0).into_owned();
        lambda.set_column(2, &c0);
        let mut v = random(&mut rng, 5, 3);
        let c = v.column(0).into_owned();
        v.set_column(2, &(-c));
        // columns 0 and 2 cancel in the product
        let fit = identify(&lambda, &v);
        assert_eq!(fit.effective_rank, 1);
        assert!(fit.rank_warning().is_some());
    }

    #[test]
    fn wide_factor_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lambda = random(&mut rng, 2, 3);
        let v = random(&mut rng, 4, 3);
        let fit = identify(&lambda, &v);
        assert!(rel_frob(&fit.eta(), &(&lambda * v.transpose())) < 1e-10);
        assert_eq!(fit.effective_rank, 2);
    }

    #[test]
    fn centering_on_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lambda = random(&mut rng, 12, 2);
        let v = random(&mut rng, 5, 2);
        let eta = &lambda * v.transpose();
        let ones = DMatrix::from_element(12, 1, 1.0);
        let c = center_factors(&lambda, &v, &ones, None).unwrap();
        for j in 0..5 {
            assert_relative_eq!(c.v0[(j, 0)], eta.column(j).mean(), epsilon = 1e-12);
        }
        assert!((c.residual.lambda.transpose() * &ones).abs().max() < 1e-8);
        assert!(rel_frob(&c.eta(), &eta) < 1e-10);
    }

    #[test]
    fn centering_rejects_deficient_prior() {
        let lambda0 = DMatrix::from_fn(6, 2, |_, _| 1.0);
        let err = center_factors(&DMatrix::zeros(6, 1), &DMatrix::zeros(3, 1), &lambda0, None);
        assert!(matches!(err, Err(DmfError::RankDeficient(_))));
    }

    #[test]
    fn centering_recovers_pca_scores() {
        // exact rank: column means plus a rank-2 part
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, p) = (20, 6);
        let means = random(&mut rng, p, 1);
        let l = random(&mut rng, n, 2);
        let x = DMatrix::from_element(n, 1, 1.0) * means.transpose() + &l * random(&mut rng, p, 2).transpose();
        let svd = x.clone().svd(true, true);
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let lam = DMatrix::from_fn(n, 3, |i, k| u[(i, idx[k])] * svd.singular_values[idx[k]]);
        let vv = DMatrix::from_fn(p, 3, |j, k| vt[(idx[k], j)]);
        let ones = DMatrix::from_element(n, 1, 1.0);
        let c = center_factors(&lam, &vv, &ones, Some(2)).unwrap();

        let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x.column(j).mean());
        let eig = (centered.transpose() * &centered).symmetric_eigen();
        let mut cidx: Vec<usize> = (0..p).collect();
        cidx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for k in 0..2 {
            let score = &centered * eig.eigenvectors.column(cidx[k]);
            let mine = c.residual.lambda.column(k);
            let diff = (mine - &score).abs().max().min((mine + &score).abs().max());
            assert!(diff < 1e-6, "component {k}: {diff}");
        }
    }
}
