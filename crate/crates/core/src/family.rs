//! Exponential-family distributions, link functions and unit deviances.
//!
//! Every fitting routine in the crate is driven by a [`Family`] (variance
//! function, half-deviance, admissible data domain) paired with a [`Link`]
//! (the map between the mean `mu` and the linear predictor `eta`).
//!
//! Observations have `Var(X) = scale * V(mu) / w` where `w` is the prior
//! weight (entry weight times binomial trials) and `scale` is the
//! dispersion for Gaussian and gamma data and 1 otherwise; the negative
//! binomial size parameter lives inside `V(mu) = mu + mu^2 / phi`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{DmfError, Result};

/// Lower clamp applied to means on a half-open or bounded domain.
pub const MEAN_EPS: f64 = 1e-10;
/// Upper clamp applied to means on `(0, inf)`; keeps `g(mu)` finite for the
/// inverse and negative binomial canonical links.
pub const MEAN_MAX: f64 = 1e15;

const CLOGLOG_ETA_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Gaussian,
    Poisson,
    Gamma,
    Binomial,
    NegativeBinomial,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Gamma => "gamma",
            FamilyKind::Binomial => "binomial",
            FamilyKind::NegativeBinomial => "negbin",
        }
    }
}

impl FromStr for FamilyKind {
    type Err = DmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(FamilyKind::Gaussian),
            "poisson" => Ok(FamilyKind::Poisson),
            "gamma" => Ok(FamilyKind::Gamma),
            "binomial" | "bernoulli" => Ok(FamilyKind::Binomial),
            "negbin" | "negative-binomial" | "negative_binomial" | "nb" => {
                Ok(FamilyKind::NegativeBinomial)
            }
            other => Err(DmfError::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

/// A distribution from the exponential dispersion family.
///
/// `dispersion` is the Gaussian variance, the gamma dispersion or the
/// negative binomial size; it is pinned to 1 for Poisson and binomial.
/// `trials` is the binomial trial count (1 for Bernoulli) and is 1 for every
/// other family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Family {
    kind: FamilyKind,
    dispersion: f64,
    trials: f64,
}

impl Family {
    pub fn try_new(kind: FamilyKind, dispersion: f64, trials: f64) -> Result<Self> {
        if !(dispersion.is_finite() && dispersion > 0.0) {
            return Err(DmfError::InvalidArgument(format!(
                "dispersion must be positive and finite, got {dispersion}"
            )));
        }
        if !(trials.is_finite() && trials > 0.0) {
            return Err(DmfError::InvalidArgument(format!(
                "binomial trials must be positive and finite, got {trials}"
            )));
        }
        let (dispersion, trials) = match kind {
            FamilyKind::Poisson => (1.0, 1.0),
            FamilyKind::Binomial => (1.0, trials),
            _ => (dispersion, 1.0),
        };
        Ok(Self {
            kind,
            dispersion,
            trials,
        })
    }

    pub fn gaussian() -> Self {
        Self::try_new(FamilyKind::Gaussian, 1.0, 1.0).unwrap()
    }

    /// Gaussian with a known error variance, used by the family test.
    pub fn gaussian_with_variance(variance: f64) -> Self {
        Self::try_new(FamilyKind::Gaussian, variance, 1.0).expect("variance must be positive")
    }

    pub fn poisson() -> Self {
        Self::try_new(FamilyKind::Poisson, 1.0, 1.0).unwrap()
    }

    pub fn gamma(dispersion: f64) -> Self {
        Self::try_new(FamilyKind::Gamma, dispersion, 1.0).expect("dispersion must be positive")
    }

    pub fn bernoulli() -> Self {
        Self::binomial(1.0)
    }

    /// Binomial proportions in `[0, 1]` observed over `trials` trials.
    pub fn binomial(trials: f64) -> Self {
        Self::try_new(FamilyKind::Binomial, 1.0, trials).expect("trials must be positive")
    }

    pub fn negative_binomial(size: f64) -> Self {
        Self::try_new(FamilyKind::NegativeBinomial, size, 1.0).expect("size must be positive")
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn trials(&self) -> f64 {
        self.trials
    }

    /// Same family with a different dispersion (ignored where it is pinned).
    pub fn with_dispersion(&self, dispersion: f64) -> Result<Self> {
        Self::try_new(self.kind, dispersion, self.trials)
    }

    pub fn is_dispersed(&self) -> bool {
        matches!(self.kind, FamilyKind::Gamma | FamilyKind::NegativeBinomial)
    }

    pub fn canonical_link(&self) -> Link {
        match self.kind {
            FamilyKind::Gaussian => Link::Identity,
            FamilyKind::Poisson => Link::Log,
            FamilyKind::Gamma => Link::Inverse,
            FamilyKind::Binomial => Link::Logit,
            FamilyKind::NegativeBinomial => Link::NegBinCanonical {
                size: self.dispersion,
            },
        }
    }

    /// The link used by default: canonical, except log for the negative
    /// binomial.
    pub fn default_link(&self) -> Link {
        match self.kind {
            FamilyKind::NegativeBinomial => Link::Log,
            _ => self.canonical_link(),
        }
    }

    /// Variance function `V(mu)` without domain checks.
    #[inline]
    pub fn variance(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Poisson => mu,
            FamilyKind::Gamma => mu * mu,
            FamilyKind::Binomial => mu * (1.0 - mu),
            FamilyKind::NegativeBinomial => mu + mu * mu / self.dispersion,
        }
    }

    /// Checked variance function; rejects means on or outside the boundary.
    pub fn variance_function(&self, mu: f64) -> Result<f64> {
        if !self.mean_in_domain(mu) {
            return Err(DmfError::Domain(format!(
                "mean {mu} is outside the open mean domain of the {} family",
                self.kind.name()
            )));
        }
        let v = self.variance(mu);
        if !(v > 0.0 && v.is_finite()) {
            return Err(DmfError::DegenerateVariance { row: 0, col: 0 });
        }
        Ok(v)
    }

    /// Multiplier turning `V(mu) / w` into `Var(X)`.
    pub fn observation_scale(&self) -> f64 {
        match self.kind {
            FamilyKind::Gaussian | FamilyKind::Gamma => self.dispersion,
            _ => 1.0,
        }
    }

    /// Entry weight times binomial trials.
    #[inline]
    pub fn prior_weight(&self, weight: f64) -> f64 {
        weight * self.trials
    }

    /// `Var(X)` for an observation with mean `mu` and entry weight `weight`.
    pub fn observation_variance(&self, mu: f64, weight: f64) -> f64 {
        self.observation_scale() * self.variance(mu) / self.prior_weight(weight)
    }

    /// Whether `x` lies in the data domain.
    ///
    /// Count families accept non-integer nonnegative values (quasi-likelihood
    /// use); the deviance is well defined there.
    pub fn in_domain(&self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self.kind {
            FamilyKind::Gaussian => true,
            FamilyKind::Poisson | FamilyKind::NegativeBinomial => x >= 0.0,
            FamilyKind::Gamma => x > 0.0,
            FamilyKind::Binomial => (0.0..=1.0).contains(&x),
        }
    }

    pub fn check_domain(&self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(DmfError::Domain(format!(
                "observation {x} is outside the {} domain",
                self.kind.name()
            )))
        }
    }

    /// Whether `mu` lies in the open mean domain.
    pub fn mean_in_domain(&self, mu: f64) -> bool {
        if !mu.is_finite() {
            return false;
        }
        match self.kind {
            FamilyKind::Gaussian => true,
            FamilyKind::Poisson | FamilyKind::Gamma | FamilyKind::NegativeBinomial => mu > 0.0,
            FamilyKind::Binomial => mu > 0.0 && mu < 1.0,
        }
    }

    /// Clamping interval for fitted means.
    pub fn mean_bounds(&self) -> (f64, f64) {
        match self.kind {
            FamilyKind::Gaussian => (f64::NEG_INFINITY, f64::INFINITY),
            FamilyKind::Poisson | FamilyKind::Gamma | FamilyKind::NegativeBinomial => {
                (MEAN_EPS, MEAN_MAX)
            }
            FamilyKind::Binomial => (MEAN_EPS, 1.0 - MEAN_EPS),
        }
    }

    #[inline]
    pub fn clamp_mean(&self, mu: f64) -> f64 {
        let (lo, hi) = self.mean_bounds();
        mu.clamp(lo, hi)
    }

    /// Half-deviance `L(x, mu)` without domain checks; `0 log 0 = 0`.
    #[inline]
    pub fn unit_deviance(&self, x: f64, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 0.5 * (x - mu) * (x - mu),
            FamilyKind::Poisson => xlogy_ratio(x, mu) - (x - mu),
            FamilyKind::Gamma => (x - mu) / mu - (x / mu).ln(),
            FamilyKind::Binomial => xlogy_ratio(x, mu) + xlogy_ratio(1.0 - x, 1.0 - mu),
            FamilyKind::NegativeBinomial => {
                let phi = self.dispersion;
                xlogy_ratio(x, mu) - (x + phi) * ((x + phi) / (mu + phi)).ln()
            }
        }
        .max(0.0)
    }

    /// Checked half-deviance.
    pub fn deviance(&self, x: f64, mu: f64) -> Result<f64> {
        self.check_domain(x)?;
        if !self.mean_in_domain(mu) {
            return Err(DmfError::Domain(format!(
                "mean {mu} is outside the open mean domain of the {} family",
                self.kind.name()
            )));
        }
        let d = self.unit_deviance(x, mu);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(DmfError::NumericOverflow(format!(
                "deviance of x = {x} at mu = {mu} is not finite"
            )))
        }
    }

    /// Starting mean for the scoring iteration: a version of `x` nudged into
    /// the interior of the mean domain.
    pub fn initial_mean(&self, x: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => x,
            FamilyKind::Poisson | FamilyKind::NegativeBinomial => x + 0.1,
            FamilyKind::Gamma => x.max(0.1),
            FamilyKind::Binomial => (self.trials * x + 0.5) / (self.trials + 1.0),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FamilyKind::Gaussian if self.dispersion != 1.0 => {
                write!(f, "gaussian(sigma2={})", self.dispersion)
            }
            FamilyKind::Gamma | FamilyKind::NegativeBinomial => {
                write!(f, "{}(phi={})", self.kind.name(), self.dispersion)
            }
            FamilyKind::Binomial if self.trials != 1.0 => write!(f, "binomial(w={})", self.trials),
            _ => f.write_str(self.kind.name()),
        }
    }
}

/// `x * ln(x / y)` with the `0 ln 0 = 0` convention.
#[inline]
fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Link function `g` with inverse `m = g^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    Identity,
    Log,
    Logit,
    Probit,
    Cloglog,
    /// `g(mu) = 1 / mu`; decreasing, so `m'(eta) < 0`.
    Inverse,
    /// `g(mu) = log(mu / (mu + size))`, the negative binomial canonical link.
    NegBinCanonical { size: f64 },
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Log => "log",
            Link::Logit => "logit",
            Link::Probit => "probit",
            Link::Cloglog => "cloglog",
            Link::Inverse => "inverse",
            Link::NegBinCanonical { .. } => "negbin-canonical",
        }
    }

    /// Parse a link name; the negative binomial canonical link takes its size
    /// from `family`.
    pub fn from_name(name: &str, family: &Family) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "identity" => Link::Identity,
            "log" => Link::Log,
            "logit" => Link::Logit,
            "probit" => Link::Probit,
            "cloglog" => Link::Cloglog,
            "inverse" => Link::Inverse,
            "negbin-canonical" | "canonical-negbin" => {
                if family.kind() != FamilyKind::NegativeBinomial {
                    return Err(DmfError::InvalidArgument(
                        "the negbin-canonical link needs the negbin family".into(),
                    ));
                }
                Link::NegBinCanonical {
                    size: family.dispersion(),
                }
            }
            other => return Err(DmfError::InvalidArgument(format!("unknown link `{other}`"))),
        })
    }

    /// Whether this link can be paired with `family`.
    pub fn compatible_with(&self, family: &Family) -> bool {
        match (self, family.kind()) {
            (Link::NegBinCanonical { .. }, k) => k == FamilyKind::NegativeBinomial,
            (Link::Inverse, FamilyKind::Binomial) => false,
            (Link::Logit | Link::Probit | Link::Cloglog, k) => k == FamilyKind::Binomial,
            _ => true,
        }
    }

    pub fn is_increasing(&self) -> bool {
        !matches!(self, Link::Inverse)
    }

    /// Open interval of means on which `g` is defined.
    pub fn mean_domain(&self) -> (f64, f64) {
        match self {
            Link::Identity => (f64::NEG_INFINITY, f64::INFINITY),
            Link::Log | Link::Inverse | Link::NegBinCanonical { .. } => (0.0, f64::INFINITY),
            Link::Logit | Link::Probit | Link::Cloglog => (0.0, 1.0),
        }
    }

    /// `g(mu)`; errors on the boundary or outside the mean domain.
    pub fn apply(&self, mu: f64) -> Result<f64> {
        let (lo, hi) = self.mean_domain();
        if !(mu.is_finite() && mu > lo && mu < hi) {
            return Err(DmfError::Domain(format!(
                "mean {mu} is outside the domain of the {} link",
                self.name()
            )));
        }
        Ok(self.link_unchecked(mu))
    }

    #[inline]
    pub fn link_unchecked(&self, mu: f64) -> f64 {
        match *self {
            Link::Identity => mu,
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Probit => normal_quantile(mu),
            Link::Cloglog => (-(-mu).ln_1p()).ln(),
            Link::Inverse => 1.0 / mu,
            Link::NegBinCanonical { size } => -(size / mu).ln_1p(),
        }
    }

    /// `m(eta) = g^-1(eta)`.
    #[inline]
    pub fn invert(&self, eta: f64) -> f64 {
        match *self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Logit => logistic(eta),
            Link::Probit => normal_cdf(eta),
            Link::Cloglog => {
                let e = eta.clamp(-CLOGLOG_ETA_BOUND, CLOGLOG_ETA_BOUND);
                -(-e.exp()).exp_m1()
            }
            Link::Inverse => 1.0 / eta,
            Link::NegBinCanonical { size } => {
                // eta < 0; mu = size * e^eta / (1 - e^eta)
                size / (-eta).exp_m1()
            }
        }
    }

    /// `m'(eta)`.
    #[inline]
    pub fn mu_eta(&self, eta: f64) -> f64 {
        match *self {
            Link::Identity => 1.0,
            Link::Log => eta.exp(),
            Link::Logit => {
                let p = logistic(eta);
                p * (1.0 - p)
            }
            Link::Probit => normal_pdf(eta),
            Link::Cloglog => {
                let e = eta.clamp(-CLOGLOG_ETA_BOUND, CLOGLOG_ETA_BOUND);
                (e - e.exp()).exp()
            }
            Link::Inverse => -1.0 / (eta * eta),
            Link::NegBinCanonical { size } => {
                let d = (-eta).exp_m1();
                // d/deta [size / (e^-eta - 1)] = size e^-eta / (e^-eta - 1)^2
                size * (-eta).exp() / (d * d)
            }
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile, polished with Newton steps on `normal_cdf`.
pub fn normal_quantile(p: f64) -> f64 {
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let pdf = normal_pdf(x);
        if pdf <= 0.0 || !x.is_finite() {
            break;
        }
        x -= (normal_cdf(x) - p) / pdf;
    }
    x
}

/// A family paired with a link, with the clamping needed to evaluate both
/// safely for any finite linear predictor.
#[derive(Debug, Clone, Copy)]
pub struct MeanMap {
    family: Family,
    link: Link,
    eta_lo: f64,
    eta_hi: f64,
    mu_lo: f64,
    mu_hi: f64,
}

impl MeanMap {
    pub fn new(family: Family, link: Link) -> Result<Self> {
        if !link.compatible_with(&family) {
            return Err(DmfError::InvalidArgument(format!(
                "the {link} link cannot be used with the {} family",
                family.kind().name()
            )));
        }
        let (flo, fhi) = family.mean_bounds();
        let (llo, lhi) = link.mean_domain();
        let mu_lo = if llo == 0.0 { flo.max(MEAN_EPS) } else { flo.max(llo) };
        let mut mu_hi = if lhi == 1.0 { fhi.min(1.0 - MEAN_EPS) } else { fhi.min(lhi) };
        if mu_lo > 0.0 && mu_hi.is_infinite() {
            mu_hi = MEAN_MAX;
        }
        let a = if mu_lo.is_finite() { link.link_unchecked(mu_lo) } else { f64::NEG_INFINITY };
        let b = if mu_hi.is_finite() { link.link_unchecked(mu_hi) } else { f64::INFINITY };
        let (eta_lo, eta_hi) = if a <= b { (a, b) } else { (b, a) };
        Ok(Self {
            family,
            link,
            eta_lo,
            eta_hi,
            mu_lo,
            mu_hi,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    /// Admissible linear-predictor interval.
    pub fn eta_bounds(&self) -> (f64, f64) {
        (self.eta_lo, self.eta_hi)
    }

    /// `(mu, m'(eta))` at the clamped linear predictor.
    #[inline]
    pub fn eval(&self, eta: f64) -> (f64, f64) {
        let e = eta.clamp(self.eta_lo, self.eta_hi);
        let mu = self.link.invert(e).clamp(self.mu_lo, self.mu_hi);
        (mu, self.link.mu_eta(e))
    }

    #[inline]
    pub fn mean(&self, eta: f64) -> f64 {
        let e = eta.clamp(self.eta_lo, self.eta_hi);
        self.link.invert(e).clamp(self.mu_lo, self.mu_hi)
    }

    /// `g(mu)` after clamping `mu` into the admissible mean interval.
    #[inline]
    pub fn link_of_clamped(&self, mu: f64) -> f64 {
        self.link.link_unchecked(mu.clamp(self.mu_lo, self.mu_hi))
    }
}

/// Result of the moment-based dispersion estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionEstimate {
    pub value: f64,
    /// Set when the sample variance does not exceed the mean and the floor
    /// was returned.
    pub underdispersed: bool,
}

/// Which first moment enters the numerator of the negative binomial moment
/// estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomNumerator {
    /// `mean(X)^2`, the negative binomial method of moments.
    #[default]
    SquaredMean,
    /// `mean(X^2)`.
    MeanOfSquares,
}

pub const DISPERSION_FLOOR: f64 = 0.1;

/// Negative binomial dispersion by moments over the positive-weight entries:
/// `max(0.1, mean^2 / (s^2 - mean))` with `s^2` the sample variance.
pub fn estimate_dispersion_mom<I>(values: I, numerator: MomNumerator) -> Result<DispersionEstimate>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut first: Option<f64> = None;
    let mut distinct = false;
    for (x, w) in values {
        if w <= 0.0 {
            continue;
        }
        if !(x.is_finite() && x >= 0.0) {
            return Err(DmfError::Domain(format!(
                "moment dispersion needs nonnegative data, got {x}"
            )));
        }
        match first {
            None => first = Some(x),
            Some(f) if f != x => distinct = true,
            _ => {}
        }
        n += 1;
        sum += x;
        sum_sq += x * x;
    }
    if !distinct || n < 2 {
        return Err(DmfError::InvalidArgument(
            "moment dispersion needs at least two distinct positive-weight values".into(),
        ));
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq - nf * mean * mean) / (nf - 1.0);
    let top = match numerator {
        MomNumerator::SquaredMean => mean * mean,
        MomNumerator::MeanOfSquares => sum_sq / nf,
    };
    let excess = var - mean;
    if excess <= 0.0 {
        return Ok(DispersionEstimate {
            value: DISPERSION_FLOOR,
            underdispersed: true,
        });
    }
    Ok(DispersionEstimate {
        value: (top / excess).max(DISPERSION_FLOOR),
        underdispersed: false,
    })
}

/// Gamma dispersion by moments: squared coefficient of variation of the
/// positive-weight entries.
pub fn estimate_gamma_dispersion_mom<I>(values: I) -> Result<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (x, w) in values {
        if w <= 0.0 {
            continue;
        }
        n += 1;
        sum += x;
        sum_sq += x * x;
    }
    if n < 2 {
        return Err(DmfError::InvalidArgument(
            "gamma dispersion needs at least two positive-weight values".into(),
        ));
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq - nf * mean * mean) / (nf - 1.0);
    if mean <= 0.0 || var <= 0.0 {
        return Err(DmfError::InvalidArgument(
            "gamma dispersion needs positive mean and variance".into(),
        ));
    }
    Ok(var / (mean * mean))
}
