//! Simulation designs and the matrix generator.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sampler::sample;
use crate::engine::DataMatrix;
use crate::error::{DmfError, Result};
use crate::family::{Family, Link, MeanMap};

/// How the entries of a factor are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorLaw {
    Normal { mean: f64, sd: f64 },
    Uniform { half_width: f64 },
    /// `[I_q | 0]^T`: unit entries on the leading diagonal, zeros elsewhere.
    IdentityBlock,
}

impl FactorLaw {
    pub fn standard_normal() -> Self {
        Self::Normal { mean: 0.0, sd: 1.0 }
    }

    fn draw(&self, rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        Ok(match *self {
            FactorLaw::Normal { mean, sd } => {
                let law = Normal::new(mean, sd)
                    .map_err(|e| DmfError::InvalidArgument(format!("bad normal law: {e}")))?;
                DMatrix::from_fn(rows, cols, |_, _| scale * law.sample(rng))
            }
            FactorLaw::Uniform { half_width } => {
                if !(half_width > 0.0) {
                    return Err(DmfError::InvalidArgument("uniform half width must be positive".into()));
                }
                DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-half_width..half_width))
            }
            FactorLaw::IdentityBlock => {
                if rows < cols {
                    return Err(DmfError::InvalidArgument(format!(
                        "identity block needs at least {cols} rows, got {rows}"
                    )));
                }
                DMatrix::from_fn(rows, cols, |i, k| if i == k { scale } else { 0.0 })
            }
        })
    }
}

/// A generator of `X ~ F(m(center + Lambda V^T))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub name: String,
    pub family: Family,
    pub link: Link,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub lambda_law: FactorLaw,
    pub v_law: FactorLaw,
    /// Constant added to every entry of the linear predictor.
    pub center: f64,
    /// Multiplies every drawn factor entry.
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.q == 0 || self.q > self.n.min(self.p) {
            return Err(DmfError::InvalidArgument(format!(
                "design {} needs 1 <= q <= min(n, p), got n={}, p={}, q={}",
                self.name, self.n, self.p, self.q
            )));
        }
        if matches!(self.lambda_law, FactorLaw::IdentityBlock) && self.n < self.q {
            return Err(DmfError::InvalidArgument("identity block needs n >= q".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.center.is_finite()) {
            return Err(DmfError::InvalidArgument("sigma and center must be finite, sigma nonnegative".into()));
        }
        MeanMap::new(self.family, self.link)?;
        Ok(())
    }

    /// RNG for one replicate: the design seed selects the key and the
    /// replicate selects the stream.
    pub fn rng(&self, replicate: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate as u64);
        rng
    }
}

/// One simulated data set with the factors that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub data: DataMatrix,
    pub lambda: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub eta: DMatrix<f64>,
}

/// Draws replicate `replicate` of `design`; deterministic in
/// `(design.seed, replicate)`.
pub fn simulate_dmf(design: &SimDesign, replicate: usize) -> Result<SimDraw> {
    design.validate()?;
    let map = MeanMap::new(design.family, design.link)?;
    let mut rng = design.rng(replicate);
    let lambda = design.lambda_law.draw(design.n, design.q, design.sigma, &mut rng)?;
    let v = design.v_law.draw(design.p, design.q, design.sigma, &mut rng)?;
    let eta = (&lambda * v.transpose()).add_scalar(design.center);
    let (lo, hi) = map.eta_bounds();
    let clamped = eta.iter().filter(|&&e| e < lo || e > hi).count();
    if clamped > 0 {
        warn!(
            "design {} replicate {replicate}: {clamped} linear predictor entries fall outside the mean domain and were clamped",
            design.name
        );
    }
    let x = eta.map(|e| sample(&design.family, map.mean(e), &mut rng));
    Ok(SimDraw {
        data: DataMatrix::new(x),
        lambda,
        v,
        eta,
    })
}
