//! Draws from each family at a given mean.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};

use crate::family::{Family, FamilyKind};

/// One observation with mean `mu`.
///
/// Negative binomial draws are a gamma-Poisson mixture; binomial draws are
/// a success count over `trials` divided by `trials`.
pub fn sample<R: Rng + ?Sized>(family: &Family, mu: f64, rng: &mut R) -> f64 {
    let phi = family.dispersion();
    match family.kind() {
        FamilyKind::Gaussian => mu + phi.sqrt() * Normal::new(0.0, 1.0).expect("unit normal").sample(rng),
        FamilyKind::Poisson => poisson(mu, rng),
        FamilyKind::Gamma => Gamma::new(1.0 / phi, mu * phi).expect("positive shape and scale").sample(rng),
        FamilyKind::NegativeBinomial => {
            let rate = Gamma::new(phi, mu / phi).expect("positive shape and scale").sample(rng);
            poisson(rate, rng)
        }
        FamilyKind::Binomial => {
            let trials = family.trials().round().max(1.0);
            let p = mu.clamp(0.0, 1.0);
            Binomial::new(trials as u64, p).expect("probability in range").sample(rng) as f64 / trials
        }
    }
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng)
}
