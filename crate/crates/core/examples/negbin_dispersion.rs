//! Moment estimate of the negative binomial size, then a fit using it.
use dmf::family::{estimate_dispersion_mom, MomNumerator};
use dmf::simlab::{simulate_dmf, FactorLaw, SimDesign};
use dmf::{dmf_fit, Family, Link, ModelSpec};

fn main() -> dmf::Result<()> {
    let design = SimDesign {
        name: "negbin".into(),
        family: Family::negative_binomial(5.0),
        link: Link::Log,
        n: 400,
        p: 20,
        q: 2,
        lambda_law: FactorLaw::Normal { mean: 0.0, sd: 0.3 },
        v_law: FactorLaw::Normal { mean: 0.0, sd: 0.3 },
        center: 1.0,
        sigma: 1.0,
        replicates: 1,
        seed: 2,
    };
    let draw = simulate_dmf(&design, 0)?;
    let est = estimate_dispersion_mom(draw.data.entries(), MomNumerator::SquaredMean)?;
    println!("size estimate {:.3} (true 5), underdispersed: {}", est.value, est.underdispersed);

    let family = Family::negative_binomial(est.value);
    let raw = dmf_fit(&draw.data, &ModelSpec::new(family, Link::Log, 3))?;
    println!("deviance {:.2} after {} cycles", raw.deviance(), raw.iterations);
    Ok(())
}
