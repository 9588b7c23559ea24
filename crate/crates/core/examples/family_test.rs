//! Goodness-of-fit test: the true Gamma family passes, a Gaussian fit does not.
use dmf::simlab::{simulate_dmf, FactorLaw, SimDesign};
use dmf::{dmf_fit, ghl_test, Family, GhlOptions, Link, ModelSpec};

fn main() -> dmf::Result<()> {
    let design = SimDesign {
        name: "gamma".into(),
        family: Family::gamma(1.0),
        link: Link::Log,
        n: 500,
        p: 20,
        q: 3,
        lambda_law: FactorLaw::Normal { mean: 1.0, sd: 0.3 },
        v_law: FactorLaw::Normal { mean: 0.0, sd: 0.3 },
        center: 0.0,
        sigma: 1.0,
        replicates: 1,
        seed: 11,
    };
    let draw = simulate_dmf(&design, 0)?;
    for (family, link) in [(Family::gamma(1.0), Link::Log), (Family::gaussian(), Link::Identity)] {
        let raw = dmf_fit(&draw.data, &ModelSpec::new(family, link, 3))?;
        let report = ghl_test(&draw.data, &raw.eta, &family, &link, &GhlOptions::default())?;
        println!(
            "{family:<12} statistic {:>12.2} on {} df  p = {:.3e}",
            report.statistic, report.df, report.p_value
        );
    }
    Ok(())
}
