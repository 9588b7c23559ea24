//! Fit a rank-3 Poisson model to simulated counts and compare with the truth.
use dmf::simlab::{simulate_dmf, FactorLaw, SimDesign};
use dmf::{dmf_fit, CanonicalFit, Family, Link, ModelSpec};

fn main() -> dmf::Result<()> {
    let design = SimDesign {
        name: "poisson".into(),
        family: Family::poisson(),
        link: Link::Log,
        n: 300,
        p: 25,
        q: 3,
        lambda_law: FactorLaw::standard_normal(),
        v_law: FactorLaw::Normal { mean: 0.0, sd: 0.3 },
        center: 1.0,
        sigma: 1.0,
        replicates: 1,
        seed: 7,
    };
    let draw = simulate_dmf(&design, 0)?;
    // one extra rank absorbs the constant offset
    let spec = ModelSpec::new(Family::poisson(), Link::Log, 4);
    let raw = dmf_fit(&draw.data, &spec)?;
    let fit = CanonicalFit::from_raw(&raw);

    let err = (&fit.eta() - &draw.eta).abs().mean();
    println!("converged {} in {} cycles", raw.converged, raw.iterations);
    println!("deviance trace {:?}", &raw.deviance_trace[..raw.deviance_trace.len().min(5)]);
    println!("mean |eta_hat - eta| = {err:.4}");
    Ok(())
}
