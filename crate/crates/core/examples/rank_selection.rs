//! Eigengap rank selection on a high-rank Poisson fit.
use dmf::simlab::{simulate_dmf, FactorLaw, SimDesign};
use dmf::{dmf_fit, eigen_profile, estimate_rank, Family, Link, ModelSpec, ProfileMode};

fn main() -> dmf::Result<()> {
    let design = SimDesign {
        name: "rank".into(),
        family: Family::poisson(),
        link: Link::Log,
        n: 400,
        p: 30,
        q: 4,
        lambda_law: FactorLaw::standard_normal(),
        v_law: FactorLaw::Normal { mean: 0.0, sd: 0.5 },
        center: 2.0,
        sigma: 1.0,
        replicates: 1,
        seed: 3,
    };
    let draw = simulate_dmf(&design, 0)?;
    let raw = dmf_fit(&draw.data, &ModelSpec::new(Family::poisson(), Link::Log, 30))?;
    let eig = eigen_profile(&raw.eta, ProfileMode::Covariance);
    let report = estimate_rank(&eig, 25)?;
    println!("leading eigenvalues {:?}", &eig[..6]);
    println!("delta {:.3}, estimated rank {} (true {})", report.delta, report.q_hat, design.q);
    Ok(())
}
