// Split a fit into a column-mean part and a residual factorization.
use dmf::simlab::{simulate_dmf, FactorLaw, SimDesign};
use dmf::{center, dmf_fit, Family, Link, ModelSpec};
use nalgebra::DMatrix;

fn main() -> dmf::Result<()> {
    let design = SimDesign {
        name: "centered".into(),
        family: Family::poisson(),
        link: Link::Log,
        n: 200,
        p: 15,
        q: 2,
        lambda_law: FactorLaw::standard_normal(),
        v_law: FactorLaw::Normal { mean: 0.0, sd: 0.4 },
        center: 1.5,
        sigma: 1.0,
        replicates: 1,
        seed: 5,
    };
    let draw = simulate_dmf(&design, 0)?;
    let raw = dmf_fit(&draw.data, &ModelSpec::new(Family::poisson(), Link::Log, 3))?;
    let ones = DMatrix::from_element(200, 1, 1.0);
    // keeping the full residual rank reproduces the fit exactly
    let full = center(&raw, &ones, None)?;
    let centered = center(&raw, &ones, Some(2))?;

    println!("column effects (first 5) {:?}", &centered.v0.column(0).as_slice()[..5]);
    println!("residual singular values {:?}", centered.residual.d.as_slice());
    println!("max |eta difference|, full residual {:.2e}", (&full.eta() - &raw.eta).amax());
    println!("max |eta difference|, rank 2 residual {:.2e}", (&centered.eta() - &raw.eta).amax());
    Ok(())
}
