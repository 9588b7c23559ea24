//! A Gaussian identity-link fit is a truncated SVD.
use dmf::{dmf_fit, CanonicalFit, DataMatrix, Family, Link, ModelSpec};
use nalgebra::DMatrix;

fn main() -> dmf::Result<()> {
    let x = DMatrix::from_fn(40, 8, |i, j| ((i * 7 + j * 3) % 11) as f64 + 0.1 * (i as f64).sin());
    let data = DataMatrix::new(x.clone());
    let spec = ModelSpec::new(Family::gaussian(), Link::Identity, 2).rel_tol(1e-12);
    let raw = dmf_fit(&data, &spec)?;
    let fit = CanonicalFit::from_raw(&raw);

    let svd = x.svd(false, false);
    println!("iterations     {}", raw.iterations);
    println!("fitted d       {:?}", fit.d.as_slice());
    println!("singular value {:?}", &svd.singular_values.as_slice()[..2]);
    Ok(())
}
