// Write a fit to disk and read it back.
use dmf::io::{read_fit, write_fit, FitMeta, StoredFit};
use dmf::{dmf_fit, CanonicalFit, DataMatrix, Family, Link, ModelSpec};
use nalgebra::DMatrix;

fn main() -> dmf::Result<()> {
    let x = DMatrix::from_fn(30, 6, |i, j| ((i + j) % 4) as f64);
    let data = DataMatrix::new(x);
    let spec = ModelSpec::new(Family::poisson(), Link::Log, 2);
    let fit = CanonicalFit::from_raw(&dmf_fit(&data, &spec)?);

    let dir = std::env::temp_dir().join("dmf-io-roundtrip");
    let stored = StoredFit::from_canonical(FitMeta::new(&spec, &fit, 30, 6), &fit);
    write_fit(&stored, &dir)?;
    let back = read_fit(&dir)?;
    println!("wrote {}", dir.display());
    println!("identical eta: {}", back.eta() == fit.eta());
    Ok(())
}
