// Zero weights hold entries out of the fit; predict them from the factors.
use dmf::{dmf_fit, DataMatrix, Family, Link, ModelSpec};
use nalgebra::DMatrix;

fn main() -> dmf::Result<()> {
    let (n, p) = (60, 12);
    let a = DMatrix::from_fn(n, 2, |i, k| ((i + 1) as f64 * (k + 2) as f64 * 0.37).sin());
    let b = DMatrix::from_fn(p, 2, |j, k| ((j + 3) as f64 * (k + 1) as f64 * 0.51).cos());
    let x = &a * b.transpose();
    let w = DMatrix::from_fn(n, p, |i, j| if (i * 7919 + j * 104729) % 13 == 0 { 0.0 } else { 1.0 });

    let data = DataMatrix::with_weights(x.clone(), w.clone())?;
    let spec = ModelSpec::new(Family::gaussian(), Link::Identity, 2).rel_tol(1e-12).max_iter(1000);
    let fit = dmf_fit(&data, &spec)?;

    let (mut sse, mut held) = (0.0, 0);
    for i in 0..n {
        for j in 0..p {
            if w[(i, j)] == 0.0 {
                sse += (fit.mu[(i, j)] - x[(i, j)]).powi(2);
                held += 1;
            }
        }
    }
    println!("{held} held-out entries, rmse {:.2e}", (sse / held as f64).sqrt());
    Ok(())
}
