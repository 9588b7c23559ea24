//! A small power grid: how often the test rejects a wrong family.
use dmf::simlab::{power_families, run_power_grid, PowerGrid};

fn main() -> dmf::Result<()> {
    let families = power_families();
    let grid = PowerGrid {
        generators: vec![families[0].clone(), families[3].clone()],
        fits: vec![families[0].clone(), families[3].clone()],
        sizes: vec![(200, 20)],
        sigmas: vec![0.5],
        replicates: 10,
        ..PowerGrid::full()
    };
    let (_, entries) = run_power_grid(&grid)?;
    for e in entries {
        println!("generator {:<10} fit {:<10} rejection rate {:?}", e.generator, e.fit, e.power);
    }
    Ok(())
}
