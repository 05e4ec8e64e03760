//! First-order eigenvalue formula on a random positive 5×5 matrix cocycle.

use quenched::perturb::{matrix_check, random_positive_cocycle, MaskRule};

fn main() -> Result<(), quenched::Error> {
    let cocycle = random_positive_cocycle(5, 7, (300, 300), &[1e-2, 1e-3, 1e-4], MaskRule::CoordinateWithGaps { period: 4 })?;
    let report = matrix_check(&cocycle, &[0, 1, 2, 3], 12, 200, 1e-8)?;
    for f in &report.fibers {
        println!("{f:?}");
    }
    println!("passed: {}", report.passed());
    Ok(())
}
