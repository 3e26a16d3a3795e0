//! Cut norm and cut distance between small step functions.

use graphinv::graphon::{cut_distance, cut_norm_exact, cut_norm_naive, graphon_l2, CutMode, StepFunction};
use ndarray::array;

fn main() -> graphinv::Result<()> {
    let a = StepFunction::new(array![[0.9, 0.1, 0.2], [0.1, 0.8, 0.1], [0.2, 0.1, 0.3]]);
    let b = a.permuted(&[2, 0, 1]);
    let c = StepFunction::new(array![[0.5, 0.5, 0.5], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]);

    let d = a.values() - c.values();
    println!("cut norm of a - c: exact {:.6}, naive {:.6}", cut_norm_exact(&d)?, cut_norm_naive(&d)?);
    println!("a vs relabelled a: {:.2e}", cut_distance(&a, &b, CutMode::Exact)?);
    for (name, mode) in [("exact", CutMode::Exact), ("anneal", CutMode::Anneal)] {
        println!("a vs constant ({name}): {:.6}", cut_distance(&a, &c, mode)?);
    }
    println!("L2 upper bound: {:.6}", graphon_l2(&a, &c)?);
    Ok(())
}
