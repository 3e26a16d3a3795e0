//! Estimates the graphon of noisy samples from a fixed block law and compares
//! it with the predicted mixture `W + p(1 - W)` at several noise levels.

use graphinv::harness::check::{eight_block_law, noise_mixture_deviation};

fn main() -> graphinv::Result<()> {
    let law = eight_block_law();
    for p in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let dev = noise_mixture_deviation(&law, p, 200, 64, 0)?;
        println!("p = {p:.2}: mean absolute deviation {dev:.4}");
    }
    Ok(())
}
