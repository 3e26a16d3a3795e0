//! Finite-difference check of the full training objective.

use graphinv::harness::check::full_loss_grad_check;

fn main() -> graphinv::Result<()> {
    let report = full_loss_grad_check(0, 60)?;
    println!(
        "{} parameters checked, max relative error {:.2e} (worst: analytic {:.6e}, numeric {:.6e})",
        report.checked, report.max_rel_err, report.analytic, report.numeric
    );
    Ok(())
}
