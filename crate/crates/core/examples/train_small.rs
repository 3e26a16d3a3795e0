//! Trains UIL and the ERM baseline on a small SYN-b dataset and compares
//! test accuracy, edge-mask AUC and learned-stable graphon distances.

use graphinv::harness::{run_experiment, Mode, RunConfig};

fn main() -> graphinv::Result<()> {
    let out = std::env::temp_dir().join("graphinv-train-small");
    for mode in [Mode::Erm, Mode::Uil] {
        let mut cfg = RunConfig::default();
        cfg.mode = mode;
        cfg.epochs = 10;
        cfg.generator.num_train = 400;
        cfg.generator.num_test = 200;
        let report = run_experiment(&cfg, &out.join(mode.as_str()))?;
        let m = &report.final_metrics;
        print!("{mode}: test accuracy {:.3}", m.test_accuracy.unwrap_or(f64::NAN));
        if let Some(auc) = m.mask_auc {
            print!(", mask AUC {auc:.3}, rho {:.3}", m.rho);
        }
        println!();
        for (source, d) in &report.dis {
            println!("  Dis {source}: {:.4}", d.mean);
        }
    }
    println!("artifacts under {}", out.display());
    Ok(())
}
