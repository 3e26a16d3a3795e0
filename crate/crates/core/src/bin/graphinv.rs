use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graphinv::graph::{read_jsonl, validate_graph};
use graphinv::graphon::CutMode;
use graphinv::harness::check::run_all;
use graphinv::harness::experiment::generate_dataset;
use graphinv::harness::metrics::{dis_table_from, group_graphons};
use graphinv::harness::{evaluate_accuracy, mask_auc, run_experiment, FeatureSource, RunConfig};
use graphinv::model::{load_checkpoint, MaskMode};
use graphinv::synth::{GeneratorConfig, SynthMode};
use graphinv::Result;

#[derive(Parser)]
#[command(name = "graphinv", about = "Stable-feature graph classification under distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, default_value = "synb")]
        mode: SynthMode,
        #[arg(long, default_value_t = 0.7)]
        bias: f64,
        #[arg(long, default_value_t = 0.005)]
        p_train: f64,
        #[arg(long, default_value_t = 0.015)]
        p_test: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        num_train: Option<usize>,
        #[arg(long)]
        num_test: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate and write a report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. `--set epochs=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Accuracy and mask AUC of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate the plain classifier (for models trained in erm mode).
        #[arg(long)]
        plain: bool,
    },
    /// Group graphons by class and environment plus their distance table.
    Graphon {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "label,env")]
        by: String,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value = "exact")]
        mode: CutMode,
        #[arg(long, default_value = "full")]
        source: FeatureSource,
        /// Model for the learned_stable source.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Directory for the CSV matrices.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(path: &Path, num_classes: usize) -> Result<Vec<graphinv::graph::Graph>> {
    read_jsonl(path)?.into_iter().map(|g| validate_graph(g, num_classes)).collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen {
            mode,
            bias,
            p_train,
            p_test,
            seed,
            num_train,
            num_test,
            out,
        } => {
            let defaults = GeneratorConfig::default();
            let cfg = GeneratorConfig {
                mode,
                bias,
                p_train,
                p_test,
                seed,
                num_train: num_train.unwrap_or(defaults.num_train),
                num_test: num_test.unwrap_or(defaults.num_test),
                ..defaults
            };
            cfg.validate()?;
            let (train, test) = generate_dataset(&cfg, &out)?;
            println!("wrote {} train and {} test graphs to {}", train.len(), test.len(), out.display());
        }
        Command::Train { config, out, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let report = run_experiment(&cfg, &out)?;
            let m = &report.final_metrics;
            println!("mode {} seed {}", cfg.mode, cfg.seed);
            println!("train accuracy {:.4}", m.train_accuracy);
            if let Some(a) = m.test_accuracy {
                println!("test accuracy {a:.4}");
            }
            if let Some(a) = m.mask_auc {
                println!("test mask AUC {a:.4}");
            }
            for (source, d) in &report.dis {
                println!("Dis {source} {:.4}", d.mean);
            }
            println!("report {}", out.join("report.json").display());
        }
        Command::Eval { ckpt, data, plain } => {
            let (params, _) = load_checkpoint(&ckpt)?;
            let graphs = load(&data, params.config.num_classes)?;
            let masks = if plain { MaskMode::Fixed(1.0) } else { MaskMode::Learned };
            let acc = evaluate_accuracy(&params, &graphs, masks);
            let auc = if plain { None } else { mask_auc(&params, &graphs).ok() };
            let out = serde_json::json!({ "graphs": graphs.len(), "accuracy": acc, "mask_auc": auc });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
        }
        Command::Graphon {
            data,
            by,
            n,
            mode,
            source,
            ckpt,
            out,
        } => {
            let keys: Vec<&str> = by.split(',').map(str::trim).collect();
            let by_env = match keys.as_slice() {
                ["label", "env"] | ["env", "label"] => true,
                ["label"] => false,
                _ => {
                    return Err(graphinv::Error::Unknown {
                        kind: "grouping",
                        value: by,
                    })
                }
            };
            let params = ckpt.map(|p| load_checkpoint(&p)).transpose()?.map(|(p, _)| p);
            let classes = params.as_ref().map_or(usize::MAX, |p| p.config.num_classes);
            let mut graphs = load(&data, classes)?;
            if !by_env {
                graphs.iter_mut().for_each(|g| g.env = Some(0));
            }
            let graphons = group_graphons(&graphs, source, params.as_ref(), n)?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir).map_err(|e| graphinv::Error::io(dir, e))?;
            }
            for ((y, e), w) in &graphons {
                match &out {
                    Some(dir) => {
                        let path = dir.join(format!("{source}-y{y}-e{e}.csv"));
                        std::fs::write(&path, w.to_csv()).map_err(|e| graphinv::Error::io(&path, e))?;
                    }
                    None => print!("# label {y} env {e}\n{}", w.to_csv()),
                }
            }
            if by_env {
                let table = dis_table_from(&graphons, source, n, mode)?;
                let out = serde_json::json!({ "mean": table.off_diagonal_mean(), "table": table });
                println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            }
        }
        Command::Check { seed } => {
            let results = run_all(seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
