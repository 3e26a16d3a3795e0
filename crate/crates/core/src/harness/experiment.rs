//! End-to-end runs: data, training, evaluation and the files they leave behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{default_cut_mode, dis_table_from, evaluate_accuracy, group_graphons, mask_auc, DisTable, FeatureSource};
use super::train::{eval_masks, train_with};
use crate::envinfer::adjusted_rand_index;
use crate::error::{Error, Result};
use crate::graph::{read_jsonl, validate_graph, write_jsonl, Graph};
use crate::model::save_checkpoint;
use crate::synth::{synthesize, GeneratorConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub mask_auc: Option<f64>,
    pub rho: f64,
    /// Adjusted Rand index of the last inferred environments against the
    /// generator's tags on the training set.
    pub env_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisSummary {
    pub mean: f64,
    pub table: DisTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: RunConfig,
    pub num_train: usize,
    pub num_test: usize,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    /// Distance tables on the test split keyed by feature source.
    pub dis: BTreeMap<String, DisSummary>,
    pub timing: Timing,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Generates a dataset and writes `train.jsonl`, `test.jsonl` and
/// `gen-manifest.json` into `dir`.
pub fn generate_dataset(config: &GeneratorConfig, dir: &Path) -> Result<(Vec<Graph>, Vec<Graph>)> {
    let (train, test) = synthesize(config)?;
    create_dir(dir)?;
    write_jsonl(&dir.join("train.jsonl"), &train)?;
    write_jsonl(&dir.join("test.jsonl"), &test)?;
    let manifest = serde_json::to_string_pretty(config).expect("config serializes");
    write_file(&dir.join("gen-manifest.json"), manifest + "\n")?;
    Ok((train, test))
}

fn load_split(path: &Path, num_classes: usize) -> Result<Vec<Graph>> {
    read_jsonl(path)?.into_iter().map(|g| validate_graph(g, num_classes)).collect()
}

/// Training and test graphs of a run, generated into `out/data` when the
/// config names no files.
pub fn load_data(cfg: &RunConfig, out: &Path) -> Result<(Vec<Graph>, Vec<Graph>)> {
    match &cfg.train {
        Some(path) => {
            let train = load_split(path, cfg.num_classes)?;
            let test = match &cfg.test {
                Some(t) => load_split(t, cfg.num_classes)?,
                None => Vec::new(),
            };
            Ok((train, test))
        }
        None => {
            let mut gen = cfg.generator.clone();
            gen.num_classes = cfg.num_classes;
            generate_dataset(&gen, &out.join("data"))
        }
    }
}

fn write_jsonl_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("record serializes");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs data → train → evaluate → distance tables and writes
/// `report.json`, `metrics.jsonl`, `losses.jsonl`, `checkpoints/`,
/// `graphons/` and `envs/envs-epochN.csv` under `out`.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<Report> {
    cfg.validate()?;
    let started = Instant::now();
    create_dir(out)?;
    let (train_set, test_set) = load_data(cfg, out)?;
    if train_set.is_empty() {
        return Err(Error::EmptyGroup);
    }

    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let train_started = Instant::now();
    let test_ref = (!test_set.is_empty()).then_some(test_set.as_slice());
    let outcome = train_with(cfg, &train_set, test_ref, &mut |epoch, params| {
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(&ckpt_dir.join(format!("epoch{}.ckpt", epoch + 1)), params, cfg.seed, epoch + 1)?;
        }
        Ok(())
    })?;
    let train_seconds = train_started.elapsed().as_secs_f64();
    let params = &outcome.params;
    save_checkpoint(&ckpt_dir.join("final.ckpt"), params, cfg.seed, cfg.epochs)?;

    write_jsonl_records(&out.join("metrics.jsonl"), &outcome.history)?;
    write_jsonl_records(&out.join("losses.jsonl"), &outcome.losses)?;
    let env_dir = out.join("envs");
    create_dir(&env_dir)?;
    for (epoch, envs) in outcome.envs.iter().enumerate() {
        let mut csv = String::from("graph_id,env\n");
        for (g, e) in train_set.iter().zip(envs) {
            csv.push_str(&format!("{},{}\n", g.id, e));
        }
        write_file(&env_dir.join(format!("envs-epoch{epoch}.csv")), csv)?;
    }

    let masks = eval_masks(cfg.mode);
    let with_flags = !test_set.is_empty() && test_set.iter().all(|g| g.stable_edge_flags.is_some());
    let with_env = !test_set.is_empty() && test_set.iter().all(|g| g.env.is_some());
    let env_agreement = match (outcome.envs.last(), train_set.iter().map(|g| g.env).collect::<Option<Vec<_>>>()) {
        (Some(inferred), Some(truth)) if cfg.mode.uses_masks() => Some(adjusted_rand_index(inferred, &truth)?),
        _ => None,
    };
    let final_metrics = FinalMetrics {
        train_accuracy: evaluate_accuracy(params, &train_set, masks),
        test_accuracy: (!test_set.is_empty()).then(|| evaluate_accuracy(params, &test_set, masks)),
        mask_auc: if cfg.mode.uses_masks() && with_flags { Some(mask_auc(params, &test_set)?) } else { None },
        rho: params.rho(),
        env_agreement,
    };

    let graphon_dir = out.join("graphons");
    create_dir(&graphon_dir)?;
    for y in 0..outcome.buffer.num_classes {
        for e in 0..outcome.buffer.num_envs {
            if let Some(cell) = outcome.buffer.cell(y, e) {
                write_file(&graphon_dir.join(format!("buffer-y{y}-e{e}.csv")), cell.graphon.to_csv())?;
            }
        }
    }
    let mut dis = BTreeMap::new();
    if with_env {
        let n = cfg.dis_resolution;
        for source in FeatureSource::ALL {
            let needs_flags = matches!(source, FeatureSource::GtStable | FeatureSource::GtEnv);
            if (needs_flags && !with_flags) || (source == FeatureSource::LearnedStable && !cfg.mode.uses_masks()) {
                continue;
            }
            let graphons = group_graphons(&test_set, source, Some(params), n)?;
            for ((y, e), w) in &graphons {
                write_file(&graphon_dir.join(format!("{source}-y{y}-e{e}.csv")), w.to_csv())?;
            }
            let table = dis_table_from(&graphons, source, n, default_cut_mode(n))?;
            dis.insert(
                source.to_string(),
                DisSummary {
                    mean: table.off_diagonal_mean(),
                    table,
                },
            );
        }
    }

    let report = Report {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        num_train: train_set.len(),
        num_test: test_set.len(),
        final_metrics,
        dis,
        timing: Timing {
            train_seconds,
            total_seconds: started.elapsed().as_secs_f64(),
        },
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out.join("report.json"), json + "\n")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Mode;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.generator.num_train = 48;
        cfg.generator.num_test = 24;
        cfg.generator.base_size = (12, 14);
        cfg.epochs = 2;
        cfg.warmup = 1;
        cfg.batch_size = 32;
        cfg.hidden = 6;
        cfg.layers = 1;
        cfg.resolution = 6;
        cfg.dis_resolution = 3;
        cfg.checkpoint_every = 1;
        cfg
    }

    fn without_timing(path: &Path) -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        v
    }

    #[test]
    fn writes_every_artifact_and_repeats() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let a = dir.path().join("a");
        let report = run_experiment(&cfg, &a).unwrap();
        for f in [
            "report.json",
            "metrics.jsonl",
            "losses.jsonl",
            "checkpoints/final.ckpt",
            "checkpoints/epoch1.ckpt",
            "envs/envs-epoch1.csv",
            "data/train.jsonl",
            "data/gen-manifest.json",
        ] {
            assert!(a.join(f).exists(), "{f}");
        }
        assert_eq!(report.schema_version, SCHEMA_VERSION);
        assert!(report.dis.contains_key("learned_stable"));
        assert!(report.final_metrics.mask_auc.is_some());

        let b = dir.path().join("b");
        run_experiment(&cfg, &b).unwrap();
        assert_eq!(without_timing(&a.join("report.json")), without_timing(&b.join("report.json")));
    }

    #[test]
    fn erm_report_has_no_mask_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.mode = Mode::Erm;
        let report = run_experiment(&cfg, dir.path()).unwrap();
        assert!(report.final_metrics.mask_auc.is_none());
        assert!(!report.dis.contains_key("learned_stable"));
        assert!(report.dis.contains_key("gt_stable"));
    }
}
