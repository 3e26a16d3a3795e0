//! The training loop.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use super::metrics::{evaluate_accuracy, mask_auc};
use super::optim::Adam;
use crate::autodiff::Tape;
use crate::envinfer::{assign_environments, random_environments};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, forward_plain, Batch, MaskMode, ModelConfig, ModelParams};
use crate::objective::{total_loss, GraphonBuffer, LossRecord, LossTerms, BUFFER_DECAY};
use crate::rng::{derive_seed, seeded};

const STREAM_INIT: u64 = 10;
const STREAM_SHUFFLE: u64 = 11;
const STREAM_ENVS: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    #[serde(rename = "L_sta")]
    pub stable: f64,
    #[serde(rename = "L_reg")]
    pub reg: f64,
    #[serde(rename = "L_sem")]
    pub sem: f64,
    #[serde(rename = "L_str")]
    pub structural: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    /// Running accuracy over the epoch's batches, before each step.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub mask_auc: Option<f64>,
    pub loss: LossSummary,
    pub rho: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<MetricRecord>,
    pub losses: Vec<LossRecord>,
    /// Environments used in each epoch, aligned with the training set.
    pub envs: Vec<Vec<usize>>,
    pub buffer: GraphonBuffer,
}

/// Mask mode under which a trained model of `mode` is evaluated.
pub fn eval_masks(mode: Mode) -> MaskMode {
    if mode.uses_masks() {
        MaskMode::Learned
    } else {
        MaskMode::Fixed(1.0)
    }
}

pub fn model_config(cfg: &RunConfig, train: &[Graph]) -> ModelConfig {
    ModelConfig {
        feature_dim: train.first().map_or(1, Graph::feature_dim),
        hidden: cfg.hidden,
        layers: cfg.layers,
        num_classes: cfg.num_classes,
    }
}

/// Environmental graph representations `h_en` of every graph.
pub fn env_representations(params: &ModelParams, graphs: &[Graph]) -> Array2<f64> {
    let mut out = Array2::zeros((graphs.len(), params.config.hidden));
    let refs: Vec<&Graph> = graphs.iter().collect();
    let mut row = 0;
    for chunk in refs.chunks(256) {
        let batch = Batch::new(chunk);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let f = forward(&mut tape, &p, &batch, MaskMode::Learned);
        let h = tape.value(f.h_en);
        out.slice_mut(ndarray::s![row..row + chunk.len(), ..]).assign(h);
        row += chunk.len();
    }
    out
}

fn argmax_row(logits: &Array2<f64>, r: usize) -> usize {
    let row = logits.row(r);
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains from a fresh initialization. Environments start random for
/// `warmup` epochs, then are re-inferred by K-means on `h_en` at the start of
/// every epoch; the graphon buffer restarts whenever they are re-inferred.
pub fn train(cfg: &RunConfig, train: &[Graph], test: Option<&[Graph]>) -> Result<TrainOutcome> {
    train_with(cfg, train, test, &mut |_, _| Ok(()))
}

/// [`train`] with a hook called after every epoch.
pub fn train_with(
    cfg: &RunConfig,
    train: &[Graph],
    test: Option<&[Graph]>,
    on_epoch: &mut dyn FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    let weights = cfg.weights();
    let mut params = ModelParams::init(model_config(cfg, train), derive_seed(cfg.seed, STREAM_INIT, 0), cfg.rho_init);
    let mut opt = Adam::new(cfg.lr, params.tensors());
    let mut buffer = GraphonBuffer::new(cfg.num_classes, cfg.envs, cfg.resolution, BUFFER_DECAY);
    let mut rng = seeded(derive_seed(cfg.seed, STREAM_SHUFFLE, 0));
    let ids: Vec<usize> = train.iter().map(|g| g.id).collect();
    let mut envs = random_environments(train.len(), cfg.envs, derive_seed(cfg.seed, STREAM_ENVS, 0));
    let mut outcome = TrainOutcome {
        params: params.clone(),
        history: Vec::new(),
        losses: Vec::new(),
        envs: Vec::new(),
        buffer: buffer.clone(),
    };
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        if cfg.mode.uses_masks() && epoch >= cfg.warmup && train.len() >= cfg.envs {
            let reps = env_representations(&params, train);
            envs = assign_environments(&reps, &ids, cfg.envs, derive_seed(cfg.seed, STREAM_ENVS, epoch as u64 + 1))?;
            buffer.clear();
        }
        outcome.envs.push(envs.clone());
        order.shuffle(&mut rng);

        let mut sums = LossSummary {
            stable: 0.0,
            reg: 0.0,
            sem: 0.0,
            structural: 0.0,
            total: 0.0,
        };
        let mut correct = 0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| &train[i]).collect();
            let batch_envs: Vec<usize> = chunk.iter().map(|&i| envs[i]).collect();
            let batch = Batch::new(&graphs);
            let mut tape = Tape::new();
            let pv = params.bind(&mut tape, true);
            let (terms, staged, logits) = if cfg.mode == Mode::Erm {
                let logits = forward_plain(&mut tape, &pv, &batch);
                let loss = tape.cross_entropy(logits, batch.labels.clone());
                let terms = LossTerms {
                    total: loss,
                    stable: tape.scalar(loss),
                    reg: 0.0,
                    sem: 0.0,
                    structural: 0.0,
                };
                (terms, None, logits)
            } else {
                let f = forward(&mut tape, &pv, &batch, MaskMode::Learned);
                let (terms, staged) = total_loss(&mut tape, &pv, &f, &batch, weights, Some((&buffer, &batch_envs)))?;
                (terms, staged, f.logits_st)
            };
            let total = tape.scalar(terms.total);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let lv = tape.value(logits);
            correct += (0..graphs.len()).filter(|&r| argmax_row(lv, r) == graphs[r].label).count();

            let mut grads = tape.backward(terms.total);
            let grads: Vec<Array2<f64>> = pv
                .vars
                .iter()
                .zip(params.tensors())
                .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Array2::zeros(t.dim())))
                .collect();
            opt.step(params.tensors_mut(), &grads);
            if let Some(s) = staged {
                buffer.commit(&tape, &s);
            }

            let record = LossRecord::new(step, &terms, total, params.rho());
            sums.stable += record.stable;
            sums.reg += record.reg;
            sums.sem += record.sem;
            sums.structural += record.structural;
            sums.total += record.total;
            outcome.losses.push(record);
            step += 1;
            batches += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let nb = batches.max(1) as f64;
        let last = epoch + 1 == cfg.epochs;
        let evaluate = last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
        let (test_accuracy, auc) = match (evaluate, test) {
            (true, Some(t)) if !t.is_empty() => {
                let acc = evaluate_accuracy(&params, t, eval_masks(cfg.mode));
                let auc = if cfg.mode.uses_masks() { mask_auc(&params, t).ok() } else { None };
                (Some(acc), auc)
            }
            _ => (None, None),
        };
        outcome.history.push(MetricRecord {
            epoch,
            train_accuracy: correct as f64 / train.len().max(1) as f64,
            test_accuracy,
            mask_auc: auc,
            loss: LossSummary {
                stable: sums.stable / nb,
                reg: sums.reg / nb,
                sem: sums.sem / nb,
                structural: sums.structural / nb,
                total: sums.total / nb,
            },
            rho: params.rho(),
            seconds: started.elapsed().as_secs_f64(),
        });
        on_epoch(epoch, &params)?;
    }
    outcome.params = params;
    outcome.buffer = buffer;
    Ok(outcome)
}
