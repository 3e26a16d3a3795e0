//! Training objective: stable cross-entropy, mask-ratio regularizer,
//! semantic mixing loss and the cross-environment structural loss.

use std::io::Write;
use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ScatterTerm, Tape, Var};
use crate::error::{Error, Result};
use crate::graphon::{BlockLayout, StepFunction};
use crate::model::{Batch, ForwardVars, ParamVars};

pub const MASK_THRESHOLD: f64 = 0.5;
pub const BUFFER_DECAY: f64 = 0.9;
pub const BUFFER_RESOLUTION: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy of the stable logits.
pub fn loss_stable(tape: &mut Tape, f: &ForwardVars, batch: &Batch) -> Var {
    tape.cross_entropy(f.logits_st, batch.labels.clone())
}

/// `r(M, k, ρ) = |ΣM/k − ρ| + |#{M > τ}/k − ρ|` for node and edge masks,
/// averaged over graphs. The count term carries no gradient to the masks.
/// Graphs without edges contribute no edge term.
pub fn loss_reg(tape: &mut Tape, f: &ForwardVars, batch: &Batch, rho: Var) -> Var {
    let b = batch.num_graphs;
    let neg_rho = tape.affine(rho, -1.0, 0.0);

    let node_vals = tape.value(f.node_mask).clone();
    let mut node_frac = vec![0.0; b];
    for (i, &k) in batch.node_graph.iter().enumerate() {
        if node_vals[[i, 0]] > MASK_THRESHOLD {
            node_frac[k] += batch.inv_node_count[k];
        }
    }
    let node_sum = tape.segment_sum(f.node_mask, batch.node_graph.clone(), b);
    let node_mean = tape.scale_rows(node_sum, batch.inv_node_count.clone());
    let node_soft = tape.add_scalar(node_mean, neg_rho);
    let node_soft = tape.abs(node_soft);
    let node_hard = tape.constant(Array2::from_shape_vec((b, 1), node_frac).expect("shape"));
    let node_hard = tape.add_scalar(node_hard, neg_rho);
    let node_hard = tape.abs(node_hard);
    let node_terms = tape.add(node_soft, node_hard);
    let mut total = tape.sum(node_terms);

    // Compact segment ids over graphs that have edges.
    let with_edges: Vec<usize> = (0..b).filter(|&k| !batch.edge_range(k).is_empty()).collect();
    if !with_edges.is_empty() {
        let mut compact = vec![usize::MAX; b];
        for (c, &k) in with_edges.iter().enumerate() {
            compact[k] = c;
        }
        let seg: Rc<[usize]> = batch.edge_graph.iter().map(|&k| compact[k]).collect();
        let inv: Rc<[f64]> = with_edges.iter().map(|&k| 1.0 / batch.edge_range(k).len() as f64).collect();
        let edge_vals = tape.value(f.edge_mask).clone();
        let mut edge_frac = vec![0.0; with_edges.len()];
        for (e, &c) in seg.iter().enumerate() {
            if edge_vals[[e, 0]] > MASK_THRESHOLD {
                edge_frac[c] += inv[c];
            }
        }
        let m = with_edges.len();
        let edge_sum = tape.segment_sum(f.edge_mask, seg, m);
        let edge_mean = tape.scale_rows(edge_sum, inv);
        let edge_soft = tape.add_scalar(edge_mean, neg_rho);
        let edge_soft = tape.abs(edge_soft);
        let edge_hard = tape.constant(Array2::from_shape_vec((m, 1), edge_frac).expect("shape"));
        let edge_hard = tape.add_scalar(edge_hard, neg_rho);
        let edge_hard = tape.abs(edge_hard);
        let edge_terms = tape.add(edge_soft, edge_hard);
        let edge_total = tape.sum(edge_terms);
        total = tape.add(total, edge_total);
    }
    tape.affine(total, 1.0 / b as f64, 0.0)
}

/// `(1/B) Σ_i (1/B) Σ_j CE(ω(h_st_i + h_en_j), y_i)` over the batch.
pub fn loss_sem(tape: &mut Tape, p: &ParamVars, h_st: Var, h_en: Var, labels: &[usize]) -> Result<Var> {
    let b = labels.len();
    if b == 0 {
        return Err(Error::EmptyGroup);
    }
    let rows_i: Rc<[usize]> = (0..b * b).map(|r| r / b).collect();
    let rows_j: Rc<[usize]> = (0..b * b).map(|r| r % b).collect();
    let pair_labels: Rc<[usize]> = (0..b * b).map(|r| labels[r / b]).collect();
    let st = tape.gather_rows(h_st, rows_i);
    let en = tape.gather_rows(h_en, rows_j);
    let mixed = tape.add(st, en);
    let logits = p.classify(tape, mixed);
    Ok(tape.cross_entropy(logits, pair_labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferCell {
    pub graphon: StepFunction,
    pub count: usize,
}

/// EMA graphon estimates per `(class, inferred environment)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphonBuffer {
    pub decay: f64,
    pub resolution: usize,
    pub num_classes: usize,
    pub num_envs: usize,
    cells: Vec<Option<BufferCell>>,
}

impl GraphonBuffer {
    pub fn new(num_classes: usize, num_envs: usize, resolution: usize, decay: f64) -> Self {
        GraphonBuffer {
            decay,
            resolution,
            num_classes,
            num_envs,
            cells: vec![None; num_classes * num_envs],
        }
    }

    pub fn cell(&self, class: usize, env: usize) -> Option<&BufferCell> {
        self.cells[class * self.num_envs + env].as_ref()
    }

    pub fn clear(&mut self) {
        self.cells.iter_mut().for_each(|c| *c = None);
    }

    /// `buf ← γ·buf + (1−γ)·estimate`; an empty cell takes the estimate.
    pub fn update(&mut self, class: usize, env: usize, estimate: &StepFunction, samples: usize) -> Result<()> {
        if estimate.resolution() != self.resolution {
            return Err(Error::ResolutionMismatch(estimate.resolution(), self.resolution));
        }
        let decay = self.decay;
        let cell = &mut self.cells[class * self.num_envs + env];
        *cell = Some(match cell.take() {
            None => BufferCell {
                graphon: estimate.clone(),
                count: samples,
            },
            Some(old) => BufferCell {
                graphon: StepFunction::new(old.graphon.values() * decay + estimate.values() * (1.0 - decay)),
                count: old.count + samples,
            },
        });
        Ok(())
    }

    /// `Σ_y Σ_{e<e'} ||W_{y,e} − W_{y,e'}||_F` over populated pairs.
    pub fn structural_loss(&self) -> f64 {
        let mut total = 0.0;
        for y in 0..self.num_classes {
            for a in 0..self.num_envs {
                for b in (a + 1)..self.num_envs {
                    if let (Some(x), Some(z)) = (self.cell(y, a), self.cell(y, b)) {
                        let d = x.graphon.values() - z.graphon.values();
                        total += d.mapv(|v| v * v).sum().sqrt();
                    }
                }
            }
        }
        total
    }

    /// Records this batch's buffer update on the tape. New group estimates are
    /// linear in the edge-mask values; the alignment orders are constants.
    /// Graphs with fewer nodes than the resolution are left out.
    pub fn stage(&self, tape: &mut Tape, batch: &Batch, edge_mask: Var, envs: &[usize]) -> StagedBuffer {
        let n = self.resolution;
        let masks = tape.value(edge_mask).clone();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.cells.len()];
        for k in 0..batch.num_graphs {
            if batch.node_count[k] >= n {
                groups[batch.labels[k] * self.num_envs + envs[k]].push(k);
            }
        }
        let mut vars = Vec::with_capacity(self.cells.len());
        let mut counts = Vec::with_capacity(self.cells.len());
        for (c, members) in groups.iter().enumerate() {
            let old = self.cells[c].as_ref();
            counts.push(old.map_or(0, |o| o.count) + members.len());
            if members.is_empty() {
                vars.push(old.map(|o| tape.constant(o.graphon.values().clone())));
                continue;
            }
            let mut terms = Vec::new();
            let share = 1.0 / members.len() as f64;
            for &k in members {
                let order = self.graph_order(batch, &masks, k);
                let layout = BlockLayout::new(batch.node_count[k], n).expect("size checked");
                let mut position = vec![0; order.len()];
                for (p, &i) in order.iter().enumerate() {
                    position[i] = p;
                }
                let off = batch.node_offset[k];
                for e in batch.edge_range(k) {
                    let (i, j) = batch.edges[e];
                    let a = layout.block_of[position[i - off]];
                    let b = layout.block_of[position[j - off]];
                    for (r, s) in [(a, b), (b, a)] {
                        terms.push(ScatterTerm {
                            row: e,
                            cell: r * n + s,
                            coef: share / layout.pair_counts[[r, s]],
                        });
                    }
                }
            }
            let estimate = tape.scatter(edge_mask, terms.into(), (n, n));
            vars.push(Some(match old {
                None => estimate,
                Some(o) => {
                    let kept = tape.constant(o.graphon.values() * self.decay);
                    let fresh = tape.affine(estimate, 1.0 - self.decay, 0.0);
                    tape.add(kept, fresh)
                }
            }));
        }
        StagedBuffer { vars, counts }
    }

    fn graph_order(&self, batch: &Batch, masks: &Array2<f64>, k: usize) -> Vec<usize> {
        let off = batch.node_offset[k];
        let mut scores = vec![0.0; batch.node_count[k]];
        for e in batch.edge_range(k) {
            let (i, j) = batch.edges[e];
            scores[i - off] += masks[[e, 0]];
            scores[j - off] += masks[[e, 0]];
        }
        crate::graph::alignment_order(&scores)
    }

    /// Stores the staged values, detached from the tape.
    pub fn commit(&mut self, tape: &Tape, staged: &StagedBuffer) {
        for (c, v) in staged.vars.iter().enumerate() {
            self.cells[c] = v.map(|v| BufferCell {
                graphon: StepFunction::new(tape.value(v).clone()),
                count: staged.counts[c],
            });
        }
    }
}

/// Buffer state for one gradient step, as tape variables.
#[derive(Debug, Clone)]
pub struct StagedBuffer {
    vars: Vec<Option<Var>>,
    counts: Vec<usize>,
}

/// Frobenius structural loss over staged buffers; `None` when no class has
/// two populated environments.
pub fn loss_str(tape: &mut Tape, buf: &GraphonBuffer, staged: &StagedBuffer) -> Option<Var> {
    let mut total: Option<Var> = None;
    for y in 0..buf.num_classes {
        for a in 0..buf.num_envs {
            for b in (a + 1)..buf.num_envs {
                let (x, z) = (staged.vars[y * buf.num_envs + a], staged.vars[y * buf.num_envs + b]);
                if let (Some(x), Some(z)) = (x, z) {
                    let d = tape.sub(x, z);
                    let sq = tape.square(d);
                    let s = tape.sum(sq);
                    let norm = tape.sqrt(s);
                    total = Some(match total {
                        None => norm,
                        Some(t) => tape.add(t, norm),
                    });
                }
            }
        }
    }
    total
}

/// Tape handles and values of each term of one step.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub stable: f64,
    pub reg: f64,
    pub sem: f64,
    pub structural: f64,
}

/// `L = L_sta + L_reg + α·L_str + β·L_sem`. Terms with zero weight are not
/// built. The buffer is staged only when `α > 0`.
pub fn total_loss(
    tape: &mut Tape,
    p: &ParamVars,
    f: &ForwardVars,
    batch: &Batch,
    weights: LossWeights,
    buffer: Option<(&GraphonBuffer, &[usize])>,
) -> Result<(LossTerms, Option<StagedBuffer>)> {
    let sta = loss_stable(tape, f, batch);
    let rho = tape.sigmoid(p.rho_raw());
    let reg = loss_reg(tape, f, batch, rho);
    let mut total = tape.add(sta, reg);
    let mut terms = LossTerms {
        total,
        stable: tape.scalar(sta),
        reg: tape.scalar(reg),
        sem: 0.0,
        structural: 0.0,
    };
    if weights.beta > 0.0 {
        let sem = loss_sem(tape, p, f.h_st, f.h_en, &batch.labels)?;
        terms.sem = tape.scalar(sem);
        let w = tape.affine(sem, weights.beta, 0.0);
        total = tape.add(total, w);
    }
    let mut staged = None;
    if let (true, Some((buf, envs))) = (weights.alpha > 0.0, buffer) {
        let s = buf.stage(tape, batch, f.edge_mask, envs);
        if let Some(l) = loss_str(tape, buf, &s) {
            terms.structural = tape.scalar(l);
            let w = tape.affine(l, weights.alpha, 0.0);
            total = tape.add(total, w);
        }
        staged = Some(s);
    }
    terms.total = total;
    Ok((terms, staged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(rename = "L_sta")]
    pub stable: f64,
    #[serde(rename = "L_reg")]
    pub reg: f64,
    #[serde(rename = "L_sem")]
    pub sem: f64,
    #[serde(rename = "L_str")]
    pub structural: f64,
    pub total: f64,
    pub rho: f64,
}

impl LossRecord {
    pub fn new(step: usize, terms: &LossTerms, total: f64, rho: f64) -> Self {
        LossRecord {
            step,
            stable: terms.stable,
            reg: terms.reg,
            sem: terms.sem,
            structural: terms.structural,
            total,
            rho,
        }
    }

    pub fn write_line(&self, out: &mut impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, self)?;
        out.write_all(b"\n")
    }
}
