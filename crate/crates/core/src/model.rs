//! The stable-feature network.
//!
//! A dedicated extractor GIN produces node representations `Z`; two small
//! MLPs turn them into node and edge masks. A second GIN, the encoder `h`,
//! embeds the soft stable and environmental graphs, and a linear classifier
//! `ω` reads the stable embedding. Graphs are processed in batches laid out
//! as one disjoint union so each layer is a handful of dense matrix products.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, StableMasks};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 1,
            hidden: 32,
            layers: 3,
            num_classes: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct GinLayer {
    eps: usize,
    lin1: Linear,
    lin2: Linear,
}

#[derive(Debug, Clone)]
struct Arch {
    extractor: Vec<GinLayer>,
    encoder: Vec<GinLayer>,
    node_mask: [Linear; 2],
    edge_mask: [Linear; 2],
    classifier: Linear,
    rho_raw: usize,
}

enum Init {
    Uniform(usize),
    Zero,
}

#[derive(Default)]
struct Layout {
    specs: Vec<(String, (usize, usize), Init)>,
}

impl Layout {
    fn tensor(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.weight"), (fan_in, fan_out), Init::Uniform(fan_in)),
            b: self.tensor(format!("{name}.bias"), (1, fan_out), Init::Zero),
        }
    }

    fn gin(&mut self, prefix: &str, c: &ModelConfig) -> Vec<GinLayer> {
        (0..c.layers)
            .map(|l| {
                let input = if l == 0 { c.feature_dim } else { c.hidden };
                GinLayer {
                    eps: self.tensor(format!("{prefix}.{l}.eps"), (1, 1), Init::Zero),
                    lin1: self.linear(&format!("{prefix}.{l}.mlp.0"), input, c.hidden),
                    lin2: self.linear(&format!("{prefix}.{l}.mlp.1"), c.hidden, c.hidden),
                }
            })
            .collect()
    }

    fn build(c: &ModelConfig) -> (Arch, Vec<(String, (usize, usize), Init)>) {
        let mut l = Layout::default();
        let d = c.hidden;
        let arch = Arch {
            extractor: l.gin("extractor", c),
            encoder: l.gin("encoder", c),
            node_mask: [l.linear("node_mask.0", d, d), l.linear("node_mask.1", d, 1)],
            edge_mask: [l.linear("edge_mask.0", 2 * d, d), l.linear("edge_mask.1", d, 1)],
            classifier: l.linear("classifier", d, c.num_classes),
            rho_raw: l.tensor("rho_raw".into(), (1, 1), Init::Zero),
        };
        (arch, l.specs)
    }
}

/// All trainable tensors plus the architecture they index into.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
    arch: Arch,
}

impl ModelParams {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases and epsilons,
    /// `rho = rho_init`.
    pub fn init(config: ModelConfig, seed: u64, rho_init: f64) -> Self {
        let (arch, specs) = Layout::build(&config);
        let mut rng = seeded(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in specs {
            let t = match init {
                Init::Uniform(fan_in) => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    Array2::from_shape_fn(shape, |_| rng.gen_range(-a..a))
                }
                Init::Zero => Array2::zeros(shape),
            };
            names.push(name);
            tensors.push(t);
        }
        let mut p = ModelParams {
            config,
            names,
            tensors,
            arch,
        };
        p.set_rho(rho_init);
        p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn rho_index(&self) -> usize {
        self.arch.rho_raw
    }

    pub fn rho(&self) -> f64 {
        sigmoid(self.tensors[self.arch.rho_raw][[0, 0]])
    }

    pub fn set_rho(&mut self, rho: f64) {
        let rho = rho.clamp(1e-6, 1.0 - 1e-6);
        self.tensors[self.arch.rho_raw][[0, 0]] = (rho / (1.0 - rho)).ln();
    }

    /// Indices of the node-mask network tensors.
    pub fn node_mask_indices(&self) -> Vec<usize> {
        self.arch.node_mask.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Records every tensor on `tape`; trainable when `train` is set.
    pub fn bind(&self, tape: &mut Tape, train: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if train {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ParamVars {
            vars,
            arch: self.arch.clone(),
        }
    }
}

/// Parameters recorded on one tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    arch: Arch,
}

impl ParamVars {
    pub fn rho_raw(&self) -> Var {
        self.vars[self.arch.rho_raw]
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Linear) -> Var {
        let y = tape.matmul(x, self.vars[l.w]);
        tape.add_row(y, self.vars[l.b])
    }

    /// `ω(h)`.
    pub fn classify(&self, tape: &mut Tape, h: Var) -> Var {
        self.linear(tape, h, self.arch.classifier)
    }
}

/// A set of graphs laid out as one disjoint union.
#[derive(Debug, Clone)]
pub struct Batch {
    pub num_graphs: usize,
    pub labels: Rc<[usize]>,
    /// Graph index of each node.
    pub node_graph: Rc<[usize]>,
    pub node_offset: Vec<usize>,
    pub node_count: Vec<usize>,
    pub features: Array2<f64>,
    /// Undirected edges `(i, j)`, `i < j`, in global node ids, grouped by graph.
    pub edges: Vec<(usize, usize)>,
    pub edge_graph: Vec<usize>,
    pub edge_offset: Vec<usize>,
    /// Directed copies: the first half is `i → j`, the second `j → i`.
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    /// Maps each directed edge to its undirected edge.
    pub dir_to_edge: Rc<[usize]>,
    pub forward_half: Rc<[usize]>,
    pub backward_half: Rc<[usize]>,
    pub inv_node_count: Rc<[f64]>,
}

impl Batch {
    pub fn new(graphs: &[&Graph]) -> Batch {
        let mut node_graph = Vec::new();
        let mut node_offset = Vec::new();
        let mut node_count = Vec::new();
        let mut edges = Vec::new();
        let mut edge_graph = Vec::new();
        let mut edge_offset = Vec::new();
        let dx = graphs.first().map_or(1, |g| g.feature_dim());
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut features = Array2::zeros((total, dx));
        let mut offset = 0;
        for (k, g) in graphs.iter().enumerate() {
            let n = g.num_nodes();
            node_offset.push(offset);
            node_count.push(n);
            node_graph.extend(std::iter::repeat_n(k, n));
            features
                .slice_mut(ndarray::s![offset..offset + n, ..])
                .assign(&g.node_features);
            edge_offset.push(edges.len());
            for (i, j) in g.edges() {
                edges.push((offset + i, offset + j));
                edge_graph.push(k);
            }
            offset += n;
        }
        let e = edges.len();
        let src: Vec<usize> = edges.iter().map(|p| p.0).chain(edges.iter().map(|p| p.1)).collect();
        let dst: Vec<usize> = edges.iter().map(|p| p.1).chain(edges.iter().map(|p| p.0)).collect();
        let inv_node_count: Vec<f64> = node_count.iter().map(|&n| 1.0 / n as f64).collect();
        Batch {
            num_graphs: graphs.len(),
            labels: graphs.iter().map(|g| g.label).collect(),
            node_graph: node_graph.into(),
            node_offset,
            node_count,
            features,
            edges,
            edge_graph,
            edge_offset,
            src: src.into(),
            dst: dst.into(),
            dir_to_edge: (0..e).chain(0..e).collect(),
            forward_half: (0..e).collect(),
            backward_half: (e..2 * e).collect(),
            inv_node_count: inv_node_count.into(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_graph.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge range of graph `k` in [`Batch::edges`].
    pub fn edge_range(&self, k: usize) -> std::ops::Range<usize> {
        let end = self.edge_offset.get(k + 1).copied().unwrap_or(self.edges.len());
        self.edge_offset[k]..end
    }
}

/// Forces every mask entry to a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    Learned,
    Fixed(f64),
}

/// Tape handles produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `n×1` node mask.
    pub node_mask: Var,
    /// `E×1` symmetrized edge mask, one row per undirected edge.
    pub edge_mask: Var,
    pub h_st: Var,
    pub h_en: Var,
    pub logits_st: Var,
}

/// GIN over the batch with per-directed-edge weights `w_dir` (`2E×1`).
/// Returns node representations and mean-readout graph representations.
fn gin(
    tape: &mut Tape,
    p: &ParamVars,
    layers: &[GinLayer],
    batch: &Batch,
    features: Var,
    w_dir: Var,
) -> (Var, Var) {
    let mut h = features;
    for layer in layers {
        let agg = tape.edge_aggregate(h, w_dir, batch.src.clone(), batch.dst.clone());
        let scaled = tape.mul_scalar(h, p.vars[layer.eps]);
        let self_term = tape.add(h, scaled);
        let pre = tape.add(self_term, agg);
        let a = p.linear(tape, pre, layer.lin1);
        let a = tape.relu(a);
        let b = p.linear(tape, a, layer.lin2);
        h = tape.relu(b);
    }
    let pooled = tape.segment_sum(h, batch.node_graph.clone(), batch.num_graphs);
    let readout = tape.scale_rows(pooled, batch.inv_node_count.clone());
    (h, readout)
}

/// Encoder `h` on a soft graph.
pub fn encode(tape: &mut Tape, p: &ParamVars, batch: &Batch, features: Var, w_dir: Var) -> (Var, Var) {
    gin(tape, p, &p.arch.encoder, batch, features, w_dir)
}

/// Extractor GNN inside `Φ`, on the unmasked graph.
pub fn extract_nodes(tape: &mut Tape, p: &ParamVars, batch: &Batch) -> Var {
    let x = tape.constant(batch.features.clone());
    let ones = tape.constant(Array2::ones((2 * batch.num_edges(), 1)));
    gin(tape, p, &p.arch.extractor, batch, x, ones).0
}

/// Node mask `σ(Ψ1(z_i))` and symmetrized edge mask
/// `(σ(Ψ2([z_i,z_j])) + σ(Ψ2([z_j,z_i]))) / 2`.
pub fn mask_heads(tape: &mut Tape, p: &ParamVars, batch: &Batch, z: Var) -> (Var, Var) {
    let [n0, n1] = p.arch.node_mask;
    let a = p.linear(tape, z, n0);
    let a = tape.relu(a);
    let a = p.linear(tape, a, n1);
    let node_mask = tape.sigmoid(a);

    let [e0, e1] = p.arch.edge_mask;
    let zs = tape.gather_rows(z, batch.src.clone());
    let zd = tape.gather_rows(z, batch.dst.clone());
    let pair = tape.concat_cols(zs, zd);
    let b = p.linear(tape, pair, e0);
    let b = tape.relu(b);
    let b = p.linear(tape, b, e1);
    let raw = tape.sigmoid(b);
    let fwd = tape.gather_rows(raw, batch.forward_half.clone());
    let bwd = tape.gather_rows(raw, batch.backward_half.clone());
    let both = tape.add(fwd, bwd);
    let edge_mask = tape.affine(both, 0.5, 0.0);
    (node_mask, edge_mask)
}

/// Full forward pass: masks, stable/environmental embeddings, stable logits.
pub fn forward(tape: &mut Tape, p: &ParamVars, batch: &Batch, masks: MaskMode) -> ForwardVars {
    let (node_mask, edge_mask) = match masks {
        MaskMode::Learned => {
            let z = extract_nodes(tape, p, batch);
            mask_heads(tape, p, batch, z)
        }
        MaskMode::Fixed(v) => (
            tape.constant(Array2::from_elem((batch.num_nodes(), 1), v)),
            tape.constant(Array2::from_elem((batch.num_edges(), 1), v)),
        ),
    };
    let x = tape.constant(batch.features.clone());

    let x_st = tape.mul_col(x, node_mask);
    let w_st = tape.gather_rows(edge_mask, batch.dir_to_edge.clone());
    let (_, h_st) = encode(tape, p, batch, x_st, w_st);

    let node_env = tape.affine(node_mask, -1.0, 1.0);
    let edge_env = tape.affine(edge_mask, -1.0, 1.0);
    let x_en = tape.mul_col(x, node_env);
    let w_en = tape.gather_rows(edge_env, batch.dir_to_edge.clone());
    let (_, h_en) = encode(tape, p, batch, x_en, w_en);

    let logits_st = p.classify(tape, h_st);
    ForwardVars {
        node_mask,
        edge_mask,
        h_st,
        h_en,
        logits_st,
    }
}

/// Plain classifier `ω(h(g))` on the unmasked graph.
pub fn forward_plain(tape: &mut Tape, p: &ParamVars, batch: &Batch) -> Var {
    let x = tape.constant(batch.features.clone());
    let ones = tape.constant(Array2::ones((2 * batch.num_edges(), 1)));
    let (_, h) = encode(tape, p, batch, x, ones);
    p.classify(tape, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub node_reps: Array2<f64>,
    pub graph_rep: Array1<f64>,
}

/// Encoder `h` on a single graph with explicit symmetric edge weights.
pub fn gin_encode(g: &Graph, edge_weights: &Array2<f64>, params: &ModelParams) -> Result<Representations> {
    let n = g.num_nodes();
    if edge_weights.dim() != (n, n) {
        return Err(Error::Dimension(format!(
            "edge weights {:?} for {n} nodes",
            edge_weights.dim()
        )));
    }
    if g.feature_dim() != params.config.feature_dim {
        return Err(Error::Dimension(format!(
            "feature dim {} vs model {}",
            g.feature_dim(),
            params.config.feature_dim
        )));
    }
    let batch = Batch::new(&[g]);
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let w: Array2<f64> = Array2::from_shape_fn((2 * batch.num_edges(), 1), |(e, _)| {
        let (i, j) = batch.edges[batch.dir_to_edge[e]];
        if e < batch.num_edges() {
            edge_weights[[i, j]]
        } else {
            edge_weights[[j, i]]
        }
    });
    let w = tape.constant(w);
    let x = tape.constant(batch.features.clone());
    let (z, h) = encode(&mut tape, &p, &batch, x, w);
    Ok(Representations {
        node_reps: tape.value(z).clone(),
        graph_rep: tape.value(h).row(0).to_owned(),
    })
}

/// Masks of a single graph from given extractor node representations.
pub fn extract_masks(z: &Array2<f64>, g: &Graph, params: &ModelParams) -> Result<StableMasks> {
    if z.nrows() != g.num_nodes() || z.ncols() != params.config.hidden {
        return Err(Error::Dimension(format!("node reps {:?}", z.dim())));
    }
    let batch = Batch::new(&[g]);
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let zv = tape.constant(z.clone());
    let (nm, em) = mask_heads(&mut tape, &p, &batch, zv);
    Ok(masks_of_graph(g, &batch, 0, tape.value(nm), tape.value(em)))
}

/// Per-graph dense masks from batch-level mask columns.
pub fn masks_of_graph(g: &Graph, batch: &Batch, k: usize, node_mask: &Array2<f64>, edge_mask: &Array2<f64>) -> StableMasks {
    let n = g.num_nodes();
    let off = batch.node_offset[k];
    let mut em = Array2::zeros((n, n));
    for e in batch.edge_range(k) {
        let (i, j) = batch.edges[e];
        em[[i - off, j - off]] = edge_mask[[e, 0]];
        em[[j - off, i - off]] = edge_mask[[e, 0]];
    }
    StableMasks {
        node_mask: Array1::from_shape_fn(n, |i| node_mask[[off + i, 0]]),
        edge_mask: em,
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub masks: StableMasks,
    pub h_st: Array1<f64>,
    pub h_en: Array1<f64>,
    pub logits_st: Array1<f64>,
}

/// Inference-only forward pass over `graphs`, batched internally.
pub fn forward_graphs(graphs: &[&Graph], params: &ModelParams, masks: MaskMode) -> Vec<ForwardResult> {
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(256) {
        let batch = Batch::new(chunk);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let f = forward(&mut tape, &p, &batch, masks);
        for (k, g) in chunk.iter().enumerate() {
            out.push(ForwardResult {
                masks: masks_of_graph(g, &batch, k, tape.value(f.node_mask), tape.value(f.edge_mask)),
                h_st: tape.value(f.h_st).row(k).to_owned(),
                h_en: tape.value(f.h_en).row(k).to_owned(),
                logits_st: tape.value(f.logits_st).row(k).to_owned(),
            });
        }
    }
    out
}

/// Logits of the plain classifier `ω(h(g))`.
pub fn plain_logits(graphs: &[&Graph], params: &ModelParams) -> Vec<Array1<f64>> {
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(256) {
        let batch = Batch::new(chunk);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let logits = forward_plain(&mut tape, &p, &batch);
        out.extend(tape.value(logits).rows().into_iter().map(|r| r.to_owned()));
    }
    out
}

/// Single-graph convenience wrapper around [`forward_graphs`].
pub fn forward_graph(g: &Graph, params: &ModelParams) -> ForwardResult {
    forward_graphs(&[g], params, MaskMode::Learned).remove(0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples: 50,
            step: 1e-5,
            tolerance: 1e-3,
            seed: 0,
            floor: 1e-6,
        }
    }
}

/// Compares reverse-mode gradients against central finite differences on
/// sampled scalar entries of `theta`. Every tensor is sampled at least once;
/// `always` lists extra tensors whose first entry is always checked.
pub fn grad_check<F>(theta: &[Array2<f64>], loss: F, always: &[usize], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)>,
{
    let (value, grads) = loss(theta)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let sizes: Vec<usize> = theta.iter().map(Array2::len).collect();
    let total: usize = sizes.iter().sum();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut rng = seeded(opts.seed);
    for (t, &n) in sizes.iter().enumerate() {
        if n > 0 {
            picks.push((t, rng.gen_range(0..n)));
        }
    }
    for &t in always {
        picks.push((t, 0));
    }
    let extra = opts.samples.saturating_sub(picks.len()).min(total);
    for flat in sample(&mut rng, total, extra) {
        let mut rem = flat;
        for (t, &n) in sizes.iter().enumerate() {
            if rem < n {
                picks.push((t, rem));
                break;
            }
            rem -= n;
        }
    }
    picks.sort_unstable();
    picks.dedup();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work = theta.to_vec();
    for (t, i) in picks {
        let at = (i / theta[t].ncols(), i % theta[t].ncols());
        let orig = work[t][at];
        work[t][at] = orig + opts.step;
        let (up, _) = loss(&work)?;
        work[t][at] = orig - opts.step;
        let (down, _) = loss(&work)?;
        work[t][at] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss { step: 0 });
        }
        let numeric = (up - down) / (2.0 * opts.step);
        let analytic = grads[t][at];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
        report.checked += 1;
        if rel > report.max_rel_err || report.checked == 1 {
            report.max_rel_err = rel;
            report.worst = (t, i);
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    if report.max_rel_err > opts.tolerance {
        return Err(Error::GradCheck {
            max_rel_err: report.max_rel_err,
            tolerance: opts.tolerance,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    tensors: Vec<TensorHeader>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GINVCKPT";

/// Writes `magic | u64 header length | JSON header | f64 LE data`.
pub fn save_checkpoint(path: &Path, params: &ModelParams, seed: u64, epoch: usize) -> Result<()> {
    let header = CheckpointHeader {
        model: params.config,
        seed,
        epoch,
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(name, t)| TensorHeader {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * params.num_scalars());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for t in &params.tensors {
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = ModelParams::init(header.model, 0, 0.5);
    if header.tensors.len() != params.tensors.len() {
        return Err(bad("tensor count does not match architecture"));
    }
    let mut pos = 16 + hlen;
    for (k, th) in header.tensors.iter().enumerate() {
        if th.name != params.names[k] || th.shape != [params.tensors[k].nrows(), params.tensors[k].ncols()] {
            return Err(Error::Checkpoint(format!("unexpected tensor {}", th.name)));
        }
        for v in params.tensors[k].iter_mut() {
            let chunk = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated data"))?;
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            pos += 8;
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((params, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_motif, MotifKind};

    fn small_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 1,
            hidden: 6,
            layers: 2,
            num_classes: 3,
        }
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = seeded(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_edges(n, &edges, 1)
    }

    #[test]
    fn parameter_count_depends_only_on_shape() {
        let a = ModelParams::init(small_config(), 1, 0.5);
        let b = ModelParams::init(small_config(), 2, 0.9);
        assert_eq!(a.num_scalars(), b.num_scalars());
        let d = 6;
        let gin = (1 + d + d) + (1 + d * d + d) + 2 * (d * d + d);
        let expected = 2 * gin + (d * d + d + d + 1) + (2 * d * d + d + d + 1) + (d * 3 + 3) + 1;
        assert_eq!(a.num_scalars(), expected);
        assert!((b.rho() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(ModelConfig::default(), 7, 0.5);
        let b = ModelParams::init(ModelConfig::default(), 7, 0.5);
        assert_eq!(a.tensors(), b.tensors());
    }

    #[test]
    fn zero_weights_give_isolated_nodes() {
        let g = make_motif(MotifKind::House);
        let p = ModelParams::init(small_config(), 3, 0.5);
        let reps = gin_encode(&g, &Array2::zeros((5, 5)), &p).unwrap();
        for i in 1..5 {
            assert_eq!(reps.node_reps.row(i), reps.node_reps.row(0));
        }
        assert!(gin_encode(&g, &Array2::zeros((4, 4)), &p).is_err());
    }

    #[test]
    fn isomorphic_graphs_share_representation() {
        let g = random_graph(9, 0.4, 5);
        let perm = [4, 7, 0, 2, 8, 1, 3, 6, 5];
        let h = g.permuted(&perm);
        let p = ModelParams::init(small_config(), 3, 0.5);
        let a = forward_graph(&g, &p);
        let b = forward_graph(&h, &p);
        for (x, y) in a.h_st.iter().zip(b.h_st.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in a.logits_st.iter().zip(b.logits_st.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        for (k, &old) in perm.iter().enumerate() {
            assert!((a.masks.node_mask[old] - b.masks.node_mask[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_edge_matches_hand_trace() {
        let cfg = ModelConfig {
            feature_dim: 1,
            hidden: 2,
            layers: 1,
            num_classes: 2,
        };
        let mut p = ModelParams::init(cfg, 0, 0.5);
        let enc = p.arch.encoder[0];
        p.tensors[enc.eps][[0, 0]] = 0.5;
        p.tensors[enc.lin1.w] = ndarray::array![[0.3, -0.2]];
        p.tensors[enc.lin1.b] = ndarray::array![[0.1, 0.4]];
        p.tensors[enc.lin2.w] = ndarray::array![[1.0, -0.5], [0.25, 2.0]];
        p.tensors[enc.lin2.b] = ndarray::array![[0.0, -0.1]];
        let mut g = Graph::from_edges(2, &[(0, 1)], 0);
        g.node_features = ndarray::array![[1.0], [2.0]];
        let mut w = Array2::zeros((2, 2));
        w[[0, 1]] = 0.8; // message 0 -> 1
        w[[1, 0]] = 0.6; // message 1 -> 0
        let reps = gin_encode(&g, &w, &p).unwrap();
        // Node 0: 1.5*1 + 0.6*2 = 2.7; node 1: 1.5*2 + 0.8*1 = 3.8.
        let trace = |s: f64| {
            let a0 = (0.3 * s + 0.1f64).max(0.0);
            let a1 = (-0.2 * s + 0.4f64).max(0.0);
            [(1.0 * a0 + 0.25 * a1).max(0.0), (-0.5 * a0 + 2.0 * a1 - 0.1).max(0.0)]
        };
        let (r0, r1) = (trace(2.7), trace(3.8));
        assert!((reps.node_reps[[0, 0]] - r0[0]).abs() < 1e-14);
        assert!((reps.node_reps[[0, 1]] - r0[1]).abs() < 1e-14);
        assert!((reps.node_reps[[1, 0]] - r1[0]).abs() < 1e-14);
        assert!((reps.graph_rep[0] - 0.5 * (r0[0] + r1[0])).abs() < 1e-14);
    }

    #[test]
    fn zero_mask_heads_give_half() {
        let g = random_graph(7, 0.5, 2);
        let mut p = ModelParams::init(small_config(), 3, 0.5);
        for idx in p.node_mask_indices() {
            p.tensors[idx].fill(0.0);
        }
        for l in p.arch.edge_mask {
            p.tensors[l.w].fill(0.0);
            p.tensors[l.b].fill(0.0);
        }
        let r = forward_graph(&g, &p);
        assert!(r.masks.node_mask.iter().all(|&m| m == 0.5));
        for (i, j) in g.edges() {
            assert_eq!(r.masks.edge_mask[[i, j]], 0.5);
        }
    }

    #[test]
    fn masks_are_symmetric_and_open() {
        let g = random_graph(10, 0.4, 9);
        let p = ModelParams::init(small_config(), 4, 0.5);
        let r = forward_graph(&g, &p);
        let m = &r.masks;
        for i in 0..10 {
            assert!(m.node_mask[i] > 0.0 && m.node_mask[i] < 1.0);
            for j in 0..10 {
                assert_eq!(m.edge_mask[[i, j]], m.edge_mask[[j, i]]);
                if g.adjacency[[i, j]] == 0 {
                    assert_eq!(m.edge_mask[[i, j]], 0.0);
                } else {
                    assert!(m.edge_mask[[i, j]] > 0.0 && m.edge_mask[[i, j]] < 1.0);
                }
            }
        }
        let c = m.complement(&g);
        for i in 0..10 {
            assert_eq!(m.node_mask[i] + c.node_mask[i], 1.0);
        }

        // Identical node representations give uniform masks.
        let z = Array2::from_elem((10, 6), 0.3);
        let u = extract_masks(&z, &g, &p).unwrap();
        let first = u.edge_mask[[g.edges()[0].0, g.edges()[0].1]];
        assert!(u.node_mask.iter().all(|&v| v == u.node_mask[0]));
        assert!(g.edges().iter().all(|&(i, j)| u.edge_mask[[i, j]] == first));
    }

    #[test]
    fn fixed_masks_reduce_to_plain_and_split() {
        let g = random_graph(8, 0.4, 1);
        let p = ModelParams::init(small_config(), 5, 0.5);
        let full = forward_graphs(&[&g], &p, MaskMode::Fixed(1.0)).remove(0);
        let plain = gin_encode(&g, &g.adjacency.mapv(f64::from), &p).unwrap();
        assert_eq!(full.h_st, plain.graph_rep);
        let mut zero_x = g.clone();
        zero_x.node_features.fill(0.0);
        let empty = gin_encode(&zero_x, &Array2::zeros((8, 8)), &p).unwrap();
        assert_eq!(full.h_en, empty.graph_rep);
        assert_eq!(plain_logits(&[&g], &p)[0], full.logits_st);

        let half = forward_graphs(&[&g], &p, MaskMode::Fixed(0.5)).remove(0);
        assert_eq!(half.h_st, half.h_en);
    }

    #[test]
    fn linear_toy_grad_check() {
        let theta = vec![Array2::from_elem((3, 4), 0.7), Array2::from_elem((1, 1), -2.0)];
        let report = grad_check(
            &theta,
            |t| Ok((t.iter().map(|x| x.sum()).sum(), t.iter().map(|x| Array2::ones(x.dim())).collect())),
            &[],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 13);
        assert!(report.max_rel_err < 1e-10);

        let wrong = grad_check(
            &theta,
            |t| Ok((t.iter().map(|x| x.sum()).sum(), t.iter().map(|x| Array2::zeros(x.dim())).collect())),
            &[],
            GradCheckOptions::default(),
        );
        assert!(matches!(wrong, Err(Error::GradCheck { .. })));
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let g = random_graph(7, 0.5, 3);
        let h = random_graph(6, 0.5, 4);
        let p = ModelParams::init(small_config(), 8, 0.5);
        let graphs = [&g, &h];
        let loss = |theta: &[Array2<f64>]| -> Result<(f64, Vec<Array2<f64>>)> {
            let mut q = p.clone();
            q.tensors = theta.to_vec();
            let batch = Batch::new(&graphs);
            let mut tape = Tape::new();
            let pv = q.bind(&mut tape, true);
            let f = forward(&mut tape, &pv, &batch, MaskMode::Learned);
            let l = tape.cross_entropy(f.logits_st, batch.labels.clone());
            let mut grads = tape.backward(l);
            let gs = pv
                .vars
                .iter()
                .zip(theta)
                .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Array2::zeros(t.dim())))
                .collect();
            Ok((tape.scalar(l), gs))
        };
        let report = grad_check(
            p.tensors(),
            loss,
            &[],
            GradCheckOptions {
                samples: 80,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.checked >= 50);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = ModelParams::init(small_config(), 11, 0.7);
        save_checkpoint(&path, &p, 11, 3).unwrap();
        let (q, header) = load_checkpoint(&path).unwrap();
        assert_eq!(q.tensors(), p.tensors());
        assert_eq!((header.seed, header.epoch), (11, 3));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
