//! Evaluation: accuracy, edge-mask ROC-AUC and environment distance tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, MaskedGraph};
use crate::graphon::{cut_distance, estimate_group_graphon, CutMode, StepFunction, EXACT_DISTANCE_LIMIT};
use crate::model::{forward_graphs, MaskMode, ModelParams};

fn argmax(row: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of graphs whose stable-logit argmax equals the label.
/// `MaskMode::Fixed(1.0)` evaluates the plain classifier.
pub fn evaluate_accuracy(params: &ModelParams, graphs: &[Graph], masks: MaskMode) -> f64 {
    if graphs.is_empty() {
        return 0.0;
    }
    let refs: Vec<&Graph> = graphs.iter().collect();
    let correct = refs
        .par_chunks(128)
        .map(|chunk| {
            forward_graphs(chunk, params, masks)
                .iter()
                .zip(chunk.iter())
                .filter(|(r, g)| argmax(&r.logits_st) == g.label)
                .count()
        })
        .sum::<usize>();
    correct as f64 / graphs.len() as f64
}

/// ROC-AUC by the rank statistic, tied scores sharing their average rank.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Dimension(format!("{} scores, {} labels", scores.len(), positive.len())));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegeneratePool);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Learned edge-mask scores and ground-truth stable flags of every edge.
pub fn edge_mask_pool(params: &ModelParams, graphs: &[Graph]) -> Result<(Vec<f64>, Vec<bool>)> {
    if graphs.iter().any(|g| g.stable_edge_flags.is_none()) {
        return Err(Error::MissingFlags);
    }
    let refs: Vec<&Graph> = graphs.iter().collect();
    let results = forward_graphs(&refs, params, MaskMode::Learned);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (g, r) in graphs.iter().zip(&results) {
        let flags = g.stable_edge_flags.as_ref().expect("checked");
        for (i, j) in g.edges() {
            scores.push(r.masks.edge_mask[[i, j]]);
            labels.push(flags[[i, j]] == 1);
        }
    }
    Ok((scores, labels))
}

pub fn mask_auc(params: &ModelParams, graphs: &[Graph]) -> Result<f64> {
    let (scores, labels) = edge_mask_pool(params, graphs)?;
    roc_auc(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Full,
    GtStable,
    GtEnv,
    LearnedStable,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 4] = [
        FeatureSource::Full,
        FeatureSource::GtStable,
        FeatureSource::GtEnv,
        FeatureSource::LearnedStable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Full => "full",
            FeatureSource::GtStable => "gt_stable",
            FeatureSource::GtEnv => "gt_env",
            FeatureSource::LearnedStable => "learned_stable",
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureSource::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "feature source",
                value: s.to_string(),
            })
    }
}

/// Soft adjacency of every graph under `source`; it doubles as the
/// alignment mask.
fn source_adjacency(graphs: &[Graph], source: FeatureSource, params: Option<&ModelParams>) -> Result<Vec<Array2<f64>>> {
    fn flags(g: &Graph) -> Result<&Array2<u8>> {
        g.stable_edge_flags.as_ref().ok_or(Error::MissingFlags)
    }
    match source {
        FeatureSource::Full => Ok(graphs.iter().map(|g| g.adjacency.mapv(f64::from)).collect()),
        FeatureSource::GtStable => graphs.iter().map(|g| Ok(flags(g)?.mapv(f64::from))).collect(),
        FeatureSource::GtEnv => graphs
            .iter()
            .map(|g| {
                let f = flags(g)?;
                Ok(Array2::from_shape_fn(g.adjacency.dim(), |ij| f64::from(g.adjacency[ij] & (1 - f[ij]))))
            })
            .collect(),
        FeatureSource::LearnedStable => {
            let params = params.ok_or_else(|| Error::Config("learned_stable needs model parameters".into()))?;
            let refs: Vec<&Graph> = graphs.iter().collect();
            Ok(forward_graphs(&refs, params, MaskMode::Learned)
                .into_iter()
                .map(|r| r.masks.edge_mask)
                .collect())
        }
    }
}

/// Group graphons keyed by `(class, env)`. Graphs smaller than the
/// resolution are left out.
pub fn group_graphons(
    graphs: &[Graph],
    source: FeatureSource,
    params: Option<&ModelParams>,
    blocks: usize,
) -> Result<BTreeMap<(usize, usize), StepFunction>> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, g) in graphs.iter().enumerate() {
        let env = g.env.ok_or(Error::MissingEnv(g.id))?;
        if g.num_nodes() >= blocks {
            groups.entry((g.label, env)).or_default().push(k);
        }
    }
    let adjacency = source_adjacency(graphs, source, params)?;
    groups
        .into_par_iter()
        .map(|(key, members)| {
            let masked: Vec<MaskedGraph> = members
                .iter()
                .map(|&k| MaskedGraph {
                    soft_adjacency: adjacency[k].clone(),
                    soft_features: graphs[k].node_features.clone(),
                })
                .collect();
            let masks: Vec<Array2<f64>> = members.iter().map(|&k| adjacency[k].clone()).collect();
            Ok((key, estimate_group_graphon(&masked, &masks, blocks)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub env_a: usize,
    pub env_b: usize,
    pub class: usize,
}

/// `Dis(e, e') = mean over classes of δ(W_{y,e}, W_{y,e'})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisTable {
    pub source: FeatureSource,
    pub envs: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub skipped: Vec<SkippedCell>,
    pub resolution: usize,
    pub exact: bool,
}

impl DisTable {
    pub fn off_diagonal_mean(&self) -> f64 {
        let k = self.envs.len();
        if k < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    total += self.values[a][b];
                }
            }
        }
        total / (k * (k - 1)) as f64
    }
}

/// Exact block-permutation search when it is affordable.
pub fn default_cut_mode(blocks: usize) -> CutMode {
    if blocks <= 6.min(EXACT_DISTANCE_LIMIT) {
        CutMode::Exact
    } else {
        CutMode::Anneal
    }
}

pub fn dis_table(
    graphs: &[Graph],
    source: FeatureSource,
    params: Option<&ModelParams>,
    blocks: usize,
    mode: CutMode,
) -> Result<DisTable> {
    let graphons = group_graphons(graphs, source, params, blocks)?;
    dis_table_from(&graphons, source, blocks, mode)
}

pub fn dis_table_from(
    graphons: &BTreeMap<(usize, usize), StepFunction>,
    source: FeatureSource,
    blocks: usize,
    mode: CutMode,
) -> Result<DisTable> {
    let mut envs: Vec<usize> = graphons.keys().map(|&(_, e)| e).collect();
    envs.sort_unstable();
    envs.dedup();
    let mut classes: Vec<usize> = graphons.keys().map(|&(y, _)| y).collect();
    classes.sort_unstable();
    classes.dedup();
    let k = envs.len();
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            for &y in &classes {
                match (graphons.get(&(y, envs[a])), graphons.get(&(y, envs[b]))) {
                    (Some(x), Some(z)) => items.push((a, b, x, z)),
                    _ => skipped.push(SkippedCell {
                        env_a: envs[a],
                        env_b: envs[b],
                        class: y,
                    }),
                }
            }
        }
    }
    let distances: Vec<(usize, usize, f64)> = items
        .into_par_iter()
        .map(|(a, b, x, z)| Ok((a, b, cut_distance(x, z, mode)?)))
        .collect::<Result<_>>()?;
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![vec![0usize; k]; k];
    for (a, b, d) in distances {
        sums[a][b] += d;
        counts[a][b] += 1;
    }
    let mut values = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let v = if counts[a][b] > 0 { sums[a][b] / counts[a][b] as f64 } else { f64::NAN };
            values[a][b] = v;
            values[b][a] = v;
        }
    }
    Ok(DisTable {
        source,
        envs,
        values,
        skipped,
        resolution: blocks,
        exact: mode == CutMode::Exact,
    })
}
