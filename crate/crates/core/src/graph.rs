//! Graph data model, soft masks, and the JSONL dataset format.
//!
//! Graphs are small (a few hundred nodes at most), so adjacency and edge
//! masks are stored dense. Off-support mask entries are hard zeros.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub id: usize,
    /// Symmetric 0/1 matrix with zero diagonal.
    pub adjacency: Array2<u8>,
    pub node_features: Array2<f64>,
    pub label: usize,
    /// Ground-truth environment tag, if known.
    pub env: Option<usize>,
    pub stable_edge_flags: Option<Array2<u8>>,
    pub stable_node_flags: Option<Vec<u8>>,
}

impl Graph {
    /// Builds a graph from an undirected edge list with constant unit features.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)], label: usize) -> Self {
        let mut adjacency = Array2::zeros((num_nodes, num_nodes));
        for &(i, j) in edges {
            adjacency[[i, j]] = 1;
            adjacency[[j, i]] = 1;
        }
        Graph {
            id: 0,
            adjacency,
            node_features: Array2::ones((num_nodes, 1)),
            label,
            env: None,
            stable_edge_flags: None,
            stable_node_flags: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    /// Undirected edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[[i, j]] != 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency.row(v).iter().filter(|&&a| a != 0).count()
    }

    /// Relabels nodes so that old node `perm[k]` becomes node `k`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let n = self.num_nodes();
        let remap = |m: &Array2<u8>| Array2::from_shape_fn((n, n), |(a, b)| m[[perm[a], perm[b]]]);
        Graph {
            id: self.id,
            adjacency: remap(&self.adjacency),
            node_features: Array2::from_shape_fn(self.node_features.dim(), |(a, f)| {
                self.node_features[[perm[a], f]]
            }),
            label: self.label,
            env: self.env,
            stable_edge_flags: self.stable_edge_flags.as_ref().map(remap),
            stable_node_flags: self
                .stable_node_flags
                .as_ref()
                .map(|f| perm.iter().map(|&p| f[p]).collect()),
        }
    }
}

/// Checks every structural invariant of `g` and returns it unchanged.
pub fn validate_graph(g: Graph, num_classes: usize) -> Result<Graph> {
    let n = g.num_nodes();
    if g.adjacency.ncols() != n {
        return Err(Error::Dimension(format!(
            "adjacency is {}x{}",
            n,
            g.adjacency.ncols()
        )));
    }
    if g.node_features.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            g.node_features.nrows(),
            n
        )));
    }
    for i in 0..n {
        if g.adjacency[[i, i]] != 0 {
            return Err(Error::NonzeroDiagonal(i));
        }
        for j in 0..n {
            if g.adjacency[[i, j]] > 1 || g.adjacency[[i, j]] != g.adjacency[[j, i]] {
                return Err(Error::Asymmetric(i.min(j), i.max(j)));
            }
        }
    }
    if g.label >= num_classes {
        return Err(Error::LabelOutOfRange {
            label: g.label,
            num_classes,
        });
    }
    if let Some(flags) = &g.stable_edge_flags {
        if flags.dim() != (n, n) {
            return Err(Error::Dimension("stable edge flags".into()));
        }
        for ((i, j), &f) in flags.indexed_iter() {
            if f != 0 && g.adjacency[[i, j]] == 0 {
                return Err(Error::FlagOnNonEdge(i.min(j), i.max(j)));
            }
        }
    }
    if let Some(flags) = &g.stable_node_flags {
        if flags.len() != n {
            return Err(Error::Dimension("stable node flags".into()));
        }
    }
    Ok(g)
}

/// Node and edge masks in (0,1). The edge mask is symmetric and zero off the
/// edge support.
#[derive(Debug, Clone, PartialEq)]
pub struct StableMasks {
    pub node_mask: Array1<f64>,
    pub edge_mask: Array2<f64>,
}

impl StableMasks {
    /// Uniform masks with value `v` on every node and existing edge.
    pub fn uniform(g: &Graph, v: f64) -> Self {
        StableMasks {
            node_mask: Array1::from_elem(g.num_nodes(), v),
            edge_mask: g.adjacency.mapv(|a| if a != 0 { v } else { 0.0 }),
        }
    }

    /// Environmental complement `1 - M` on the mask support.
    pub fn complement(&self, g: &Graph) -> StableMasks {
        StableMasks {
            node_mask: self.node_mask.mapv(|m| 1.0 - m),
            edge_mask: Array2::from_shape_fn(self.edge_mask.dim(), |(i, j)| {
                if g.adjacency[[i, j]] != 0 {
                    1.0 - self.edge_mask[[i, j]]
                } else {
                    0.0
                }
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGraph {
    pub soft_adjacency: Array2<f64>,
    pub soft_features: Array2<f64>,
}

/// Splits `g` into its soft stable part `{A⊙M^a, X⊙M^x}` and environmental
/// part `{A⊙(1−M^a), X⊙(1−M^x)}`.
pub fn apply_masks(g: &Graph, m: &StableMasks) -> Result<(MaskedGraph, MaskedGraph)> {
    let n = g.num_nodes();
    if m.node_mask.len() != n || m.edge_mask.dim() != (n, n) {
        return Err(Error::Dimension(format!(
            "masks ({}, {:?}) for graph with {} nodes",
            m.node_mask.len(),
            m.edge_mask.dim(),
            n
        )));
    }
    let adj = g.adjacency.mapv(f64::from);
    let stable_adj = &adj * &m.edge_mask;
    let env_adj = &adj - &stable_adj;
    let mut stable_x = g.node_features.clone();
    let mut env_x = g.node_features.clone();
    for (i, &mx) in m.node_mask.iter().enumerate() {
        stable_x.row_mut(i).mapv_inplace(|x| x * mx);
        env_x.row_mut(i).mapv_inplace(|x| x * (1.0 - mx));
    }
    Ok((
        MaskedGraph {
            soft_adjacency: stable_adj,
            soft_features: stable_x,
        },
        MaskedGraph {
            soft_adjacency: env_adj,
            soft_features: env_x,
        },
    ))
}

/// Per-node alignment score: the mean of the masked in- and out-degree.
pub fn alignment_scores(g: &Graph, edge_mask: &Array2<f64>) -> Array1<f64> {
    let n = g.num_nodes();
    Array1::from_shape_fn(n, |j| {
        0.5 * (edge_mask.column(j).sum() + edge_mask.row(j).sum())
    })
}

/// Node order by descending score, ties broken by ascending original index.
pub fn alignment_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// On-disk record: one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphRecord {
    pub id: usize,
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_features: Vec<Vec<f64>>,
    pub label: usize,
    pub env: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_nodes: Option<Vec<usize>>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        let edges = g.edges();
        GraphRecord {
            id: g.id,
            num_nodes: g.num_nodes(),
            edges: edges.iter().map(|&(i, j)| [i, j]).collect(),
            node_features: g.node_features.rows().into_iter().map(|r| r.to_vec()).collect(),
            label: g.label,
            env: g.env,
            stable_edges: g.stable_edge_flags.as_ref().map(|f| {
                edges
                    .iter()
                    .filter(|&&(i, j)| f[[i, j]] != 0)
                    .map(|&(i, j)| [i, j])
                    .collect()
            }),
            stable_nodes: g.stable_node_flags.as_ref().map(|f| {
                f.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(i, _)| i)
                    .collect()
            }),
        }
    }
}

impl TryFrom<GraphRecord> for Graph {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Graph> {
        let n = r.num_nodes;
        let check = |i: usize, j: usize| {
            if i >= n || j >= n {
                Err(Error::Dimension(format!("edge ({i},{j}) with {n} nodes")))
            } else if i == j {
                Err(Error::NonzeroDiagonal(i))
            } else {
                Ok(())
            }
        };
        let mut adjacency = Array2::zeros((n, n));
        for &[i, j] in &r.edges {
            check(i, j)?;
            adjacency[[i, j]] = 1;
            adjacency[[j, i]] = 1;
        }
        let d = r.node_features.first().map_or(1, Vec::len);
        if r.node_features.len() != n || r.node_features.iter().any(|f| f.len() != d) {
            return Err(Error::Dimension(format!("node_features for {n} nodes")));
        }
        let node_features =
            Array2::from_shape_fn((n, d), |(i, k)| r.node_features[i][k]);
        let stable_edge_flags = match r.stable_edges {
            Some(list) => {
                let mut f = Array2::zeros((n, n));
                for [i, j] in list {
                    check(i, j)?;
                    f[[i, j]] = 1;
                    f[[j, i]] = 1;
                }
                Some(f)
            }
            None => None,
        };
        let stable_node_flags = match r.stable_nodes {
            Some(list) => {
                let mut f = vec![0u8; n];
                for i in list {
                    if i >= n {
                        return Err(Error::Dimension(format!("stable node {i} with {n} nodes")));
                    }
                    f[i] = 1;
                }
                Some(f)
            }
            None => None,
        };
        Ok(Graph {
            id: r.id,
            adjacency,
            node_features,
            label: r.label,
            env: r.env,
            stable_edge_flags,
            stable_node_flags,
        })
    }
}

/// Serializes graphs as JSONL in the given order.
pub fn write_jsonl(path: &Path, graphs: &[Graph]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        let line = serde_json::to_string(&GraphRecord::from(g)).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Graph>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: k + 1,
            source,
        })?;
        out.push(Graph::try_from(rec)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], 0)
    }

    #[test]
    fn triangle_is_valid() {
        assert!(validate_graph(triangle(), 4).is_ok());
    }

    #[test]
    fn asymmetry_is_reported_with_index() {
        let mut g = Graph::from_edges(3, &[], 0);
        g.adjacency[[0, 1]] = 1;
        let err = validate_graph(g, 4).unwrap_err();
        assert_eq!(err.to_string(), "asymmetric at (0,1)");
    }

    #[test]
    fn self_loop_is_reported() {
        let mut g = triangle();
        g.adjacency[[2, 2]] = 1;
        let err = validate_graph(g, 4).unwrap_err();
        assert_eq!(err.to_string(), "nonzero diagonal at 2");
    }

    #[test]
    fn label_and_flags_are_checked() {
        let mut g = triangle();
        g.label = 4;
        assert!(matches!(
            validate_graph(g, 4),
            Err(Error::LabelOutOfRange { label: 4, .. })
        ));

        let mut g = Graph::from_edges(3, &[(0, 1)], 0);
        let mut flags = Array2::zeros((3, 3));
        flags[[1, 2]] = 1;
        g.stable_edge_flags = Some(flags);
        assert!(matches!(validate_graph(g, 4), Err(Error::FlagOnNonEdge(1, 2))));
    }

    #[test]
    fn half_masks_split_evenly() {
        let g = triangle();
        let (st, en) = apply_masks(&g, &StableMasks::uniform(&g, 0.5)).unwrap();
        for (i, j) in g.edges() {
            assert_eq!(st.soft_adjacency[[i, j]], 0.5);
            assert_eq!(en.soft_adjacency[[i, j]], 0.5);
        }
    }

    #[test]
    fn unit_mask_keeps_everything_stable() {
        let g = triangle();
        let (st, en) = apply_masks(&g, &StableMasks::uniform(&g, 1.0)).unwrap();
        assert_eq!(st.soft_adjacency, g.adjacency.mapv(f64::from));
        assert!(en.soft_adjacency.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn path_mask_is_elementwise() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], 0);
        let mut m = StableMasks::uniform(&g, 0.1);
        m.edge_mask[[0, 1]] = 0.9;
        m.edge_mask[[1, 0]] = 0.9;
        let (st, en) = apply_masks(&g, &m).unwrap();
        let got: Vec<f64> = g.edges().iter().map(|&(i, j)| st.soft_adjacency[[i, j]]).collect();
        assert_eq!(got, vec![0.9, 0.1, 0.1]);
        let adj = g.adjacency.mapv(f64::from);
        assert_eq!(&st.soft_adjacency + &en.soft_adjacency, adj);
    }

    #[test]
    fn mask_dimension_mismatch() {
        let g = triangle();
        let h = Graph::from_edges(4, &[], 0);
        assert!(matches!(
            apply_masks(&g, &StableMasks::uniform(&h, 0.5)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn star_scores_are_degrees() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], 0);
        let m = StableMasks::uniform(&g, 1.0);
        assert_eq!(alignment_scores(&g, &m.edge_mask).to_vec(), vec![3.0, 1.0, 1.0, 1.0]);
        let zero = Array2::zeros((4, 4));
        assert!(alignment_scores(&g, &zero).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn asymmetric_mask_scores_average_both_directions() {
        let g = Graph::from_edges(2, &[(0, 1)], 0);
        let mut m = Array2::zeros((2, 2));
        m[[0, 1]] = 1.0;
        assert_eq!(alignment_scores(&g, &m).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn order_is_stable_on_ties() {
        assert_eq!(alignment_order(&[1.0, 3.0, 1.0, 3.0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn record_roundtrip() {
        let mut g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], 2);
        g.env = Some(1);
        let mut flags = Array2::zeros((4, 4));
        flags[[1, 2]] = 1;
        flags[[2, 1]] = 1;
        g.stable_edge_flags = Some(flags);
        g.stable_node_flags = Some(vec![0, 1, 1, 0]);
        let rec = GraphRecord::from(&g);
        assert_eq!(rec.edges, vec![[0, 1], [1, 2], [2, 3]]);
        assert_eq!(rec.stable_nodes, Some(vec![1, 2]));
        let back = Graph::try_from(rec).unwrap();
        assert_eq!(back, g);
    }
}
