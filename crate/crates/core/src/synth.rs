//! Synthetic datasets with known stable motifs.
//!
//! Each graph is one class motif bridged onto an environment base graph.
//! In training the base family is tied to the label with probability
//! `bias`; at test time it is uniform. A Bernoulli confounder subgraph is
//! OR-ed over the whole graph with a split-specific edge probability.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotifKind {
    Cycle,
    House,
    Grid,
    Diamond,
}

impl MotifKind {
    pub const ALL: [MotifKind; 4] = [
        MotifKind::Cycle,
        MotifKind::House,
        MotifKind::Grid,
        MotifKind::Diamond,
    ];

    /// Node count and edge template.
    pub fn template(self) -> (usize, Vec<(usize, usize)>) {
        match self {
            MotifKind::Cycle => (6, (0..6).map(|i| (i, (i + 1) % 6)).collect()),
            MotifKind::House => (5, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]),
            MotifKind::Grid => {
                let mut e = Vec::new();
                for r in 0..3 {
                    for c in 0..3 {
                        let v = 3 * r + c;
                        if c < 2 {
                            e.push((v, v + 1));
                        }
                        if r < 2 {
                            e.push((v, v + 3));
                        }
                    }
                }
                (9, e)
            }
            MotifKind::Diamond => (4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Tree,
    Ladder,
    Wheel,
    /// Preferential attachment, two links per new node.
    Ba,
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(BaseKind::Tree),
            "ladder" => Ok(BaseKind::Ladder),
            "wheel" => Ok(BaseKind::Wheel),
            "ba" => Ok(BaseKind::Ba),
            _ => Err(Error::Unknown {
                kind: "base kind",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BaseKind::Tree => "tree",
            BaseKind::Ladder => "ladder",
            BaseKind::Wheel => "wheel",
            BaseKind::Ba => "ba",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// One motif per graph.
    Synb,
    /// A random number of motif copies per graph.
    Syn5,
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synb" => Ok(SynthMode::Synb),
            "syn5" => Ok(SynthMode::Syn5),
            _ => Err(Error::Unknown {
                kind: "generator mode",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthMode::Synb => "synb",
            SynthMode::Syn5 => "syn5",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub mode: SynthMode,
    pub num_train: usize,
    pub num_test: usize,
    pub num_classes: usize,
    pub bias: f64,
    /// One base family per training environment.
    pub base_kinds: Vec<BaseKind>,
    pub base_size: (usize, usize),
    pub p_train: f64,
    pub p_test: f64,
    pub motifs_per_graph: (usize, usize),
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            mode: SynthMode::Synb,
            num_train: 2000,
            num_test: 500,
            num_classes: 4,
            bias: 0.7,
            base_kinds: vec![BaseKind::Tree, BaseKind::Ladder, BaseKind::Wheel],
            base_size: (20, 40),
            p_train: 0.005,
            p_test: 0.015,
            motifs_per_graph: (1, 5),
            feature_dim: 1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.bias) {
            return bad(format!("bias {} outside [0,1]", self.bias));
        }
        for (name, p) in [("p_train", self.p_train), ("p_test", self.p_test)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0,1]"));
            }
        }
        if self.num_classes == 0 || self.num_classes > MotifKind::ALL.len() {
            return bad(format!("num_classes {} not in 1..=4", self.num_classes));
        }
        if self.base_kinds.is_empty() {
            return bad("no base families".into());
        }
        let (lo, hi) = self.base_size;
        if lo < 4 || hi < lo {
            return bad(format!("base size range {lo}..={hi}"));
        }
        let (mlo, mhi) = self.motifs_per_graph;
        if mlo == 0 || mhi < mlo {
            return bad(format!("motifs per graph {mlo}..={mhi}"));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        Ok(())
    }

    /// Base family index assigned to `label` under the spurious correlation.
    pub fn assigned_env(&self, label: usize) -> usize {
        label % self.base_kinds.len()
    }
}

/// Canonical motif with every node and edge flagged stable.
pub fn make_motif(kind: MotifKind) -> Graph {
    let (n, edges) = kind.template();
    let mut g = Graph::from_edges(n, &edges, 0);
    g.stable_edge_flags = Some(g.adjacency.clone());
    g.stable_node_flags = Some(vec![1; n]);
    g
}

/// Connected base graph of the given family; all stable flags are zero.
pub fn make_env_base(kind: BaseKind, size: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    if size < 4 {
        return Err(Error::Config(format!("base size {size} < 4")));
    }
    let mut edges = Vec::new();
    match kind {
        BaseKind::Tree => {
            for v in 1..size {
                edges.push((rng.gen_range(0..v), v));
            }
        }
        BaseKind::Ladder => {
            let a = size.div_ceil(2);
            let b = size / 2;
            for i in 0..a - 1 {
                edges.push((i, i + 1));
            }
            for i in 0..b - 1 {
                edges.push((a + i, a + i + 1));
            }
            for i in 0..b {
                edges.push((i, a + i));
            }
        }
        BaseKind::Wheel => {
            let rim = size - 1;
            for i in 0..rim {
                edges.push((0, 1 + i));
                edges.push((1 + i, 1 + (i + 1) % rim));
            }
        }
        BaseKind::Ba => {
            edges.extend([(0, 1), (1, 2), (0, 2)]);
            let mut ends: Vec<usize> = vec![0, 1, 1, 2, 0, 2];
            for v in 3..size {
                let first = ends[rng.gen_range(0..ends.len())];
                let mut second = first;
                while second == first {
                    second = ends[rng.gen_range(0..ends.len())];
                }
                for u in [first, second] {
                    edges.push((u, v));
                    ends.extend([u, v]);
                }
            }
        }
    }
    let mut g = Graph::from_edges(size, &edges, 0);
    g.stable_edge_flags = Some(Array2::zeros((size, size)));
    g.stable_node_flags = Some(vec![0; size]);
    Ok(g)
}

/// ORs an i.i.d. symmetric Bernoulli(p) graph with zero diagonal into `g`.
/// New edges are flagged non-stable; existing edges keep their flags.
pub fn inject_bernoulli_noise(g: &Graph, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut out = g.clone();
    if p <= 0.0 {
        return out;
    }
    let n = g.num_nodes();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                out.adjacency[[i, j]] = 1;
                out.adjacency[[j, i]] = 1;
            }
        }
    }
    out
}

fn disjoint_union(parts: &[Graph]) -> Graph {
    let n: usize = parts.iter().map(Graph::num_nodes).sum();
    let d = parts[0].feature_dim();
    let mut adjacency = Array2::zeros((n, n));
    let mut flags = Array2::zeros((n, n));
    let mut node_flags = Vec::with_capacity(n);
    let mut offset = 0;
    for p in parts {
        let m = p.num_nodes();
        for ((i, j), &a) in p.adjacency.indexed_iter() {
            adjacency[[offset + i, offset + j]] = a;
        }
        if let Some(f) = &p.stable_edge_flags {
            for ((i, j), &a) in f.indexed_iter() {
                flags[[offset + i, offset + j]] = a;
            }
        }
        node_flags.extend(p.stable_node_flags.clone().unwrap_or_else(|| vec![0; m]));
        offset += m;
    }
    Graph {
        id: 0,
        adjacency,
        node_features: Array2::ones((n, d)),
        label: 0,
        env: None,
        stable_edge_flags: Some(flags),
        stable_node_flags: Some(node_flags),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Generates one graph of the given split. Deterministic in `(config.seed, split, id)`.
pub fn generate_graph(config: &GeneratorConfig, split: Split, id: usize) -> Result<Graph> {
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = seeded(derive_seed(config.seed, stream, id as u64));
    let label = rng.gen_range(0..config.num_classes);
    let envs = config.base_kinds.len();
    let env = match split {
        Split::Train => {
            let assigned = config.assigned_env(label);
            if envs == 1 || rng.gen::<f64>() < config.bias {
                assigned
            } else {
                let other = rng.gen_range(0..envs - 1);
                if other >= assigned {
                    other + 1
                } else {
                    other
                }
            }
        }
        Split::Test => rng.gen_range(0..envs),
    };
    let size = rng.gen_range(config.base_size.0..=config.base_size.1);
    let base = make_env_base(config.base_kinds[env], size, &mut rng)?;
    let copies = match config.mode {
        SynthMode::Synb => 1,
        SynthMode::Syn5 => rng.gen_range(config.motifs_per_graph.0..=config.motifs_per_graph.1),
    };
    let motif = make_motif(MotifKind::ALL[label]);
    let mut parts = vec![base];
    parts.extend(std::iter::repeat_n(motif.clone(), copies));
    let mut g = disjoint_union(&parts);

    let motif_n = motif.num_nodes();
    for c in 0..copies {
        let u = size + c * motif_n + rng.gen_range(0..motif_n);
        let v = rng.gen_range(0..size);
        g.adjacency[[u, v]] = 1;
        g.adjacency[[v, u]] = 1;
    }

    let p = match split {
        Split::Train => config.p_train,
        Split::Test => config.p_test,
    };
    let mut g = inject_bernoulli_noise(&g, p, &mut rng);

    // Shuffle node ids so that position carries no label information.
    let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
    perm.shuffle(&mut rng);
    g = g.permuted(&perm);
    g.node_features = Array2::ones((g.num_nodes(), config.feature_dim));
    g.id = id;
    g.label = label;
    g.env = Some(env);
    Ok(g)
}

/// Builds the train and test splits.
pub fn synthesize(config: &GeneratorConfig) -> Result<(Vec<Graph>, Vec<Graph>)> {
    config.validate()?;
    let make = |split, n| -> Result<Vec<Graph>> {
        (0..n)
            .into_par_iter()
            .map(|i| generate_graph(config, split, i))
            .collect()
    };
    Ok((make(Split::Train, config.num_train)?, make(Split::Test, config.num_test)?))
}

/// Backtracking isomorphism test for small graphs.
pub fn is_isomorphic(a: &Graph, b: &Graph) -> bool {
    let n = a.num_nodes();
    if n != b.num_nodes() || a.num_edges() != b.num_edges() {
        return false;
    }
    let mut da: Vec<usize> = (0..n).map(|v| a.degree(v)).collect();
    let mut db: Vec<usize> = (0..n).map(|v| b.degree(v)).collect();
    let (ra, rb) = (da.clone(), db.clone());
    da.sort_unstable();
    db.sort_unstable();
    if da != db {
        return false;
    }
    // Visit `a` in breadth-first order so every placed node after the first
    // of its component already has a mapped neighbour constraining it.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for u in 0..n {
                if a.adjacency[[v, u]] != 0 && !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    struct Search<'g> {
        a: &'g Graph,
        b: &'g Graph,
        deg_a: Vec<usize>,
        deg_b: Vec<usize>,
        order: Vec<usize>,
        map: Vec<Option<usize>>,
        used: Vec<bool>,
    }
    impl Search<'_> {
        fn extend(&mut self, k: usize) -> bool {
            if k == self.order.len() {
                return true;
            }
            let v = self.order[k];
            for w in 0..self.b.num_nodes() {
                if self.used[w] || self.deg_a[v] != self.deg_b[w] {
                    continue;
                }
                let consistent = self.order[..k].iter().all(|&u| {
                    let mu = self.map[u].expect("placed");
                    self.a.adjacency[[u, v]] == self.b.adjacency[[mu, w]]
                });
                if consistent {
                    self.used[w] = true;
                    self.map[v] = Some(w);
                    if self.extend(k + 1) {
                        return true;
                    }
                    self.map[v] = None;
                    self.used[w] = false;
                }
            }
            false
        }
    }
    Search {
        a,
        b,
        deg_a: ra,
        deg_b: rb,
        order,
        map: vec![None; n],
        used: vec![false; n],
    }
    .extend(0)
}

/// Connected components as separate graphs, ordered by smallest node id.
pub fn connected_components(g: &Graph) -> Vec<Graph> {
    let n = g.num_nodes();
    let mut comp = vec![usize::MAX; n];
    let mut out = Vec::new();
    for root in 0..n {
        if comp[root] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut nodes = vec![root];
        comp[root] = id;
        let mut k = 0;
        while k < nodes.len() {
            let v = nodes[k];
            k += 1;
            for u in 0..n {
                if g.adjacency[[v, u]] != 0 && comp[u] == usize::MAX {
                    comp[u] = id;
                    nodes.push(u);
                }
            }
        }
        nodes.sort_unstable();
        let mut edges = Vec::new();
        for (x, &i) in nodes.iter().enumerate() {
            for (y, &j) in nodes.iter().enumerate().skip(x + 1) {
                if g.adjacency[[i, j]] != 0 {
                    edges.push((x, y));
                }
            }
        }
        out.push(Graph::from_edges(nodes.len(), &edges, g.label));
    }
    out
}

/// Subgraph induced by the stable-flagged nodes, keeping only flagged edges.
pub fn flagged_subgraph(g: &Graph) -> Option<Graph> {
    let nodes: Vec<usize> = g
        .stable_node_flags
        .as_ref()?
        .iter()
        .enumerate()
        .filter(|(_, &f)| f != 0)
        .map(|(i, _)| i)
        .collect();
    let flags = g.stable_edge_flags.as_ref()?;
    let mut edges = Vec::new();
    for (a, &i) in nodes.iter().enumerate() {
        for (b, &j) in nodes.iter().enumerate().skip(a + 1) {
            if flags[[i, j]] != 0 {
                edges.push((a, b));
            }
        }
    }
    Some(Graph::from_edges(nodes.len(), &edges, g.label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_graph;

    #[test]
    fn motif_templates() {
        let cycle = make_motif(MotifKind::Cycle);
        assert_eq!((cycle.num_nodes(), cycle.num_edges()), (6, 6));
        assert!((0..6).all(|v| cycle.degree(v) == 2));
        let diamond = make_motif(MotifKind::Diamond);
        assert_eq!((diamond.num_nodes(), diamond.num_edges()), (4, 5));
        let grid = make_motif(MotifKind::Grid);
        assert_eq!((grid.num_nodes(), grid.num_edges()), (9, 12));
        let house = make_motif(MotifKind::House);
        assert_eq!((house.num_nodes(), house.num_edges()), (5, 6));
    }

    #[test]
    fn ladder_edge_count() {
        // Independent count: two rails of 5 nodes (4 edges each) plus 5 rungs.
        let expected = 2 * (5 - 1) + 5;
        let g = make_env_base(BaseKind::Ladder, 10, &mut seeded(0)).unwrap();
        assert_eq!(g.num_nodes(), 10);
        assert_eq!(g.num_edges(), expected);
        assert_eq!(expected, 13);
    }

    #[test]
    fn wheel_degrees() {
        let g = make_env_base(BaseKind::Wheel, 7, &mut seeded(0)).unwrap();
        assert_eq!(g.degree(0), 6);
        assert!((1..7).all(|v| g.degree(v) == 3));
    }

    fn connected(g: &Graph) -> bool {
        let n = g.num_nodes();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in 0..n {
                if g.adjacency[[v, u]] != 0 && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    #[test]
    fn bases_are_connected() {
        let mut rng = seeded(3);
        let tree = make_env_base(BaseKind::Tree, 20, &mut rng).unwrap();
        assert_eq!(tree.num_edges(), 19);
        for kind in [BaseKind::Tree, BaseKind::Ladder, BaseKind::Wheel, BaseKind::Ba] {
            for size in [4, 9, 20, 33] {
                let g = make_env_base(kind, size, &mut rng).unwrap();
                assert_eq!(g.num_nodes(), size);
                assert!(connected(&g), "{kind} {size}");
            }
        }
        assert!(make_env_base(BaseKind::Tree, 3, &mut rng).is_err());
        assert!("star".parse::<BaseKind>().is_err());
    }

    #[test]
    fn noise_extremes() {
        let g = Graph::from_edges(5, &[(0, 1)], 0);
        assert_eq!(inject_bernoulli_noise(&g, 0.0, &mut seeded(1)), g);
        let full = inject_bernoulli_noise(&g, 1.0, &mut seeded(1));
        assert_eq!(full.num_edges(), 10);
        assert!((0..5).all(|i| full.adjacency[[i, i]] == 0));
    }

    #[test]
    fn noise_edge_count_is_binomial() {
        let g = Graph::from_edges(100, &[], 0);
        let mean = 0.05 * 4950.0;
        let sigma = (mean * 0.95f64).sqrt();
        let mut total = 0.0;
        for s in 0..50 {
            let m = inject_bernoulli_noise(&g, 0.05, &mut seeded(s)).num_edges() as f64;
            assert!((m - mean).abs() <= 3.0 * sigma, "seed {s}: {m}");
            total += m;
        }
        assert!((total / 50.0 - mean).abs() <= 3.0 * sigma / 50f64.sqrt());
    }

    #[test]
    fn perfect_bias_single_family() {
        let cfg = GeneratorConfig {
            bias: 1.0,
            base_kinds: vec![BaseKind::Wheel],
            num_train: 40,
            num_test: 4,
            ..Default::default()
        };
        let (train, _) = synthesize(&cfg).unwrap();
        assert!(train.iter().all(|g| g.env == Some(0)));
        let cfg = GeneratorConfig {
            bias: 1.0,
            num_train: 80,
            num_test: 4,
            ..Default::default()
        };
        let (train, _) = synthesize(&cfg).unwrap();
        assert!(train.iter().all(|g| g.env == Some(cfg.assigned_env(g.label))));
    }

    #[test]
    fn zero_noise_flags_only_motif() {
        let cfg = GeneratorConfig {
            p_train: 0.0,
            num_train: 30,
            num_test: 2,
            ..Default::default()
        };
        let (train, _) = synthesize(&cfg).unwrap();
        for g in &train {
            let flags = g.stable_edge_flags.as_ref().unwrap();
            let motif = make_motif(MotifKind::ALL[g.label]);
            let flagged = g.edges().iter().filter(|&&(i, j)| flags[[i, j]] == 1).count();
            assert_eq!(flagged, motif.num_edges());
            // base edges + motif edges + one bridge
            let base_nodes = g.num_nodes() - motif.num_nodes();
            assert!(g.num_edges() > flagged + base_nodes - 1);
        }
    }

    #[test]
    fn bias_rate_monte_carlo() {
        let cfg = GeneratorConfig {
            num_train: 2000,
            num_test: 1,
            base_size: (4, 6),
            ..Default::default()
        };
        let (train, _) = synthesize(&cfg).unwrap();
        let hits = train
            .iter()
            .filter(|g| g.env == Some(cfg.assigned_env(g.label)))
            .count() as f64
            / 2000.0;
        assert!((hits - 0.7).abs() <= 0.03, "{hits}");
    }

    #[test]
    fn emitted_graphs_validate_and_carry_motif() {
        for mode in [SynthMode::Synb, SynthMode::Syn5] {
            let cfg = GeneratorConfig {
                mode,
                num_train: 40,
                num_test: 40,
                p_train: 0.05,
                p_test: 0.1,
                seed: 11,
                ..Default::default()
            };
            let (train, test) = synthesize(&cfg).unwrap();
            for g in train.iter().chain(&test) {
                let g = validate_graph(g.clone(), cfg.num_classes).unwrap();
                let flagged = flagged_subgraph(&g).unwrap();
                let motif = make_motif(MotifKind::ALL[g.label]);
                let comps = connected_components(&flagged);
                let copies = comps.len();
                assert!(comps.iter().all(|c| is_isomorphic(c, &motif)));
                if mode == SynthMode::Synb {
                    assert_eq!(copies, 1);
                } else {
                    assert!((1..=5).contains(&copies));
                }
            }
        }
    }

    #[test]
    fn isomorphism_rejects_different_motifs() {
        let house = make_motif(MotifKind::House);
        let diamond = make_motif(MotifKind::Diamond);
        let cycle = make_motif(MotifKind::Cycle);
        assert!(!is_isomorphic(&house, &diamond));
        assert!(is_isomorphic(&cycle, &cycle.permuted(&[3, 1, 5, 0, 2, 4])));
        let two_triangles = Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)], 0);
        assert!(!is_isomorphic(&cycle, &two_triangles));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = GeneratorConfig {
            bias: 1.5,
            ..Default::default()
        };
        assert!(synthesize(&cfg).is_err());
        let cfg = GeneratorConfig {
            p_test: -0.1,
            ..Default::default()
        };
        assert!(synthesize(&cfg).is_err());
    }
}
