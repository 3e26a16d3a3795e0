//! Step-function graphons.
//!
//! A step function over an equitable partition of `[0,1]` into `N` blocks is
//! stored as its `N×N` value matrix. Graphs are turned into step functions by
//! ordering their nodes, cutting the order into `N` contiguous blocks whose
//! sizes differ by at most one, and averaging the adjacency over each block
//! pair. Self-pairs are excluded from within-block averages.

mod cut;

pub use cut::{cut_distance, cut_norm_exact, cut_norm_naive, AnnealSchedule, CutMode, EXACT_CUT_LIMIT,
    EXACT_DISTANCE_LIMIT, NAIVE_CUT_LIMIT};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{alignment_order, MaskedGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    values: Array2<f64>,
}

impl StepFunction {
    /// Wraps a square matrix. Symmetry and range are checked in debug builds.
    pub fn new(values: Array2<f64>) -> Self {
        debug_assert_eq!(values.nrows(), values.ncols());
        debug_assert!(values
            .indexed_iter()
            .all(|((i, j), &v)| (v - values[[j, i]]).abs() < 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&v)));
        StepFunction { values }
    }

    pub fn zeros(n: usize) -> Self {
        StepFunction {
            values: Array2::zeros((n, n)),
        }
    }

    pub fn resolution(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// `π·W·πᵀ`, i.e. entry `(i,j)` becomes `W[π(i)][π(j)]`.
    pub fn permuted(&self, perm: &[usize]) -> StepFunction {
        let n = self.resolution();
        StepFunction {
            values: Array2::from_shape_fn((n, n), |(i, j)| self.values[[perm[i], perm[j]]]),
        }
    }

    /// Comma-separated rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Block assignment of `n` ordered positions into `blocks` contiguous blocks.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    /// Block of each position in the ordering.
    pub block_of: Vec<usize>,
    /// Number of ordered node pairs `(i, j)`, `i != j`, per block pair.
    pub pair_counts: Array2<f64>,
}

impl BlockLayout {
    pub fn new(n: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || blocks > n {
            return Err(Error::ResolutionTooFine { blocks, nodes: n });
        }
        let block_of: Vec<usize> = (0..n).map(|p| p * blocks / n).collect();
        let mut sizes = vec![0usize; blocks];
        for &b in &block_of {
            sizes[b] += 1;
        }
        let pair_counts = Array2::from_shape_fn((blocks, blocks), |(a, b)| {
            if a == b {
                (sizes[a] * (sizes[a] - 1)) as f64
            } else {
                (sizes[a] * sizes[b]) as f64
            }
        });
        Ok(BlockLayout {
            block_of,
            pair_counts,
        })
    }
}

/// Step function of a (soft) adjacency matrix with nodes taken in `order`.
pub fn step_function_of_graph(
    adjacency: &Array2<f64>,
    order: &[usize],
    blocks: usize,
) -> Result<StepFunction> {
    let n = adjacency.nrows();
    if order.len() != n {
        return Err(Error::Dimension(format!("order of length {} for {n} nodes", order.len())));
    }
    let layout = BlockLayout::new(n, blocks)?;
    let mut sums = Array2::<f64>::zeros((blocks, blocks));
    for (p, &i) in order.iter().enumerate() {
        for (q, &j) in order.iter().enumerate() {
            if p != q {
                sums[[layout.block_of[p], layout.block_of[q]]] += adjacency[[i, j]];
            }
        }
    }
    let values = Array2::from_shape_fn((blocks, blocks), |(a, b)| {
        let c = layout.pair_counts[[a, b]];
        if c > 0.0 {
            sums[[a, b]] / c
        } else {
            0.0
        }
    });
    Ok(StepFunction::new(values))
}

/// Node order by descending alignment score of `edge_mask`.
pub fn mask_alignment_order(edge_mask: &Array2<f64>) -> Vec<usize> {
    let n = edge_mask.nrows();
    let scores: Vec<f64> = (0..n)
        .map(|j| 0.5 * (edge_mask.column(j).sum() + edge_mask.row(j).sum()))
        .collect();
    alignment_order(&scores)
}

/// Aligns each graph by its edge mask and averages the step functions.
pub fn estimate_group_graphon(
    graphs: &[MaskedGraph],
    edge_masks: &[Array2<f64>],
    blocks: usize,
) -> Result<StepFunction> {
    if graphs.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if graphs.len() != edge_masks.len() {
        return Err(Error::Dimension(format!(
            "{} graphs, {} masks",
            graphs.len(),
            edge_masks.len()
        )));
    }
    let mut acc = Array2::<f64>::zeros((blocks, blocks));
    for (g, m) in graphs.iter().zip(edge_masks) {
        let order = mask_alignment_order(m);
        acc += step_function_of_graph(&g.soft_adjacency, &order, blocks)?.values();
    }
    acc /= graphs.len() as f64;
    Ok(StepFunction::new(acc))
}

fn same_resolution(a: &StepFunction, b: &StepFunction) -> Result<()> {
    if a.resolution() != b.resolution() {
        return Err(Error::ResolutionMismatch(a.resolution(), b.resolution()));
    }
    Ok(())
}

/// Measure-normalized L2 distance `sqrt(mean((W1 - W2)^2))`.
pub fn graphon_l2(a: &StepFunction, b: &StepFunction) -> Result<f64> {
    same_resolution(a, b)?;
    let n2 = (a.resolution() * a.resolution()) as f64;
    let ss: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok((ss / n2).sqrt())
}

/// Graphon of stable features after OR-ing Bernoulli(p) noise: off-diagonal
/// entries become `W + p(1 - W)`, the diagonal is unchanged.
pub fn lemma2_mixture(w: &StepFunction, p: f64) -> StepFunction {
    let v = &w.values;
    StepFunction::new(Array2::from_shape_fn(v.dim(), |(i, j)| {
        if i == j {
            v[[i, j]]
        } else {
            v[[i, j]] + p * (1.0 - v[[i, j]])
        }
    }))
}

/// Averages `w` over a coarse `blocks×blocks` partition and expands back.
pub fn coarsen(w: &StepFunction, blocks: usize) -> Result<StepFunction> {
    let m = w.resolution();
    if blocks == 0 || !m.is_multiple_of(blocks) {
        return Err(Error::Divisibility(blocks, m));
    }
    let s = m / blocks;
    let mut coarse = Array2::<f64>::zeros((blocks, blocks));
    for ((i, j), &v) in w.values.indexed_iter() {
        coarse[[i / s, j / s]] += v;
    }
    coarse /= (s * s) as f64;
    Ok(StepFunction::new(Array2::from_shape_fn((m, m), |(i, j)| {
        coarse[[i / s, j / s]]
    })))
}

/// Largest fine resolution accepted by [`weak_regularity_gap`].
pub const REGULARITY_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityGap {
    pub gap: f64,
    pub bound: f64,
}

/// Cut-norm error of the `blocks`-block coarsening of `w`, with the weak
/// regularity bound `2/sqrt(ln blocks) * ||W||_2`.
pub fn weak_regularity_gap(w: &StepFunction, blocks: usize) -> Result<RegularityGap> {
    let m = w.resolution();
    if m > REGULARITY_LIMIT {
        return Err(Error::TooLarge {
            size: m,
            limit: REGULARITY_LIMIT,
        });
    }
    let coarse = coarsen(w, blocks)?;
    let gap = cut_norm_exact(&(&w.values - coarse.values()))?;
    let l2 = (w.values.iter().map(|v| v * v).sum::<f64>() / (m * m) as f64).sqrt();
    let bound = 2.0 / (blocks as f64).ln().sqrt() * l2;
    Ok(RegularityGap { gap, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::rng::seeded;
    use ndarray::array;
    use rand::Rng;

    fn adj(g: &Graph) -> Array2<f64> {
        g.adjacency.mapv(f64::from)
    }

    #[test]
    fn complete_graph_is_all_ones() {
        let edges: Vec<_> = (0..6).flat_map(|i| ((i + 1)..6).map(move |j| (i, j))).collect();
        let g = Graph::from_edges(6, &edges, 0);
        let w = step_function_of_graph(&adj(&g), &[3, 1, 4, 0, 5, 2], 2).unwrap();
        assert_eq!(w.values(), &Array2::<f64>::ones((2, 2)));
    }

    #[test]
    fn empty_graph_is_zero() {
        let g = Graph::from_edges(7, &[], 0);
        for n in 1..=7 {
            let order: Vec<usize> = (0..7).collect();
            let w = step_function_of_graph(&adj(&g), &order, n).unwrap();
            assert!(w.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ring_blocks_match_exhaustive_count() {
        let g = Graph::from_edges(6, &(0..6).map(|i| (i, (i + 1) % 6)).collect::<Vec<_>>(), 0);
        let order: Vec<usize> = (0..6).collect();
        let w = step_function_of_graph(&adj(&g), &order, 3).unwrap();
        // Oracle: blocks {0,1},{2,3},{4,5}; count edges over every ordered pair.
        let block = |v: usize| v / 2;
        for a in 0..3 {
            for b in 0..3 {
                let (mut hits, mut cells) = (0.0, 0.0);
                for i in 0..6 {
                    for j in 0..6 {
                        if i != j && block(i) == a && block(j) == b {
                            cells += 1.0;
                            let d = (i as isize - j as isize).rem_euclid(6);
                            if d == 1 || d == 5 {
                                hits += 1.0;
                            }
                        }
                    }
                }
                assert_eq!(w.values()[[a, b]], hits / cells);
            }
        }
        assert_eq!(w.values()[[0, 0]], 1.0);
        assert_eq!(w.values()[[0, 1]], 0.25);
    }

    #[test]
    fn too_many_blocks() {
        let g = Graph::from_edges(3, &[(0, 1)], 0);
        assert!(matches!(
            step_function_of_graph(&adj(&g), &[0, 1, 2], 4),
            Err(Error::ResolutionTooFine { .. })
        ));
    }

    #[test]
    fn layout_sizes_differ_by_at_most_one() {
        for n in 1..30 {
            for k in 1..=n {
                let l = BlockLayout::new(n, k).unwrap();
                let mut sizes = vec![0; k];
                l.block_of.iter().for_each(|&b| sizes[b] += 1);
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1 && *lo >= 1);
                assert!(l.block_of.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    fn masked(g: &Graph) -> (MaskedGraph, Array2<f64>) {
        let a = adj(g);
        (
            MaskedGraph {
                soft_adjacency: a.clone(),
                soft_features: g.node_features.clone(),
            },
            a,
        )
    }

    #[test]
    fn group_of_one_and_two_identical() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (1, 4)], 0);
        let (m, mask) = masked(&g);
        let one = estimate_group_graphon(&[m.clone()], &[mask.clone()], 3).unwrap();
        let direct = step_function_of_graph(&m.soft_adjacency, &mask_alignment_order(&mask), 3).unwrap();
        assert_eq!(one, direct);
        let two = estimate_group_graphon(&[m.clone(), m], &[mask.clone(), mask], 3).unwrap();
        assert_eq!(one, two);
        assert!(matches!(estimate_group_graphon(&[], &[], 3), Err(Error::EmptyGroup)));
    }

    #[test]
    fn erdos_renyi_density() {
        let mut rng = seeded(5);
        let mut gs = Vec::new();
        let mut ms = Vec::new();
        for _ in 0..200 {
            let mut edges = Vec::new();
            for i in 0..64 {
                for j in (i + 1)..64 {
                    if rng.gen::<f64>() < 0.3 {
                        edges.push((i, j));
                    }
                }
            }
            let (m, mask) = masked(&Graph::from_edges(64, &edges, 0));
            gs.push(m);
            ms.push(mask);
        }
        let w = estimate_group_graphon(&gs, &ms, 8).unwrap();
        let mean = w.values().mean().unwrap();
        assert!((mean - 0.3).abs() < 0.02, "{mean}");
    }

    #[test]
    fn l2_examples() {
        let ones = StepFunction::new(Array2::ones((3, 3)));
        let zeros = StepFunction::zeros(3);
        assert_eq!(graphon_l2(&ones, &ones).unwrap(), 0.0);
        assert_eq!(graphon_l2(&ones, &zeros).unwrap(), 1.0);
        let eye = StepFunction::new(array![[1.0, 0.0], [0.0, 1.0]]);
        let d = graphon_l2(&eye, &StepFunction::zeros(2)).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(graphon_l2(&eye, &ones), Err(Error::ResolutionMismatch(2, 3))));
    }

    #[test]
    fn mixture_examples() {
        let w = StepFunction::new(array![[0.2, 0.5], [0.5, 0.9]]);
        assert_eq!(lemma2_mixture(&w, 0.0), w);
        let ones = StepFunction::new(Array2::ones((3, 3)));
        assert_eq!(lemma2_mixture(&ones, 0.4), ones);
        let z = lemma2_mixture(&StepFunction::zeros(3), 0.3);
        for ((i, j), &v) in z.values().indexed_iter() {
            assert_eq!(v, if i == j { 0.0 } else { 0.3 });
        }
    }

    #[test]
    fn regularity_trivial_cases() {
        let c = StepFunction::new(Array2::from_elem((6, 6), 0.4));
        assert!(weak_regularity_gap(&c, 3).unwrap().gap < 1e-15);
        let mut rng = seeded(9);
        let mut v = Array2::zeros((6, 6));
        for i in 0..6 {
            for j in i..6 {
                let x: f64 = rng.gen();
                v[[i, j]] = x;
                v[[j, i]] = x;
            }
        }
        let w = StepFunction::new(v);
        assert_eq!(weak_regularity_gap(&w, 6).unwrap().gap, 0.0);
        assert!(matches!(weak_regularity_gap(&w, 4), Err(Error::Divisibility(4, 6))));
    }
}
