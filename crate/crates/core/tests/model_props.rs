use graphinv::graph::{Graph, StableMasks};
use graphinv::model::{forward_graph, forward_graphs, gin_encode, MaskMode, ModelConfig, ModelParams};
use ndarray::Array2;
use proptest::prelude::*;

fn random_graph() -> impl Strategy<Value = Graph> {
    (3usize..12).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if bits[k] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            Graph::from_edges(n, &edges, 0)
        })
    })
}

fn shuffle(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut s = seed;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        perm.swap(i, (s >> 33) as usize % (i + 1));
    }
    perm
}

fn params(seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        feature_dim: 1,
        hidden: 8,
        layers: 2,
        num_classes: 3,
    };
    ModelParams::init(cfg, seed, 0.5)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn relabelling_nodes_leaves_graph_outputs_unchanged(g in random_graph(), seed in any::<u64>()) {
        let p = params(seed % 7);
        let h = g.permuted(&shuffle(g.num_nodes(), seed));
        let (a, b) = (forward_graph(&g, &p), forward_graph(&h, &p));
        prop_assert!(max_diff(a.logits_st.as_slice().unwrap(), b.logits_st.as_slice().unwrap()) < 1e-9);
        prop_assert!(max_diff(a.h_en.as_slice().unwrap(), b.h_en.as_slice().unwrap()) < 1e-9);
    }

    #[test]
    fn masks_are_probabilities_on_the_edge_support(g in random_graph(), seed in 0u64..5) {
        let r = forward_graph(&g, &params(seed));
        let m = &r.masks;
        prop_assert!(m.node_mask.iter().all(|&v| v > 0.0 && v < 1.0));
        for ((i, j), &v) in m.edge_mask.indexed_iter() {
            if g.adjacency[[i, j]] == 1 {
                prop_assert!(v > 0.0 && v < 1.0);
                prop_assert_eq!(v, m.edge_mask[[j, i]]);
            } else {
                prop_assert_eq!(v, 0.0);
            }
        }
        let c = m.complement(&g);
        prop_assert!((&c.node_mask + &m.node_mask).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn batching_matches_one_graph_at_a_time(gs in prop::collection::vec(random_graph(), 1..5)) {
        let p = params(3);
        let refs: Vec<&Graph> = gs.iter().collect();
        let batched = forward_graphs(&refs, &p, MaskMode::Learned);
        for (g, b) in gs.iter().zip(&batched) {
            let single = forward_graph(g, &p);
            prop_assert!(max_diff(b.logits_st.as_slice().unwrap(), single.logits_st.as_slice().unwrap()) < 1e-12);
        }
    }

    #[test]
    fn zero_weights_disable_message_passing(g in random_graph()) {
        let p = params(1);
        let r = gin_encode(&g, &Array2::zeros((g.num_nodes(), g.num_nodes())), &p).unwrap();
        let first = r.node_reps.row(0).to_owned();
        for row in r.node_reps.rows() {
            prop_assert!(max_diff(row.as_slice().unwrap(), first.as_slice().unwrap()) < 1e-15);
        }
    }
}

#[test]
fn half_masks_split_the_graph_symmetrically() {
    let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)], 0);
    let r = forward_graphs(&[&g], &params(0), MaskMode::Fixed(0.5)).remove(0);
    assert!(max_diff(r.h_st.as_slice().unwrap(), r.h_en.as_slice().unwrap()) < 1e-12);
    assert_eq!(r.masks, StableMasks::uniform(&g, 0.5));
}
