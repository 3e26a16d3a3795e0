use graphinv::graph::{read_jsonl, validate_graph, write_jsonl, Graph};
use graphinv::rng::seeded;
use graphinv::synth::{
    flagged_subgraph, generate_graph, inject_bernoulli_noise, is_isomorphic, make_motif, synthesize, GeneratorConfig,
    MotifKind, Split, SynthMode,
};
use proptest::prelude::*;

fn small_config(seed: u64, mode: SynthMode) -> GeneratorConfig {
    GeneratorConfig {
        mode,
        num_train: 12,
        num_test: 6,
        base_size: (8, 14),
        motifs_per_graph: (1, 3),
        seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn emitted_graphs_are_valid_and_carry_their_motif(seed in any::<u64>(), id in 0usize..500, test_split in any::<bool>(), syn5 in any::<bool>()) {
        let mode = if syn5 { SynthMode::Syn5 } else { SynthMode::Synb };
        let cfg = small_config(seed, mode);
        let split = if test_split { Split::Test } else { Split::Train };
        let g = generate_graph(&cfg, split, id).unwrap();
        let g = validate_graph(g, cfg.num_classes).unwrap();
        let stable = flagged_subgraph(&g).unwrap();
        let motif = make_motif(MotifKind::ALL[g.label]);
        let copies = stable.num_nodes() / motif.num_nodes();
        prop_assert_eq!(stable.num_nodes(), copies * motif.num_nodes());
        prop_assert_eq!(stable.num_edges(), copies * motif.num_edges());
        if !syn5 {
            prop_assert!(is_isomorphic(&stable, &motif));
        }
        let flags = g.stable_edge_flags.as_ref().unwrap();
        for ((i, j), &f) in flags.indexed_iter() {
            prop_assert!(f == 0 || g.adjacency[[i, j]] == 1);
        }
    }

    #[test]
    fn noise_only_adds_edges(n in 2usize..30, p in 0.0f64..1.0, seed in any::<u64>()) {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        let g = Graph::from_edges(n, &edges, 0);
        let noisy = inject_bernoulli_noise(&g, p, &mut seeded(seed));
        for ((i, j), &a) in g.adjacency.indexed_iter() {
            prop_assert!(noisy.adjacency[[i, j]] >= a);
            prop_assert_eq!(noisy.adjacency[[i, j]], noisy.adjacency[[j, i]]);
        }
        prop_assert!((0..n).all(|i| noisy.adjacency[[i, i]] == 0));
    }
}

#[test]
fn full_noise_gives_the_complete_graph() {
    let g = Graph::from_edges(7, &[], 0);
    let k = inject_bernoulli_noise(&g, 1.0, &mut seeded(0));
    assert_eq!(k.num_edges(), 21);
}

#[test]
fn noise_edge_count_follows_the_binomial() {
    // 100 nodes, p = 0.05: mean 247.5, sd about 15.3 per draw.
    let g = Graph::from_edges(100, &[], 0);
    let counts: Vec<f64> = (0..50)
        .map(|s| inject_bernoulli_noise(&g, 0.05, &mut seeded(s)).num_edges() as f64)
        .collect();
    for &c in &counts {
        assert!((c - 247.5).abs() < 3.0 * 15.3, "{c}");
    }
    let mean = counts.iter().sum::<f64>() / 50.0;
    assert!((mean - 247.5).abs() < 3.0 * 15.3 / 50f64.sqrt(), "{mean}");
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(9, SynthMode::Synb);
    let (a, _) = synthesize(&cfg).unwrap();
    let (b, _) = synthesize(&cfg).unwrap();
    write_jsonl(&dir.path().join("a.jsonl"), &a).unwrap();
    write_jsonl(&dir.path().join("b.jsonl"), &b).unwrap();
    let bytes = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(bytes("a.jsonl"), bytes("b.jsonl"));
    assert_eq!(read_jsonl(&dir.path().join("a.jsonl")).unwrap(), a);
}

#[test]
fn test_split_bases_are_uniform() {
    let cfg = GeneratorConfig {
        num_train: 0,
        num_test: 1500,
        base_size: (6, 8),
        ..Default::default()
    };
    let (_, test) = synthesize(&cfg).unwrap();
    let mut counts = [0usize; 3];
    for g in &test {
        counts[g.env.unwrap()] += 1;
    }
    // Each family has probability 1/3; sd over 1500 draws is about 18.3.
    for c in counts {
        assert!((c as f64 - 500.0).abs() < 4.0 * 18.3, "{counts:?}");
    }
}
