//! Property tests of the graph machinery over random multitrees.

use dlqg::graph::{self, AggregationMode, Dag};
use dlqg::verify::random_multitree;
use nalgebra::DVector;
use proptest::prelude::*;

fn arb_multitree() -> impl Strategy<Value = Dag> {
    (1usize..=8, any::<u64>()).prop_map(|(n, seed)| random_multitree(n, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The six relation sets centered at any node partition the vertex set.
    #[test]
    fn relation_sets_partition(dag in arb_multitree()) {
        let n = dag.node_count();
        for j in 0..n {
            let r = graph::relations(&dag, j).unwrap();
            let mut all = vec![j];
            all.extend(&r.sanc);
            all.extend(&r.sdes);
            all.extend(&r.siblings);
            all.extend(&r.coparents);
            all.extend(&r.nonrelatives);
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    /// The Gram patterns of the sparsity matrix agree with set
    /// intersections of ancestors/descendants computed independently.
    #[test]
    fn gram_patterns_match_set_intersections(dag in arb_multitree()) {
        let n = dag.node_count();
        let s = graph::sparsity(&dag);
        let ca = s.common_ancestor_pattern();
        let cd = s.common_descendant_pattern();
        let rels: Vec<_> = (0..n).map(|j| graph::relations(&dag, j).unwrap()).collect();
        for i in 0..n {
            for j in 0..n {
                let anc_overlap = rels[i].anc.iter().any(|a| rels[j].anc.contains(a));
                let des_overlap = rels[i].des.iter().any(|d| rels[j].des.contains(d));
                prop_assert_eq!(ca[i][j], anc_overlap, "SS' at ({},{})", i, j);
                prop_assert_eq!(cd[i][j], des_overlap, "S'S at ({},{})", i, j);
            }
        }
    }

    /// Every original edge lands on an edge of the collapsed six-node
    /// pattern (verified inside `aggregate`, which errors otherwise).
    #[test]
    fn aggregation_edge_absence(dag in arb_multitree()) {
        for j in 0..dag.node_count() {
            prop_assert!(graph::aggregate(&dag, j, AggregationMode::Standard).is_ok());
        }
    }

    /// Generations assign each node to the first index whose earlier
    /// generations absorb all of its strict descendants.
    #[test]
    fn generations_minimality(dag in arb_multitree()) {
        let n = dag.node_count();
        let g = graph::generations(&dag);
        let idx = g.index_of();
        for i in 0..n {
            let r = graph::relations(&dag, i).unwrap();
            let k = idx[i];
            // All strict descendants in strictly earlier generations.
            for &d in &r.sdes {
                prop_assert!(idx[d] < k);
            }
            // Minimality: at k = 0 there is nothing to check; otherwise some
            // strict descendant must sit exactly at k - 1.
            if k > 0 {
                prop_assert!(r.sdes.iter().any(|&d| idx[d] == k - 1));
            } else {
                prop_assert!(r.sdes.is_empty());
            }
        }
        // Nonempty prefix covers everything.
        let total: usize = g.sets.iter().map(Vec::len).sum();
        prop_assert_eq!(total, n);
        prop_assert!(g.sets.iter().all(|s| !s.is_empty()));
    }

    /// The embedding matrix copies exactly the shared funnel components and
    /// zero-pads the rest.
    #[test]
    fn embedding_selects_shared_components(
        dag in arb_multitree(),
        dims_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let n = dag.node_count();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(dims_seed);
        let dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let rels: Vec<_> = (0..n).map(|j| graph::relations(&dag, j).unwrap()).collect();
        for j in 0..n {
            for &i in &rels[j].sdes {
                let e = graph::embedding(&dag, &dims, i, j).unwrap();
                // x vector indexed by funnel(j): distinct values per entry.
                let cols: usize = rels[j].funnel.iter().map(|&k| dims[k]).sum();
                let x = DVector::from_fn(cols, |r, _| (r + 1) as f64);
                let y = &e * &x;
                // Walk funnel(i): shared nodes copy their segment, others 0.
                let mut row = 0;
                for &ka in &rels[i].funnel {
                    let d = dims[ka];
                    if let Some(pos) = rels[j].funnel.iter().position(|&l| l == ka) {
                        let off: usize =
                            rels[j].funnel[..pos].iter().map(|&k| dims[k]).sum();
                        for r in 0..d {
                            prop_assert_eq!(y[row + r], x[off + r]);
                        }
                    } else {
                        for r in 0..d {
                            prop_assert_eq!(y[row + r], 0.0);
                        }
                    }
                    row += d;
                }
            }
        }
    }
}
