//! Directed-acyclic-graph machinery for multitree information structures.
//!
//! Nodes are labeled `1..=n` externally and `0..n` internally; the labeling
//! must be topological (every edge goes from a lower label to a higher one).
//! All relations are defined through reachability, so transitively redundant
//! edges are harmless. Paths are reflexive: every node reaches itself.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// A DAG with topologically ordered labels.
///
/// Internally 0-based; constructors and accessors taking or returning node
/// ids use 0-based indices, while [`Dag::from_edges_1based`] and the display
/// helpers speak the external 1-based convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Dag {
    /// Builds a DAG from 0-based edges, rejecting labelings that are not
    /// topological (an edge `(i, j)` must have `i < j`).
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph must have at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Graph(format!(
                    "edge ({},{}) out of range for {} nodes",
                    i + 1,
                    j + 1,
                    n
                )));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop at node {}", i + 1)));
            }
            if i > j {
                return Err(Error::Graph(format!(
                    "edge ({},{}) violates the topological labeling (source must have \
                     the smaller label)",
                    i + 1,
                    j + 1
                )));
            }
            set.insert((i, j));
        }
        Ok(Dag { n, edges: set })
    }

    /// Builds a DAG from 1-based edges as they appear in problem files.
    pub fn from_edges_1based(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        for &(i, j) in edges {
            if i == 0 || j == 0 {
                return Err(Error::Graph(format!(
                    "edge ({i},{j}) uses 0; node labels are 1-based"
                )));
            }
        }
        let shifted: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (i - 1, j - 1)).collect();
        Dag::new(n, &shifted)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Edges as stored, 0-based, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Edges in the external 1-based convention.
    pub fn edges_1based(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect()
    }
}

/// Binary reachability matrix: `s[i][j]` is true iff there is a directed path
/// `j -> i` (paths are reflexive, so the diagonal is all true). Always
/// lower-triangular thanks to the topological labeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    s: Vec<Vec<bool>>,
}

impl SparsityPattern {
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// `true` iff `j -> i` (0-based).
    pub fn reaches(&self, j: usize, i: usize) -> bool {
        self.s[i][j]
    }

    /// Entry as 0/1, row `i`, column `j` (0-based).
    pub fn entry(&self, i: usize, j: usize) -> u8 {
        u8::from(self.s[i][j])
    }

    /// Dense 0/1 matrix of `S`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| f64::from(self.entry(i, j)))
    }

    /// Boolean pattern of `S S^T`: entry `(i,j)` is true iff nodes `i` and `j`
    /// share an ancestor.
    pub fn common_ancestor_pattern(&self) -> Vec<Vec<bool>> {
        let n = self.n;
        let mut out = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                out[i][j] = (0..n).any(|k| self.s[i][k] && self.s[j][k]);
            }
        }
        out
    }

    /// Boolean pattern of `S^T S`: entry `(i,j)` is true iff nodes `i` and `j`
    /// share a descendant.
    pub fn common_descendant_pattern(&self) -> Vec<Vec<bool>> {
        let n = self.n;
        let mut out = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                out[i][j] = (0..n).any(|k| self.s[k][i] && self.s[k][j]);
            }
        }
        out
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.entry(i, j).to_string()).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Computes the sparsity matrix (transitive closure plus identity).
pub fn sparsity(dag: &Dag) -> SparsityPattern {
    let n = dag.node_count();
    let mut s = vec![vec![false; n]; n];
    // Labels are topological, so a single ascending pass closes all paths.
    for i in 0..n {
        s[i][i] = true;
    }
    for (j, i) in dag.edges() {
        // j -> i with j < i; fold j's ancestry into i's row.
        for k in 0..n {
            if s[j][k] {
                s[i][k] = true;
            }
        }
    }
    SparsityPattern { n, s }
}

/// The eight per-node relation sets, each sorted ascending (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRelations {
    pub node: usize,
    pub anc: Vec<usize>,
    pub sanc: Vec<usize>,
    pub des: Vec<usize>,
    pub sdes: Vec<usize>,
    pub funnel: Vec<usize>,
    pub siblings: Vec<usize>,
    pub coparents: Vec<usize>,
    pub nonrelatives: Vec<usize>,
}

/// Computes ancestors, descendants, funnel, siblings, co-parents and
/// non-relatives of `j` (0-based) from reachability.
pub fn relations(dag: &Dag, j: usize) -> Result<NodeRelations> {
    let n = dag.node_count();
    if j >= n {
        return Err(Error::Graph(format!(
            "node {} out of range (n = {})",
            j + 1,
            n
        )));
    }
    let s = sparsity(dag);
    relations_with(&s, j)
}

/// Same as [`relations`] but reuses a precomputed sparsity pattern.
pub fn relations_with(s: &SparsityPattern, j: usize) -> Result<NodeRelations> {
    let n = s.node_count();
    if j >= n {
        return Err(Error::Graph(format!(
            "node {} out of range (n = {})",
            j + 1,
            n
        )));
    }
    let anc: Vec<usize> = (0..n).filter(|&a| s.reaches(a, j)).collect();
    let des: Vec<usize> = (0..n).filter(|&d| s.reaches(j, d)).collect();
    let sanc: Vec<usize> = anc.iter().copied().filter(|&a| a != j).collect();
    let sdes: Vec<usize> = des.iter().copied().filter(|&d| d != j).collect();
    let mut funnel: Vec<usize> = anc.iter().chain(des.iter()).copied().collect();
    funnel.sort_unstable();
    funnel.dedup();

    let in_funnel = |k: usize| s.reaches(k, j) || s.reaches(j, k);
    let mut siblings = Vec::new();
    let mut coparents = Vec::new();
    let mut nonrelatives = Vec::new();
    for k in 0..n {
        if in_funnel(k) {
            continue;
        }
        let shares_anc = anc.iter().any(|&a| s.reaches(a, k));
        let shares_des = des.iter().any(|&d| s.reaches(k, d));
        if shares_anc {
            siblings.push(k);
        }
        if shares_des {
            coparents.push(k);
        }
        if !shares_anc && !shares_des {
            nonrelatives.push(k);
        }
    }
    Ok(NodeRelations {
        node: j,
        anc,
        sanc,
        des,
        sdes,
        funnel,
        siblings,
        coparents,
        nonrelatives,
    })
}

/// A diamond witness `(i, a, b, j)`: paths `i -> a -> j` and `i -> b -> j`
/// with `a` and `b` path-disconnected. All indices 0-based.
pub type DiamondWitness = (usize, usize, usize, usize);

/// Tests the multitree property. Returns the lexicographically smallest
/// diamond witness when the graph is not a multitree.
pub fn is_multitree(dag: &Dag) -> (bool, Option<DiamondWitness>) {
    let s = sparsity(dag);
    let n = dag.node_count();
    for a in 0..n {
        for b in (a + 1)..n {
            if s.reaches(a, b) || s.reaches(b, a) {
                continue;
            }
            let i = (0..n).find(|&i| s.reaches(i, a) && s.reaches(i, b));
            let j = (0..n).find(|&j| s.reaches(a, j) && s.reaches(b, j));
            if let (Some(i), Some(j)) = (i, j) {
                return (false, Some((i, a, b, j)));
            }
        }
    }
    (true, None)
}

/// The generation partition: `sets[0]` are the leaves, and a node joins the
/// first generation whose strict descendants all lie in earlier generations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generations {
    pub sets: Vec<Vec<usize>>,
}

impl Generations {
    /// Generation index of each node.
    pub fn index_of(&self) -> Vec<usize> {
        let n: usize = self.sets.iter().map(Vec::len).sum();
        let mut idx = vec![0; n];
        for (k, set) in self.sets.iter().enumerate() {
            for &i in set {
                idx[i] = k;
            }
        }
        idx
    }
}

/// Computes generations per the recursive definition. Defined on any DAG;
/// only multitrees are required downstream.
pub fn generations(dag: &Dag) -> Generations {
    let n = dag.node_count();
    let s = sparsity(dag);
    let mut assigned = vec![false; n];
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut remaining = n;
    while remaining > 0 {
        let mut current = Vec::new();
        for i in 0..n {
            if assigned[i] {
                continue;
            }
            let all_done = (0..n).all(|d| d == i || !s.reaches(i, d) || assigned[d]);
            if all_done {
                current.push(i);
            }
        }
        // A nonempty DAG always has a leaf, so progress is guaranteed.
        debug_assert!(!current.is_empty());
        for &i in &current {
            assigned[i] = true;
        }
        remaining -= current.len();
        sets.push(current);
    }
    Generations { sets }
}

/// Aggregation flavor: the standard six-node collapse, or the modified one
/// where the non-relatives are split by which decoupling they satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregationMode {
    /// Standard aggregation (requires both decouplings for non-relatives).
    Standard,
    /// Modified aggregation with a partition of the non-relatives of the
    /// center: `na` have both decouplings, `nb` only uncorrelated noise,
    /// `nc` only decoupled cost. Nodes 0-based.
    Modified {
        na: Vec<usize>,
        nb: Vec<usize>,
        nc: Vec<usize>,
    },
}

/// The six-node aggregated graph centered at a node: sets are indexed
/// 0..6 as (strict ancestors, co-parents [+nb], center, non-relatives [na],
/// strict descendants, siblings [+nc]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatedGraph {
    pub center: usize,
    pub sets: [Vec<usize>; 6],
    pub mode: AggregationMode,
}

/// Aggregated-graph edges for the standard collapse: pairs of set indices
/// (0-based into [`AggregatedGraph::sets`]).
pub const AGGREGATE_EDGES: [(usize, usize); 8] = [
    (0, 2),
    (0, 4),
    (0, 5),
    (1, 3),
    (1, 4),
    (1, 5),
    (2, 4),
    (3, 5),
];

/// Additional edges allowed (in either direction) by the modified collapse:
/// among co-parents/nb, na, and siblings/nc.
pub const MODIFIED_EXTRA_EDGES: [(usize, usize); 6] =
    [(1, 3), (3, 1), (1, 5), (5, 1), (3, 5), (5, 3)];

/// Builds the six-node aggregated graph centered at `j` and verifies that
/// every original edge is compatible with the collapsed pattern.
pub fn aggregate(dag: &Dag, j: usize, mode: AggregationMode) -> Result<AggregatedGraph> {
    let (ok, witness) = is_multitree(dag);
    if !ok {
        let (i, a, b, d) = witness.unwrap();
        return Err(Error::Graph(format!(
            "aggregation requires a multitree; nodes ({},{},{},{}) form a diamond",
            i + 1,
            a + 1,
            b + 1,
            d + 1
        )));
    }
    let rel = relations(dag, j)?;
    let sets: [Vec<usize>; 6] = match &mode {
        AggregationMode::Standard => [
            rel.sanc.clone(),
            rel.coparents.clone(),
            vec![j],
            rel.nonrelatives.clone(),
            rel.sdes.clone(),
            rel.siblings.clone(),
        ],
        AggregationMode::Modified { na, nb, nc } => {
            let mut claimed: Vec<usize> = na.iter().chain(nb).chain(nc).copied().collect();
            claimed.sort_unstable();
            if claimed != rel.nonrelatives {
                return Err(Error::Graph(format!(
                    "modified aggregation at node {}: (na, nb, nc) must partition the \
                     non-relatives {:?}",
                    j + 1,
                    rel.nonrelatives.iter().map(|k| k + 1).collect::<Vec<_>>()
                )));
            }
            let mut set1: Vec<usize> = rel.coparents.iter().chain(nb).copied().collect();
            set1.sort_unstable();
            let mut set5: Vec<usize> = rel.siblings.iter().chain(nc).copied().collect();
            set5.sort_unstable();
            [
                rel.sanc.clone(),
                set1,
                vec![j],
                na.clone(),
                rel.sdes.clone(),
                set5,
            ]
        }
    };

    let agg = AggregatedGraph {
        center: j,
        sets,
        mode,
    };
    check_edge_absence(dag, &agg)?;
    Ok(agg)
}

/// Verifies the edge-absence property: every original edge, mapped to the
/// pair of aggregated sets containing its endpoints, must be an edge of the
/// collapsed pattern (or internal to one set). Unreachable for multitrees.
fn check_edge_absence(dag: &Dag, agg: &AggregatedGraph) -> Result<()> {
    let set_of = |k: usize| -> usize {
        agg.sets
            .iter()
            .position(|s| s.contains(&k))
            .expect("sets partition the nodes")
    };
    let allowed: Vec<(usize, usize)> = match agg.mode {
        AggregationMode::Standard => AGGREGATE_EDGES.to_vec(),
        AggregationMode::Modified { .. } => AGGREGATE_EDGES
            .iter()
            .chain(MODIFIED_EXTRA_EDGES.iter())
            .copied()
            .collect(),
    };
    for (a, b) in dag.edges() {
        let (sa, sb) = (set_of(a), set_of(b));
        if sa == sb {
            continue;
        }
        if !allowed.contains(&(sa, sb)) {
            return Err(Error::Graph(format!(
                "internal consistency: edge ({},{}) crosses aggregated sets {} -> {} \
                 which the collapsed pattern centered at {} forbids",
                a + 1,
                b + 1,
                sa + 1,
                sb + 1,
                agg.center + 1
            )));
        }
    }
    Ok(())
}

/// Builds the block embedding matrix `E^{i,j}` (requires `i` to be a strict
/// descendant of `j`): block rows follow `funnel(i)`, block columns follow
/// `funnel(j)`, with an identity block wherever the row node equals the
/// column node. `dims` gives per-node block sizes.
pub fn embedding(dag: &Dag, dims: &[usize], i: usize, j: usize) -> Result<DMatrix<f64>> {
    let n = dag.node_count();
    if dims.len() != n {
        return Err(Error::Dimension(format!(
            "dims has {} entries for {} nodes",
            dims.len(),
            n
        )));
    }
    let s = sparsity(dag);
    if i == j || !s.reaches(j, i) {
        return Err(Error::Graph(format!(
            "embedding requires i in sdes(j); got i = {}, j = {}",
            i + 1,
            j + 1
        )));
    }
    let fi = relations_with(&s, i)?.funnel;
    let fj = relations_with(&s, j)?.funnel;
    let rows: usize = fi.iter().map(|&k| dims[k]).sum();
    let cols: usize = fj.iter().map(|&k| dims[k]).sum();
    let mut e = DMatrix::zeros(rows, cols);
    let mut row0 = 0;
    for &ka in &fi {
        if let Some(b) = fj.iter().position(|&l| l == ka) {
            let col0: usize = fj[..b].iter().map(|&k| dims[k]).sum();
            for d in 0..dims[ka] {
                e[(row0 + d, col0 + d)] = 1.0;
            }
        }
        row0 += dims[ka];
    }
    Ok(e)
}

/// Formats a node list 1-based for diagnostics and reports.
pub fn fmt_nodes(nodes: &[usize]) -> String {
    let inner: Vec<String> = nodes.iter().map(|&k| (k + 1).to_string()).collect();
    format!("{{{}}}", inner.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The five-node example graph: edges 1->3, 2->3, 2->4, 3->5 (1-based).
    pub fn fig3() -> Dag {
        Dag::from_edges_1based(5, &[(1, 3), (2, 3), (2, 4), (3, 5)]).unwrap()
    }

    /// The four-node example graph: edges 1->2, 2->3, 2->4.
    pub fn fig5() -> Dag {
        Dag::from_edges_1based(4, &[(1, 2), (2, 3), (2, 4)]).unwrap()
    }

    fn nodes_1b(v: &[usize]) -> Vec<usize> {
        v.iter().map(|&k| k + 1).collect()
    }

    #[test]
    fn sparsity_fig3_matches_displayed_matrix() {
        let s = sparsity(&fig3());
        let expected = [
            [1, 0, 0, 0, 0],
            [0, 1, 0, 0, 0],
            [1, 1, 1, 0, 0],
            [0, 1, 0, 1, 0],
            [1, 1, 1, 0, 1],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(s.entry(i, j), expected[i][j], "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn sparsity_edgeless_is_identity() {
        let dag = Dag::new(4, &[]).unwrap();
        let s = sparsity(&dag);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(s.entry(i, j), u8::from(i == j));
            }
        }
    }

    #[test]
    fn sparsity_chain_is_full_lower_triangular() {
        let dag = Dag::from_edges_1based(3, &[(1, 2), (2, 3)]).unwrap();
        let s = sparsity(&dag);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.entry(i, j), u8::from(j <= i));
            }
        }
    }

    #[test]
    fn rejects_non_topological_and_self_loops() {
        let err = Dag::from_edges_1based(3, &[(3, 1)]).unwrap_err();
        assert!(err.to_string().contains("(3,1)"), "{err}");
        let err = Dag::from_edges_1based(3, &[(2, 2)]).unwrap_err();
        assert!(err.to_string().contains("self-loop"), "{err}");
        let err = Dag::from_edges_1based(3, &[(1, 4)]).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn relations_fig3_node3() {
        let r = relations(&fig3(), 2).unwrap();
        assert_eq!(nodes_1b(&r.anc), vec![1, 2, 3]);
        assert_eq!(nodes_1b(&r.sanc), vec![1, 2]);
        assert_eq!(nodes_1b(&r.des), vec![3, 5]);
        assert_eq!(nodes_1b(&r.sdes), vec![5]);
        assert_eq!(nodes_1b(&r.funnel), vec![1, 2, 3, 5]);
        assert_eq!(nodes_1b(&r.siblings), vec![4]);
        assert!(r.coparents.is_empty());
        assert!(r.nonrelatives.is_empty());
    }

    #[test]
    fn relations_fig3_node4() {
        let r = relations(&fig3(), 3).unwrap();
        assert_eq!(nodes_1b(&r.siblings), vec![3, 5]);
        assert!(r.coparents.is_empty());
        assert_eq!(nodes_1b(&r.nonrelatives), vec![1]);
    }

    #[test]
    fn relations_out_of_range() {
        assert!(relations(&fig3(), 5).is_err());
    }

    #[test]
    fn multitree_fig3_holds_and_breaks_with_extra_edge() {
        let (ok, w) = is_multitree(&fig3());
        assert!(ok);
        assert!(w.is_none());

        let broken = Dag::from_edges_1based(5, &[(1, 3), (2, 3), (2, 4), (3, 5), (4, 5)]).unwrap();
        let (ok, w) = is_multitree(&broken);
        assert!(!ok);
        let (i, a, b, j) = w.unwrap();
        assert_eq!((i + 1, a + 1, b + 1, j + 1), (2, 3, 4, 5));
    }

    #[test]
    fn multitree_chain_always() {
        let dag = Dag::from_edges_1based(4, &[(1, 2), (2, 3), (3, 4)]).unwrap();
        assert!(is_multitree(&dag).0);
    }

    #[test]
    fn generations_fig3() {
        let g = generations(&fig3());
        assert_eq!(g.sets.len(), 3);
        assert_eq!(nodes_1b(&g.sets[0]), vec![4, 5]);
        assert_eq!(nodes_1b(&g.sets[1]), vec![3]);
        assert_eq!(nodes_1b(&g.sets[2]), vec![1, 2]);
    }

    #[test]
    fn generations_fig5() {
        let g = generations(&fig5());
        assert_eq!(nodes_1b(&g.sets[0]), vec![3, 4]);
        assert_eq!(nodes_1b(&g.sets[1]), vec![2]);
        assert_eq!(nodes_1b(&g.sets[2]), vec![1]);
    }

    #[test]
    fn generations_edgeless() {
        let g = generations(&Dag::new(4, &[]).unwrap());
        assert_eq!(g.sets.len(), 1);
        assert_eq!(g.sets[0], vec![0, 1, 2, 3]);
    }

    #[test]
    fn aggregate_fig3_center3() {
        let agg = aggregate(&fig3(), 2, AggregationMode::Standard).unwrap();
        assert_eq!(nodes_1b(&agg.sets[0]), vec![1, 2]);
        assert!(agg.sets[1].is_empty());
        assert_eq!(nodes_1b(&agg.sets[2]), vec![3]);
        assert!(agg.sets[3].is_empty());
        assert_eq!(nodes_1b(&agg.sets[4]), vec![5]);
        assert_eq!(nodes_1b(&agg.sets[5]), vec![4]);
    }

    #[test]
    fn aggregate_fig3_center4() {
        let agg = aggregate(&fig3(), 3, AggregationMode::Standard).unwrap();
        assert_eq!(nodes_1b(&agg.sets[0]), vec![2]);
        assert!(agg.sets[1].is_empty());
        assert_eq!(nodes_1b(&agg.sets[2]), vec![4]);
        assert_eq!(nodes_1b(&agg.sets[3]), vec![1]);
        assert!(agg.sets[4].is_empty());
        assert_eq!(nodes_1b(&agg.sets[5]), vec![3, 5]);
    }

    #[test]
    fn aggregate_single_node() {
        let agg = aggregate(&Dag::new(1, &[]).unwrap(), 0, AggregationMode::Standard).unwrap();
        assert_eq!(agg.sets[2], vec![0]);
        for k in [0, 1, 3, 4, 5] {
            assert!(agg.sets[k].is_empty());
        }
    }

    #[test]
    fn aggregate_modified_requires_partition() {
        // Node 4 of fig3 has non-relatives {1}.
        let err = aggregate(
            &fig3(),
            3,
            AggregationMode::Modified {
                na: vec![],
                nb: vec![],
                nc: vec![],
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("partition"), "{err}");
        let agg = aggregate(
            &fig3(),
            3,
            AggregationMode::Modified {
                na: vec![],
                nb: vec![0],
                nc: vec![],
            },
        )
        .unwrap();
        assert_eq!(nodes_1b(&agg.sets[1]), vec![1]);
    }

    #[test]
    fn embedding_e32_matches_definition_example() {
        // funnel(3) = {1,2,3,5}, funnel(2) = {2,3,4,5}; all dims 1.
        let e = embedding(&fig3(), &[1; 5], 2, 1).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn embedding_chain_identity() {
        let dag = Dag::from_edges_1based(2, &[(1, 2)]).unwrap();
        let e = embedding(&dag, &[2, 3], 1, 0).unwrap();
        assert_eq!(e, DMatrix::identity(5, 5));
    }

    #[test]
    fn embedding_rejects_non_descendant() {
        assert!(embedding(&fig3(), &[1; 5], 3, 2).is_err());
        assert!(embedding(&fig3(), &[1; 5], 2, 2).is_err());
    }

    #[test]
    fn embedding_block_dims() {
        // funnel(3) = {1,2,3,5}, funnel(1) = {1,3,5}; dims vary per node.
        let dims = [2, 1, 3, 1, 2];
        let e = embedding(&fig3(), &dims, 2, 0).unwrap();
        assert_eq!(e.nrows(), 2 + 1 + 3 + 2);
        assert_eq!(e.ncols(), 2 + 3 + 2);
        // Row block for node 2 (absent from funnel(1)) must be zero.
        assert_eq!(
            e.view((2, 0), (1, 7)).iter().map(|x| x.abs()).sum::<f64>(),
            0.0
        );
    }
}
