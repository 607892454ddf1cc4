//! The theorem-checking battery.
//!
//! Each experiment pits a structural claim against the exact oracle on a
//! concrete instance and reports named metrics with a pass/fail verdict at a
//! declared tolerance. Every report carries the seed needed to reproduce it.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::centralized;
use crate::graph::{self, Dag};
use crate::lingauss::{
    self, cov, pinv, projection_residual, stack_history, LinearStrategy, NoiseMap, PrimitiveBasis,
};
use crate::model::{self, AssumptionMode, NodeDims, ProblemData};
use crate::oracle;
use crate::structured::{self, Structure};
use crate::{Error, Result};

/// Identities among exact linear-algebra quantities.
pub const TOL_EXACT: f64 = 1e-8;
/// Quantities passing through one pseudoinverse / normal-equation solve.
pub const TOL_SOLVE: f64 = 1e-6;

/// What was run on, reproducibly.
#[derive(Debug, Clone)]
pub struct InstanceDescriptor {
    pub graph: String,
    /// 1-based edge list.
    pub edges: Vec<(usize, usize)>,
    pub state_dims: Vec<usize>,
    pub horizon: usize,
    pub seed: u64,
}

impl InstanceDescriptor {
    fn new(label: &str, p: &ProblemData, seed: u64) -> Self {
        InstanceDescriptor {
            graph: label.to_string(),
            edges: p.dag.edges_1based(),
            state_dims: p.dims.state.clone(),
            horizon: p.horizon,
            seed,
        }
    }
}

/// One experiment outcome. `passed = None` marks an advisory experiment
/// (reported, not gated).
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub id: String,
    pub anchor: String,
    pub instance: InstanceDescriptor,
    pub metrics: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: Option<bool>,
    pub runtime_ms: f64,
}

impl ExperimentReport {
    pub fn max_metric(&self) -> f64 {
        self.metrics
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A named family of test graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Chain(usize),
    BroadcastOut(usize),
    BroadcastIn(usize),
    FiveNode,
    FourNode,
    RandomMultitree(usize),
}

impl Family {
    pub fn label(&self) -> String {
        match self {
            Family::Chain(n) => format!("chain({n})"),
            Family::BroadcastOut(n) => format!("broadcast-out({n})"),
            Family::BroadcastIn(n) => format!("broadcast-in({n})"),
            Family::FiveNode => "five-node".into(),
            Family::FourNode => "four-node".into(),
            Family::RandomMultitree(n) => format!("random-multitree({n})"),
        }
    }
}

/// The five-node example graph (edges 1->3, 2->3, 2->4, 3->5).
pub fn five_node_dag() -> Dag {
    Dag::from_edges_1based(5, &[(1, 3), (2, 3), (2, 4), (3, 5)]).expect("static graph")
}

/// The four-node example graph (edges 1->2, 2->3, 2->4).
pub fn four_node_dag() -> Dag {
    Dag::from_edges_1based(4, &[(1, 2), (2, 3), (2, 4)]).expect("static graph")
}

/// Seeded random multitree by edge-probability rejection sampling.
pub fn random_multitree(n: usize, seed: u64) -> Dag {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for _ in 0..10_000 {
        let p_edge = rng.gen_range(0.15..0.45);
        let mut edges = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                if rng.gen_bool(p_edge) {
                    edges.push((i, j));
                }
            }
        }
        if let Ok(dag) = Dag::from_edges_1based(n, &edges) {
            if graph::is_multitree(&dag).0 {
                return dag;
            }
        }
    }
    // Chains are always multitrees; unreachable fallback.
    Dag::from_edges_1based(n, &(1..n).map(|k| (k, k + 1)).collect::<Vec<_>>()).unwrap()
}

pub fn family_dag(family: Family, seed: u64) -> Dag {
    match family {
        Family::Chain(n) => {
            Dag::from_edges_1based(n, &(1..n).map(|k| (k, k + 1)).collect::<Vec<_>>()).unwrap()
        }
        Family::BroadcastOut(n) => {
            Dag::from_edges_1based(n, &(2..=n).map(|k| (1, k)).collect::<Vec<_>>()).unwrap()
        }
        Family::BroadcastIn(n) => {
            Dag::from_edges_1based(n, &(1..n).map(|k| (k, n)).collect::<Vec<_>>()).unwrap()
        }
        Family::FiveNode => five_node_dag(),
        Family::FourNode => four_node_dag(),
        Family::RandomMultitree(n) => random_multitree(n, seed),
    }
}

/// Seeded per-node dimensions in `{1, 2}`, biased toward 1 to keep the
/// oracle small.
pub fn random_dims(n: usize, seed: u64) -> NodeDims {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x5151_5151));
    let draw = |rng: &mut ChaCha12Rng| if rng.gen_bool(0.3) { 2 } else { 1 };
    NodeDims {
        state: (0..n).map(|_| draw(&mut rng)).collect(),
        input: (0..n).map(|_| draw(&mut rng)).collect(),
        meas: (0..n).map(|_| draw(&mut rng)).collect(),
    }
}

/// A reproducible instance of a family.
pub fn family_instance(
    family: Family,
    horizon: usize,
    seed: u64,
    mode: AssumptionMode,
) -> Result<(ProblemData, InstanceDescriptor)> {
    let dag = family_dag(family, seed);
    let dims = random_dims(dag.node_count(), seed);
    let p = model::random_instance(&dag, &dims, horizon, seed, mode)?;
    let desc = InstanceDescriptor::new(&family.label(), &p, seed);
    Ok((p, desc))
}

/// A six-node-pattern instance: inputs and measurements at node 3 only.
pub fn random_six_node_instance(max_dim: usize, horizon: usize, seed: u64) -> Result<ProblemData> {
    let dag = centralized::six_node_pattern_dag();
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x6e6e));
    let state: Vec<usize> = (0..6).map(|_| rng.gen_range(1..=max_dim)).collect();
    let mut input = vec![0; 6];
    let mut meas = vec![0; 6];
    input[2] = rng.gen_range(1..=max_dim);
    meas[2] = rng.gen_range(1..=max_dim);
    let dims = NodeDims { state, input, meas };
    model::random_instance(&dag, &dims, horizon, seed, AssumptionMode::A2)
}

fn finish(
    id: &str,
    anchor: &str,
    instance: InstanceDescriptor,
    metrics: Vec<(String, f64)>,
    tolerance: f64,
    gated: bool,
    start: Instant,
) -> ExperimentReport {
    let max = metrics.iter().map(|(_, v)| *v).fold(0.0_f64, f64::max);
    ExperimentReport {
        id: id.to_string(),
        anchor: anchor.to_string(),
        instance,
        metrics,
        tolerance,
        passed: gated.then_some(max <= tolerance),
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Exact conditional-mean maps `z*[t][j]` under given closed-loop
/// measurement maps.
fn all_estimates(
    p: &ProblemData,
    st: &Structure,
    basis: &PrimitiveBasis,
    maps: &lingauss::ClosedLoopMaps,
) -> Vec<Vec<NoiseMap>> {
    (0..=p.horizon)
        .map(|t| {
            (0..p.node_count())
                .map(|j| structured::conditioned_estimate(p, st, basis, &maps.y, &maps.x[t], j, t))
                .collect()
        })
        .collect()
}

/// Sufficiency of the ancestral estimates at the oracle optimum: for every
/// node and time, the optimal input projects onto the ancestral estimates
/// with negligible residual.
pub fn run_theorem1(p: &ProblemData, desc: InstanceDescriptor) -> Result<ExperimentReport> {
    let start = Instant::now();
    let basis = PrimitiveBasis::new(p);
    let st = Structure::new(p)?;
    let (strat, _jstar, _info) = oracle::solve(p, &basis, false)?;
    let maps = oracle::closed_loop(p, &basis, &strat);
    let zstar = all_estimates(p, &st, &basis, &maps);
    let su = p.dims.input_map();
    let mut metrics = Vec::new();
    for i in 0..p.node_count() {
        if p.dims.input[i] == 0 {
            continue;
        }
        let mut worst = 0.0_f64;
        for t in 0..p.horizon {
            let target = maps.u[t].select(&su, &[i]);
            let regs: Vec<&NoiseMap> = st.rels[i].anc.iter().map(|&j| &zstar[t][j]).collect();
            worst = worst.max(projection_residual(&basis, &target, &regs));
        }
        metrics.push((format!("residual_node_{}", i + 1), worst));
    }
    Ok(finish(
        "theorem1-projection",
        "control result: u^i is a function of ancestral estimates",
        desc,
        metrics,
        TOL_SOLVE,
        true,
        start,
    ))
}

/// Estimator exactness: the recursion with fitted gains reproduces the
/// exact conditional means coefficient-by-coefficient; the reconstructed
/// descendant inputs equal their conditional estimates; and each fitted
/// `L^j` is untouched by perturbations of gains outside its dependence set.
pub fn run_theorem2(
    p: &ProblemData,
    desc: InstanceDescriptor,
    k_seed: u64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let basis = PrimitiveBasis::new(p);
    let st = Structure::new(p)?;
    let k = structured::random_k(p, &st, k_seed, 0.4);
    let (gains, maps, _) = structured::fit_estimator_gains(p, &st, &basis, &k)?;

    // Recursion vs conditioning.
    let mut z_err = 0.0_f64;
    for t in 0..=p.horizon {
        for j in 0..p.node_count() {
            let zc = structured::conditioned_estimate(p, &st, &basis, &maps.y, &maps.x[t], j, t);
            z_err = z_err.max((&maps.z[t][j].m - &zc.m).amax());
        }
    }

    // Reconstructed inputs vs conditional estimates of the actual inputs.
    let su = p.dims.input_map();
    let mut uhat_err = 0.0_f64;
    for t in 0..p.horizon {
        for (&(i, j), uh) in &maps.uhat[t] {
            let hist = stack_history(p, &maps.y, &st.rels[j].anc, t);
            let target = maps.u[t].select(&su, &[i]);
            let (_, resid) = lingauss::condition(&basis, &target, &hist);
            let cond = &target - &resid;
            uhat_err = uhat_err.max((&uh.m - &cond.m).amax());
        }
    }

    // Dependence claim: re-randomize every gain block outside
    // {K^{ib} : i in sdes(j), b in anc(i) ∩ sdes(j)} and refit; L^j must not
    // move. One perturbation pass checks all nodes at once.
    let mut l_dep_err = 0.0_f64;
    for j in 0..p.node_count() {
        let protected =
            |i: usize, b: usize| st.rels[j].sdes.contains(&i) && st.rels[j].sdes.contains(&b);
        let alt = structured::random_k(p, &st, k_seed.wrapping_add(1 + j as u64), 0.4);
        let mut k2 = k.clone();
        for t in 0..p.horizon {
            for (&(i, b), g) in &alt[t] {
                if !protected(i, b) {
                    k2[t].insert((i, b), g.clone());
                }
            }
        }
        let (gains2, _, _) = structured::fit_estimator_gains(p, &st, &basis, &k2)?;
        for t in 0..p.horizon {
            l_dep_err = l_dep_err.max((&gains.l[t][j] - &gains2.l[t][j]).amax());
        }
    }

    Ok(finish(
        "theorem2-estimator",
        "estimation result: recursive sufficient statistics",
        desc,
        vec![
            ("z_recursion_vs_conditioning".into(), z_err),
            ("uhat_remark_equality".into(), uhat_err),
            ("l_dependence_perturbation".into(), l_dep_err),
        ],
        TOL_EXACT,
        true,
        start,
    ))
}

/// Partition, edge-absence and zero-mean/strategy-independence properties on
/// a multitree instance.
pub fn run_lemma_battery(p: &ProblemData, desc: InstanceDescriptor) -> Result<ExperimentReport> {
    let start = Instant::now();
    let n = p.node_count();
    let s = p.sparsity();
    let mut metrics = Vec::new();

    // Partition into the six relation sets, every center.
    let mut partition_bad = 0.0;
    for j in 0..n {
        let rel = graph::relations_with(&s, j)?;
        let mut all: Vec<usize> = Vec::new();
        all.push(j);
        all.extend(&rel.sanc);
        all.extend(&rel.sdes);
        all.extend(&rel.siblings);
        all.extend(&rel.coparents);
        all.extend(&rel.nonrelatives);
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n || all.len() != n {
            partition_bad += 1.0;
        }
        // Aggregation verifies the edge-absence property internally.
        graph::aggregate(&p.dag, j, graph::AggregationMode::Standard)?;
    }
    metrics.push(("partition_violations".into(), partition_bad));

    // Zero conditional means of co-parents and non-relatives under a random
    // strategy (exact-zero property, checked on coefficient norms).
    let basis = PrimitiveBasis::new(p);
    let st = Structure::new(p)?;
    let strat = LinearStrategy::random(p, desc.seed.wrapping_add(7), 0.3);
    let maps = lingauss::propagate(p, &basis, &strat)?;
    let sx = p.dims.state_map();
    let mut zero_mean_err = 0.0_f64;
    for j in 0..n {
        let rel = &st.rels[j];
        for t in 0..=p.horizon {
            for set in [&rel.coparents, &rel.nonrelatives] {
                if set.is_empty() {
                    continue;
                }
                let hist = stack_history(p, &maps.y, &rel.anc, t.min(p.horizon));
                let target = maps.x[t].select(&sx, set);
                let (_, resid) = lingauss::condition(&basis, &target, &hist);
                let est = &target - &resid;
                zero_mean_err = zero_mean_err.max(est.m.amax());
            }
        }
    }
    metrics.push(("zero_conditional_mean".into(), zero_mean_err));

    // Strategy independence of the estimate (partial separation, part 2):
    // writing E[x^{funnel(j)} | info] = D u^{anc}-history + G eta^{anc}-history
    // with D the system impulse response, the gain G is unchanged when
    // strategies outside sdes(j) change. G is recovered from the closed loop
    // by conditioning the control-free residual on the purified history.
    let pur = oracle::purify(p, &basis);
    let impulse = oracle::control_impulse(p);
    let su = p.dims.input_map();
    let mut gain_err = 0.0_f64;
    let mut decomp_err = 0.0_f64;
    for j in 0..n {
        let rel = &st.rels[j];
        // Two strategy profiles agreeing on sdes(j), differing elsewhere.
        let base = structured::random_k(p, &st, desc.seed.wrapping_add(11), 0.4);
        let alt_all = structured::random_k(p, &st, desc.seed.wrapping_add(13), 0.4);
        let mut alt = base.clone();
        for t in 0..p.horizon {
            for (&(i, b), g) in &alt_all[t] {
                if !rel.sdes.contains(&i) {
                    alt[t].insert((i, b), g.clone());
                }
            }
        }
        let (_, maps_a, _) = structured::fit_estimator_gains(p, &st, &basis, &base)?;
        let (_, maps_b, _) = structured::fit_estimator_gains(p, &st, &basis, &alt)?;
        let frows = sx.indices(&rel.funnel);
        let ucols = su.indices(&rel.anc);
        for t in 1..=p.horizon {
            // D: effect of u^{anc(j)}_{0:t-1} on x^{funnel(j)}_t.
            let d = {
                let mut d = DMatrix::zeros(frows.len(), t * ucols.len());
                for s in 0..t {
                    let blk = &impulse[t][s];
                    for (r, &row) in frows.iter().enumerate() {
                        for (c, &col) in ucols.iter().enumerate() {
                            d[(r, s * ucols.len() + c)] = blk[(row, col)];
                        }
                    }
                }
                d
            };
            let eta_hist = stack_history(p, &pur.eta, &rel.anc, t);
            let gram = pinv(&cov(&basis, &eta_hist, &eta_hist));
            let mut gains = Vec::new();
            for maps in [&maps_a, &maps_b] {
                let uparts: Vec<NoiseMap> =
                    (0..t).map(|s| maps.u[s].select(&su, &rel.anc)).collect();
                let urefs: Vec<&NoiseMap> = uparts.iter().collect();
                let uhist = NoiseMap::vcat(&urefs);
                let xf = maps.x[t].select(&sx, &rel.funnel);
                let xi = &xf - &uhist.apply(&d);
                let g = cov(&basis, &xi, &eta_hist) * &gram;
                // Sanity: the decomposition reproduces the exact estimate.
                let est =
                    structured::conditioned_estimate(p, &st, &basis, &maps.y, &maps.x[t], j, t);
                let rebuilt = &uhist.apply(&d) + &eta_hist.apply(&g);
                decomp_err = decomp_err.max((&est.m - &rebuilt.m).amax());
                gains.push(g);
            }
            gain_err = gain_err.max((&gains[0] - &gains[1]).amax());
        }
    }
    metrics.push(("estimate_strategy_independence".into(), gain_err));
    metrics.push(("estimate_decomposition".into(), decomp_err));

    Ok(finish(
        "lemma-battery",
        "partition, aggregated edge absence, partial separation",
        desc,
        metrics,
        TOL_EXACT,
        true,
        start,
    ))
}

/// Builds the shipped negative control: two decoupled nodes with both
/// coupled cost and correlated noise, which defeats the sufficiency of the
/// local estimates. Deterministic.
pub fn negative_control_instance() -> ProblemData {
    let dag = Dag::new(2, &[]).unwrap();
    let dims = NodeDims::uniform(2, 1, 1, 1);
    let mut p = ProblemData::zeros(dag, dims, 3);
    for t in 0..3 {
        p.a[t] = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.8]);
        p.b[t] = DMatrix::identity(2, 2);
        p.c[t] = DMatrix::identity(2, 2);
        // Strong cost coupling between the nodes.
        p.q[t] = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        p.r[t] = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        // Strong process-noise correlation.
        p.w[t] = DMatrix::from_row_slice(2, 2, &[1.0, 0.95, 0.95, 1.0]);
        p.v[t] = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]);
    }
    p.p_final = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
    p.sigma_init = DMatrix::from_row_slice(2, 2, &[1.0, 0.95, 0.95, 1.0]);
    p
}

/// Zeroes every noise-set block between the pair (restores A2' on that axis).
pub fn decorrelate_noise(p: &ProblemData, i: usize, j: usize) -> ProblemData {
    let mut out = p.clone();
    let sx = p.dims.state_map();
    let sy = p.dims.meas_map();
    let zero = |m: &mut DMatrix<f64>, rm: &model::BlockMap, cm: &model::BlockMap| {
        for (a, b) in [(i, j), (j, i)] {
            for r in rm.offset(a)..rm.offset(a) + rm.dim(a) {
                for c in cm.offset(b)..cm.offset(b) + cm.dim(b) {
                    m[(r, c)] = 0.0;
                }
            }
        }
    };
    for t in 0..p.horizon {
        zero(&mut out.w[t], &sx, &sx);
        zero(&mut out.v[t], &sy, &sy);
        zero(&mut out.u_cross[t], &sy, &sx);
    }
    zero(&mut out.sigma_init, &sx, &sx);
    out
}

/// Zeroes every cost-set block between the pair.
pub fn decouple_cost(p: &ProblemData, i: usize, j: usize) -> ProblemData {
    let mut out = p.clone();
    let sx = p.dims.state_map();
    let su = p.dims.input_map();
    let zero = |m: &mut DMatrix<f64>, rm: &model::BlockMap, cm: &model::BlockMap| {
        for (a, b) in [(i, j), (j, i)] {
            for r in rm.offset(a)..rm.offset(a) + rm.dim(a) {
                for c in cm.offset(b)..cm.offset(b) + cm.dim(b) {
                    m[(r, c)] = 0.0;
                }
            }
        }
    };
    for t in 0..p.horizon {
        zero(&mut out.q[t], &sx, &sx);
        zero(&mut out.r[t], &su, &su);
        zero(&mut out.s_cross[t], &sx, &su);
    }
    zero(&mut out.p_final, &sx, &sx);
    out
}

fn theorem1_max_residual(p: &ProblemData) -> Result<f64> {
    let basis = PrimitiveBasis::new(p);
    let st = Structure::new(p)?;
    let (strat, _, _) = oracle::solve(p, &basis, false)?;
    let maps = oracle::closed_loop(p, &basis, &strat);
    let zstar = all_estimates(p, &st, &basis, &maps);
    let su = p.dims.input_map();
    let mut worst = 0.0_f64;
    for i in 0..p.node_count() {
        if p.dims.input[i] == 0 {
            continue;
        }
        for t in 0..p.horizon {
            let target = maps.u[t].select(&su, &[i]);
            let regs: Vec<&NoiseMap> = st.rels[i].anc.iter().map(|&j| &zstar[t][j]).collect();
            worst = worst.max(projection_residual(&basis, &target, &regs));
        }
    }
    Ok(worst)
}

/// Runs the projection test on an instance that violates the relaxed
/// assumption, and on the two repaired variants. Advisory: the theory
/// guarantees violating instances exist, not that every one violates.
pub fn run_negative_control(p: &ProblemData) -> Result<ExperimentReport> {
    let start = Instant::now();
    let rep = model::check_a2prime(p, 0.0);
    if rep.holds {
        return Err(Error::Validation(
            "negative control expects an instance violating the relaxed assumption".into(),
        ));
    }
    let (i, j) = rep.violating_pairs[0];
    let coupled = theorem1_max_residual(p)?;
    let noise_fixed = theorem1_max_residual(&decorrelate_noise(p, i, j))?;
    let cost_fixed = theorem1_max_residual(&decouple_cost(p, i, j))?;
    let desc = InstanceDescriptor::new("negative-control", p, 0);
    Ok(finish(
        "negative-control",
        "with both couplings the local estimates stop being sufficient",
        desc,
        vec![
            ("residual_coupled".into(), coupled),
            ("residual_noise_decorrelated".into(), noise_fixed),
            ("residual_cost_decoupled".into(), cost_fixed),
        ],
        TOL_SOLVE,
        false,
        start,
    ))
}

/// Extracts the single-node subproblem of node `i` (used by the
/// disconnected-system experiment).
pub fn sub_problem(p: &ProblemData, i: usize) -> ProblemData {
    model::restriction(p, &[i])
}

/// The worked examples: centralized, disconnected, chain, broadcasts, and
/// the five-node graph, each with its structure prediction.
pub fn run_examples(base_seed: u64) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();

    // Example 1: centralized. The projection residual of the optimum on the
    // global estimate is numerically zero.
    {
        let dag = Dag::new(1, &[]).unwrap();
        let dims = NodeDims::uniform(1, 2, 1, 1);
        let p = model::random_instance(&dag, &dims, 3, base_seed, AssumptionMode::A2)?;
        let desc = InstanceDescriptor::new("centralized", &p, base_seed);
        let mut rep = run_theorem1(&p, desc)?;
        rep.id = "example1-centralized".into();
        rep.anchor = "classical separation".into();
        out.push(rep);
    }

    // Example 2: disconnected systems under the relaxed assumption. The
    // oracle cost must equal the sum of per-node centralized costs, and the
    // cross-node estimate vanishes for uncorrelated-noise pairs.
    {
        let dag = Dag::new(3, &[]).unwrap();
        let dims = random_dims(3, base_seed.wrapping_add(2));
        let p = model::random_instance(
            &dag,
            &dims,
            3,
            base_seed.wrapping_add(2),
            AssumptionMode::A2Prime,
        )?;
        let start = Instant::now();
        let basis = PrimitiveBasis::new(&p);
        let (_, jstar, _) = oracle::solve(&p, &basis, false)?;
        let mut jsum = 0.0;
        for i in 0..3 {
            let sub = sub_problem(&p, i);
            let ric = centralized::solve_lqr(&sub)?;
            let kal = centralized::solve_kalman(&sub)?;
            jsum += centralized::optimal_cost(&sub, &ric, &kal);
        }
        let cost_gap = (jstar - jsum).abs() / jsum.abs().max(1e-12);

        // Cross estimates vanish where noise is uncorrelated.
        let st = Structure::new(&p)?;
        let strat = LinearStrategy::random(&p, base_seed, 0.3);
        let maps = lingauss::propagate(&p, &basis, &strat)?;
        let sx = p.dims.state_map();
        let mut zero_est = 0.0_f64;
        for c in model::classify_pairs(&p, 0.0) {
            if !c.uncorrelated_noise {
                continue;
            }
            let (i, j) = c.pair;
            for (a, b) in [(i, j), (j, i)] {
                for t in 0..=p.horizon {
                    let hist = stack_history(&p, &maps.y, &st.rels[a].anc, t.min(p.horizon));
                    let target = maps.x[t].select(&sx, &[b]);
                    let (_, resid) = lingauss::condition(&basis, &target, &hist);
                    zero_est = zero_est.max((&target - &resid).m.amax());
                }
            }
        }
        let desc = InstanceDescriptor::new("disconnected(3)", &p, base_seed.wrapping_add(2));
        out.push(finish(
            "example2-disconnected",
            "per-node Kalman filters suffice; cross estimates vanish",
            desc,
            vec![
                ("oracle_vs_sum_of_locals".into(), cost_gap),
                ("uncorrelated_pair_estimate".into(), zero_est),
            ],
            TOL_SOLVE,
            true,
            start,
        ));
    }

    // Example 3: two-player chain and the three-node chain.
    for (label, n, off) in [("chain(2)", 2, 3u64), ("chain(3)", 3, 4u64)] {
        let (p, mut desc) = family_instance(
            Family::Chain(n),
            3,
            base_seed.wrapping_add(off),
            AssumptionMode::A2,
        )?;
        desc.graph = label.into();
        let mut rep = run_theorem1(&p, desc)?;
        rep.id = format!("example3-{label}");
        rep.anchor = "nested estimates along a chain".into();
        out.push(rep);
    }

    // Example 4: broadcast-out and broadcast-in.
    for (label, fam, off) in [
        ("broadcast-out(4)", Family::BroadcastOut(4), 5u64),
        ("broadcast-in(4)", Family::BroadcastIn(4), 6u64),
    ] {
        let (p, mut desc) =
            family_instance(fam, 3, base_seed.wrapping_add(off), AssumptionMode::A2)?;
        desc.graph = label.into();
        let mut rep = run_theorem1(&p, desc)?;
        rep.id = format!("example4-{label}");
        rep.anchor = "hub-and-leaf estimate structure".into();
        out.push(rep);
    }

    // Example 5: the five-node graph under the relaxed assumption.
    {
        let (p, desc) = family_instance(
            Family::FiveNode,
            3,
            base_seed.wrapping_add(7),
            AssumptionMode::A2Prime,
        )?;
        let mut rep = run_theorem1(&p, desc)?;
        rep.id = "example5-five-node".into();
        rep.anchor = "block-sparse gain structure on the five-node graph".into();
        out.push(rep);
    }

    Ok(out)
}

/// Theorem 1 across the instance families.
pub fn suite_theorem1(count: usize, base_seed: u64) -> Result<Vec<ExperimentReport>> {
    let families = [
        Family::Chain(2),
        Family::Chain(3),
        Family::Chain(4),
        Family::BroadcastOut(4),
        Family::BroadcastOut(5),
        Family::BroadcastIn(4),
        Family::BroadcastIn(5),
        Family::FiveNode,
        Family::FourNode,
        Family::RandomMultitree(4),
        Family::RandomMultitree(5),
    ];
    let mut out = Vec::new();
    let mut k = 0usize;
    while out.len() < count {
        let family = families[k % families.len()];
        let seed = base_seed.wrapping_add(k as u64);
        let horizon = 2 + (k % 3); // 2..=4
        let (p, desc) = family_instance(family, horizon, seed, AssumptionMode::A2)?;
        out.push(run_theorem1(&p, desc)?);
        k += 1;
    }
    Ok(out)
}

/// Theorem 2 across the instance families.
pub fn suite_theorem2(count: usize, base_seed: u64) -> Result<Vec<ExperimentReport>> {
    let families = [
        Family::Chain(2),
        Family::Chain(3),
        Family::Chain(4),
        Family::BroadcastOut(4),
        Family::BroadcastOut(5),
        Family::BroadcastIn(4),
        Family::BroadcastIn(5),
        Family::FiveNode,
        Family::FourNode,
        Family::RandomMultitree(4),
        Family::RandomMultitree(5),
    ];
    let mut out = Vec::new();
    let mut k = 0usize;
    while out.len() < count {
        let family = families[k % families.len()];
        let seed = base_seed.wrapping_add(1000 + k as u64);
        let horizon = 2 + (k % 4); // 2..=5
        let (p, desc) = family_instance(family, horizon, seed, AssumptionMode::A2)?;
        out.push(run_theorem2(&p, desc, seed.wrapping_add(500))?);
        k += 1;
    }
    Ok(out)
}

/// Lemma battery over the five-node graph and random multitrees.
pub fn suite_lemmas(n_random: usize, base_seed: u64) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    let (p, desc) = family_instance(Family::FiveNode, 2, base_seed, AssumptionMode::A2)?;
    out.push(run_lemma_battery(&p, desc)?);
    for k in 0..n_random {
        let seed = base_seed.wrapping_add(2000 + k as u64);
        let n = 3 + (k % 3); // 3..=5 with dynamics; pure graph checks go wider
        let (p, desc) = family_instance(Family::RandomMultitree(n), 2, seed, AssumptionMode::A2)?;
        out.push(run_lemma_battery(&p, desc)?);
    }
    Ok(out)
}
