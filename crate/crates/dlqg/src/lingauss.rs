//! Exact linear-Gaussian calculus over the primitive random vector.
//!
//! Every closed-loop variable is a zero-mean Gaussian expressible as `M p`
//! where `p = (x_0, w_0, v_0, ..., w_{T-1}, v_{T-1})` stacks the primitive
//! random variables. Covariances, conditional expectations and expected
//! costs then reduce to exact matrix algebra — no sampling, no recursions.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::model::{subrows, BlockMap, ProblemData};
use crate::{Error, Result};

/// Singular values below `PINV_CUTOFF * sigma_max` are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Layout and covariance of the primitive random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveBasis {
    /// Total dimension of `p`.
    dim: usize,
    nx: usize,
    ny: usize,
    horizon: usize,
    /// Block-diagonal covariance of `p`.
    pub sigma: DMatrix<f64>,
}

impl PrimitiveBasis {
    /// Builds the basis from problem data: `Sigma_init` then the per-time
    /// joint `[[W, U^T], [U, V]]` blocks.
    pub fn new(p: &ProblemData) -> Self {
        let nx = p.x_dim();
        let ny = p.y_dim();
        let horizon = p.horizon;
        let dim = nx + horizon * (nx + ny);
        let mut sigma = DMatrix::zeros(dim, dim);
        sigma.view_mut((0, 0), (nx, nx)).copy_from(&p.sigma_init);
        for t in 0..horizon {
            let off = nx + t * (nx + ny);
            sigma
                .view_mut((off, off), (nx + ny, nx + ny))
                .copy_from(&p.stacked_noise(t));
        }
        PrimitiveBasis {
            dim,
            nx,
            ny,
            horizon,
            sigma,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Map selecting the `x_0` segment.
    pub fn x0_map(&self) -> NoiseMap {
        self.segment_map(0, self.nx)
    }

    /// Map selecting the `w_t` segment.
    pub fn w_map(&self, t: usize) -> NoiseMap {
        assert!(t < self.horizon);
        self.segment_map(self.nx + t * (self.nx + self.ny), self.nx)
    }

    /// Map selecting the `v_t` segment.
    pub fn v_map(&self, t: usize) -> NoiseMap {
        assert!(t < self.horizon);
        self.segment_map(self.nx + t * (self.nx + self.ny) + self.nx, self.ny)
    }

    fn segment_map(&self, offset: usize, len: usize) -> NoiseMap {
        let mut m = DMatrix::zeros(len, self.dim);
        for k in 0..len {
            m[(k, offset + k)] = 1.0;
        }
        NoiseMap { m }
    }
}

/// A zero-mean random vector represented by its coefficient matrix on the
/// primitive basis: the vector equals `m * p`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap {
    pub m: DMatrix<f64>,
}

impl NoiseMap {
    pub fn zeros(rows: usize, basis: &PrimitiveBasis) -> Self {
        NoiseMap {
            m: DMatrix::zeros(rows, basis.dim()),
        }
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    /// Stacks maps vertically.
    pub fn vcat(maps: &[&NoiseMap]) -> NoiseMap {
        let cols = maps.first().map_or(0, |m| m.m.ncols());
        let rows: usize = maps.iter().map(|m| m.m.nrows()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut r0 = 0;
        for m in maps {
            assert_eq!(m.m.ncols(), cols, "basis mismatch in vcat");
            out.view_mut((r0, 0), (m.m.nrows(), cols)).copy_from(&m.m);
            r0 += m.m.nrows();
        }
        NoiseMap { m: out }
    }

    /// Applies a deterministic linear map on the left.
    pub fn apply(&self, a: &DMatrix<f64>) -> NoiseMap {
        NoiseMap { m: a * &self.m }
    }

    /// Extracts the rows covering `nodes` of the per-node layout `map`.
    pub fn select(&self, map: &BlockMap, nodes: &[usize]) -> NoiseMap {
        NoiseMap {
            m: subrows(&self.m, map, nodes),
        }
    }

    /// Evaluates the map on a sampled primitive vector.
    pub fn eval(&self, p: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        &self.m * p
    }
}

impl std::ops::Add for &NoiseMap {
    type Output = NoiseMap;
    fn add(self, rhs: &NoiseMap) -> NoiseMap {
        NoiseMap {
            m: &self.m + &rhs.m,
        }
    }
}

impl std::ops::Sub for &NoiseMap {
    type Output = NoiseMap;
    fn sub(self, rhs: &NoiseMap) -> NoiseMap {
        NoiseMap {
            m: &self.m - &rhs.m,
        }
    }
}

/// Exact covariance `cov(a, b) = M_a Sigma_p M_b^T`.
pub fn cov(basis: &PrimitiveBasis, a: &NoiseMap, b: &NoiseMap) -> DMatrix<f64> {
    assert_eq!(a.m.ncols(), basis.dim(), "basis mismatch");
    assert_eq!(b.m.ncols(), basis.dim(), "basis mismatch");
    &a.m * &basis.sigma * b.m.transpose()
}

/// Moore-Penrose pseudoinverse with relative cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = PINV_CUTOFF * smax;
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > cut && s > 0.0 {
            sinv[(k, k)] = 1.0 / s;
        }
    }
    vt.transpose() * sinv * u.transpose()
}

/// Joint-Gaussian conditioning: returns the gain `G` with
/// `E[target | given] = G * given` and the residual map
/// `target - G * given` (orthogonal to `given`).
pub fn condition(
    basis: &PrimitiveBasis,
    target: &NoiseMap,
    given: &NoiseMap,
) -> (DMatrix<f64>, NoiseMap) {
    if given.rows() == 0 {
        return (DMatrix::zeros(target.rows(), 0), target.clone());
    }
    let ctg = cov(basis, target, given);
    let cgg = cov(basis, given, given);
    let g = ctg * pinv(&cgg);
    let residual = target - &given.apply(&g);
    (g, residual)
}

/// Relative projection residual of `target` on the joint span of
/// `regressors`: `sqrt(tr cov(e,e) / max(tr cov(target,target), eps))`.
pub fn projection_residual(
    basis: &PrimitiveBasis,
    target: &NoiseMap,
    regressors: &[&NoiseMap],
) -> f64 {
    let stacked = NoiseMap::vcat(regressors);
    let (_, resid) = condition(basis, target, &stacked);
    let num = cov(basis, &resid, &resid).trace();
    let den = cov(basis, target, target).trace();
    (num.max(0.0) / den.max(1e-30)).sqrt()
}

/// A causal linear output-feedback strategy: for each time `t` and node `i`,
/// a gain from the stacked ancestral measurement history
/// `[y^{anc(i)}_0; ...; y^{anc(i)}_{t-1}]` to `u^i_t`. Causality and the
/// information-structure sparsity are built into the representation.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStrategy {
    /// `gains[t][i]`: `du_i x (t * dy_anc(i))`.
    pub gains: Vec<Vec<DMatrix<f64>>>,
}

impl LinearStrategy {
    /// The all-zero strategy.
    pub fn zero(p: &ProblemData) -> Self {
        let sy = p.dims.meas_map();
        let ancs = ancestor_sets(p);
        let mut gains = Vec::with_capacity(p.horizon);
        for t in 0..p.horizon {
            let mut row = Vec::with_capacity(p.node_count());
            for i in 0..p.node_count() {
                let hist = t * sy.dim_of(&ancs[i]);
                row.push(DMatrix::zeros(p.dims.input[i], hist));
            }
            gains.push(row);
        }
        LinearStrategy { gains }
    }

    /// A seeded random strategy with entries scaled by `scale`.
    pub fn random(p: &ProblemData, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut s = LinearStrategy::zero(p);
        for t in 0..p.horizon {
            for i in 0..p.node_count() {
                let g = &mut s.gains[t][i];
                for r in 0..g.nrows() {
                    for c in 0..g.ncols() {
                        g[(r, c)] = scale * rng.gen_range(-1.0..1.0);
                    }
                }
            }
        }
        s
    }

    /// Numeric control: `u^i_t` from the realized ancestral measurement
    /// history (stacked like the gain's columns).
    pub fn control(
        &self,
        t: usize,
        i: usize,
        history: &nalgebra::DVector<f64>,
    ) -> nalgebra::DVector<f64> {
        &self.gains[t][i] * history
    }
}

/// Ancestor sets of every node (ascending).
pub fn ancestor_sets(p: &ProblemData) -> Vec<Vec<usize>> {
    let s = p.sparsity();
    (0..p.node_count())
        .map(|i| {
            crate::graph::relations_with(&s, i)
                .expect("node in range")
                .anc
        })
        .collect()
}

/// Closed-loop maps of every system variable under a linear strategy.
#[derive(Debug, Clone)]
pub struct ClosedLoopMaps {
    /// `x_t`, `t = 0..=T`.
    pub x: Vec<NoiseMap>,
    /// `u_t`, `t = 0..T`.
    pub u: Vec<NoiseMap>,
    /// `y_t`, `t = 0..T`.
    pub y: Vec<NoiseMap>,
}

impl ClosedLoopMaps {
    /// Stacked ancestral measurement history `[y^{anc}_0; ...; y^{anc}_{t-1}]`.
    pub fn y_history(&self, p: &ProblemData, nodes: &[usize], t: usize) -> NoiseMap {
        stack_history(p, &self.y, nodes, t)
    }
}

/// Stacks `[y^{nodes}_0; ...; y^{nodes}_{t-1}]` from per-time measurement maps.
pub fn stack_history(p: &ProblemData, y: &[NoiseMap], nodes: &[usize], t: usize) -> NoiseMap {
    let sy = p.dims.meas_map();
    let cols = y
        .first()
        .map_or(p.x_dim() + p.horizon * (p.x_dim() + p.y_dim()), |m| {
            m.m.ncols()
        });
    let parts: Vec<NoiseMap> = (0..t).map(|s| y[s].select(&sy, nodes)).collect();
    let refs: Vec<&NoiseMap> = parts.iter().collect();
    if refs.is_empty() {
        NoiseMap {
            m: DMatrix::zeros(0, cols),
        }
    } else {
        NoiseMap::vcat(&refs)
    }
}

/// Exact closed-loop propagation: timing is `x_t`, then `u_t` (from the
/// ancestral `y`-history), then `y_t`.
pub fn propagate(
    p: &ProblemData,
    basis: &PrimitiveBasis,
    strategy: &LinearStrategy,
) -> Result<ClosedLoopMaps> {
    if strategy.gains.len() != p.horizon {
        return Err(Error::Dimension(format!(
            "strategy has {} time slices, problem horizon is {}",
            strategy.gains.len(),
            p.horizon
        )));
    }
    let n = p.node_count();
    let su = p.dims.input_map();
    let ancs = ancestor_sets(p);

    let mut x = Vec::with_capacity(p.horizon + 1);
    let mut u = Vec::with_capacity(p.horizon);
    let mut y = Vec::with_capacity(p.horizon);
    x.push(basis.x0_map());
    for t in 0..p.horizon {
        // u_t from ancestral y-history.
        let mut ut = NoiseMap::zeros(p.u_dim(), basis);
        for i in 0..n {
            let g = &strategy.gains[t][i];
            let hist = stack_history(p, &y, &ancs[i], t);
            if g.ncols() != hist.rows() {
                return Err(Error::Dimension(format!(
                    "gain for node {} at t={} has {} columns, history has {} rows",
                    i + 1,
                    t,
                    g.ncols(),
                    hist.rows()
                )));
            }
            let ui = hist.apply(g);
            let off = su.offset(i);
            ut.m.view_mut((off, 0), (ui.rows(), basis.dim()))
                .copy_from(&ui.m);
        }
        u.push(ut);
        // y_t = C x_t + v_t.
        let yt = &x[t].apply(&p.c[t]) + &basis.v_map(t);
        y.push(yt);
        // x_{t+1} = A x_t + B u_t + w_t.
        let xn = &(&x[t].apply(&p.a[t]) + &u[t].apply(&p.b[t])) + &basis.w_map(t);
        x.push(xn);
    }
    Ok(ClosedLoopMaps { x, u, y })
}

/// Exact expected cost of closed-loop maps:
/// `sum_t tr(Phi_t cov([x;u])) + tr(P_final cov(x_T))`.
pub fn exact_cost(p: &ProblemData, basis: &PrimitiveBasis, maps: &ClosedLoopMaps) -> f64 {
    let mut j = 0.0;
    for t in 0..p.horizon {
        let xu = NoiseMap::vcat(&[&maps.x[t], &maps.u[t]]);
        j += (p.stacked_cost(t) * cov(basis, &xu, &xu)).trace();
    }
    j += (&p.p_final * cov(basis, &maps.x[p.horizon], &maps.x[p.horizon])).trace();
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dag;
    use crate::model::{self, NodeDims};
    use approx::assert_abs_diff_eq;

    fn scalar_problem(a: f64, b: f64, c: f64, horizon: usize) -> ProblemData {
        let dag = Dag::new(1, &[]).unwrap();
        let dims = NodeDims::uniform(1, 1, 1, 1);
        let mut p = ProblemData::zeros(dag, dims, horizon);
        for t in 0..horizon {
            p.a[t][(0, 0)] = a;
            p.b[t][(0, 0)] = b;
            p.c[t][(0, 0)] = c;
            p.q[t][(0, 0)] = 1.0;
            p.r[t][(0, 0)] = 1.0;
            p.w[t][(0, 0)] = 1.0;
            p.v[t][(0, 0)] = 1.0;
        }
        p.sigma_init[(0, 0)] = 1.0;
        p.p_final[(0, 0)] = 1.0;
        p
    }

    #[test]
    fn propagate_zero_strategy_zero_a() {
        let p = scalar_problem(0.0, 1.0, 1.0, 3);
        let basis = PrimitiveBasis::new(&p);
        let maps = propagate(&p, &basis, &LinearStrategy::zero(&p)).unwrap();
        // x_t = w_{t-1} for t >= 1; y_t = C w_{t-1} + v_t.
        for t in 1..=3 {
            assert_eq!(maps.x[t], basis.w_map(t - 1));
        }
        let y2 = &basis.w_map(1) + &basis.v_map(2);
        assert_eq!(maps.y[2], y2);
    }

    #[test]
    fn propagate_x0_is_identity_segment() {
        let p = scalar_problem(0.7, 0.0, 1.0, 2);
        let basis = PrimitiveBasis::new(&p);
        let maps = propagate(&p, &basis, &LinearStrategy::zero(&p)).unwrap();
        assert_eq!(maps.x[0], basis.x0_map());
    }

    #[test]
    fn propagate_scalar_chain_hand_expansion() {
        // A = B = C = 1, u_t = -y_{t-1}; T = 2.
        let p = scalar_problem(1.0, 1.0, 1.0, 2);
        let basis = PrimitiveBasis::new(&p);
        let mut strat = LinearStrategy::zero(&p);
        strat.gains[1][0] = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let maps = propagate(&p, &basis, &strat).unwrap();
        // u_0 = 0; x_1 = x_0 + w_0; y_0 = x_0 + v_0; u_1 = -y_0 = -(x_0+v_0);
        // x_2 = x_1 + u_1 + w_1 = w_0 + w_1 - v_0.
        let expect = &(&basis.w_map(0) + &basis.w_map(1)) - &basis.v_map(0);
        assert_abs_diff_eq!((&maps.x[2].m - &expect.m).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cov_reads_primitive_blocks() {
        let p = scalar_problem(1.0, 1.0, 1.0, 2);
        let mut p = p;
        p.u_cross[0][(0, 0)] = 0.25; // cov(v_0, w_0)
        let basis = PrimitiveBasis::new(&p);
        // cov(w_0, v_0) = U^T block.
        let c = cov(&basis, &basis.w_map(0), &basis.v_map(0));
        assert_abs_diff_eq!(c[(0, 0)], 0.25, epsilon = 1e-15);
        // Independence across segments.
        let c = cov(&basis, &basis.x0_map(), &basis.w_map(0));
        assert_abs_diff_eq!(c[(0, 0)], 0.0, epsilon = 1e-15);
        // cov(a, a) is PSD.
        let maps = propagate(&p, &basis, &LinearStrategy::zero(&p)).unwrap();
        let cxx = cov(&basis, &maps.x[2], &maps.x[2]);
        assert!(cxx[(0, 0)] >= 0.0);
    }

    #[test]
    fn condition_independent_gives_zero_gain() {
        let p = scalar_problem(1.0, 1.0, 1.0, 2);
        let basis = PrimitiveBasis::new(&p);
        let (g, _) = condition(&basis, &basis.w_map(1), &basis.x0_map());
        assert_abs_diff_eq!(g.amax(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn condition_self_gives_identity_on_support() {
        let p = scalar_problem(1.0, 1.0, 1.0, 2);
        let basis = PrimitiveBasis::new(&p);
        let (g, resid) = condition(&basis, &basis.x0_map(), &basis.x0_map());
        assert_abs_diff_eq!(g[(0, 0)], 1.0, epsilon = 1e-12);
        let rv = cov(&basis, &resid, &resid);
        assert_abs_diff_eq!(rv[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn condition_matches_schur_2d() {
        // Joint (a, b) with var(a) = 2, var(b) = 1, cov = 0.6 built from
        // primitives: a = x0 + w0 (var 1 + 1), b = ... use direct maps.
        let mut p = scalar_problem(0.0, 0.0, 1.0, 1);
        p.sigma_init[(0, 0)] = 1.0;
        p.w[0][(0, 0)] = 1.0;
        let basis = PrimitiveBasis::new(&p);
        let a = &basis.x0_map() + &basis.w_map(0); // var 2
        let b = &basis.x0_map().apply(&DMatrix::from_row_slice(1, 1, &[0.6]))
            + &basis.v_map(0).apply(&DMatrix::from_row_slice(1, 1, &[0.8]));
        // var(b) = 0.36 + 0.64 = 1, cov(a,b) = 0.6.
        let (g, resid) = condition(&basis, &a, &b);
        assert_abs_diff_eq!(g[(0, 0)], 0.6, epsilon = 1e-12);
        // Residual variance = 2 - 0.36 = 1.64 (Schur complement).
        let rv = cov(&basis, &resid, &resid);
        assert_abs_diff_eq!(rv[(0, 0)], 1.64, epsilon = 1e-12);
        // Orthogonality.
        let c = cov(&basis, &resid, &b);
        assert_abs_diff_eq!(c.amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_cost_trace_identity() {
        // Sigma_init = I, A = I, B = 0, Q = I, T = 1, P_final = 0, no noise:
        // J = E[x_0' x_0] = n_x.
        let dag = Dag::new(1, &[]).unwrap();
        let dims = NodeDims::uniform(1, 3, 1, 1);
        let mut p = ProblemData::zeros(dag, dims, 1);
        p.a[0] = DMatrix::identity(3, 3);
        p.q[0] = DMatrix::identity(3, 3);
        p.r[0] = DMatrix::identity(1, 1);
        p.sigma_init = DMatrix::identity(3, 3);
        let basis = PrimitiveBasis::new(&p);
        let maps = propagate(&p, &basis, &LinearStrategy::zero(&p)).unwrap();
        assert_abs_diff_eq!(exact_cost(&p, &basis, &maps), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_cost_zero_cost_matrices() {
        let mut p = scalar_problem(1.0, 1.0, 1.0, 2);
        for t in 0..2 {
            p.q[t].fill(0.0);
            p.r[t].fill(0.0);
        }
        p.p_final.fill(0.0);
        let basis = PrimitiveBasis::new(&p);
        let maps = propagate(&p, &basis, &LinearStrategy::random(&p, 5, 0.5)).unwrap();
        assert_abs_diff_eq!(exact_cost(&p, &basis, &maps), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_residual_limits() {
        let p = scalar_problem(1.0, 1.0, 1.0, 2);
        let basis = PrimitiveBasis::new(&p);
        let t = basis.w_map(0);
        // In span.
        let half = t.apply(&DMatrix::from_row_slice(1, 1, &[0.5]));
        assert_abs_diff_eq!(
            projection_residual(&basis, &t, &[&half]),
            0.0,
            epsilon = 1e-10
        );
        // Independent.
        let other = basis.w_map(1);
        assert_abs_diff_eq!(
            projection_residual(&basis, &t, &[&other]),
            1.0,
            epsilon = 1e-10
        );
        // Partial overlap: target = x0 + w0 (var 2), regressor = x0:
        // residual var 1, relative sqrt(1/2).
        let tgt = &basis.x0_map() + &basis.w_map(0);
        let r = projection_residual(&basis, &tgt, &[&basis.x0_map()]);
        assert_abs_diff_eq!(r, (0.5_f64).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn conditioning_orthogonality_on_random_instances() {
        let dag = Dag::from_edges_1based(3, &[(1, 2), (2, 3)]).unwrap();
        let dims = NodeDims::uniform(3, 1, 1, 1);
        for seed in 0..5 {
            let p =
                model::random_instance(&dag, &dims, 3, seed, model::AssumptionMode::A2).unwrap();
            let basis = PrimitiveBasis::new(&p);
            let maps = propagate(&p, &basis, &LinearStrategy::random(&p, seed, 0.4)).unwrap();
            let hist = maps.y_history(&p, &[0, 1, 2], 2);
            let (_, resid) = condition(&basis, &maps.x[2], &hist);
            let c = cov(&basis, &resid, &hist);
            assert!(c.amax() < 1e-10, "orthogonality violated: {}", c.amax());
        }
    }

    #[test]
    fn tower_property() {
        // Conditioning on a sub-block after conditioning on the full block
        // equals conditioning on the sub-block directly.
        let dag = Dag::from_edges_1based(2, &[(1, 2)]).unwrap();
        let dims = NodeDims::uniform(2, 1, 1, 1);
        let p = model::random_instance(&dag, &dims, 3, 11, model::AssumptionMode::A2).unwrap();
        let basis = PrimitiveBasis::new(&p);
        let maps = propagate(&p, &basis, &LinearStrategy::random(&p, 3, 0.4)).unwrap();
        let big = maps.y_history(&p, &[0, 1], 3);
        let small = maps.y_history(&p, &[0, 1], 2);
        let (gb, _) = condition(&basis, &maps.x[3], &big);
        let zbig = big.apply(&gb);
        let (gs1, _) = condition(&basis, &zbig, &small);
        let (gs2, _) = condition(&basis, &maps.x[3], &small);
        let diff = (&small.apply(&gs1).m - &small.apply(&gs2).m).amax();
        assert!(diff < 1e-9, "tower property violated: {diff}");
    }
}
