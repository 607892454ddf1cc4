//! Globally optimal linear decentralized strategies by convex programming.
//!
//! Controls are parametrized on purified outputs: `eta_t = C_t xf_t + v_t`
//! where `xf` is the control-free state. The purified outputs are
//! strategy-independent, and causal ancestral gains on them span exactly the
//! admissible linear strategies, so the expected cost is a convex quadratic
//! in the gains. The exact minimizer solves the normal equations; it is the
//! ground truth the structural theorems are tested against.

use nalgebra::{DMatrix, DVector};

use crate::lingauss::{
    ancestor_sets, cov, ClosedLoopMaps, LinearStrategy, NoiseMap, PrimitiveBasis,
};
use crate::model::ProblemData;
use crate::{Error, Result};

/// Refuse to assemble normal equations beyond this many gain entries unless
/// forced; the oracle is a desk-scale instrument.
pub const THETA_GUARDRAIL: usize = 5000;

/// Strategy-independent information basis: purified outputs and the
/// control-free state chain.
#[derive(Debug, Clone)]
pub struct PurifiedBasis {
    /// `eta_t = C_t xf_t + v_t`, `t = 0..T`.
    pub eta: Vec<NoiseMap>,
    /// Control-free states `xf_t`, `t = 0..=T` (`xf_+ = A xf + w`).
    pub xfree: Vec<NoiseMap>,
}

/// Computes the purified outputs. Because `A` and `C` conform to the
/// sparsity matrix, `eta^j` depends only on primitives of `anc(j)`.
pub fn purify(p: &ProblemData, basis: &PrimitiveBasis) -> PurifiedBasis {
    let mut xfree = vec![basis.x0_map()];
    let mut eta = Vec::with_capacity(p.horizon);
    for t in 0..p.horizon {
        eta.push(&xfree[t].apply(&p.c[t]) + &basis.v_map(t));
        let next = &xfree[t].apply(&p.a[t]) + &basis.w_map(t);
        xfree.push(next);
    }
    PurifiedBasis { eta, xfree }
}

/// One gain block `Theta^{ij}_{t,s}`: `u^i_t += Theta * eta^j_s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaBlock {
    pub t: usize,
    pub s: usize,
    /// Acting node (input side), 0-based.
    pub i: usize,
    /// Source node (purified output side), 0-based; an ancestor of `i`.
    pub j: usize,
    pub rows: usize,
    pub cols: usize,
    /// Offset of this block's entries in the flattened parameter vector
    /// (row-major within the block).
    pub offset: usize,
}

/// Deterministic enumeration of the causal ancestral gain blocks.
#[derive(Debug, Clone)]
pub struct ThetaLayout {
    pub blocks: Vec<ThetaBlock>,
    pub total: usize,
}

impl ThetaLayout {
    pub fn new(p: &ProblemData) -> Self {
        let ancs = ancestor_sets(p);
        let mut blocks = Vec::new();
        let mut offset = 0;
        for t in 0..p.horizon {
            for i in 0..p.node_count() {
                for &j in &ancs[i] {
                    for s in 0..t {
                        let rows = p.dims.input[i];
                        let cols = p.dims.meas[j];
                        if rows == 0 || cols == 0 {
                            continue;
                        }
                        blocks.push(ThetaBlock {
                            t,
                            s,
                            i,
                            j,
                            rows,
                            cols,
                            offset,
                        });
                        offset += rows * cols;
                    }
                }
            }
        }
        ThetaLayout {
            blocks,
            total: offset,
        }
    }
}

/// A causal linear strategy in purified-output coordinates.
#[derive(Debug, Clone)]
pub struct OracleStrategy {
    pub layout: ThetaLayout,
    /// Flattened gain entries (block row-major).
    pub theta: DVector<f64>,
}

impl OracleStrategy {
    /// The gain block as a matrix.
    pub fn block(&self, b: &ThetaBlock) -> DMatrix<f64> {
        DMatrix::from_fn(b.rows, b.cols, |r, c| self.theta[b.offset + r * b.cols + c])
    }
}

/// Diagnostics of the normal-equation solve.
#[derive(Debug, Clone)]
pub struct SolveInfo {
    pub n_params: usize,
    /// Norm of the cost gradient at the reported minimizer.
    pub grad_norm: f64,
    /// Frobenius norm of the Hessian.
    pub hess_norm: f64,
    /// Condition estimate, reported when the eigenvalue path was taken.
    pub condition: Option<f64>,
}

/// The expected cost as an explicit quadratic in the flattened gains:
/// `J(theta) = constant + 2 g'theta + theta' H theta`.
#[derive(Debug, Clone)]
pub struct CostQuadratic {
    pub layout: ThetaLayout,
    pub hessian: DMatrix<f64>,
    pub gradient_half: DVector<f64>,
    pub constant: f64,
}

impl CostQuadratic {
    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        self.constant
            + 2.0 * self.gradient_half.dot(theta)
            + (theta.transpose() * &self.hessian * theta)[(0, 0)]
    }
}

/// Effect of `u_{t0}` on `x_t` (`t > t0`): `A_{t-1} ... A_{t0+1} B_{t0}`.
/// Entry `[t][t0]` is valid for `t0 < t <= T`. Strategy-independent.
pub fn control_impulse(p: &ProblemData) -> Vec<Vec<DMatrix<f64>>> {
    control_to_state(p)
}

fn control_to_state(p: &ProblemData) -> Vec<Vec<DMatrix<f64>>> {
    let t_end = p.horizon;
    let mut f = vec![vec![DMatrix::<f64>::zeros(0, 0); t_end]; t_end + 1];
    for t0 in 0..t_end {
        let mut cur = p.b[t0].clone();
        f[t0 + 1][t0] = cur.clone();
        for t in (t0 + 2)..=t_end {
            cur = &p.a[t - 1] * cur;
            f[t][t0] = cur.clone();
        }
    }
    f
}

/// Builds the exact quadratic form of the expected cost over the gain
/// parameters. The Hessian is assembled from Kronecker-factored block Grams:
/// the `(x, u)`-side factor couples input slots `(t, i)` through the cost
/// matrices, the information-side factor is the purified-output covariance.
pub fn cost_quadratic(p: &ProblemData, basis: &PrimitiveBasis) -> CostQuadratic {
    let layout = ThetaLayout::new(p);
    let pur = purify(p, basis);
    let su = p.dims.input_map();
    let sy = p.dims.meas_map();
    let nx = p.x_dim();
    let nu = p.u_dim();
    let t_end = p.horizon;
    let f = control_to_state(p);

    // Information-side covariance blocks: cov(eta^j_s, eta^{j'}_{s'}).
    let eta_gram = if t_end > 0 {
        let eta_all = NoiseMap::vcat(&pur.eta.iter().collect::<Vec<_>>());
        cov(basis, &eta_all, &eta_all)
    } else {
        DMatrix::zeros(0, 0)
    };
    let eta_off = |s: usize, j: usize| s * p.y_dim() + sy.offset(j);

    // D_{tau, t0, i}: response of the stage-(tau) cost vector to u^i_{t0}
    // (u-selector at tau = t0, state response afterwards, x rows only at T).
    let d_of = |tau: usize, t0: usize, i: usize| -> DMatrix<f64> {
        let di = p.dims.input[i];
        if tau == t0 {
            let mut d = DMatrix::zeros(nx + nu, di);
            for r in 0..di {
                d[(nx + su.offset(i) + r, r)] = 1.0;
            }
            d
        } else {
            let fb = &f[tau][t0];
            let cols = su.indices(&[i]);
            let rows = if tau == t_end { nx } else { nx + nu };
            let mut d = DMatrix::zeros(rows, di);
            for (c, &col) in cols.iter().enumerate() {
                for r in 0..nx {
                    d[(r, c)] = fb[(r, col)];
                }
            }
            d
        }
    };

    // Pairwise (x,u)-side Grams and per-slot linear terms.
    let slot = |t0: usize, i: usize| t0 * p.node_count() + i;
    let n_slots = t_end * p.node_count();
    let mut m_pair: Vec<Option<DMatrix<f64>>> = vec![None; n_slots * n_slots];
    let mut gmat: Vec<Option<DMatrix<f64>>> = vec![None; n_slots];

    let m0_sig: Vec<DMatrix<f64>> = (0..=t_end)
        .map(|tau| &pur.xfree[tau].m * &basis.sigma)
        .collect();

    for t0 in 0..t_end {
        for i in 0..p.node_count() {
            let di = p.dims.input[i];
            if di == 0 {
                continue;
            }
            let mut gm = DMatrix::zeros(di, basis.dim());
            for tau in t0..=t_end {
                let d = d_of(tau, t0, i);
                if tau == t_end {
                    gm += d.transpose() * &p.p_final * &m0_sig[tau];
                } else {
                    let dtphi = d.transpose() * p.stacked_cost(tau);
                    gm += dtphi.columns(0, nx) * &m0_sig[tau];
                }
            }
            gmat[slot(t0, i)] = Some(gm);

            for t0b in 0..=t0 {
                for ib in 0..p.node_count() {
                    let dib = p.dims.input[ib];
                    if dib == 0 {
                        continue;
                    }
                    let mut acc = DMatrix::zeros(di, dib);
                    for tau in t0..=t_end {
                        let da = d_of(tau, t0, i);
                        let db = d_of(tau, t0b, ib);
                        if tau == t_end {
                            let dax = da.rows(0, nx).into_owned();
                            let dbx = db.rows(0, nx).into_owned();
                            acc += dax.transpose() * &p.p_final * dbx;
                        } else {
                            acc += da.transpose() * p.stacked_cost(tau) * db;
                        }
                    }
                    m_pair[slot(t0, i) * n_slots + slot(t0b, ib)] = Some(acc);
                }
            }
        }
    }

    // Expand into the flat Hessian and gradient.
    let mut hess = DMatrix::zeros(layout.total, layout.total);
    let mut grad = DVector::zeros(layout.total);
    for a in &layout.blocks {
        let gm = gmat[slot(a.t, a.i)].as_ref().unwrap();
        let e = &pur.eta[a.s].select(&sy, &[a.j]);
        let gb = gm * e.m.transpose();
        for r in 0..a.rows {
            for c in 0..a.cols {
                grad[a.offset + r * a.cols + c] = gb[(r, c)];
            }
        }
        for b in &layout.blocks {
            let (hi, lo, swap) = if a.t >= b.t {
                (a, b, false)
            } else {
                (b, a, true)
            };
            let m = m_pair[slot(hi.t, hi.i) * n_slots + slot(lo.t, lo.i)]
                .as_ref()
                .unwrap();
            for r in 0..a.rows {
                for c in 0..a.cols {
                    let ka = a.offset + r * a.cols + c;
                    for rb in 0..b.rows {
                        for cb in 0..b.cols {
                            let kb = b.offset + rb * b.cols + cb;
                            if kb > ka {
                                continue;
                            }
                            let mval = if swap { m[(rb, r)] } else { m[(r, rb)] };
                            let gval = eta_gram[(eta_off(a.s, a.j) + c, eta_off(b.s, b.j) + cb)];
                            let v = mval * gval;
                            hess[(ka, kb)] = v;
                            hess[(kb, ka)] = v;
                        }
                    }
                }
            }
        }
    }

    let constant = crate::centralized::uncontrolled_cost(p);
    CostQuadratic {
        layout,
        hessian: hess,
        gradient_half: grad,
        constant,
    }
}

/// Solves the normal equations exactly and returns the optimal strategy,
/// the optimal cost, and solve diagnostics. Minimum-norm tie-breaking under
/// rank deficiency.
pub fn solve(
    p: &ProblemData,
    basis: &PrimitiveBasis,
    force: bool,
) -> Result<(OracleStrategy, f64, SolveInfo)> {
    let layout = ThetaLayout::new(p);
    if layout.total > THETA_GUARDRAIL && !force {
        return Err(Error::Guardrail(format!(
            "{} gain entries exceed the {} limit; pass force to override",
            layout.total, THETA_GUARDRAIL
        )));
    }
    let quad = cost_quadratic(p, basis);
    let h = &quad.hessian;
    let hess_norm = h.norm();
    let neg_g = -&quad.gradient_half;

    let (theta, condition) = match h.clone().cholesky() {
        Some(chol) => (chol.solve(&neg_g), None),
        None => {
            // Rank-deficient or indefinite-by-rounding: symmetric eigenvalue
            // pseudoinverse, minimum-norm solution, condition reported.
            let eig = ((h + h.transpose()) * 0.5).symmetric_eigen();
            let emax = eig.eigenvalues.amax();
            let cut = 1e-12 * emax.max(1e-300);
            let mut x = DVector::zeros(layout.total);
            for k in 0..eig.eigenvalues.len() {
                let lam = eig.eigenvalues[k];
                if lam > cut {
                    let q = eig.eigenvectors.column(k);
                    x += q * (q.dot(&neg_g) / lam);
                }
            }
            let emin_pos = eig
                .eigenvalues
                .iter()
                .filter(|&&l| l > cut)
                .fold(f64::INFINITY, |a, &b| a.min(b));
            (x, Some(emax / emin_pos))
        }
    };

    let jstar = quad.eval(&theta);
    let grad = (&quad.gradient_half + h * &theta) * 2.0;
    let info = SolveInfo {
        n_params: layout.total,
        grad_norm: grad.norm(),
        hess_norm,
        condition,
    };
    Ok((
        OracleStrategy {
            layout: quad.layout,
            theta,
        },
        jstar,
        info,
    ))
}

/// Closed-loop maps under a purified-output strategy.
pub fn closed_loop(
    p: &ProblemData,
    basis: &PrimitiveBasis,
    strat: &OracleStrategy,
) -> ClosedLoopMaps {
    let pur = purify(p, basis);
    let su = p.dims.input_map();
    let sy = p.dims.meas_map();
    let mut x = vec![basis.x0_map()];
    let mut u = Vec::new();
    let mut y = Vec::new();
    for t in 0..p.horizon {
        let mut ut = NoiseMap::zeros(p.u_dim(), basis);
        for b in strat.layout.blocks.iter().filter(|b| b.t == t) {
            let g = strat.block(b);
            let contrib = pur.eta[b.s].select(&sy, &[b.j]).apply(&g);
            let off = su.offset(b.i);
            let mut view = ut.m.view_mut((off, 0), (b.rows, basis.dim()));
            view += &contrib.m;
        }
        let yt = &x[t].apply(&p.c[t]) + &basis.v_map(t);
        let xn = &(&x[t].apply(&p.a[t]) + &ut.apply(&p.b[t])) + &basis.w_map(t);
        u.push(ut);
        y.push(yt);
        x.push(xn);
    }
    ClosedLoopMaps { x, u, y }
}

/// `C_s A_{s-1} ... A_{r+1} B_r`: effect of `u_r` on `y_s` (`r < s`).
fn control_to_output(p: &ProblemData) -> Vec<Vec<DMatrix<f64>>> {
    let f = control_to_state(p);
    let mut out = vec![vec![DMatrix::<f64>::zeros(0, 0); p.horizon]; p.horizon];
    for s in 0..p.horizon {
        for r in 0..s {
            out[s][r] = &p.c[s] * &f[s][r];
        }
    }
    out
}

/// Converts purified-output gains to measurement-history gains: substitutes
/// `eta_s = y_s - (control correction)` and forward-eliminates the inputs.
/// The result respects the ancestral information structure exactly.
pub fn theta_to_strategy(p: &ProblemData, strat: &OracleStrategy) -> Result<LinearStrategy> {
    let ny = p.y_dim();
    let nu = p.u_dim();
    let cf = control_to_output(p);
    let su = p.dims.input_map();
    let sy = p.dims.meas_map();
    let ancs = ancestor_sets(p);

    // gamma_full[t]: u_t over the full y-history, nu x (t*ny).
    let mut gamma_full: Vec<DMatrix<f64>> = Vec::with_capacity(p.horizon);
    // eta_s over the y/u history with inputs eliminated: ny x ((s+1)*ny).
    let mut eta_ycoef: Vec<DMatrix<f64>> = Vec::with_capacity(p.horizon);
    for s in 0..p.horizon {
        let mut coef = DMatrix::zeros(ny, (s + 1) * ny);
        coef.view_mut((0, s * ny), (ny, ny))
            .copy_from(&DMatrix::identity(ny, ny));
        for r in 0..s {
            let correction = &cf[s][r] * &gamma_full[r];
            let mut view = coef.view_mut((0, 0), (ny, r * ny));
            view -= &correction;
        }
        eta_ycoef.push(coef);

        let mut g = DMatrix::zeros(nu, s * ny);
        for b in strat.layout.blocks.iter().filter(|b| b.t == s) {
            let gb = strat.block(b);
            let ecoef = &eta_ycoef[b.s];
            let rows = sy.indices(&[b.j]);
            let sel = DMatrix::from_fn(rows.len(), ecoef.ncols(), |r, c| ecoef[(rows[r], c)]);
            let contrib = gb * sel;
            let uoff = su.offset(b.i);
            let mut view = g.view_mut((uoff, 0), (b.rows, contrib.ncols()));
            view += &contrib;
        }
        gamma_full.push(g);
    }

    // Restrict to ancestral columns; everything else must vanish.
    let mut out = LinearStrategy::zero(p);
    for t in 0..p.horizon {
        for i in 0..p.node_count() {
            let anc = &ancs[i];
            let anc_w = sy.dim_of(anc);
            let rows = su.indices(&[i]);
            let mut g = DMatrix::zeros(p.dims.input[i], t * anc_w);
            for s in 0..t {
                for &node in anc.iter() {
                    let d = p.dims.meas[node];
                    let src = s * ny + sy.offset(node);
                    let dst = s * anc_w + sy.offset_within(anc, node);
                    for (rr, &row) in rows.iter().enumerate() {
                        for cc in 0..d {
                            g[(rr, dst + cc)] = gamma_full[t][(row, src + cc)];
                        }
                    }
                }
                for node in 0..p.node_count() {
                    if anc.contains(&node) {
                        continue;
                    }
                    let d = p.dims.meas[node];
                    let src = s * ny + sy.offset(node);
                    for &row in rows.iter() {
                        for cc in 0..d {
                            let v = gamma_full[t][(row, src + cc)].abs();
                            if v > 1e-9 {
                                return Err(Error::Numerical(format!(
                                    "theta_to_strategy: non-ancestral leakage {v} at t={t}"
                                )));
                            }
                        }
                    }
                }
            }
            out.gains[t][i] = g;
        }
    }
    Ok(out)
}

/// Converts measurement-history gains to purified-output gains (the inverse
/// substitution `y_s = eta_s + control correction`).
pub fn strategy_to_theta(p: &ProblemData, strategy: &LinearStrategy) -> Result<OracleStrategy> {
    let layout = ThetaLayout::new(p);
    let ny = p.y_dim();
    let nu = p.u_dim();
    let cf = control_to_output(p);
    let su = p.dims.input_map();
    let sy = p.dims.meas_map();
    let ancs = ancestor_sets(p);

    // u_t over the eta history, built forward.
    let mut theta_full: Vec<DMatrix<f64>> = Vec::with_capacity(p.horizon);
    // y_s over the eta history.
    let mut y_ecoef: Vec<DMatrix<f64>> = Vec::with_capacity(p.horizon);
    for t in 0..p.horizon {
        let mut ycoef = DMatrix::zeros(ny, (t + 1) * ny);
        ycoef
            .view_mut((0, t * ny), (ny, ny))
            .copy_from(&DMatrix::identity(ny, ny));
        for r in 0..t {
            let corr = &cf[t][r] * &theta_full[r];
            let mut view = ycoef.view_mut((0, 0), (ny, r * ny));
            view += &corr;
        }
        y_ecoef.push(ycoef);

        let mut th = DMatrix::zeros(nu, t * ny);
        for i in 0..p.node_count() {
            let anc = &ancs[i];
            let anc_w = sy.dim_of(anc);
            let g = &strategy.gains[t][i];
            if g.ncols() != t * anc_w {
                return Err(Error::Dimension(format!(
                    "strategy gain at t={t}, node {} has {} columns, expected {}",
                    i + 1,
                    g.ncols(),
                    t * anc_w
                )));
            }
            for s in 0..t {
                for &node in anc.iter() {
                    let d = p.dims.meas[node];
                    let gcol = s * anc_w + sy.offset_within(anc, node);
                    let blk = g.view((0, gcol), (p.dims.input[i], d));
                    let rows = sy.indices(&[node]);
                    let ycoef = &y_ecoef[s];
                    let sel =
                        DMatrix::from_fn(rows.len(), ycoef.ncols(), |r, c| ycoef[(rows[r], c)]);
                    let contrib = blk * sel;
                    let uoff = su.offset(i);
                    let mut view = th.view_mut((uoff, 0), (p.dims.input[i], contrib.ncols()));
                    view += &contrib;
                }
            }
        }
        theta_full.push(th);
    }

    let mut theta = DVector::zeros(layout.total);
    for b in &layout.blocks {
        let rows = su.indices(&[b.i]);
        let cols = sy.indices(&[b.j]);
        for (r, &row) in rows.iter().enumerate() {
            for (c, &col) in cols.iter().enumerate() {
                theta[b.offset + r * b.cols + c] = theta_full[b.t][(row, b.s * ny + col)];
            }
        }
    }
    Ok(OracleStrategy { layout, theta })
}
