//! Classical finite-horizon LQG, used as the centralized building block.
//!
//! Operations here view a [`ProblemData`] as a single-controller problem:
//! one decision-maker sees the full measurement vector. The Riccati
//! recursion carries the cost cross term `S_cross`; the Kalman recursion
//! carries the process/measurement noise cross covariance `U`. The timing is
//! the predictor convention: `u_t` is chosen before `y_t` arrives, so the
//! estimate conditions on `y_{0:t-1}, u_{0:t-1}`.

use nalgebra::DMatrix;

use crate::graph::Dag;
use crate::lingauss::LinearStrategy;
use crate::model::{submatrix, NodeDims, ProblemData};
use crate::{Error, Result};

/// Backward Riccati pass: cost-to-go matrices and control gains.
///
/// With the cost `sum_t (x'Qx + 2x'Su + u'Ru) + x_T' P_final x_T` and
/// dynamics `x_+ = Ax + Bu + w`:
///
/// `K_t = -(R + B'P_+ B)^{-1} (B'P_+ A + S')`
/// `P_t = Q + A'P_+ A - (S + A'P_+ B)(R + B'P_+ B)^{-1}(S' + B'P_+ A)`
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// `P_t` for `t = 0..=T`.
    pub p: Vec<DMatrix<f64>>,
    /// `K_t` for `t = 0..T`.
    pub k: Vec<DMatrix<f64>>,
}

/// Forward Kalman pass in predictor form.
///
/// `sigma[t]` is the error covariance of `z_t = E[x_t | y_{0:t-1}, u_{0:t-1}]`
/// and `l[t]` the gain in the update `z_+ = A z + B u - L (y - C z)`, i.e.
/// `L_t = -(A S C' + U')(C S C' + V)^{-1}`.
#[derive(Debug, Clone)]
pub struct KalmanSolution {
    /// `Sigma_t` for `t = 0..=T`.
    pub sigma: Vec<DMatrix<f64>>,
    /// `L_t` for `t = 0..T`.
    pub l: Vec<DMatrix<f64>>,
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str, t: usize) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    match sym.cholesky() {
        Some(chol) => Ok(chol.solve(rhs)),
        None => Err(Error::Numerical(format!("{what} is singular at t={t}"))),
    }
}

/// Backward Riccati recursion with the cross term.
pub fn solve_lqr(p: &ProblemData) -> Result<RiccatiSolution> {
    let t_end = p.horizon;
    let mut ps = vec![DMatrix::zeros(0, 0); t_end + 1];
    let mut ks = vec![DMatrix::zeros(0, 0); t_end];
    ps[t_end] = p.p_final.clone();
    for t in (0..t_end).rev() {
        let (a, b) = (&p.a[t], &p.b[t]);
        let pn = &ps[t + 1];
        let btp = b.transpose() * pn;
        let h = &p.r[t] + &btp * b;
        let lin = &btp * a + p.s_cross[t].transpose();
        let k = -solve_spd(&h, &lin, "R + B'P B", t)?;
        // Completed square: P_t = Q + A'P_+A - lin' H^{-1} lin = Q + A'P_+A + lin' K.
        let pt = &p.q[t] + a.transpose() * pn * a + lin.transpose() * &k;
        ps[t] = (&pt + &pt.transpose()) * 0.5;
        ks[t] = k;
    }
    Ok(RiccatiSolution { p: ps, k: ks })
}

/// Forward Kalman recursion in predictor form with the `U` cross term.
pub fn solve_kalman(p: &ProblemData) -> Result<KalmanSolution> {
    let t_end = p.horizon;
    let mut sigmas = Vec::with_capacity(t_end + 1);
    let mut ls = Vec::with_capacity(t_end);
    sigmas.push(p.sigma_init.clone());
    for t in 0..t_end {
        let (a, c) = (&p.a[t], &p.c[t]);
        let sig = &sigmas[t];
        let innov = c * sig * c.transpose() + &p.v[t];
        let cross = a * sig * c.transpose() + p.u_cross[t].transpose();
        // L = -(A S C' + U') (C S C' + V)^{-1}
        let lt = -solve_spd(
            &innov,
            &cross.transpose(),
            "innovation covariance C S C' + V",
            t,
        )?
        .transpose();
        let next = a * sig * a.transpose() + &p.w[t] - &lt * innov * lt.transpose();
        sigmas.push((&next + &next.transpose()) * 0.5);
        ls.push(lt);
    }
    Ok(KalmanSolution {
        sigma: sigmas,
        l: ls,
    })
}

/// Exact optimal cost in trace form:
/// `tr(P_0 Sigma_init) + sum_t tr(P_{t+1} W_t)
///  + sum_t tr(K_t' (R + B'P_+ B) K_t Sigma_t)`.
pub fn optimal_cost(p: &ProblemData, ric: &RiccatiSolution, kal: &KalmanSolution) -> f64 {
    let mut j = (&ric.p[0] * &p.sigma_init).trace();
    for t in 0..p.horizon {
        j += (&ric.p[t + 1] * &p.w[t]).trace();
        let h = &p.r[t] + p.b[t].transpose() * &ric.p[t + 1] * &p.b[t];
        j += (ric.k[t].transpose() * h * &ric.k[t] * &kal.sigma[t]).trace();
    }
    j
}

/// Expected cost of the uncontrolled system (`u = 0`): covariance
/// propagation only.
pub fn uncontrolled_cost(p: &ProblemData) -> f64 {
    let mut sig = p.sigma_init.clone();
    let mut j = 0.0;
    for t in 0..p.horizon {
        j += (&p.q[t] * &sig).trace();
        sig = &p.a[t] * &sig * p.a[t].transpose() + &p.w[t];
    }
    j + (&p.p_final * &sig).trace()
}

/// Unrolls `u_t = K_t z_t` with the predictor recursion into explicit gains
/// on the full measurement history: `u_t = sum_{s<t} Gamma_{t,s} y_s`.
///
/// `z_+ = (A + BK + LC) z - L y`, so the history gains follow by forward
/// substitution.
pub fn centralized_history_gains(
    p: &ProblemData,
    ric: &RiccatiSolution,
    kal: &KalmanSolution,
) -> Vec<Vec<DMatrix<f64>>> {
    // zmap[s] is the coefficient of y_s in z_t, updated in place over t.
    let mut zmap: Vec<DMatrix<f64>> = Vec::new();
    let mut gains = Vec::with_capacity(p.horizon);
    for t in 0..p.horizon {
        gains.push(zmap.iter().map(|m| &ric.k[t] * m).collect::<Vec<_>>());
        if t + 1 < p.horizon {
            let closed = &p.a[t] + &p.b[t] * &ric.k[t] + &kal.l[t] * &p.c[t];
            for m in zmap.iter_mut() {
                *m = &closed * &*m;
            }
            zmap.push(-kal.l[t].clone());
        }
    }
    gains
}

/// The certainty-equivalent optimal strategy as a [`LinearStrategy`].
/// Only valid for single-node problems, where the centralized information
/// set coincides with the decentralized one.
pub fn optimal_strategy(p: &ProblemData) -> Result<LinearStrategy> {
    if p.node_count() != 1 {
        return Err(Error::Dimension(
            "optimal_strategy: centralized assembly needs a single-node problem".into(),
        ));
    }
    let ric = solve_lqr(p)?;
    let kal = solve_kalman(p)?;
    let per_time = centralized_history_gains(p, &ric, &kal);
    let ny = p.y_dim();
    let nu = p.u_dim();
    let mut strat = LinearStrategy::zero(p);
    for (t, blocks) in per_time.into_iter().enumerate() {
        let mut g = DMatrix::zeros(nu, t * ny);
        for (s, blk) in blocks.into_iter().enumerate() {
            g.view_mut((0, s * ny), (nu, ny)).copy_from(&blk);
        }
        strat.gains[t][0] = g;
    }
    Ok(strat)
}

/// The universal six-node sparsity pattern of the aggregated graph
/// (paper ordering of the six aggregate nodes).
pub const SIX_NODE_PATTERN: [[u8; 6]; 6] = [
    [1, 0, 0, 0, 0, 0],
    [0, 1, 0, 0, 0, 0],
    [1, 0, 1, 0, 0, 0],
    [0, 1, 0, 1, 0, 0],
    [1, 1, 1, 0, 1, 0],
    [1, 1, 0, 1, 0, 1],
];

/// Result of the six-node reduction: a single-node centralized subproblem on
/// the states of nodes (1, 3, 5) plus the strategy-independent constant.
#[derive(Debug, Clone)]
pub struct SixNodeReduction {
    /// Centralized subproblem (single-node graph) on `x^{1,3,5}` and `u^3`.
    pub reduced: ProblemData,
    /// Constant cost offset: full-problem cost minus reduced-problem cost,
    /// identical for every strategy of node 3.
    pub constant: f64,
}

/// Reduces a six-node-pattern problem with decision node 3 to a centralized
/// LQG on the states of nodes (1, 3, 5).
///
/// Requirements: six nodes whose reachability conforms to the universal
/// pattern, inputs and measurements only at node 3, and assumption A2.
/// Node 2's state can be dropped because its estimate given node 3's
/// information vanishes; nodes 4 and 6 contribute strategy-independent cost
/// only. The constant is computed exactly as a difference of uncontrolled
/// costs.
pub fn six_node_reduce(p: &ProblemData) -> Result<SixNodeReduction> {
    if p.node_count() != 6 {
        return Err(Error::Validation(format!(
            "six_node_reduce expects 6 nodes, got {}",
            p.node_count()
        )));
    }
    let s = p.sparsity();
    for i in 0..6 {
        for j in 0..6 {
            if s.entry(i, j) == 1 && SIX_NODE_PATTERN[i][j] == 0 {
                return Err(Error::Validation(format!(
                    "reachability {} -> {} is not allowed by the six-node pattern",
                    j + 1,
                    i + 1
                )));
            }
        }
    }
    for i in 0..6 {
        if i != 2 && p.dims.input[i] != 0 {
            return Err(Error::Validation(format!(
                "only node 3 may have inputs; node {} has input dim {}",
                i + 1,
                p.dims.input[i]
            )));
        }
        if i != 2 && p.dims.meas[i] != 0 {
            return Err(Error::Validation(format!(
                "only node 3 may have measurements; node {} has measurement dim {}",
                i + 1,
                p.dims.meas[i]
            )));
        }
    }
    let a2 = crate::model::check_a2(p, 0.0);
    if !a2.holds {
        return Err(Error::Validation(format!(
            "six_node_reduce requires A2; first violation: {}",
            a2.violations[0]
        )));
    }

    let keep = [0usize, 2, 4];
    let sx = p.dims.state_map();
    let su = p.dims.input_map();
    let sy = p.dims.meas_map();
    let nxr = sx.dim_of(&keep);
    let dims = NodeDims {
        state: vec![nxr],
        input: vec![p.dims.input[2]],
        meas: vec![p.dims.meas[2]],
    };
    let dag = Dag::new(1, &[]).expect("single node");
    let mut red = ProblemData::zeros(dag, dims, p.horizon);
    for t in 0..p.horizon {
        red.a[t] = submatrix(&p.a[t], &sx, &keep, &sx, &keep);
        red.b[t] = submatrix(&p.b[t], &sx, &keep, &su, &[2]);
        red.c[t] = submatrix(&p.c[t], &sy, &[2], &sx, &keep);
        red.q[t] = submatrix(&p.q[t], &sx, &keep, &sx, &keep);
        red.r[t] = submatrix(&p.r[t], &su, &[2], &su, &[2]);
        red.s_cross[t] = submatrix(&p.s_cross[t], &sx, &keep, &su, &[2]);
        red.w[t] = submatrix(&p.w[t], &sx, &keep, &sx, &keep);
        red.v[t] = submatrix(&p.v[t], &sy, &[2], &sy, &[2]);
        red.u_cross[t] = submatrix(&p.u_cross[t], &sy, &[2], &sx, &keep);
    }
    red.p_final = submatrix(&p.p_final, &sx, &keep, &sx, &keep);
    red.sigma_init = submatrix(&p.sigma_init, &sx, &keep, &sx, &keep);

    let constant = uncontrolled_cost(p) - uncontrolled_cost(&red);
    Ok(SixNodeReduction {
        reduced: red,
        constant,
    })
}

/// A DAG realizing the universal six-node pattern.
pub fn six_node_pattern_dag() -> Dag {
    Dag::from_edges_1based(
        6,
        &[
            (1, 3),
            (1, 5),
            (1, 6),
            (2, 4),
            (2, 5),
            (2, 6),
            (3, 5),
            (4, 6),
        ],
    )
    .expect("static pattern")
}
