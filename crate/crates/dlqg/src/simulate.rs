//! Seeded Monte Carlo rollouts.
//!
//! The sampler is ChaCha12 with one stream per rollout (`set_stream(k)` on
//! the master seed), so empirical results are bit-reproducible and rollouts
//! are independent. Per-time noise is drawn jointly from
//! `[[W, U'], [U, V]]` through a single eigenvalue factorization, honoring
//! the process/measurement cross correlation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::lingauss::{ancestor_sets, LinearStrategy};
use crate::model::ProblemData;
use crate::structured::{control_step, estimator_step, Structure, StructuredGains};
use crate::{Error, Result};

/// Eigenvalues below this (relative to the largest) are clipped to zero when
/// factoring semidefinite covariances.
pub const EIG_CLIP: f64 = 1e-12;

/// Either controller representation runs through the same rollout loop.
pub enum Controller<'a> {
    Linear(&'a LinearStrategy),
    Structured(&'a StructuredGains),
}

/// One simulated trajectory.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub seed: u64,
    pub stream: u64,
    /// The sampled primitive vector `(x_0, w_0, v_0, ..., w_{T-1}, v_{T-1})`
    /// in the layout of [`crate::lingauss::PrimitiveBasis`].
    pub primitives: DVector<f64>,
    /// `x_t`, `t = 0..=T`.
    pub x: Vec<DVector<f64>>,
    /// `u_t`, `t = 0..T`.
    pub u: Vec<DVector<f64>>,
    /// `y_t`, `t = 0..T`.
    pub y: Vec<DVector<f64>>,
    /// Realized quadratic cost of this trajectory.
    pub cost: f64,
}

/// Square factor `F` with `F F' = M` via symmetric eigendecomposition with
/// eigenvalue clipping (A2 zero blocks routinely make covariances singular).
fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let emax = eig.eigenvalues.amax().max(0.0);
    let mut f = eig.eigenvectors.clone();
    for k in 0..eig.eigenvalues.len() {
        let lam = eig.eigenvalues[k];
        if lam < -EIG_CLIP * emax.max(1.0) {
            return Err(Error::Numerical(format!(
                "covariance has eigenvalue {lam:.3e}; not PSD"
            )));
        }
        let s = lam.max(0.0).sqrt();
        for r in 0..f.nrows() {
            f[(r, k)] *= s;
        }
    }
    Ok(f)
}

fn draw_gaussian(rng: &mut ChaCha12Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| rng.sample(StandardNormal));
    factor * z
}

/// Samples one trajectory. For [`Controller::Structured`] the estimator
/// recursion runs online per node; for [`Controller::Linear`] each node
/// applies its history gains directly.
pub fn rollout(
    p: &ProblemData,
    controller: &Controller<'_>,
    seed: u64,
    stream: u64,
) -> Result<Rollout> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let st = Structure::new(p)?;
    let ancs = ancestor_sets(p);
    let sy = p.dims.meas_map();
    let su = p.dims.input_map();
    let nx = p.x_dim();

    let f_init = psd_factor(&p.sigma_init)?;
    let f_noise: Vec<DMatrix<f64>> = (0..p.horizon)
        .map(|t| psd_factor(&p.stacked_noise(t)))
        .collect::<Result<_>>()?;

    let ny = p.y_dim();
    let mut primitives = DVector::zeros(nx + p.horizon * (nx + ny));
    let x0 = draw_gaussian(&mut rng, &f_init);
    primitives.rows_mut(0, nx).copy_from(&x0);
    let mut x = vec![x0];
    let mut u: Vec<DVector<f64>> = Vec::with_capacity(p.horizon);
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(p.horizon);
    let mut cost = 0.0;

    // Estimator state for the structured controller.
    let mut z: Vec<DVector<f64>> = (0..p.node_count())
        .map(|j| DVector::zeros(st.funnel_xdim(p, j)))
        .collect();

    for t in 0..p.horizon {
        let ut = match controller {
            Controller::Linear(strat) => {
                let mut ut = DVector::zeros(p.u_dim());
                for i in 0..p.node_count() {
                    let hist_len = t * sy.dim_of(&ancs[i]);
                    let mut hist = DVector::zeros(hist_len);
                    let mut off = 0;
                    for ys in y.iter().take(t) {
                        for &node in &ancs[i] {
                            let d = p.dims.meas[node];
                            hist.rows_mut(off, d)
                                .copy_from(&ys.rows(sy.offset(node), d));
                            off += d;
                        }
                    }
                    let ui = strat.control(t, i, &hist);
                    ut.rows_mut(su.offset(i), p.dims.input[i]).copy_from(&ui);
                }
                ut
            }
            Controller::Structured(gains) => {
                let mut ut = DVector::zeros(p.u_dim());
                for i in 0..p.node_count() {
                    let ui = control_step(p, &st, &gains.k[t], i, &z);
                    ut.rows_mut(su.offset(i), p.dims.input[i]).copy_from(&ui);
                }
                ut
            }
        };

        // Stage cost x'Qx + 2x'Su + u'Ru.
        let xt = &x[t];
        cost += (xt.transpose() * &p.q[t] * xt)[(0, 0)]
            + 2.0 * (xt.transpose() * &p.s_cross[t] * &ut)[(0, 0)]
            + (ut.transpose() * &p.r[t] * &ut)[(0, 0)];

        // Joint (w, v) draw, then y_t and x_{t+1} (y after u per the timing).
        let wv = draw_gaussian(&mut rng, &f_noise[t]);
        primitives
            .rows_mut(nx + t * (nx + ny), nx + ny)
            .copy_from(&wv);
        let wt = wv.rows(0, nx).into_owned();
        let vt = wv.rows(nx, ny).into_owned();
        let yt = &p.c[t] * xt + vt;
        let xn = &p.a[t] * xt + &p.b[t] * &ut + wt;

        // Structured estimator updates use (u^{anc}, y^{anc}) of time t.
        if let Controller::Structured(gains) = controller {
            let mut z_next = Vec::with_capacity(p.node_count());
            for j in 0..p.node_count() {
                let anc = &st.rels[j].anc;
                let mut u_anc = DVector::zeros(su.dim_of(anc));
                let mut y_anc = DVector::zeros(sy.dim_of(anc));
                let (mut uo, mut yo) = (0, 0);
                for &m in anc {
                    u_anc
                        .rows_mut(uo, p.dims.input[m])
                        .copy_from(&ut.rows(su.offset(m), p.dims.input[m]));
                    uo += p.dims.input[m];
                    y_anc
                        .rows_mut(yo, p.dims.meas[m])
                        .copy_from(&yt.rows(sy.offset(m), p.dims.meas[m]));
                    yo += p.dims.meas[m];
                }
                z_next.push(estimator_step(p, &st, gains, t, j, &z, &u_anc, &y_anc)?);
            }
            z = z_next;
        }

        u.push(ut);
        y.push(yt);
        x.push(xn);
    }
    let xt = &x[p.horizon];
    cost += (xt.transpose() * &p.p_final * xt)[(0, 0)];

    Ok(Rollout {
        seed,
        stream,
        primitives,
        x,
        u,
        y,
        cost,
    })
}

/// Sample mean and standard error of the realized cost over `n` rollouts
/// (streams `0..n` of the master seed).
pub fn empirical_cost(
    p: &ProblemData,
    controller: &Controller<'_>,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::Dimension("empirical_cost needs n >= 2".into()));
    }
    let mut costs = Vec::with_capacity(n);
    for k in 0..n {
        costs.push(rollout(p, controller, seed, k as u64)?.cost);
    }
    let mean = costs.iter().sum::<f64>() / n as f64;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, (var / n as f64).sqrt()))
}

/// Writes a rollout as CSV: one row per (time, node) with that node's state,
/// input, and measurement components (inputs/measurements empty at `t = T`).
pub fn rollout_csv(p: &ProblemData, r: &Rollout) -> String {
    let sx = p.dims.state_map();
    let su = p.dims.input_map();
    let sy = p.dims.meas_map();
    let dmax_x = (0..p.node_count())
        .map(|i| p.dims.state[i])
        .max()
        .unwrap_or(0);
    let dmax_u = (0..p.node_count())
        .map(|i| p.dims.input[i])
        .max()
        .unwrap_or(0);
    let dmax_y = (0..p.node_count())
        .map(|i| p.dims.meas[i])
        .max()
        .unwrap_or(0);
    let mut out = String::from("t,node");
    for k in 0..dmax_x {
        out.push_str(&format!(",x{k}"));
    }
    for k in 0..dmax_u {
        out.push_str(&format!(",u{k}"));
    }
    for k in 0..dmax_y {
        out.push_str(&format!(",y{k}"));
    }
    out.push('\n');
    for t in 0..=p.horizon {
        for i in 0..p.node_count() {
            out.push_str(&format!("{t},{}", i + 1));
            for k in 0..dmax_x {
                if k < p.dims.state[i] {
                    out.push_str(&format!(",{}", r.x[t][sx.offset(i) + k]));
                } else {
                    out.push(',');
                }
            }
            for k in 0..dmax_u {
                if t < p.horizon && k < p.dims.input[i] {
                    out.push_str(&format!(",{}", r.u[t][su.offset(i) + k]));
                } else {
                    out.push(',');
                }
            }
            for k in 0..dmax_y {
                if t < p.horizon && k < p.dims.meas[i] {
                    out.push_str(&format!(",{}", r.y[t][sy.offset(i) + k]));
                } else {
                    out.push(',');
                }
            }
            out.push('\n');
        }
    }
    out
}
