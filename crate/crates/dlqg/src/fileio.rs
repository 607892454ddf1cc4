//! Problem and report file formats (TOML, versioned schema ids).
//!
//! A problem file carries the graph (1-based edges), horizon, per-node
//! dimensions and a list of matrices with explicit shapes, row-major data,
//! and a time index for the time-varying ones. Omitted matrices default to
//! zero. Serialization round-trips losslessly (shortest-round-trip float
//! formatting).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::graph::Dag;
use crate::model::{NodeDims, ProblemData};
use crate::oracle::OracleStrategy;
use crate::verify::ExperimentReport;
use crate::{Error, Result};

pub const PROBLEM_SCHEMA: &str = "dlqg-problem/1";
pub const REPORT_SCHEMA: &str = "dlqg-report/1";

/// Time-varying matrix names accepted in problem files.
const TIMED: [&str; 9] = ["A", "B", "C", "Q", "R", "S_cross", "W", "V", "U"];
/// Static matrix names.
const STATIC: [&str; 2] = ["Sigma_init", "P_final"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSection {
    pub nodes: usize,
    /// 1-based directed edges.
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimsSection {
    pub state: Vec<usize>,
    pub input: Vec<usize>,
    pub meas: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

/// On-disk problem document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub schema: String,
    pub graph: GraphSection,
    pub horizon: usize,
    pub dims: DimsSection,
    #[serde(default, rename = "matrix")]
    pub matrices: Vec<MatrixEntry>,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: ProblemFile =
            toml::from_str(text).map_err(|e| Error::Io(format!("problem file: {e}")))?;
        if f.schema != PROBLEM_SCHEMA {
            return Err(Error::Io(format!(
                "unsupported schema '{}', expected '{}'",
                f.schema, PROBLEM_SCHEMA
            )));
        }
        Ok(f)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("problem files serialize")
    }

    /// Materializes the problem: resolves matrices, fills omitted ones with
    /// zeros, and checks shapes.
    pub fn to_problem(&self) -> Result<ProblemData> {
        let dag = Dag::from_edges_1based(self.graph.nodes, &self.graph.edges)?;
        let n = self.graph.nodes;
        if self.dims.state.len() != n || self.dims.input.len() != n || self.dims.meas.len() != n {
            return Err(Error::Io(
                "dims.state/input/meas must list one entry per node".into(),
            ));
        }
        let dims = NodeDims {
            state: self.dims.state.clone(),
            input: self.dims.input.clone(),
            meas: self.dims.meas.clone(),
        };
        let mut p = ProblemData::zeros(dag, dims, self.horizon);
        let (nx, nu, ny) = (p.x_dim(), p.u_dim(), p.y_dim());
        for m in &self.matrices {
            let want: (usize, usize) = match m.name.as_str() {
                "A" | "Q" | "W" => (nx, nx),
                "B" | "S_cross" => (nx, nu),
                "C" => (ny, nx),
                "R" => (nu, nu),
                "V" => (ny, ny),
                "U" => (ny, nx),
                "Sigma_init" | "P_final" => (nx, nx),
                other => {
                    return Err(Error::Io(format!(
                        "unknown matrix name '{other}' (expected one of {TIMED:?} or {STATIC:?})"
                    )))
                }
            };
            if (m.rows, m.cols) != want {
                return Err(Error::Io(format!(
                    "matrix {} has shape {}x{}, expected {}x{}",
                    m.name, m.rows, m.cols, want.0, want.1
                )));
            }
            if m.data.len() != m.rows * m.cols {
                return Err(Error::Io(format!(
                    "matrix {}: {} entries for a {}x{} shape",
                    m.name,
                    m.data.len(),
                    m.rows,
                    m.cols
                )));
            }
            let dense = DMatrix::from_row_slice(m.rows, m.cols, &m.data);
            if TIMED.contains(&m.name.as_str()) {
                let t = m
                    .t
                    .ok_or_else(|| Error::Io(format!("matrix {} needs a time index t", m.name)))?;
                if t >= self.horizon {
                    return Err(Error::Io(format!(
                        "matrix {} at t={t} outside horizon {}",
                        m.name, self.horizon
                    )));
                }
                match m.name.as_str() {
                    "A" => p.a[t] = dense,
                    "B" => p.b[t] = dense,
                    "C" => p.c[t] = dense,
                    "Q" => p.q[t] = dense,
                    "R" => p.r[t] = dense,
                    "S_cross" => p.s_cross[t] = dense,
                    "W" => p.w[t] = dense,
                    "V" => p.v[t] = dense,
                    "U" => p.u_cross[t] = dense,
                    _ => unreachable!(),
                }
            } else {
                if m.t.is_some() {
                    return Err(Error::Io(format!(
                        "matrix {} is static and takes no time index",
                        m.name
                    )));
                }
                match m.name.as_str() {
                    "Sigma_init" => p.sigma_init = dense,
                    "P_final" => p.p_final = dense,
                    _ => unreachable!(),
                }
            }
        }
        Ok(p)
    }

    /// Serializes a problem, omitting all-zero matrices.
    pub fn from_problem(p: &ProblemData) -> Self {
        let mut matrices = Vec::new();
        let mut push = |name: &str, t: Option<usize>, m: &DMatrix<f64>| {
            if m.nrows() == 0 || m.ncols() == 0 || m.amax() == 0.0 {
                return;
            }
            matrices.push(MatrixEntry {
                name: name.into(),
                t,
                rows: m.nrows(),
                cols: m.ncols(),
                data: m.transpose().as_slice().to_vec(),
            });
        };
        for t in 0..p.horizon {
            push("A", Some(t), &p.a[t]);
            push("B", Some(t), &p.b[t]);
            push("C", Some(t), &p.c[t]);
            push("Q", Some(t), &p.q[t]);
            push("R", Some(t), &p.r[t]);
            push("S_cross", Some(t), &p.s_cross[t]);
            push("W", Some(t), &p.w[t]);
            push("V", Some(t), &p.v[t]);
            push("U", Some(t), &p.u_cross[t]);
        }
        push("Sigma_init", None, &p.sigma_init);
        push("P_final", None, &p.p_final);
        ProblemFile {
            schema: PROBLEM_SCHEMA.into(),
            graph: GraphSection {
                nodes: p.node_count(),
                edges: p.dag.edges_1based(),
            },
            horizon: p.horizon,
            dims: DimsSection {
                state: p.dims.state.clone(),
                input: p.dims.input.clone(),
                meas: p.dims.meas.clone(),
            },
            matrices,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub id: String,
    pub anchor: String,
    pub graph: String,
    pub edges: Vec<(usize, usize)>,
    pub state_dims: Vec<usize>,
    pub horizon: usize,
    pub seed: u64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    pub runtime_ms: f64,
    pub metrics: Vec<(String, f64)>,
}

impl From<&ExperimentReport> for ExperimentEntry {
    fn from(r: &ExperimentReport) -> Self {
        ExperimentEntry {
            id: r.id.clone(),
            anchor: r.anchor.clone(),
            graph: r.instance.graph.clone(),
            edges: r.instance.edges.clone(),
            state_dims: r.instance.state_dims.clone(),
            horizon: r.instance.horizon,
            seed: r.instance.seed,
            tolerance: r.tolerance,
            passed: r.passed,
            runtime_ms: r.runtime_ms,
            metrics: r.metrics.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleGainEntry {
    pub t: usize,
    pub s: usize,
    /// 1-based acting node.
    pub node: usize,
    /// 1-based source node.
    pub source: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSection {
    pub optimal_cost: f64,
    pub n_params: usize,
    pub gradient_norm: f64,
    pub hessian_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<f64>,
    #[serde(default, rename = "gain")]
    pub gains: Vec<OracleGainEntry>,
}

impl OracleSection {
    pub fn new(strat: &OracleStrategy, jstar: f64, info: &crate::oracle::SolveInfo) -> Self {
        let gains = strat
            .layout
            .blocks
            .iter()
            .map(|b| OracleGainEntry {
                t: b.t,
                s: b.s,
                node: b.i + 1,
                source: b.j + 1,
                rows: b.rows,
                cols: b.cols,
                data: strat.block(b).transpose().as_slice().to_vec(),
            })
            .collect();
        OracleSection {
            optimal_cost: jstar,
            n_params: info.n_params,
            gradient_norm: info.grad_norm,
            hessian_norm: info.hess_norm,
            condition: info.condition,
            gains,
        }
    }
}

/// Assumption verdicts for a checked problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckSection {
    pub a1: bool,
    /// Diamond witness (1-based nodes) when A1 fails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diamond: Option<(usize, usize, usize, usize)>,
    pub a2: bool,
    #[serde(default)]
    pub a2_violations: Vec<String>,
    pub a2prime: bool,
    /// Pairs (1-based) that need a decoupling and have neither.
    #[serde(default)]
    pub a2prime_violating_pairs: Vec<(usize, usize)>,
}

impl CheckSection {
    pub fn from_report(rep: &crate::model::AssumptionReport) -> Self {
        CheckSection {
            a1: rep.a1,
            diamond: rep.diamond.map(|(i, a, b, j)| (i + 1, a + 1, b + 1, j + 1)),
            a2: rep.a2.holds,
            a2_violations: rep.a2.violations.iter().map(|v| v.to_string()).collect(),
            a2prime: rep.a2prime.holds,
            a2prime_violating_pairs: rep
                .a2prime
                .violating_pairs
                .iter()
                .map(|&(i, j)| (i + 1, j + 1))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuredKEntry {
    pub t: usize,
    /// 1-based acting node `i`.
    pub node: usize,
    /// 1-based estimate owner `j` (an ancestor of `i`).
    pub source: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuredLEntry {
    pub t: usize,
    /// 1-based node `j`.
    pub node: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Structured controller/estimator gains; omitted blocks default to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuredSection {
    #[serde(default, rename = "k_gain")]
    pub k_gains: Vec<StructuredKEntry>,
    #[serde(default, rename = "l_gain")]
    pub l_gains: Vec<StructuredLEntry>,
}

impl StructuredSection {
    pub fn from_gains(gains: &crate::structured::StructuredGains) -> Self {
        let mut k_gains = Vec::new();
        for (t, slice) in gains.k.iter().enumerate() {
            for (&(i, j), m) in slice {
                if m.amax() == 0.0 {
                    continue;
                }
                k_gains.push(StructuredKEntry {
                    t,
                    node: i + 1,
                    source: j + 1,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    data: m.transpose().as_slice().to_vec(),
                });
            }
        }
        let mut l_gains = Vec::new();
        for (t, slice) in gains.l.iter().enumerate() {
            for (j, m) in slice.iter().enumerate() {
                if m.nrows() == 0 || m.ncols() == 0 || m.amax() == 0.0 {
                    continue;
                }
                l_gains.push(StructuredLEntry {
                    t,
                    node: j + 1,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    data: m.transpose().as_slice().to_vec(),
                });
            }
        }
        StructuredSection { k_gains, l_gains }
    }

    /// Reconstructs gains against a problem, checking the information
    /// structure (`source` must be an ancestor of `node`) and block shapes.
    pub fn to_gains(&self, p: &ProblemData) -> Result<crate::structured::StructuredGains> {
        let st = crate::structured::Structure::new(p)?;
        let sx = p.dims.state_map();
        let sy = p.dims.meas_map();
        let mut k = vec![std::collections::BTreeMap::new(); p.horizon];
        for e in &self.k_gains {
            if e.node == 0 || e.source == 0 || e.node > p.node_count() || e.source > p.node_count()
            {
                return Err(Error::Io(format!(
                    "k_gain references node {} / source {} outside 1..={}",
                    e.node,
                    e.source,
                    p.node_count()
                )));
            }
            let (i, j) = (e.node - 1, e.source - 1);
            if e.t >= p.horizon {
                return Err(Error::Io(format!("k_gain at t={} outside horizon", e.t)));
            }
            if !st.rels[i].anc.contains(&j) {
                return Err(Error::Io(format!(
                    "k_gain ({}, {}) violates the information structure: {} is not an \
                     ancestor of {}",
                    e.node, e.source, e.source, e.node
                )));
            }
            let want = (p.dims.input[i], sx.dim_of(&st.rels[j].funnel));
            if (e.rows, e.cols) != want || e.data.len() != e.rows * e.cols {
                return Err(Error::Io(format!(
                    "k_gain ({}, {}) at t={} has wrong shape",
                    e.node, e.source, e.t
                )));
            }
            k[e.t].insert((i, j), DMatrix::from_row_slice(e.rows, e.cols, &e.data));
        }
        let mut l: Vec<Vec<DMatrix<f64>>> = (0..p.horizon)
            .map(|_| {
                (0..p.node_count())
                    .map(|j| {
                        DMatrix::zeros(sx.dim_of(&st.rels[j].funnel), sy.dim_of(&st.rels[j].anc))
                    })
                    .collect()
            })
            .collect();
        for e in &self.l_gains {
            if e.node == 0 || e.node > p.node_count() || e.t >= p.horizon {
                return Err(Error::Io(format!(
                    "l_gain references node {} / t={} outside the problem",
                    e.node, e.t
                )));
            }
            let j = e.node - 1;
            let want = (sx.dim_of(&st.rels[j].funnel), sy.dim_of(&st.rels[j].anc));
            if (e.rows, e.cols) != want || e.data.len() != e.rows * e.cols {
                return Err(Error::Io(format!(
                    "l_gain for node {} at t={} has wrong shape",
                    e.node, e.t
                )));
            }
            l[e.t][j] = DMatrix::from_row_slice(e.rows, e.cols, &e.data);
        }
        Ok(crate::structured::StructuredGains { k, l })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSection {
    pub rollouts: usize,
    pub seed: u64,
    pub empirical_mean: f64,
    pub standard_error: f64,
    pub exact_cost: f64,
    /// |mean - exact| / standard error.
    pub deviation_sigmas: f64,
}

/// On-disk report document: experiments plus optional oracle/simulation
/// sections, self-contained for reproduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema: String,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<ExperimentEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
}

impl ReportFile {
    pub fn new(seed: Option<u64>) -> Self {
        ReportFile {
            schema: REPORT_SCHEMA.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            experiments: Vec::new(),
            check: None,
            oracle: None,
            structured: None,
            simulate: None,
        }
    }

    pub fn with_experiments(mut self, reports: &[ExperimentReport]) -> Self {
        self.experiments = reports.iter().map(ExperimentEntry::from).collect();
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("report files serialize")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: ReportFile =
            toml::from_str(text).map_err(|e| Error::Io(format!("report file: {e}")))?;
        if f.schema != REPORT_SCHEMA {
            return Err(Error::Io(format!(
                "unsupported schema '{}', expected '{}'",
                f.schema, REPORT_SCHEMA
            )));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, AssumptionMode};
    use crate::verify;

    #[test]
    fn problem_round_trip_is_lossless() {
        let dag = verify::five_node_dag();
        let dims = NodeDims::uniform(5, 1, 1, 1);
        let p = model::random_instance(&dag, &dims, 3, 42, AssumptionMode::A2).unwrap();
        let text = ProblemFile::from_problem(&p).to_toml();
        let back = ProblemFile::parse(&text).unwrap().to_problem().unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn omitted_matrices_default_to_zero() {
        let text = r#"
schema = "dlqg-problem/1"
horizon = 2

[graph]
nodes = 2
edges = [[1, 2]]

[dims]
state = [1, 1]
input = [1, 1]
meas = [1, 1]

[[matrix]]
name = "A"
t = 0
rows = 2
cols = 2
data = [0.5, 0.0, 0.25, 0.5]
"#;
        let p = ProblemFile::parse(text).unwrap().to_problem().unwrap();
        assert_eq!(p.a[0][(1, 0)], 0.25);
        assert_eq!(p.a[1].amax(), 0.0);
        assert_eq!(p.q[0].amax(), 0.0);
        assert_eq!(p.sigma_init.amax(), 0.0);
    }

    #[test]
    fn rejects_wrong_schema_and_shapes() {
        assert!(ProblemFile::parse("schema = \"bogus/9\"").is_err());
        let text = r#"
schema = "dlqg-problem/1"
horizon = 1

[graph]
nodes = 1

[dims]
state = [1]
input = [1]
meas = [1]

[[matrix]]
name = "A"
t = 0
rows = 2
cols = 2
data = [1.0, 0.0, 0.0, 1.0]
"#;
        let err = ProblemFile::parse(text).unwrap().to_problem().unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
    }

    #[test]
    fn rejects_bad_edges() {
        let text = r#"
schema = "dlqg-problem/1"
horizon = 1

[graph]
nodes = 2
edges = [[2, 1]]

[dims]
state = [1, 1]
input = [1, 1]
meas = [1, 1]
"#;
        let err = ProblemFile::parse(text).unwrap().to_problem().unwrap_err();
        assert!(err.to_string().contains("topological"), "{err}");
    }

    #[test]
    fn structured_gains_round_trip() {
        use crate::lingauss::PrimitiveBasis;
        use crate::structured::{self, Structure};
        let dag = verify::five_node_dag();
        let dims = NodeDims::uniform(5, 1, 1, 1);
        let p = model::random_instance(&dag, &dims, 2, 9, AssumptionMode::A2).unwrap();
        let st = Structure::new(&p).unwrap();
        let k = structured::random_k(&p, &st, 3, 0.4);
        let basis = PrimitiveBasis::new(&p);
        let (gains, _, _) = structured::fit_estimator_gains(&p, &st, &basis, &k).unwrap();
        let section = StructuredSection::from_gains(&gains);
        let text = toml::to_string_pretty(&section).unwrap();
        let parsed: StructuredSection = toml::from_str(&text).unwrap();
        let back = parsed.to_gains(&p).unwrap();
        for t in 0..p.horizon {
            for (key, m) in &gains.k[t] {
                assert!((m - &back.k[t][key]).amax() < 1e-14);
            }
            for j in 0..5 {
                assert!((&gains.l[t][j] - &back.l[t][j]).amax() < 1e-14);
            }
        }
    }

    #[test]
    fn structured_gains_reject_information_violation() {
        let dag = verify::five_node_dag();
        let dims = NodeDims::uniform(5, 1, 1, 1);
        let p = model::ProblemData::zeros(dag, dims, 1);
        // Node 1 acting on node 4's estimate: 4 is not an ancestor of 1.
        let section = StructuredSection {
            k_gains: vec![StructuredKEntry {
                t: 0,
                node: 1,
                source: 4,
                rows: 1,
                cols: 2,
                data: vec![1.0, 2.0],
            }],
            l_gains: vec![],
        };
        assert!(section.to_gains(&p).is_err());
    }

    #[test]
    fn report_round_trip() {
        let mut rf = ReportFile::new(Some(7));
        rf.simulate = Some(SimulateSection {
            rollouts: 100,
            seed: 7,
            empirical_mean: 1.5,
            standard_error: 0.1,
            exact_cost: 1.45,
            deviation_sigmas: 0.5,
        });
        let text = rf.to_toml();
        let back = ReportFile::parse(&text).unwrap();
        assert_eq!(back.simulate.unwrap().rollouts, 100);
        assert_eq!(back.seed, Some(7));
    }
}
