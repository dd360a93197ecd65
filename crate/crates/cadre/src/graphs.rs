//! Causal-graph extraction from Jacobians: recovery of the observation graph
//! from the mixing Jacobian, the functional-equivalence residual, SEM
//! unrolling into an explicit mixing map, spatial-prior masks, and
//! thresholding into binary adjacencies.
//!
//! Matrix orientations: Jacobian-style matrices (`J_m`, `J_g`, `J_r`) have
//! `[i, j] = d out_i / d in_j`, i.e. row `i` receives from column `j`.
//! Adjacency matrices exposed to metrics and files use the source-row
//! convention (`[i, j] != 0` means `i -> j`), so extraction transposes at the
//! boundary.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::archive::Archive;
use crate::dgp::Dataset;
use crate::error::{shape_mismatch, CadreError, Result};
use crate::linalg;
use crate::model::{concat_rows, encode, one_hot_rows, ModelParams};
use crate::objective::{dag_penalty, TrainConfig};

/// Aggregated Jacobians of one evaluation batch (entrywise absolute means,
/// Jacobian orientation).
#[derive(Debug, Clone)]
pub struct JacobianBundle {
    /// Decoder Jacobian wrt the noise input.
    pub j_m: Array2<f64>,
    /// Diagonal of `j_m`.
    pub d_m: Array2<f64>,
    /// Recovered observation-graph weights.
    pub j_g: Array2<f64>,
    pub j_r_curr: Array2<f64>,
    pub j_r_prev: Array2<f64>,
    /// Number of time steps averaged.
    pub eval_points: usize,
}

/// Binary graph estimates in source-row adjacency convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEstimate {
    pub obs_graph: Array2<f64>,
    pub latent_inst: Array2<f64>,
    pub latent_lag: Array2<f64>,
    pub tau: f64,
    /// Whether a spatial mask gated the observation graph.
    pub masked: bool,
    /// False when a thresholded graph failed the acyclicity check
    /// (reported as a warning, not an error).
    pub acyclic: bool,
}

/// Jacobian of the decoder output wrt `s` at fixed `z`.
pub fn decoder_jacobian(
    params: &ModelParams,
    z: &Array1<f64>,
    s: &Array1<f64>,
) -> Result<Array2<f64>> {
    let (d_z, d_x) = (params.config.d_z, params.config.d_x);
    if z.len() != d_z || s.len() != d_x {
        return Err(shape_mismatch((d_z, d_x), (z.len(), s.len())));
    }
    let input = concat_rows(
        &z.clone().insert_axis(Axis(0)),
        &s.clone().insert_axis(Axis(0)),
    );
    let seeds: Vec<Array2<f64>> = (0..d_x).map(|j| one_hot_rows(1, d_z + d_x, d_z + j)).collect();
    let cache = params.psi.forward_cached(&input, &seeds);
    let mut j = Array2::zeros((d_x, d_x));
    for col in 0..d_x {
        for row in 0..d_x {
            j[[row, col]] = cache.tout[col][[0, row]];
        }
    }
    Ok(j)
}

/// Observation-graph recovery `J_g = I - D_m (J_m + ridge I)^{-1}` with the
/// result diagonal forced to zero (zero analytically for SEM-derived
/// mixings; forcing removes rounding residue). A zero ridge escalates once
/// to `1e-6` when `J_m` is near-singular; conditioning beyond `1e12` is an
/// error.
pub fn observation_graph(j_m: &Array2<f64>, ridge: f64) -> Result<Array2<f64>> {
    Ok(obs_graph_with_ridge(j_m, ridge)?.0)
}

/// The recovery formula without the diagonal forcing. For an arbitrary
/// invertible `J_m` this is the matrix that satisfies the functional
/// equivalence `J_g J_m = J_m - D_m` exactly.
pub fn observation_graph_raw(j_m: &Array2<f64>, ridge: f64) -> Result<Array2<f64>> {
    let d = j_m.nrows();
    if d != j_m.ncols() {
        return Err(CadreError::NonSquare {
            rows: d,
            cols: j_m.ncols(),
        });
    }
    let shifted = j_m + &(Array2::<f64>::eye(d) * ridge);
    let cond = linalg::condition_number(&shifted);
    if cond > 1e12 {
        return Err(CadreError::SingularMixing { cond });
    }
    let k = linalg::inverse(&shifted).ok_or(CadreError::SingularMixing { cond })?;
    let diag = Array2::from_diag(&j_m.diag().to_owned());
    Ok(Array2::<f64>::eye(d) - diag.dot(&k))
}

pub(crate) fn obs_graph_with_ridge(
    j_m: &Array2<f64>,
    start_ridge: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = j_m.nrows();
    if d != j_m.ncols() {
        return Err(CadreError::NonSquare {
            rows: d,
            cols: j_m.ncols(),
        });
    }
    let mut ridge = start_ridge;
    loop {
        let shifted = j_m + &(Array2::<f64>::eye(d) * ridge);
        let cond = linalg::condition_number(&shifted);
        if cond <= 1e12 {
            if let Some(k) = linalg::inverse(&shifted) {
                let diag = Array2::from_diag(&j_m.diag().to_owned());
                let mut j_g = Array2::<f64>::eye(d) - diag.dot(&k);
                for i in 0..d {
                    j_g[[i, i]] = 0.0;
                }
                return Ok((j_g, k));
            }
        }
        if ridge == 0.0 {
            ridge = 1e-6;
        } else {
            return Err(CadreError::SingularMixing { cond });
        }
    }
}

/// Relative Frobenius residual of `J_g J_m = J_m - D_m`.
pub fn functional_equivalence_residual(j_g: &Array2<f64>, j_m: &Array2<f64>) -> Result<f64> {
    if j_g.dim() != j_m.dim() || j_m.nrows() != j_m.ncols() {
        return Err(shape_mismatch(j_m.dim(), j_g.dim()));
    }
    let d_m = Array2::from_diag(&j_m.diag().to_owned());
    let lhs = j_g.dot(j_m);
    let rhs = j_m - &d_m;
    let num = (&lhs - &rhs).mapv(|v| v * v).sum().sqrt();
    let den = j_m.mapv(|v| v * v).sum().sqrt();
    Ok(num / den.max(1e-300))
}

/// Edge functions available to explicit SEM nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EdgeFn {
    Linear,
    Tanh,
}

impl EdgeFn {
    fn apply(&self, x: f64) -> f64 {
        match self {
            EdgeFn::Linear => x,
            EdgeFn::Tanh => x.tanh(),
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match self {
            EdgeFn::Linear => 1.0,
            EdgeFn::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// A weighted parent contribution `weight * f(x_src)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemEdge {
    pub src: usize,
    pub weight: f64,
    pub func: EdgeFn,
}

/// One observed node: `x_i = sum_e w_e f_e(x_src) + z . z_weights + s_i`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SemNode {
    pub edges: Vec<SemEdge>,
    pub z_weights: Vec<f64>,
}

/// Explicit small SEM over observed variables with latent inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemSpec {
    pub d_z: usize,
    pub nodes: Vec<SemNode>,
}

/// The unrolled mixing view of a SEM: evaluate `m(z, s)` and its Jacobian
/// wrt `s` by composing node functions along a topological order.
pub struct SemMixing {
    spec: SemSpec,
    topo: Vec<usize>,
}

impl SemSpec {
    pub fn d_x(&self) -> usize {
        self.nodes.len()
    }

    fn adjacency(&self) -> Array2<f64> {
        let d = self.d_x();
        let mut adj = Array2::zeros((d, d));
        for (i, node) in self.nodes.iter().enumerate() {
            for e in &node.edges {
                adj[[e.src, i]] = 1.0;
            }
        }
        adj
    }

    /// Unrolls the SEM, verifying against direct fixed-point evaluation at
    /// 100 random points.
    pub fn unroll(&self) -> Result<SemMixing> {
        let d = self.d_x();
        if d > 10 {
            return Err(CadreError::DimensionTooLarge { dim: d, max: 10 });
        }
        let topo = linalg::topological_order(&self.adjacency()).ok_or(CadreError::CyclicSem)?;
        let mixing = SemMixing {
            spec: self.clone(),
            topo,
        };
        let mut r = crate::rng::derive(0xC0FFEE, 1);
        for _ in 0..100 {
            let z = Array1::from_shape_fn(self.d_z, |_| r.gen_range(-2.0..2.0));
            let s = Array1::from_shape_fn(d, |_| r.gen_range(-2.0..2.0));
            let unrolled = mixing.eval(&z, &s);
            let direct = mixing.fixed_point_eval(&z, &s);
            for i in 0..d {
                if (unrolled[i] - direct[i]).abs() > 1e-10 {
                    return Err(CadreError::InvalidConfig(format!(
                        "unrolled mixing disagrees with direct SEM evaluation at node {i}"
                    )));
                }
            }
        }
        Ok(mixing)
    }

    /// Random strictly-lower-triangular linear SEM with weights U(0.5, 1.5).
    pub fn random_linear_lower_triangular(d_x: usize, d_z: usize, seed: u64) -> Self {
        let mut r = crate::rng::derive(seed, 2);
        let nodes = (0..d_x)
            .map(|i| {
                let edges = (0..i)
                    .map(|j| SemEdge {
                        src: j,
                        weight: r.gen_range(0.5..1.5),
                        func: EdgeFn::Linear,
                    })
                    .collect();
                let z_weights = (0..d_z).map(|_| r.gen_range(-1.0..1.0)).collect();
                SemNode { edges, z_weights }
            })
            .collect();
        Self { d_z, nodes }
    }

    /// The weighted adjacency in `x = A x + ...` form (`[i, j]` is the weight
    /// of `x_j` in the equation of `x_i`); only meaningful for linear edges.
    pub fn linear_adjacency(&self) -> Array2<f64> {
        let d = self.d_x();
        let mut a = Array2::zeros((d, d));
        for (i, node) in self.nodes.iter().enumerate() {
            for e in &node.edges {
                a[[i, e.src]] = e.weight;
            }
        }
        a
    }
}

impl SemMixing {
    /// Evaluates the mixing map by visiting nodes in topological order.
    pub fn eval(&self, z: &Array1<f64>, s: &Array1<f64>) -> Array1<f64> {
        let d = self.spec.d_x();
        let mut x = Array1::zeros(d);
        for &i in &self.topo {
            let node = &self.spec.nodes[i];
            let mut v = s[i];
            for e in &node.edges {
                v += e.weight * e.func.apply(x[e.src]);
            }
            for (k, w) in node.z_weights.iter().enumerate() {
                v += w * z[k];
            }
            x[i] = v;
        }
        x
    }

    /// Direct evaluation of the simultaneous equations by fixed-point
    /// iteration; converges within `d` sweeps on a DAG. Used as the
    /// independent check of the unrolled composition.
    fn fixed_point_eval(&self, z: &Array1<f64>, s: &Array1<f64>) -> Array1<f64> {
        let d = self.spec.d_x();
        let mut x = Array1::zeros(d);
        for _ in 0..=d {
            let mut next = Array1::zeros(d);
            for i in 0..d {
                let node = &self.spec.nodes[i];
                let mut v = s[i];
                for e in &node.edges {
                    v += e.weight * e.func.apply(x[e.src]);
                }
                for (k, w) in node.z_weights.iter().enumerate() {
                    v += w * z[k];
                }
                next[i] = v;
            }
            x = next;
        }
        x
    }

    /// `J_m[i, j] = d x_i / d s_j` by the chain rule along the order.
    pub fn jacobian_s(&self, z: &Array1<f64>, s: &Array1<f64>) -> Array2<f64> {
        let d = self.spec.d_x();
        let x = self.eval(z, s);
        let mut j = Array2::zeros((d, d));
        for &i in &self.topo {
            let node = &self.spec.nodes[i];
            for col in 0..d {
                let mut v = if col == i { 1.0 } else { 0.0 };
                for e in &node.edges {
                    v += e.weight * e.func.d1(x[e.src]) * j[[e.src, col]];
                }
                j[[i, col]] = v;
            }
        }
        j
    }
}

/// Distance mask and SAR-refined initialization mask, source-row convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialMask {
    pub m_loc: Array2<f64>,
    pub m_init: Array2<f64>,
    pub radius: f64,
    pub coords: Array2<f64>,
}

impl SpatialMask {
    /// The mask transposed into Jacobian orientation for use inside the
    /// training penalties.
    pub fn jacobian_mask(&self) -> Array2<f64> {
        self.m_init.t().to_owned()
    }
}

/// Builds the distance mask and refines it by fitting `X = W X + E` with
/// per-target least squares over within-radius neighbors; edges with |weight|
/// above the median over allowed entries are kept. Targets without neighbors
/// fall back to their (empty) distance row.
pub fn sar_mask(coords: &Array2<f64>, radius: f64, x: &Array2<f64>) -> Result<SpatialMask> {
    let d = coords.nrows();
    if coords.ncols() != 2 {
        return Err(shape_mismatch((d, 2), coords.dim()));
    }
    if x.ncols() != d {
        return Err(shape_mismatch((x.nrows(), d), x.dim()));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(CadreError::InvalidConfig("non-finite coordinates".into()));
    }
    let mut m_loc = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let dx = coords[[i, 0]] - coords[[j, 0]];
            let dy = coords[[i, 1]] - coords[[j, 1]];
            if (dx * dx + dy * dy).sqrt() <= radius {
                m_loc[[i, j]] = 1.0;
            }
        }
    }
    // fit row i of W on its neighbor columns
    let t_len = x.nrows();
    let mut w = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        let neighbors: Vec<usize> = (0..d).filter(|&j| m_loc[[i, j]] == 1.0).collect();
        if neighbors.is_empty() {
            continue; // degenerate fit: fall back to the (empty) M_loc row
        }
        let design = nalgebra::DMatrix::from_fn(t_len, neighbors.len(), |r, c| {
            x[[r, neighbors[c]]]
        });
        let target = nalgebra::DVector::from_fn(t_len, |r, _| x[[r, i]]);
        let svd = design.svd(true, true);
        if let Ok(sol) = svd.solve(&target, 1e-10) {
            for (c, &j) in neighbors.iter().enumerate() {
                w[[i, j]] = sol[c];
            }
        }
    }
    let mut allowed: Vec<f64> = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if m_loc[[i, j]] == 1.0 {
                allowed.push(w[[i, j]].abs());
            }
        }
    }
    let m_init = if allowed.is_empty() {
        Array2::zeros((d, d))
    } else {
        allowed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = allowed.len();
        let median = if n % 2 == 1 {
            allowed[n / 2]
        } else {
            0.5 * (allowed[n / 2 - 1] + allowed[n / 2])
        };
        let mut m = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                if m_loc[[i, j]] == 1.0 && w[[i, j]].abs() > median {
                    // w is target-row; store source-row
                    m[[j, i]] = 1.0;
                }
            }
        }
        m
    };
    Ok(SpatialMask {
        m_loc,
        m_init,
        radius,
        coords: coords.clone(),
    })
}

/// `I(|J o M| > tau)`, strict inequality; without a mask every entry passes
/// through.
pub fn threshold_graph(j: &Array2<f64>, mask: Option<&Array2<f64>>, tau: f64) -> Array2<f64> {
    let masked = match mask {
        Some(m) => j * m,
        None => j.clone(),
    };
    masked.mapv(|v| if v.abs() > tau { 1.0 } else { 0.0 })
}

/// Extracts all three graphs from a trained model by averaging absolute
/// Jacobians over held-out steps at the posterior means, then thresholding.
/// Latent matrices are rescaled by their largest absolute entry before the
/// shared threshold is applied; the observation matrix is thresholded raw.
pub fn extract_graphs(
    params: &ModelParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mask: Option<&SpatialMask>,
) -> Result<(GraphEstimate, JacobianBundle)> {
    let (d_z, d_x) = (params.config.d_z, params.config.d_x);
    let t_len = dataset.t_len();
    if dataset.d_x() != d_x {
        return Err(shape_mismatch((t_len, d_x), dataset.x.dim()));
    }
    let n_eval = cfg.eval_points.clamp(1, t_len - 1);
    let start = t_len - n_eval;
    let post = encode(&dataset.x, params, 0)?;
    let z = &post.z_mean;
    let s = &post.s_mean;

    let mut j_m_acc = Array2::<f64>::zeros((d_x, d_x));
    let mut j_g_acc = Array2::<f64>::zeros((d_x, d_x));
    let mut j_rc_acc = Array2::<f64>::zeros((d_z, d_z));
    let mut j_rp_acc = Array2::<f64>::zeros((d_z, d_z));
    for t in start..t_len {
        let zt = z.row(t).to_owned();
        let st = s.row(t).to_owned();
        let j_m = decoder_jacobian(params, &zt, &st)?;
        let (j_g, _) = obs_graph_with_ridge(&j_m, 0.0)?;
        j_m_acc += &j_m.mapv(f64::abs);
        j_g_acc += &j_g.mapv(f64::abs);
        let zp = z.row(t - 1).to_owned();
        let (j_rc, j_rp) = crate::model::flow_jacobians(&zp, &zt, params)?;
        j_rc_acc += &j_rc.mapv(f64::abs);
        j_rp_acc += &j_rp.mapv(f64::abs);
    }
    let n = n_eval as f64;
    j_m_acc /= n;
    j_g_acc /= n;
    j_rc_acc /= n;
    j_rp_acc /= n;

    // adjacency orientation: transpose Jacobians so rows are sources
    let obs_weights = j_g_acc.t().to_owned();
    let init_mask = mask.map(|m| &m.m_init);
    let obs_graph = threshold_graph(&obs_weights, init_mask, cfg.tau);

    let rescale = |m: &Array2<f64>| -> Array2<f64> {
        let max = m.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        if max > 0.0 {
            m.mapv(|v| v / max)
        } else {
            m.clone()
        }
    };
    let mut latent_inst = threshold_graph(&rescale(&j_rc_acc).t().to_owned(), None, cfg.tau);
    for i in 0..d_z {
        latent_inst[[i, i]] = 0.0;
    }
    let latent_lag = threshold_graph(&rescale(&j_rp_acc).t().to_owned(), None, cfg.tau);

    let mut acyclic = true;
    for (name, g) in [("observation", &obs_graph), ("latent instantaneous", &latent_inst)] {
        if dag_penalty(g)? > 1e-9 {
            acyclic = false;
            eprintln!("warning: extracted {name} graph is not acyclic");
        }
    }

    let bundle = JacobianBundle {
        d_m: Array2::from_diag(&j_m_acc.diag().to_owned()),
        j_m: j_m_acc,
        j_g: j_g_acc,
        j_r_curr: j_rc_acc,
        j_r_prev: j_rp_acc,
        eval_points: n_eval,
    };
    let estimate = GraphEstimate {
        obs_graph,
        latent_inst,
        latent_lag,
        tau: cfg.tau,
        masked: mask.is_some(),
        acyclic,
    };
    Ok((estimate, bundle))
}

impl GraphEstimate {
    /// Writes dense adjacencies (archive) plus one edge-list CSV per graph.
    pub fn save(&self, dir: &Path, bundle: &JacobianBundle) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut arc = Archive::new();
        arc.insert2("obs_graph", &self.obs_graph);
        arc.insert2("latent_inst", &self.latent_inst);
        arc.insert2("latent_lag", &self.latent_lag);
        arc.insert2("jacobian.j_m", &bundle.j_m);
        arc.insert2("jacobian.d_m", &bundle.d_m);
        arc.insert2("jacobian.j_g", &bundle.j_g);
        arc.insert2("jacobian.j_r_curr", &bundle.j_r_curr);
        arc.insert2("jacobian.j_r_prev", &bundle.j_r_prev);
        arc.insert_scalar("tau", self.tau);
        arc.insert_scalar("eval_points", bundle.eval_points as f64);
        arc.write(&dir.join("graphs.arz"))?;
        // edge lists carry the averaged |J| weight of each kept edge
        write_edge_list(
            &dir.join("obs_graph.csv"),
            &self.obs_graph,
            &bundle.j_g.t().to_owned(),
        )?;
        write_edge_list(
            &dir.join("latent_inst.csv"),
            &self.latent_inst,
            &bundle.j_r_curr.t().to_owned(),
        )?;
        write_edge_list(
            &dir.join("latent_lag.csv"),
            &self.latent_lag,
            &bundle.j_r_prev.t().to_owned(),
        )?;
        std::fs::write(
            dir.join("graphs.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "tau": self.tau,
                "masked": self.masked,
                "acyclic": self.acyclic,
                "eval_points": bundle.eval_points,
                "aggregation": "mean of absolute Jacobians at posterior means",
            }))?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let arc = Archive::read(&dir.join("graphs.arz"))?;
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("graphs.json"))?)?;
        Ok(Self {
            obs_graph: arc.get2("obs_graph")?,
            latent_inst: arc.get2("latent_inst")?,
            latent_lag: arc.get2("latent_lag")?,
            tau: arc.get_scalar("tau")?,
            masked: meta["masked"].as_bool().unwrap_or(false),
            acyclic: meta["acyclic"].as_bool().unwrap_or(true),
        })
    }
}

/// Writes `src,dst,weight` rows for every nonzero adjacency entry.
pub fn write_edge_list(path: &Path, adjacency: &Array2<f64>, weights: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["src", "dst", "weight"])?;
    for i in 0..adjacency.nrows() {
        for j in 0..adjacency.ncols() {
            if adjacency[[i, j]] != 0.0 {
                w.write_record([i.to_string(), j.to_string(), format!("{}", weights[[i, j]])])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
