//! Synthetic data generation: latent autoregressive dynamics pushed through a
//! noisy mixing function, with causal effects injected along a DAG over the
//! observed variables.
//!
//! Everything is a pure function of `(spec, seed)`. Adjacency matrices follow
//! one convention throughout the crate: entry `(i, j)` nonzero means an edge
//! `i -> j` (rows are sources). Transition matrices `W` and the instantaneous
//! coefficient matrix `B_z` act on column vectors (`z_t = W z_{t-1} + ...`),
//! so their stored ground-truth graphs are the transposed supports.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::archive::Archive;
use crate::error::{CadreError, Result};
use crate::linalg;
use crate::nn::{Activation, Mlp};
use crate::rng::{self, stream};

/// Leaky-ReLU slope used by both the generator and the model networks.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Hard guard on latent magnitudes; exceeding it aborts generation.
pub const TRAJECTORY_GUARD: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SparsitySetting {
    /// No instantaneous latent edges.
    Independent,
    /// Expected latent Markov degree 1.
    Sparse,
    /// Complete instantaneous DAG.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    None,
    /// Random-walk latents: `z_t = z_{t-1} + U(0,1)` noise.
    A2,
    /// Fixed orthogonal linear mixing instead of the MLP.
    A3,
    /// Homoscedastic dependent noise: `s_t = q(z_t) + N(0, I)`.
    A5,
}

/// Full description of a ground-truth generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub d_x: usize,
    pub d_z: usize,
    /// Sequence length.
    pub t_len: usize,
    /// Markov order of the latent process.
    pub lag_order: usize,
    /// Lagged transition matrices, one per lag, each `d_z x d_z`.
    pub transition_weights: Vec<Array2<f64>>,
    /// Instantaneous latent coefficients; acyclic support, zero in the
    /// Independent setting.
    pub latent_inst: Array2<f64>,
    /// Binary DAG over observations, `(i, j)` meaning `i -> j`.
    pub obs_dag: Array2<f64>,
    /// Signed weights on the supported entries of `obs_dag`.
    pub obs_edge_weights: Array2<f64>,
    /// Edge-weight schedule `alpha(t) = a1 cos(2 pi t / T) + a2`.
    pub a1: f64,
    pub a2: f64,
    pub sigma_z: f64,
    pub sigma_x: f64,
    pub sparsity: SparsitySetting,
    pub violation: Violation,
    pub seed: u64,
    /// Pinned generator algorithm; checked on load.
    #[serde(default = "default_rng_algo")]
    pub rng_algorithm: String,
}

fn default_rng_algo() -> String {
    rng::RNG_ALGORITHM.to_string()
}

/// Compact generator settings; [`DgpSpec::from_config`] materializes the
/// graphs and weight matrices deterministically from the seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DgpConfig {
    pub d_z: usize,
    pub d_x: usize,
    pub t_len: usize,
    #[serde(default = "one")]
    pub lag_order: usize,
    pub sparsity: SparsitySetting,
    #[serde(default = "default_violation")]
    pub violation: Violation,
    /// Expected out-degree of the observation DAG.
    #[serde(default = "default_obs_degree")]
    pub obs_degree: f64,
    #[serde(default = "default_a1")]
    pub a1: f64,
    #[serde(default = "default_a2")]
    pub a2: f64,
    #[serde(default = "one_f")]
    pub sigma_z: f64,
    #[serde(default = "one_f")]
    pub sigma_x: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_violation() -> Violation {
    Violation::None
}
fn default_obs_degree() -> f64 {
    1.0
}
fn default_a1() -> f64 {
    0.3
}
fn default_a2() -> f64 {
    0.5
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            d_z: 3,
            d_x: 6,
            t_len: 10_000,
            lag_order: 1,
            sparsity: SparsitySetting::Independent,
            violation: Violation::None,
            obs_degree: 1.0,
            a1: 0.3,
            a2: 0.5,
            sigma_z: 1.0,
            sigma_x: 1.0,
            seed: 0,
        }
    }
}

/// Samples a binary DAG with expected edge count `expected_degree * d` by
/// drawing a random topological order and including each forward pair
/// independently. Acyclic by construction.
pub fn sample_er_dag(d: usize, expected_degree: f64, seed: u64) -> Array2<f64> {
    let mut adj = Array2::zeros((d, d));
    if d <= 1 {
        return adj;
    }
    let mut r = rng::derive(seed, stream::GRAPH);
    // Fisher-Yates for the topological order.
    let mut order: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
    let p = (2.0 * expected_degree / (d as f64 - 1.0)).min(1.0);
    for a in 0..d {
        for b in (a + 1)..d {
            let u: f64 = r.gen();
            if u < p {
                adj[[order[a], order[b]]] = 1.0;
            }
        }
    }
    adj
}

/// `alpha(t) = a1 cos(2 pi t / T) + a2`.
pub fn edge_weight_schedule(t: usize, a1: f64, a2: f64, t_len: usize) -> f64 {
    a1 * (2.0 * std::f64::consts::PI * t as f64 / t_len as f64).cos() + a2
}

impl DgpSpec {
    /// Materializes graphs and weights from a compact config.
    pub fn from_config(cfg: &DgpConfig) -> Result<Self> {
        if cfg.d_z > cfg.d_x {
            return Err(CadreError::InvalidConfig(format!(
                "d_z ({}) must not exceed d_x ({})",
                cfg.d_z, cfg.d_x
            )));
        }
        if cfg.sigma_z <= 0.0 || cfg.sigma_x <= 0.0 {
            return Err(CadreError::InvalidConfig(
                "noise scales must be positive".into(),
            ));
        }
        if cfg.t_len == 0 || cfg.lag_order == 0 {
            return Err(CadreError::InvalidConfig(
                "t_len and lag_order must be positive".into(),
            ));
        }
        let mut wr = rng::derive(cfg.seed, stream::LATENT_WEIGHTS);

        // Lagged transitions: dense in the Independent/Dense settings,
        // diagonal plus expected one off-diagonal edge per node when Sparse.
        // Entries are N(0,1) on the support, then the stack is rescaled so the
        // first lag has spectral norm 0.7 (stability under the leaky ReLU).
        let mut transition_weights = Vec::with_capacity(cfg.lag_order);
        for lag in 0..cfg.lag_order {
            let mut w = Array2::from_shape_fn((cfg.d_z, cfg.d_z), |_| {
                let v: f64 = wr.sample(StandardNormal);
                v
            });
            if cfg.sparsity == SparsitySetting::Sparse && cfg.d_z > 1 {
                let keep_p = 1.0 / (cfg.d_z as f64 - 1.0);
                for i in 0..cfg.d_z {
                    for j in 0..cfg.d_z {
                        if i != j && wr.gen::<f64>() >= keep_p {
                            w[[i, j]] = 0.0;
                        }
                    }
                }
            }
            let norm = linalg::spectral_norm(&w);
            if norm > 0.0 {
                let target = 0.7 / (lag as f64 + 1.0);
                w.mapv_inplace(|v| v * target / norm);
            }
            transition_weights.push(w);
        }

        // Instantaneous latent DAG with Markov degree {0, 1, d_z - 1}.
        let markov_degree = match cfg.sparsity {
            SparsitySetting::Independent => 0.0,
            SparsitySetting::Sparse => 1.0,
            SparsitySetting::Dense => cfg.d_z as f64 - 1.0,
        };
        let inst_support = sample_er_dag(cfg.d_z, markov_degree / 2.0, cfg.seed ^ 0xA5A5);
        let mut latent_inst = Array2::zeros((cfg.d_z, cfg.d_z));
        for i in 0..cfg.d_z {
            for j in 0..cfg.d_z {
                if inst_support[[j, i]] != 0.0 {
                    // support is src->dst; coefficients act as z_i += c * z_j
                    let mag = wr.gen_range(0.3..0.8);
                    let sign = if wr.gen::<bool>() { 1.0 } else { -1.0 };
                    latent_inst[[i, j]] = sign * mag;
                }
            }
        }

        let obs_dag = sample_er_dag(cfg.d_x, cfg.obs_degree, cfg.seed);
        let mut gw = rng::derive(cfg.seed, stream::GRAPH_WEIGHTS);
        let mut obs_edge_weights = Array2::zeros((cfg.d_x, cfg.d_x));
        for i in 0..cfg.d_x {
            for j in 0..cfg.d_x {
                if obs_dag[[i, j]] != 0.0 {
                    let mag = gw.gen_range(0.5..1.5);
                    let sign = if gw.gen::<bool>() { 1.0 } else { -1.0 };
                    obs_edge_weights[[i, j]] = sign * mag;
                }
            }
        }

        let spec = Self {
            d_x: cfg.d_x,
            d_z: cfg.d_z,
            t_len: cfg.t_len,
            lag_order: cfg.lag_order,
            transition_weights,
            latent_inst,
            obs_dag,
            obs_edge_weights,
            a1: cfg.a1,
            a2: cfg.a2,
            sigma_z: cfg.sigma_z,
            sigma_x: cfg.sigma_x,
            sparsity: cfg.sparsity,
            violation: cfg.violation,
            seed: cfg.seed,
            rng_algorithm: default_rng_algo(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_z > self.d_x {
            return Err(CadreError::InvalidConfig("d_z must not exceed d_x".into()));
        }
        if self.sigma_z <= 0.0 || self.sigma_x <= 0.0 {
            return Err(CadreError::InvalidConfig(
                "noise scales must be positive".into(),
            ));
        }
        if self.rng_algorithm != rng::RNG_ALGORITHM {
            return Err(CadreError::InvalidConfig(format!(
                "unsupported rng algorithm `{}` (this build pins `{}`)",
                self.rng_algorithm,
                rng::RNG_ALGORITHM
            )));
        }
        for i in 0..self.d_x {
            if self.obs_dag[[i, i]] != 0.0 {
                return Err(CadreError::InvalidConfig(
                    "observation DAG has a nonzero diagonal".into(),
                ));
            }
        }
        if !linalg::is_acyclic(&self.obs_dag) {
            return Err(CadreError::InvalidConfig(
                "observation graph contains a cycle".into(),
            ));
        }
        if !linalg::is_acyclic(&self.latent_inst) {
            return Err(CadreError::InvalidConfig(
                "instantaneous latent graph contains a cycle".into(),
            ));
        }
        Ok(())
    }

    /// The fixed mixing network `f_mix: (z, s) -> x`, drawn from the spec seed.
    pub fn mixing_network(&self) -> Mlp {
        let hidden = self.d_x.max(16);
        let mut r = rng::derive(self.seed, stream::MIX_WEIGHTS);
        Mlp::init(
            &[self.d_z + self.d_x, hidden, self.d_x],
            &[Activation::LeakyRelu(LEAKY_SLOPE), Activation::Identity],
            &mut r,
        )
    }

    /// The fixed linear map `f_dep`, rescaled to spectral norm 0.1.
    pub fn dependence_map(&self) -> Array2<f64> {
        let mut r = rng::derive(self.seed, stream::DEP_WEIGHTS);
        let mut w = Array2::from_shape_fn((self.d_x, self.d_x), |_| {
            let v: f64 = r.sample(StandardNormal);
            v
        });
        let norm = linalg::spectral_norm(&w);
        if norm > 0.0 {
            w.mapv_inplace(|v| v * 0.1 / norm);
        }
        w
    }

    /// Orthonormal-column mixing used by the A3 violation.
    pub fn orthogonal_mixing(&self) -> Array2<f64> {
        let mut r = rng::derive(self.seed, stream::VIOLATION);
        let g = nalgebra::DMatrix::from_fn(self.d_x, self.d_z, |_, _| {
            let v: f64 = r.sample(StandardNormal);
            v
        });
        let qr = g.qr();
        let q = qr.q();
        Array2::from_shape_fn((self.d_x, self.d_z), |(i, j)| q[(i, j)])
    }

    /// Fixed linear map `q: z -> s` used by the A5 violation.
    pub fn violation_mixing(&self) -> Array2<f64> {
        let mut r = rng::derive(self.seed ^ 0x5151, stream::VIOLATION);
        Array2::from_shape_fn((self.d_x, self.d_z), |_| {
            let v: f64 = r.sample(StandardNormal);
            v / (self.d_z as f64).sqrt()
        })
    }
}

/// Switches a spec to one of the assumption-violating regimes.
pub fn apply_violation(spec: &DgpSpec, kind: Violation) -> DgpSpec {
    let mut out = spec.clone();
    out.violation = kind;
    out
}

/// Parses a violation name; accepts `none`, `a2`, `a3`, `a5`.
pub fn parse_violation(name: &str) -> Result<Violation> {
    match name.to_ascii_lowercase().as_str() {
        "none" => Ok(Violation::None),
        "a2" => Ok(Violation::A2),
        "a3" => Ok(Violation::A3),
        "a5" => Ok(Violation::A5),
        other => Err(CadreError::UnknownViolation(other.to_string())),
    }
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Simulates the latent trajectory and returns `(z, eps_z)`.
pub fn simulate_latent(spec: &DgpSpec) -> Result<(Array2<f64>, Array2<f64>)> {
    spec.validate()?;
    let (t_len, d_z, lags) = (spec.t_len, spec.d_z, spec.lag_order);
    let mut r = rng::derive(spec.seed, stream::LATENT_NOISE);
    let mut z = Array2::zeros((t_len, d_z));
    let mut eps = Array2::zeros((t_len, d_z));
    let inst_solve = if spec.latent_inst.iter().any(|&v| v != 0.0) {
        let m = Array2::eye(d_z) - &spec.latent_inst;
        Some(linalg::inverse(&m).ok_or(CadreError::SingularMixing { cond: f64::INFINITY })?)
    } else {
        None
    };
    for t in 0..t_len {
        for j in 0..d_z {
            eps[[t, j]] = match spec.violation {
                Violation::A2 => r.gen::<f64>(),
                _ => {
                    let n: f64 = r.sample(StandardNormal);
                    n * spec.sigma_z
                }
            };
        }
        if spec.violation == Violation::A2 {
            // random walk, first step from noise alone
            for j in 0..d_z {
                let prev = if t == 0 { 0.0 } else { z[[t - 1, j]] };
                z[[t, j]] = prev + eps[[t, j]];
            }
        } else if t < lags {
            for j in 0..d_z {
                z[[t, j]] = eps[[t, j]];
            }
        } else {
            let mut drive = Array1::zeros(d_z);
            for (l, w) in spec.transition_weights.iter().enumerate() {
                let zp = z.index_axis(Axis(0), t - l - 1);
                drive = drive + w.dot(&zp);
            }
            let mut inner = drive.mapv(leaky);
            for j in 0..d_z {
                inner[j] += eps[[t, j]];
            }
            let zt = match &inst_solve {
                Some(inv) => inv.dot(&inner),
                None => inner,
            };
            for j in 0..d_z {
                z[[t, j]] = zt[j];
            }
        }
        for j in 0..d_z {
            let v = z[[t, j]];
            if !v.is_finite() || v.abs() > TRAJECTORY_GUARD {
                return Err(CadreError::DivergedTrajectory { step: t, value: v });
            }
        }
    }
    Ok((z, eps))
}

/// Generates observations from latents and returns `(x, s, eps_x)`.
pub fn simulate_observations(
    spec: &DgpSpec,
    z: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    if z.dim() != (spec.t_len, spec.d_z) {
        return Err(CadreError::InvalidLatents(format!(
            "expected shape ({}, {}), got {:?}",
            spec.t_len,
            spec.d_z,
            z.dim()
        )));
    }
    let (t_len, d_x) = (spec.t_len, spec.d_x);
    let mut r = rng::derive(spec.seed, stream::OBS_NOISE);
    let f_mix = spec.mixing_network();
    let f_dep = spec.dependence_map();
    let ortho = if spec.violation == Violation::A3 {
        Some(spec.orthogonal_mixing())
    } else {
        None
    };
    let q_mix = if spec.violation == Violation::A5 {
        Some(spec.violation_mixing())
    } else {
        None
    };
    let topo = linalg::topological_order(&spec.obs_dag).ok_or(CadreError::CyclicSem)?;

    let mut x = Array2::zeros((t_len, d_x));
    let mut s = Array2::zeros((t_len, d_x));
    let mut eps = Array2::zeros((t_len, d_x));
    for t in 0..t_len {
        for i in 0..d_x {
            eps[[t, i]] = match spec.violation {
                Violation::A5 => {
                    let n: f64 = r.sample(StandardNormal);
                    n
                }
                _ => r.gen::<f64>() * spec.sigma_x,
            };
        }
        let zt = z.index_axis(Axis(0), t).to_owned();
        let st: Array1<f64> = match &q_mix {
            Some(q) => {
                let mut v = q.dot(&zt);
                for i in 0..d_x {
                    v[i] += eps[[t, i]];
                }
                v
            }
            None => {
                let mut v = Array1::zeros(d_x);
                if t > 0 {
                    let xp = x.index_axis(Axis(0), t - 1).to_owned();
                    v = f_dep.dot(&xp);
                }
                for i in 0..d_x {
                    v[i] += eps[[t, i]];
                }
                v
            }
        };
        let mut xt: Array1<f64> = match &ortho {
            Some(w) => w.dot(&zt) + &st,
            None => {
                let mut input = Array1::zeros(spec.d_z + d_x);
                input.slice_mut(ndarray::s![..spec.d_z]).assign(&zt);
                input.slice_mut(ndarray::s![spec.d_z..]).assign(&st);
                f_mix.forward1(&input) + &st
            }
        };
        // inject observation-level causal effects, parents before children
        let alpha = edge_weight_schedule(t, spec.a1, spec.a2, t_len);
        for &child in &topo {
            let mut add = 0.0;
            for parent in 0..d_x {
                if spec.obs_dag[[parent, child]] != 0.0 {
                    add += alpha * spec.obs_edge_weights[[parent, child]] * xt[parent];
                }
            }
            xt[child] += add;
        }
        for i in 0..d_x {
            s[[t, i]] = st[i];
            x[[t, i]] = xt[i];
        }
    }
    Ok((x, s, eps))
}

/// Ground-truth adjacency matrices, all in source-row convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub obs_graph: Array2<f64>,
    pub latent_inst: Array2<f64>,
    pub latent_lag: Array2<f64>,
}

/// A simulated or ingested observation sequence with optional ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub z: Option<Array2<f64>>,
    pub s: Option<Array2<f64>>,
    pub eps_z: Option<Array2<f64>>,
    pub eps_x: Option<Array2<f64>>,
    pub truth: Option<GroundTruth>,
    pub spec: Option<DgpSpec>,
    /// Spatial positions (`d_x x 2`) for masks and wind metrics.
    pub coords: Option<Array2<f64>>,
}

fn support(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| if v != 0.0 { 1.0 } else { 0.0 })
}

/// Runs both simulators and packages the result with its ground truth.
pub fn make_dataset(spec: &DgpSpec) -> Result<Dataset> {
    let (z, eps_z) = simulate_latent(spec)?;
    let (x, s, eps_x) = simulate_observations(spec, &z)?;
    for v in x.iter() {
        if !v.is_finite() {
            return Err(CadreError::DivergedTrajectory {
                step: 0,
                value: *v,
            });
        }
    }
    let truth = GroundTruth {
        obs_graph: support(&spec.obs_dag),
        // coefficient matrices act row-from-column; transpose to source-row
        latent_inst: support(&spec.latent_inst.t().to_owned()),
        latent_lag: support(&spec.transition_weights[0].t().to_owned()),
    };
    Ok(Dataset {
        x,
        z: Some(z),
        s: Some(s),
        eps_z: Some(eps_z),
        eps_x: Some(eps_x),
        truth: Some(truth),
        spec: Some(spec.clone()),
        coords: None,
    })
}

impl Dataset {
    pub fn t_len(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    /// Writes the archive plus a JSON spec sidecar (`<path>.spec.json`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arc = Archive::new();
        arc.insert2("x", &self.x);
        if let Some(z) = &self.z {
            arc.insert2("z", z);
        }
        if let Some(s) = &self.s {
            arc.insert2("s", s);
        }
        if let Some(e) = &self.eps_z {
            arc.insert2("eps_z", e);
        }
        if let Some(e) = &self.eps_x {
            arc.insert2("eps_x", e);
        }
        if let Some(t) = &self.truth {
            arc.insert2("truth_obs_graph", &t.obs_graph);
            arc.insert2("truth_latent_inst", &t.latent_inst);
            arc.insert2("truth_latent_lag", &t.latent_lag);
        }
        if let Some(c) = &self.coords {
            arc.insert2("coords", c);
        }
        arc.write(path)?;
        if let Some(spec) = &self.spec {
            let sidecar = sidecar_path(path);
            std::fs::write(sidecar, serde_json::to_string_pretty(spec)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let arc = Archive::read(path)?;
        let get_opt = |name: &str| -> Option<Array2<f64>> { arc.get2(name).ok() };
        let truth = match (
            get_opt("truth_obs_graph"),
            get_opt("truth_latent_inst"),
            get_opt("truth_latent_lag"),
        ) {
            (Some(o), Some(i), Some(l)) => Some(GroundTruth {
                obs_graph: o,
                latent_inst: i,
                latent_lag: l,
            }),
            _ => None,
        };
        let sidecar = sidecar_path(path);
        let spec = if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar)?;
            let spec: DgpSpec = serde_json::from_str(&text)?;
            spec.validate()?;
            Some(spec)
        } else {
            None
        };
        Ok(Self {
            x: arc.get2("x")?,
            z: get_opt("z"),
            s: get_opt("s"),
            eps_z: get_opt("eps_z"),
            eps_x: get_opt("eps_x"),
            truth,
            spec,
            coords: get_opt("coords"),
        })
    }

    /// Writes the observation matrix as CSV with `x0..x{d-1}` headers.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (0..self.d_x()).map(|i| format!("x{i}")).collect();
        w.write_record(&header)?;
        for row in self.x.rows() {
            let rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".spec.json");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::has_cycle_bruteforce;

    fn small_config(setting: SparsitySetting, seed: u64) -> DgpConfig {
        DgpConfig {
            d_z: 3,
            d_x: 6,
            t_len: 200,
            sparsity: setting,
            seed,
            ..DgpConfig::default()
        }
    }

    #[test]
    fn er_dag_degenerate_cases() {
        assert_eq!(sample_er_dag(1, 1.0, 123), Array2::<f64>::zeros((1, 1)));
        assert_eq!(sample_er_dag(3, 0.0, 0), Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn er_dag_is_acyclic_by_path_enumeration() {
        let adj = sample_er_dag(6, 1.5, 7);
        assert!(!has_cycle_bruteforce(&adj));
        for i in 0..6 {
            assert_eq!(adj[[i, i]], 0.0);
        }
        // expected edge count is degree * d = 9 out of 15 possible
        assert!(adj.sum() > 0.0);
    }

    #[test]
    fn er_dag_edge_count_tracks_expected_degree() {
        let mut total = 0.0;
        let trials = 200;
        for seed in 0..trials {
            total += sample_er_dag(6, 1.5, seed).sum();
        }
        let mean = total / trials as f64;
        assert!((mean - 9.0).abs() < 1.0, "mean edge count {mean}");
    }

    #[test]
    fn schedule_matches_cosine() {
        assert!((edge_weight_schedule(0, 0.3, 0.5, 100) - 0.8).abs() < 1e-12);
        assert!((edge_weight_schedule(25, 0.3, 0.5, 100) - 0.5).abs() < 1e-12);
        assert!((edge_weight_schedule(50, 0.3, 0.5, 100) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pure_noise_latents_equal_eps() {
        let mut spec = DgpSpec::from_config(&small_config(SparsitySetting::Independent, 3)).unwrap();
        spec.transition_weights = vec![Array2::zeros((3, 3))];
        spec.latent_inst = Array2::zeros((3, 3));
        let (z, eps) = simulate_latent(&spec).unwrap();
        assert_eq!(z, eps);
    }

    #[test]
    fn instantaneous_step_matches_hand_computation() {
        // d_z = 2, one step: z_1 = (I - B)^{-1} (lrelu(W z_0) + eps_1)
        let cfg = DgpConfig {
            d_z: 2,
            d_x: 2,
            t_len: 2,
            sparsity: SparsitySetting::Dense,
            seed: 9,
            ..DgpConfig::default()
        };
        let mut spec = DgpSpec::from_config(&cfg).unwrap();
        spec.latent_inst = ndarray::array![[0.0, 0.0], [0.5, 0.0]];
        spec.transition_weights = vec![ndarray::array![[0.4, -0.3], [0.2, 0.6]]];
        let (z, eps) = simulate_latent(&spec).unwrap();
        let z0 = [eps[[0, 0]], eps[[0, 1]]];
        let drive = [
            0.4 * z0[0] - 0.3 * z0[1],
            0.2 * z0[0] + 0.6 * z0[1],
        ];
        let inner = [
            leaky(drive[0]) + eps[[1, 0]],
            leaky(drive[1]) + eps[[1, 1]],
        ];
        // (I - B)^{-1} = [[1, 0], [0.5, 1]] for strictly lower-triangular B
        let expect = [inner[0], 0.5 * inner[0] + inner[1]];
        assert!((z[[1, 0]] - expect[0]).abs() < 1e-12);
        assert!((z[[1, 1]] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn latent_simulation_is_deterministic() {
        let spec = DgpSpec::from_config(&small_config(SparsitySetting::Sparse, 17)).unwrap();
        let (z1, e1) = simulate_latent(&spec).unwrap();
        let (z2, e2) = simulate_latent(&spec).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(e1, e2);
    }

    #[test]
    fn diverging_transition_errors() {
        let mut spec = DgpSpec::from_config(&small_config(SparsitySetting::Independent, 1)).unwrap();
        spec.transition_weights = vec![Array2::from_elem((3, 3), 5.0)];
        spec.t_len = 5000;
        match simulate_latent(&spec) {
            Err(CadreError::DivergedTrajectory { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_obs_graph_means_no_injection() {
        let mut spec = DgpSpec::from_config(&small_config(SparsitySetting::Independent, 5)).unwrap();
        spec.obs_dag = Array2::zeros((6, 6));
        spec.obs_edge_weights = Array2::zeros((6, 6));
        let (z, _) = simulate_latent(&spec).unwrap();
        let (x, s, _) = simulate_observations(&spec, &z).unwrap();
        let f_mix = spec.mixing_network();
        for t in [0usize, 7, 100] {
            let mut input = Array1::zeros(9);
            input.slice_mut(ndarray::s![..3]).assign(&z.row(t));
            input.slice_mut(ndarray::s![3..]).assign(&s.row(t));
            let base = f_mix.forward1(&input) + &s.row(t);
            for i in 0..6 {
                assert!((x[[t, i]] - base[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_edge_injection_adds_parent_value() {
        let cfg = DgpConfig {
            d_z: 2,
            d_x: 2,
            t_len: 50,
            a1: 0.0,
            a2: 1.0,
            seed: 2,
            sparsity: SparsitySetting::Independent,
            ..DgpConfig::default()
        };
        let mut spec = DgpSpec::from_config(&cfg).unwrap();
        spec.obs_dag = ndarray::array![[0.0, 1.0], [0.0, 0.0]];
        spec.obs_edge_weights = ndarray::array![[0.0, 1.0], [0.0, 0.0]];
        let (z, _) = simulate_latent(&spec).unwrap();
        let (x, s, _) = simulate_observations(&spec, &z).unwrap();

        let mut no_edge = spec.clone();
        no_edge.obs_dag = Array2::zeros((2, 2));
        no_edge.obs_edge_weights = Array2::zeros((2, 2));
        let (x0, s0, _) = simulate_observations(&no_edge, &z).unwrap();
        // with f_dep feeding x_{t-1} into s_t the trajectories couple across
        // time, so compare a fresh chain only at t = 0
        assert_eq!(s.row(0), s0.row(0));
        assert!((x[[0, 0]] - x0[[0, 0]]).abs() < 1e-12);
        assert!((x[[0, 1]] - (x0[[0, 1]] + x[[0, 0]])).abs() < 1e-12);
    }

    #[test]
    fn dataset_shapes_and_determinism() {
        let spec = DgpSpec::from_config(&small_config(SparsitySetting::Independent, 42)).unwrap();
        let ds = make_dataset(&spec).unwrap();
        assert_eq!(ds.x.dim(), (200, 6));
        assert_eq!(ds.z.as_ref().unwrap().dim(), (200, 3));
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.arz"), dir.path().join("b.arz"));
        ds.save(&p1).unwrap();
        make_dataset(&spec).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = Dataset::load(&p1).unwrap();
        assert_eq!(back.x, ds.x);
        assert!(back.spec.is_some());
    }

    #[test]
    fn dense_latent_graph_has_more_edges_than_sparse() {
        let sparse = DgpSpec::from_config(&small_config(SparsitySetting::Sparse, 11)).unwrap();
        let dense = DgpSpec::from_config(&small_config(SparsitySetting::Dense, 11)).unwrap();
        let count = |a: &Array2<f64>| a.iter().filter(|v| **v != 0.0).count();
        assert!(count(&dense.latent_inst) > count(&sparse.latent_inst));
        // dense is the complete DAG
        assert_eq!(count(&dense.latent_inst), 3);
        let indep = DgpSpec::from_config(&small_config(SparsitySetting::Independent, 11)).unwrap();
        assert_eq!(count(&indep.latent_inst), 0);
    }

    #[test]
    fn a2_violation_gives_uniform_increments() {
        let mut cfg = small_config(SparsitySetting::Independent, 23);
        cfg.t_len = 10_000;
        let spec = apply_violation(&DgpSpec::from_config(&cfg).unwrap(), Violation::A2);
        let (z, _) = simulate_latent(&spec).unwrap();
        let mut increments = Vec::new();
        for t in 1..spec.t_len {
            for j in 0..spec.d_z {
                increments.push(z[[t, j]] - z[[t - 1, j]]);
            }
        }
        let n = increments.len() as f64;
        let mean = increments.iter().sum::<f64>() / n;
        let var = increments.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let min = increments.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = increments.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.005, "var {var}");
        assert!(min >= 0.0 && max <= 1.0);
    }

    #[test]
    fn a3_violation_has_constant_jacobian() {
        let spec = apply_violation(
            &DgpSpec::from_config(&small_config(SparsitySetting::Independent, 31)).unwrap(),
            Violation::A3,
        );
        let w = spec.orthogonal_mixing();
        // orthonormal columns
        let gram = w.t().dot(&w);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn none_violation_is_passthrough() {
        let spec = DgpSpec::from_config(&small_config(SparsitySetting::Independent, 8)).unwrap();
        let same = apply_violation(&spec, Violation::None);
        assert_eq!(
            serde_json::to_string(&spec).unwrap(),
            serde_json::to_string(&same).unwrap()
        );
    }

    #[test]
    fn unknown_violation_name_errors() {
        assert!(matches!(
            parse_violation("a7"),
            Err(CadreError::UnknownViolation(_))
        ));
        assert!(matches!(parse_violation("A5"), Ok(Violation::A5)));
    }

    #[test]
    fn independent_setting_has_small_partial_correlation() {
        // partial correlation of z_{t,i}, z_{t,j} given z_{t-1} via residuals
        // of least-squares projections
        let mut cfg = small_config(SparsitySetting::Independent, 77);
        cfg.t_len = 10_000;
        let spec = DgpSpec::from_config(&cfg).unwrap();
        let (z, _) = simulate_latent(&spec).unwrap();
        let t_len = spec.t_len;
        let rows = t_len - 1;
        let mut design = nalgebra::DMatrix::zeros(rows, 4);
        for t in 1..t_len {
            design[(t - 1, 0)] = 1.0;
            for j in 0..3 {
                design[(t - 1, j + 1)] = z[[t - 1, j]];
            }
        }
        let residual = |col: usize| -> Vec<f64> {
            let y = nalgebra::DVector::from_fn(rows, |r, _| z[[r + 1, col]]);
            let coef = (design.transpose() * &design)
                .try_inverse()
                .unwrap()
                * design.transpose()
                * &y;
            let fit = &design * coef;
            (0..rows).map(|r| y[r] - fit[r]).collect()
        };
        let r0 = residual(0);
        let r1 = residual(1);
        let r2 = residual(2);
        let corr = |a: &[f64], b: &[f64]| -> f64 {
            let n = a.len() as f64;
            let (ma, mb) = (
                a.iter().sum::<f64>() / n,
                b.iter().sum::<f64>() / n,
            );
            let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
            for i in 0..a.len() {
                num += (a[i] - ma) * (b[i] - mb);
                va += (a[i] - ma).powi(2);
                vb += (b[i] - mb).powi(2);
            }
            num / (va.sqrt() * vb.sqrt())
        };
        assert!(corr(&r0, &r1).abs() < 0.05);
        assert!(corr(&r0, &r2).abs() < 0.05);
        assert!(corr(&r1, &r2).abs() < 0.05);
    }
}
