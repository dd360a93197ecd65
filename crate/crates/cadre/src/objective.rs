//! Training objective: reconstruction plus KL terms against the flow priors,
//! a sparsity penalty on structure-bearing Jacobians, and a trace-polynomial
//! DAG penalty. One entry point computes the loss, another additionally
//! returns exact parameter gradients, including the second-order paths
//! through Jacobian entries that appear inside the penalties.

use ndarray::{s, Array1, Array2};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, CadreError, Result};
use crate::linalg;
use crate::model::{
    concat_rows, lagged_pairs, one_hot_rows, split_heads, stack_context, ModelGrads, ModelParams,
    JAC_FLOOR, LOGVAR_CLAMP,
};

/// Neighbor rows of a training window inside the full sequence; `None` at
/// the true sequence boundary (zero padding).
#[derive(Default, Clone)]
pub struct WindowContext {
    pub prev: Option<Array1<f64>>,
    pub next: Option<Array1<f64>>,
}
use crate::rng::{self, stream};

const LOG_2PI: f64 = 1.8378770664093453;

/// Optimization settings and penalty weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    /// Weight of the noise-posterior KL term.
    #[serde(default = "d_lambda1")]
    pub lambda1: f64,
    /// Weight of the latent-posterior KL term.
    #[serde(default = "d_lambda2")]
    pub lambda2: f64,
    /// Sparsity penalty weight.
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// DAG penalty weight.
    #[serde(default = "d_beta")]
    pub beta: f64,
    /// Graph extraction threshold.
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_step_size")]
    pub step_size: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_batch_len")]
    pub batch_len: usize,
    #[serde(default)]
    pub seed: u64,
    /// Time steps per optimization step on which penalty Jacobians are
    /// averaged.
    #[serde(default = "d_penalty_points")]
    pub penalty_points: usize,
    /// Held-out steps used for graph extraction.
    #[serde(default = "d_eval_points")]
    pub eval_points: usize,
    /// Apply the Markov transform to the lagged Jacobian inside the sparsity
    /// penalty (the written formula); plain l1 when false.
    #[serde(default = "d_true")]
    pub markov_on_lagged: bool,
}

fn d_lambda1() -> f64 {
    4e-3
}
fn d_lambda2() -> f64 {
    1e-2
}
fn d_alpha() -> f64 {
    1e-4
}
fn d_beta() -> f64 {
    5e-5
}
fn d_tau() -> f64 {
    0.15
}
fn d_step_size() -> f64 {
    1e-3
}
fn d_steps() -> usize {
    10_000
}
fn d_batch_len() -> usize {
    64
}
fn d_penalty_points() -> usize {
    8
}
fn d_eval_points() -> usize {
    256
}
fn d_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: d_lambda1(),
            lambda2: d_lambda2(),
            alpha: d_alpha(),
            beta: d_beta(),
            tau: d_tau(),
            step_size: d_step_size(),
            steps: d_steps(),
            batch_len: d_batch_len(),
            seed: 0,
            penalty_points: d_penalty_points(),
            eval_points: d_eval_points(),
            markov_on_lagged: d_true(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(CadreError::InvalidConfig(
                "penalty weights must be nonnegative".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CadreError::InvalidConfig("tau must lie in (0, 1]".into()));
        }
        if self.batch_len < 2 {
            return Err(CadreError::InvalidConfig(
                "batch_len must be at least 2 (the flow prior needs a lagged step)".into(),
            ));
        }
        if self.steps == 0 || self.step_size <= 0.0 {
            return Err(CadreError::InvalidConfig(
                "steps and step_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss components of one step; `total` is the minimized scalar.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl_s: f64,
    pub kl_z: f64,
    pub sparsity: f64,
    pub dag: f64,
}

/// `M(J) = (I + J)^T (I + J) - I`, the moralized-structure proxy.
pub fn markov_transform(j: &Array2<f64>) -> Result<Array2<f64>> {
    if j.nrows() != j.ncols() {
        return Err(CadreError::NonSquare {
            rows: j.nrows(),
            cols: j.ncols(),
        });
    }
    let ipj = Array2::<f64>::eye(j.nrows()) + j;
    Ok(ipj.t().dot(&ipj) - Array2::<f64>::eye(j.nrows()))
}

/// `D_g(A) = tr[(I + A.A/d)^d] - d`; zero exactly on acyclic supports.
pub fn dag_penalty(a: &Array2<f64>) -> Result<f64> {
    Ok(dag_penalty_with_grad(a)?.0)
}

fn dag_penalty_with_grad(a: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let d = a.nrows();
    if d != a.ncols() {
        return Err(CadreError::NonSquare {
            rows: d,
            cols: a.ncols(),
        });
    }
    let m = Array2::<f64>::eye(d) + &(a * a / d as f64);
    let m_pow = linalg::matrix_power(&m, d - 1)?;
    let value = m_pow.dot(&m).diag().sum() - d as f64;
    // d tr(M^d) / dA = d * (M^{d-1})^T o (2A/d)
    let grad = &m_pow.t().to_owned() * &(a * 2.0);
    Ok((value, grad))
}

fn l1_with_grad(a: &Array2<f64>) -> (f64, Array2<f64>) {
    (a.mapv(f64::abs).sum(), a.mapv(f64::signum))
}

fn markov_l1_with_grad(j: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let m = markov_transform(j)?;
    let value = m.mapv(f64::abs).sum();
    let sgn = m.mapv(f64::signum);
    let ipj = Array2::<f64>::eye(j.nrows()) + j;
    let grad = ipj.dot(&(&sgn + &sgn.t()));
    Ok((value, grad))
}

/// `L_s = ||M(J_r(z_t))||_1 + ||M(J_d(z_{t-1}))||_1 + ||J_g(x_t)||_1`.
/// With `markov_on_lagged = false` the middle term is a plain l1 norm.
pub fn sparsity_penalty(
    j_r_curr: &Array2<f64>,
    j_r_prev: &Array2<f64>,
    j_g: &Array2<f64>,
    markov_on_lagged: bool,
) -> Result<f64> {
    if j_r_curr.dim() != j_r_prev.dim() {
        return Err(shape_mismatch(j_r_curr.dim(), j_r_prev.dim()));
    }
    if j_g.nrows() != j_g.ncols() {
        return Err(CadreError::NonSquare {
            rows: j_g.nrows(),
            cols: j_g.ncols(),
        });
    }
    let lag = if markov_on_lagged {
        markov_l1_with_grad(j_r_prev)?.0
    } else {
        l1_with_grad(j_r_prev).0
    };
    Ok(markov_l1_with_grad(j_r_curr)?.0 + lag + l1_with_grad(j_g).0)
}

/// Recovered observation-Jacobian forward pass used inside the penalties;
/// see `graphs::observation_graph` for the public contract. Returns
/// `(J_g, K)` with `K = (J_m + ridge I)^{-1}` for reuse in the backward pass.
pub(crate) fn obs_graph_forward(j_m: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    crate::graphs::obs_graph_with_ridge(j_m, 0.0)
}

/// Adjoint of [`obs_graph_forward`]: given `d_jg`, returns `d_jm`.
pub(crate) fn obs_graph_backward(
    j_m: &Array2<f64>,
    k: &Array2<f64>,
    d_jg: &Array2<f64>,
) -> Array2<f64> {
    let d = j_m.nrows();
    let mut g_bar = d_jg.clone();
    for i in 0..d {
        g_bar[[i, i]] = 0.0; // the forced diagonal does not propagate
    }
    // J_g = I - D K with D = diag(J_m):
    //   via D: d_jm[i,i] -= sum_j g_bar[i,j] k[i,j]
    //   via K: d_jm += K^T D g_bar K^T
    let mut d_jm = Array2::zeros((d, d));
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += g_bar[[i, j]] * k[[i, j]];
        }
        d_jm[[i, i]] -= acc;
    }
    let diag = Array2::from_diag(&j_m.diag().to_owned());
    d_jm += &k.t().dot(&diag.dot(&g_bar)).dot(&k.t());
    d_jm
}

/// Evenly spaced indices over `0..len`, at most `count` of them.
fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..count)
        .map(|q| q * (len - 1) / (count - 1))
        .collect();
    idx.dedup();
    idx
}

struct Evaluation {
    parts: LossParts,
    grads: Option<ModelGrads>,
}

/// One pass over a window. `starts_sequence` controls zero-padding of the
/// first lagged pair; `mask` (Jacobian orientation) gates the observation
/// DAG penalty when present.
fn evaluate(
    x_win: &Array2<f64>,
    ctx: &WindowContext,
    starts_sequence: bool,
    params: &ModelParams,
    cfg: &TrainConfig,
    sample_seed: u64,
    mask: Option<&Array2<f64>>,
    want_grads: bool,
) -> Result<Evaluation> {
    let (d_z, d_x) = (params.config.d_z, params.config.d_x);
    let b = x_win.nrows();
    if b < 2 {
        return Err(CadreError::InvalidConfig(
            "window must contain at least 2 steps".into(),
        ));
    }
    if x_win.ncols() != d_x {
        return Err(shape_mismatch((b, d_x), x_win.dim()));
    }

    // encoders with caches over contextual inputs
    let enc_in = stack_context(x_win, ctx.prev.as_ref(), ctx.next.as_ref());
    let phi_cache = params.phi.forward_cached(&enc_in, &[]);
    let eta_cache = params.eta.forward_cached(&enc_in, &[]);
    let (mu_z, lv_z) = split_heads(phi_cache.output(), d_z);
    let (mu_s, lv_s) = split_heads(eta_cache.output(), d_x);
    let raw_lv_z = phi_cache.output().slice(s![.., d_z..]).to_owned();
    let raw_lv_s = eta_cache.output().slice(s![.., d_x..]).to_owned();

    let mut r = rng::derive(sample_seed, stream::POSTERIOR);
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| {
            let n: f64 = rand::Rng::sample(&mut r, StandardNormal);
            n
        })
    };
    let n_z = draw(b, d_z);
    let n_s = draw(b, d_x);
    let sig_z = lv_z.mapv(|v| (0.5 * v).exp());
    let sig_s = lv_s.mapv(|v| (0.5 * v).exp());
    let z = &mu_z + &(&sig_z * &n_z);
    let s_smp = &mu_s + &(&sig_s * &n_s);

    // decoder
    let dec_in = concat_rows(&z, &s_smp);
    let psi_cache = params.psi.forward_cached(&dec_in, &[]);
    let xh = psi_cache.output().clone();
    let resid = &xh - x_win;
    let recon = 0.5 * resid.mapv(|v| v * v).sum() / b as f64;

    // latent flow prior over lagged pairs
    let (z_prev, z_curr) = lagged_pairs(&z, starts_sequence);
    let n_pairs = z_prev.nrows();
    let pair_offset = if starts_sequence { 0 } else { 1 };
    let flow_in_z = concat_rows(&z_prev, &z_curr);
    let mut r_caches = Vec::with_capacity(d_z);
    let mut logp_z = Array1::<f64>::zeros(n_pairs);
    for i in 0..d_z {
        let cache = params.r_flows[i]
            .forward_cached(&flow_in_z, &[one_hot_rows(n_pairs, 2 * d_z, d_z + i)]);
        for p in 0..n_pairs {
            let eps = cache.output()[[p, 0]];
            let jac = cache.tout[0][[p, 0]];
            logp_z[p] += -0.5 * eps * eps - 0.5 * LOG_2PI + (jac.abs() + JAC_FLOOR).ln();
        }
        r_caches.push(cache);
    }
    let mut kl_z = 0.0;
    for p in 0..n_pairs {
        let t = p + pair_offset;
        let mut logq = 0.0;
        for j in 0..d_z {
            logq += -0.5 * n_z[[t, j]] * n_z[[t, j]] - 0.5 * lv_z[[t, j]] - 0.5 * LOG_2PI;
        }
        kl_z += logq - logp_z[p];
    }
    kl_z /= n_pairs as f64;

    // noise flow prior at every step
    let mut w_caches = Vec::with_capacity(d_x);
    let mut logp_s = Array1::<f64>::zeros(b);
    for i in 0..d_x {
        let cache = params.w_flows[i]
            .forward_cached(&dec_in, &[one_hot_rows(b, d_z + d_x, d_z + i)]);
        for t in 0..b {
            let eps = cache.output()[[t, 0]];
            let jac = cache.tout[0][[t, 0]];
            logp_s[t] += -0.5 * eps * eps - 0.5 * LOG_2PI + (jac.abs() + JAC_FLOOR).ln();
        }
        w_caches.push(cache);
    }
    let mut kl_s = 0.0;
    for t in 0..b {
        let mut logq = 0.0;
        for j in 0..d_x {
            logq += -0.5 * n_s[[t, j]] * n_s[[t, j]] - 0.5 * lv_s[[t, j]] - 0.5 * LOG_2PI;
        }
        kl_s += logq - logp_s[t];
    }
    kl_s /= b as f64;

    // penalty Jacobians on an evenly spread sub-batch
    let sub_t = spread_indices(b, cfg.penalty_points.max(1));
    let n_sub = sub_t.len();
    let pen_dec_in = {
        let mut m = Array2::zeros((n_sub, d_z + d_x));
        for (q, &t) in sub_t.iter().enumerate() {
            m.row_mut(q).assign(&dec_in.row(t));
        }
        m
    };
    let psi_seeds: Vec<Array2<f64>> = (0..d_x)
        .map(|j| one_hot_rows(n_sub, d_z + d_x, d_z + j))
        .collect();
    let pen_psi_cache = params.psi.forward_cached(&pen_dec_in, &psi_seeds);
    let mut j_m_list = Vec::with_capacity(n_sub);
    let mut j_g_list = Vec::with_capacity(n_sub);
    let mut k_list = Vec::with_capacity(n_sub);
    let mut a_obs = Array2::zeros((d_x, d_x));
    for q in 0..n_sub {
        let mut j_m = Array2::zeros((d_x, d_x));
        for j in 0..d_x {
            for i in 0..d_x {
                j_m[[i, j]] = pen_psi_cache.tout[j][[q, i]];
            }
        }
        let (j_g, k) = obs_graph_forward(&j_m)?;
        a_obs = a_obs + j_g.mapv(f64::abs);
        j_m_list.push(j_m);
        j_g_list.push(j_g);
        k_list.push(k);
    }
    a_obs /= n_sub as f64;

    let sub_p = spread_indices(n_pairs, cfg.penalty_points.max(1));
    let n_subp = sub_p.len();
    let pen_flow_in = {
        let mut m = Array2::zeros((n_subp, 2 * d_z));
        for (q, &p) in sub_p.iter().enumerate() {
            m.row_mut(q).assign(&flow_in_z.row(p));
        }
        m
    };
    let flow_seeds: Vec<Array2<f64>> = (0..2 * d_z)
        .map(|j| one_hot_rows(n_subp, 2 * d_z, j))
        .collect();
    let mut pen_r_caches = Vec::with_capacity(d_z);
    let mut j_rc = vec![Array2::zeros((d_z, d_z)); n_subp];
    let mut j_rp = vec![Array2::zeros((d_z, d_z)); n_subp];
    for i in 0..d_z {
        let cache = params.r_flows[i].forward_cached(&pen_flow_in, &flow_seeds);
        for q in 0..n_subp {
            for j in 0..d_z {
                j_rp[q][[i, j]] = cache.tout[j][[q, 0]];
                j_rc[q][[i, j]] = cache.tout[d_z + j][[q, 0]];
            }
        }
        pen_r_caches.push(cache);
    }
    let mut a_rc = Array2::zeros((d_z, d_z));
    let mut a_rp = Array2::zeros((d_z, d_z));
    for q in 0..n_subp {
        a_rc = a_rc + j_rc[q].mapv(f64::abs);
        a_rp = a_rp + j_rp[q].mapv(f64::abs);
    }
    a_rc /= n_subp as f64;
    a_rp /= n_subp as f64;

    let (l1_obs, l1_obs_grad) = l1_with_grad(&a_obs);
    let (mk_rc, mk_rc_grad) = markov_l1_with_grad(&a_rc)?;
    let (lag_val, lag_grad) = if cfg.markov_on_lagged {
        markov_l1_with_grad(&a_rp)?
    } else {
        l1_with_grad(&a_rp)
    };
    let a_obs_for_dag = match mask {
        Some(m) => &a_obs * m,
        None => a_obs.clone(),
    };
    let (dag_obs, dag_obs_grad) = dag_penalty_with_grad(&a_obs_for_dag)?;
    // the instantaneous latent DAG lives on the off-diagonal: each r_i must
    // read its own coordinate to extract noise, and that self-dependence is
    // not an edge (a diagonal entry would make the penalty floor positive
    // and crush the flows)
    let mut a_rc_off = a_rc.clone();
    for i in 0..d_z {
        a_rc_off[[i, i]] = 0.0;
    }
    let (dag_rc, mut dag_rc_grad) = dag_penalty_with_grad(&a_rc_off)?;
    for i in 0..d_z {
        dag_rc_grad[[i, i]] = 0.0;
    }

    let sparsity = mk_rc + lag_val + l1_obs;
    let dag = dag_obs + dag_rc;
    let total = recon + cfg.lambda1 * kl_s + cfg.lambda2 * kl_z + cfg.alpha * sparsity
        + cfg.beta * dag;
    let parts = LossParts {
        total,
        recon,
        kl_s,
        kl_z,
        sparsity,
        dag,
    };
    for (name, v) in [
        ("total", total),
        ("recon", recon),
        ("kl_s", kl_s),
        ("kl_z", kl_z),
        ("sparsity", sparsity),
        ("dag", dag),
    ] {
        if !v.is_finite() {
            return Err(CadreError::NonFiniteLoss {
                step: 0,
                component: name.into(),
            });
        }
    }
    if !want_grads {
        return Ok(Evaluation { parts, grads: None });
    }

    // ---------------- backward ----------------
    let mut grads = ModelGrads::zeros_like(params);
    let mut dz = Array2::zeros((b, d_z));
    let mut ds = Array2::zeros((b, d_x));
    let mut dlv_z = Array2::zeros((b, d_z));
    let mut dlv_s = Array2::zeros((b, d_x));

    // reconstruction
    let d_xh = resid.mapv(|v| v / b as f64);
    let d_dec_in = params.psi.backward(&psi_cache, &d_xh, &[], &mut grads.psi);
    dz += &d_dec_in.slice(s![.., ..d_z]);
    ds += &d_dec_in.slice(s![.., d_z..]);

    // latent KL
    let cz = cfg.lambda2 / n_pairs as f64;
    for p in 0..n_pairs {
        let t = p + pair_offset;
        for j in 0..d_z {
            dlv_z[[t, j]] += -0.5 * cz;
        }
    }
    for i in 0..d_z {
        let cache = &r_caches[i];
        let mut d_eps = Array2::zeros((n_pairs, 1));
        let mut d_jac = Array2::zeros((n_pairs, 1));
        for p in 0..n_pairs {
            let eps = cache.output()[[p, 0]];
            let jac = cache.tout[0][[p, 0]];
            d_eps[[p, 0]] = cz * eps;
            d_jac[[p, 0]] = -cz * jac.signum() / (jac.abs() + JAC_FLOOR);
        }
        let d_in = params.r_flows[i].backward(cache, &d_eps, &[d_jac], &mut grads.r_flows[i]);
        scatter_flow_input_adjoint(&d_in, &mut dz, d_z, pair_offset, None);
    }

    // noise KL
    let cs = cfg.lambda1 / b as f64;
    dlv_s.mapv_inplace(|v| v - 0.5 * cs);
    for i in 0..d_x {
        let cache = &w_caches[i];
        let mut d_eps = Array2::zeros((b, 1));
        let mut d_jac = Array2::zeros((b, 1));
        for t in 0..b {
            let eps = cache.output()[[t, 0]];
            let jac = cache.tout[0][[t, 0]];
            d_eps[[t, 0]] = cs * eps;
            d_jac[[t, 0]] = -cs * jac.signum() / (jac.abs() + JAC_FLOOR);
        }
        let d_in = params.w_flows[i].backward(cache, &d_eps, &[d_jac], &mut grads.w_flows[i]);
        dz += &d_in.slice(s![.., ..d_z]);
        ds += &d_in.slice(s![.., d_z..]);
    }

    // observation-graph penalties
    let mut d_a_obs = l1_obs_grad.mapv(|v| v * cfg.alpha);
    let masked_dag_grad = match mask {
        Some(m) => &dag_obs_grad * m,
        None => dag_obs_grad,
    };
    d_a_obs += &masked_dag_grad.mapv(|v| v * cfg.beta);
    let mut d_touts_psi = vec![Array2::zeros((n_sub, d_x)); d_x];
    for q in 0..n_sub {
        let d_jg = &j_g_list[q].mapv(f64::signum) * &d_a_obs / n_sub as f64;
        let d_jm = obs_graph_backward(&j_m_list[q], &k_list[q], &d_jg);
        for j in 0..d_x {
            for i in 0..d_x {
                d_touts_psi[j][[q, i]] = d_jm[[i, j]];
            }
        }
    }
    let d_pen_in = params.psi.backward(
        &pen_psi_cache,
        &Array2::zeros((n_sub, d_x)),
        &d_touts_psi,
        &mut grads.psi,
    );
    for (q, &t) in sub_t.iter().enumerate() {
        for j in 0..d_z {
            dz[[t, j]] += d_pen_in[[q, j]];
        }
        for j in 0..d_x {
            ds[[t, j]] += d_pen_in[[q, d_z + j]];
        }
    }

    // latent-structure penalties
    let d_a_rc = mk_rc_grad.mapv(|v| v * cfg.alpha) + dag_rc_grad.mapv(|v| v * cfg.beta);
    let d_a_rp = lag_grad.mapv(|v| v * cfg.alpha);
    for i in 0..d_z {
        let cache = &pen_r_caches[i];
        let mut d_touts = vec![Array2::zeros((n_subp, 1)); 2 * d_z];
        for q in 0..n_subp {
            for j in 0..d_z {
                d_touts[j][[q, 0]] =
                    j_rp[q][[i, j]].signum() * d_a_rp[[i, j]] / n_subp as f64;
                d_touts[d_z + j][[q, 0]] =
                    j_rc[q][[i, j]].signum() * d_a_rc[[i, j]] / n_subp as f64;
            }
        }
        let d_in = params.r_flows[i].backward(
            cache,
            &Array2::zeros((n_subp, 1)),
            &d_touts,
            &mut grads.r_flows[i],
        );
        scatter_flow_input_adjoint(&d_in, &mut dz, d_z, pair_offset, Some(&sub_p));
    }

    // reparameterization into the encoder heads
    let d_mu_z = dz.clone();
    dlv_z += &(&dz * &sig_z.mapv(|v| 0.5 * v) * &n_z);
    let d_mu_s = ds.clone();
    dlv_s += &(&ds * &sig_s.mapv(|v| 0.5 * v) * &n_s);
    // clamp gate on the log-variance heads
    let gate = |raw: &Array2<f64>, g: &mut Array2<f64>| {
        ndarray::Zip::from(g).and(raw).for_each(|gv, &rv| {
            if rv.abs() > LOGVAR_CLAMP {
                *gv = 0.0;
            }
        });
    };
    gate(&raw_lv_z, &mut dlv_z);
    gate(&raw_lv_s, &mut dlv_s);
    let d_phi_out = concat_rows(&d_mu_z, &dlv_z);
    params
        .phi
        .backward(&phi_cache, &d_phi_out, &[], &mut grads.phi);
    let d_eta_out = concat_rows(&d_mu_s, &dlv_s);
    params
        .eta
        .backward(&eta_cache, &d_eta_out, &[], &mut grads.eta);

    Ok(Evaluation {
        parts,
        grads: Some(grads),
    })
}

/// Routes a flow-input adjoint (`[prev | curr]` columns) back onto the
/// per-step latent adjoint matrix. `rows`: pair indices when the pass ran on
/// a sub-batch. The padded predecessor of pair 0 is a constant; its adjoint
/// is dropped.
fn scatter_flow_input_adjoint(
    d_in: &Array2<f64>,
    dz: &mut Array2<f64>,
    d_z: usize,
    pair_offset: usize,
    rows: Option<&[usize]>,
) {
    for q in 0..d_in.nrows() {
        let p = rows.map_or(q, |r| r[q]);
        let t_curr = p + pair_offset;
        for j in 0..d_z {
            dz[[t_curr, j]] += d_in[[q, d_z + j]];
            if t_curr > 0 {
                dz[[t_curr - 1, j]] += d_in[[q, j]];
            }
        }
    }
}

/// Negative ELBO components of a window (no structural penalties).
pub fn elbo(
    x_win: &Array2<f64>,
    starts_sequence: bool,
    params: &ModelParams,
    cfg: &TrainConfig,
    sample_seed: u64,
) -> Result<LossParts> {
    let mut c = cfg.clone();
    c.alpha = 0.0;
    c.beta = 0.0;
    let ev = evaluate(
        x_win,
        &WindowContext::default(),
        starts_sequence,
        params,
        &c,
        sample_seed,
        None,
        false,
    )?;
    Ok(LossParts {
        total: ev.parts.recon + cfg.lambda1 * ev.parts.kl_s + cfg.lambda2 * ev.parts.kl_z,
        sparsity: 0.0,
        dag: 0.0,
        ..ev.parts
    })
}

/// Full training loss of a window.
pub fn total_loss(
    x_win: &Array2<f64>,
    starts_sequence: bool,
    params: &ModelParams,
    cfg: &TrainConfig,
    sample_seed: u64,
    mask: Option<&Array2<f64>>,
) -> Result<LossParts> {
    let ev = evaluate(
        x_win,
        &WindowContext::default(),
        starts_sequence,
        params,
        cfg,
        sample_seed,
        mask,
        false,
    )?;
    Ok(ev.parts)
}

/// Full training loss plus exact parameter gradients.
pub fn loss_and_grads(
    x_win: &Array2<f64>,
    starts_sequence: bool,
    params: &ModelParams,
    cfg: &TrainConfig,
    sample_seed: u64,
    mask: Option<&Array2<f64>>,
) -> Result<(LossParts, ModelGrads)> {
    loss_and_grads_ctx(
        x_win,
        &WindowContext::default(),
        starts_sequence,
        params,
        cfg,
        sample_seed,
        mask,
    )
}

/// [`loss_and_grads`] with true neighbor rows supplied for the window ends.
pub fn loss_and_grads_ctx(
    x_win: &Array2<f64>,
    ctx: &WindowContext,
    starts_sequence: bool,
    params: &ModelParams,
    cfg: &TrainConfig,
    sample_seed: u64,
    mask: Option<&Array2<f64>>,
) -> Result<(LossParts, ModelGrads)> {
    let ev = evaluate(x_win, ctx, starts_sequence, params, cfg, sample_seed, mask, true)?;
    Ok((ev.parts, ev.grads.expect("gradients requested")))
}
