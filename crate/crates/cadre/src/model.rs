//! The estimation networks: a z-encoder and s-encoder with Gaussian posterior
//! heads, a decoder, and per-component normalizing-flow prior networks that
//! map latent states to independent standard-normal noises.
//!
//! All maps are applied time-pointwise; temporal structure lives entirely in
//! the flow priors, which read consecutive latent states. At the sequence
//! boundary the missing predecessor is zero-padded.

use ndarray::{s, Array1, Array2, Axis};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::archive::Archive;
use crate::dgp::LEAKY_SLOPE;
use crate::error::{shape_mismatch, CadreError, Result};
use crate::nn::{Activation, Mlp, MlpGrad};
use crate::rng::{self, stream};

/// Width of each flow hidden layer.
pub const FLOW_HIDDEN: usize = 128;
/// Number of flow hidden layers.
pub const FLOW_DEPTH: usize = 3;
/// Log-variance outputs are clamped to this symmetric range.
pub const LOGVAR_CLAMP: f64 = 8.0;
/// Floor inside `log |jacobian|` terms.
pub const JAC_FLOOR: f64 = 1e-8;

/// Architecture constants plus dimensions; everything needed to rebuild the
/// parameter shapes deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_z: usize,
    #[serde(default = "default_hidden")]
    pub flow_hidden: usize,
    /// Encoder hidden width; the latent state is only recoverable from
    /// contextual observations, so the encoders read `[x_{t-1}, x_t,
    /// x_{t+1}]` and need capacity beyond the observation width at small
    /// `d_x`.
    #[serde(default = "default_enc_hidden")]
    pub enc_hidden: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    pub seed: u64,
    /// Deviation flag: the decoder appends a linear head after its tanh
    /// layer so reconstructions are unbounded.
    #[serde(default = "default_true")]
    pub linear_decoder_head: bool,
}

fn default_hidden() -> usize {
    FLOW_HIDDEN
}
fn default_enc_hidden() -> usize {
    128
}
fn default_slope() -> f64 {
    LEAKY_SLOPE
}
fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(d_x: usize, d_z: usize, seed: u64) -> Self {
        Self {
            d_x,
            d_z,
            flow_hidden: FLOW_HIDDEN,
            enc_hidden: default_enc_hidden().max(d_x),
            leaky_slope: LEAKY_SLOPE,
            seed,
            linear_decoder_head: true,
        }
    }
}

/// All learnable parameters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// z-encoder: `x_t -> (mean, logvar)` of the latent posterior.
    pub phi: Mlp,
    /// s-encoder: `x_t -> (mean, logvar)` of the noise posterior.
    pub eta: Mlp,
    /// decoder: `[z_t, s_t] -> x_t`.
    pub psi: Mlp,
    /// One scalar-output flow per latent component, input `[z_{t-1}, z_t]`
    /// (the full current vector, so its Jacobian carries the instantaneous
    /// structure).
    pub r_flows: Vec<Mlp>,
    /// One scalar-output flow per noise component, input `[z_t, s_{t,i}]`.
    /// Conditioning only on the component's own noise keeps the
    /// diagonal-Jacobian density valid; a full-vector input would let the
    /// flow manufacture density from cross-component prediction.
    pub w_flows: Vec<Mlp>,
    pub config: ModelConfig,
}

/// Gradients shaped like [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub phi: MlpGrad,
    pub eta: MlpGrad,
    pub psi: MlpGrad,
    pub r_flows: Vec<MlpGrad>,
    pub w_flows: Vec<MlpGrad>,
}

impl ModelGrads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            phi: MlpGrad::zeros_like(&p.phi),
            eta: MlpGrad::zeros_like(&p.eta),
            psi: MlpGrad::zeros_like(&p.psi),
            r_flows: p.r_flows.iter().map(MlpGrad::zeros_like).collect(),
            w_flows: p.w_flows.iter().map(MlpGrad::zeros_like).collect(),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        self.phi.for_each(&mut f);
        self.eta.for_each(&mut f);
        self.psi.for_each(&mut f);
        for g in &self.r_flows {
            g.for_each(&mut f);
        }
        for g in &self.w_flows {
            g.for_each(&mut f);
        }
    }
}

fn flow_acts(slope: f64) -> Vec<Activation> {
    let mut acts = vec![Activation::LeakyRelu(slope); FLOW_DEPTH];
    acts.push(Activation::Identity);
    acts
}

impl ModelParams {
    /// Fresh random initialization from the config seed.
    pub fn init(config: &ModelConfig) -> Self {
        let (d_x, d_z, h) = (config.d_x, config.d_z, config.flow_hidden);
        let slope = config.leaky_slope;
        let enc = config.enc_hidden;
        let mut r = rng::derive(config.seed, stream::MODEL_INIT);
        let phi = Mlp::init(
            &[3 * d_x, enc, 2 * d_z],
            &[Activation::LeakyRelu(slope), Activation::Identity],
            &mut r,
        );
        let eta = Mlp::init(
            &[3 * d_x, enc, 2 * d_x],
            &[Activation::LeakyRelu(slope), Activation::Identity],
            &mut r,
        );
        let psi = if config.linear_decoder_head {
            // Start the decoder near the identity on its s-block: the tanh
            // layer reads 0.1 * s and the head scales by 10, so the decoder
            // Jacobian wrt s is close to I. A generic random start makes that
            // Jacobian near-singular and its inverse (inside the structural
            // penalties) blows the loss up before training can move.
            let mut psi = Mlp::init(
                &[d_z + d_x, d_x, d_x],
                &[Activation::Tanh, Activation::Identity],
                &mut r,
            );
            for i in 0..d_x {
                for j in 0..d_x {
                    psi.layers[0].w[[i, d_z + j]] *= 0.05;
                    psi.layers[1].w[[i, j]] *= 0.05;
                }
                psi.layers[0].w[[i, d_z + i]] += 0.1;
                psi.layers[1].w[[i, i]] += 10.0;
            }
            psi
        } else {
            Mlp::init(&[d_z + d_x, d_x], &[Activation::Tanh], &mut r)
        };
        let flow_dims = |input: usize| {
            let mut dims = vec![input];
            dims.extend(std::iter::repeat(h).take(FLOW_DEPTH));
            dims.push(1);
            dims
        };
        let r_flows = (0..d_z)
            .map(|_| Mlp::init(&flow_dims(2 * d_z), &flow_acts(slope), &mut r))
            .collect();
        let w_flows = (0..d_x)
            .map(|_| Mlp::init(&flow_dims(d_z + 1), &flow_acts(slope), &mut r))
            .collect();
        Self {
            phi,
            eta,
            psi,
            r_flows,
            w_flows,
            config: config.clone(),
        }
    }

    /// Total parameter count; a deterministic function of `(d_x, d_z)`.
    pub fn n_params(&self) -> usize {
        let mut n = self.phi.n_params() + self.eta.n_params() + self.psi.n_params();
        n += self.r_flows.iter().map(Mlp::n_params).sum::<usize>();
        n += self.w_flows.iter().map(Mlp::n_params).sum::<usize>();
        n
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.phi.for_each_param_mut(&mut f);
        self.eta.for_each_param_mut(&mut f);
        self.psi.for_each_param_mut(&mut f);
        for net in &mut self.r_flows {
            net.for_each_param_mut(&mut f);
        }
        for net in &mut self.w_flows {
            net.for_each_param_mut(&mut f);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        let mut push = |v: f64| out.push(v);
        self.phi.for_each_param(&mut push);
        self.eta.for_each_param(&mut push);
        self.psi.for_each_param(&mut push);
        for net in &self.r_flows {
            net.for_each_param(&mut push);
        }
        for net in &self.w_flows {
            net.for_each_param(&mut push);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.n_params());
        let mut it = values.iter();
        self.for_each_param_mut(|v| *v = *it.next().unwrap());
    }

    /// Inserts all parameter arrays into an archive under stable names.
    pub fn write_into(&self, arc: &mut Archive) {
        let mut put = |name: String, net: &Mlp| {
            for (k, layer) in net.layers.iter().enumerate() {
                arc.insert2(&format!("{name}.{k}.w"), &layer.w);
                arc.insert1(&format!("{name}.{k}.b"), &layer.b);
            }
        };
        put("phi".into(), &self.phi);
        put("eta".into(), &self.eta);
        put("psi".into(), &self.psi);
        for (i, net) in self.r_flows.iter().enumerate() {
            put(format!("r.{i}"), net);
        }
        for (i, net) in self.w_flows.iter().enumerate() {
            put(format!("w.{i}"), net);
        }
    }

    /// Saves parameters plus a JSON config sidecar (`<path>.json`).
    pub fn save(&self, path: &Path, extra: Option<&serde_json::Value>) -> Result<()> {
        let mut arc = Archive::new();
        self.write_into(&mut arc);
        arc.write(path)?;
        let mut sidecar = serde_json::json!({ "model": self.config });
        if let Some(v) = extra {
            sidecar["extra"] = v.clone();
        }
        std::fs::write(config_sidecar(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Rebuilds parameters of the given config from archive arrays.
    pub fn read_from(arc: &Archive, config: &ModelConfig) -> Result<Self> {
        let mut params = ModelParams::init(config);
        let fill = |name: String, net: &mut Mlp| -> Result<()> {
            for (k, layer) in net.layers.iter_mut().enumerate() {
                layer.w = arc.get2(&format!("{name}.{k}.w"))?;
                layer.b = arc.get1(&format!("{name}.{k}.b"))?;
            }
            Ok(())
        };
        fill("phi".into(), &mut params.phi)?;
        fill("eta".into(), &mut params.eta)?;
        fill("psi".into(), &mut params.psi)?;
        for i in 0..config.d_z {
            let mut net = params.r_flows[i].clone();
            fill(format!("r.{i}"), &mut net)?;
            params.r_flows[i] = net;
        }
        for i in 0..config.d_x {
            let mut net = params.w_flows[i].clone();
            fill(format!("w.{i}"), &mut net)?;
            params.w_flows[i] = net;
        }
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let text = std::fs::read_to_string(config_sidecar(path))?;
        let sidecar: serde_json::Value = serde_json::from_str(&text)?;
        let config: ModelConfig = serde_json::from_value(
            sidecar
                .get("model")
                .cloned()
                .ok_or_else(|| CadreError::InvalidConfig("checkpoint sidecar lacks `model`".into()))?,
        )?;
        let arc = Archive::read(path)?;
        let params = Self::read_from(&arc, &config)?;
        Ok((params, sidecar))
    }
}

/// Path of the JSON sidecar that accompanies a parameter archive.
pub fn config_sidecar_path(path: &Path) -> std::path::PathBuf {
    config_sidecar(path)
}

fn config_sidecar(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Posterior statistics and reparameterized draws for one sequence slice.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub z_mean: Array2<f64>,
    pub z_logvar: Array2<f64>,
    pub s_mean: Array2<f64>,
    pub s_logvar: Array2<f64>,
    pub z_sample: Array2<f64>,
    pub s_sample: Array2<f64>,
    /// Standard-normal draws behind the samples, kept for determinism.
    pub noise_z: Array2<f64>,
    pub noise_s: Array2<f64>,
}

pub(crate) fn split_heads(out: &Array2<f64>, d: usize) -> (Array2<f64>, Array2<f64>) {
    let mean = out.slice(s![.., ..d]).to_owned();
    let logvar = out
        .slice(s![.., d..])
        .mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
    (mean, logvar)
}

/// Stacks each row with its neighbors into `[x_{t-1} | x_t | x_{t+1}]`.
/// Missing neighbors at the slice ends come from the optional context rows,
/// else zero padding (the sequence boundary).
pub fn stack_context(
    x: &Array2<f64>,
    prev: Option<&Array1<f64>>,
    next: Option<&Array1<f64>>,
) -> Array2<f64> {
    let (t_len, d) = x.dim();
    let mut out = Array2::zeros((t_len, 3 * d));
    for t in 0..t_len {
        if t > 0 {
            for j in 0..d {
                out[[t, j]] = x[[t - 1, j]];
            }
        } else if let Some(p) = prev {
            for j in 0..d {
                out[[t, j]] = p[j];
            }
        }
        for j in 0..d {
            out[[t, d + j]] = x[[t, j]];
        }
        if t + 1 < t_len {
            for j in 0..d {
                out[[t, 2 * d + j]] = x[[t + 1, j]];
            }
        } else if let Some(n) = next {
            for j in 0..d {
                out[[t, 2 * d + j]] = n[j];
            }
        }
    }
    out
}

/// Runs both encoders and draws reparameterized samples. The slice is
/// treated as a whole sequence: its first and last rows see zero-padded
/// neighbors.
pub fn encode(x: &Array2<f64>, params: &ModelParams, seed: u64) -> Result<PosteriorSample> {
    let d_x = params.config.d_x;
    let d_z = params.config.d_z;
    if x.ncols() != d_x {
        return Err(shape_mismatch((x.nrows(), d_x), x.dim()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CadreError::InvalidLatents("non-finite encoder input".into()));
    }
    let t_len = x.nrows();
    let ctx = stack_context(x, None, None);
    let (z_mean, z_logvar) = split_heads(&params.phi.forward(&ctx), d_z);
    let (s_mean, s_logvar) = split_heads(&params.eta.forward(&ctx), d_x);
    let mut r = rng::derive(seed, stream::POSTERIOR);
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| {
            let n: f64 = rand::Rng::sample(&mut r, StandardNormal);
            n
        })
    };
    let noise_z = draw(t_len, d_z);
    let noise_s = draw(t_len, d_x);
    let z_sample = &z_mean + &(&z_logvar.mapv(|v| (0.5 * v).exp()) * &noise_z);
    let s_sample = &s_mean + &(&s_logvar.mapv(|v| (0.5 * v).exp()) * &noise_s);
    Ok(PosteriorSample {
        z_mean,
        z_logvar,
        s_mean,
        s_logvar,
        z_sample,
        s_sample,
        noise_z,
        noise_s,
    })
}

/// Decodes `[z, s]` rows back to observation space.
pub fn decode(z: &Array2<f64>, s: &Array2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    let (d_z, d_x) = (params.config.d_z, params.config.d_x);
    if z.ncols() != d_z || s.ncols() != d_x || z.nrows() != s.nrows() {
        return Err(shape_mismatch((z.nrows(), d_z + d_x), (z.dim(), s.dim())));
    }
    Ok(params.psi.forward(&concat_rows(z, s)))
}

/// Row-wise concatenation `[a | b]`.
pub fn concat_rows(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(a);
    out.slice_mut(s![.., a.ncols()..]).assign(b);
    out
}

const LOG_2PI: f64 = 1.8378770664093453;

/// Log-density terms of the latent flow prior at one time step.
///
/// Returns `(logp, eps_hat, diag_jac)` where
/// `logp = sum_i [ log N(eps_i; 0, 1) + log(|d r_i / d z_curr_i| + 1e-8) ]`.
pub fn flow_z_logprob(
    z_prev: &Array1<f64>,
    z_curr: &Array1<f64>,
    params: &ModelParams,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let d_z = params.config.d_z;
    if z_prev.len() != d_z || z_curr.len() != d_z {
        return Err(shape_mismatch(d_z, (z_prev.len(), z_curr.len())));
    }
    let input = {
        let mut v = Array2::zeros((1, 2 * d_z));
        for i in 0..d_z {
            v[[0, i]] = z_prev[i];
            v[[0, d_z + i]] = z_curr[i];
        }
        v
    };
    let mut eps = Array1::zeros(d_z);
    let mut jac = Array1::zeros(d_z);
    let mut logp = 0.0;
    for i in 0..d_z {
        let seed = one_hot_rows(1, 2 * d_z, d_z + i);
        let cache = params.r_flows[i].forward_cached(&input, &[seed]);
        eps[i] = cache.output()[[0, 0]];
        jac[i] = cache.tout[0][[0, 0]];
        logp += -0.5 * eps[i] * eps[i] - 0.5 * LOG_2PI + (jac[i].abs() + JAC_FLOOR).ln();
    }
    Ok((logp, eps, jac))
}

/// Log-density terms of the noise flow prior at one time step; mirrors
/// [`flow_z_logprob`] with conditioning `[z_t, s_t]` and `d_x` components.
pub fn flow_s_logprob(
    z_curr: &Array1<f64>,
    s_curr: &Array1<f64>,
    params: &ModelParams,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let (d_z, d_x) = (params.config.d_z, params.config.d_x);
    if z_curr.len() != d_z || s_curr.len() != d_x {
        return Err(shape_mismatch((d_z, d_x), (z_curr.len(), s_curr.len())));
    }
    let input = {
        let mut v = Array2::zeros((1, d_z + d_x));
        for i in 0..d_z {
            v[[0, i]] = z_curr[i];
        }
        for i in 0..d_x {
            v[[0, d_z + i]] = s_curr[i];
        }
        v
    };
    let mut eps = Array1::zeros(d_x);
    let mut jac = Array1::zeros(d_x);
    let mut logp = 0.0;
    for i in 0..d_x {
        let seed = one_hot_rows(1, d_z + d_x, d_z + i);
        let cache = params.w_flows[i].forward_cached(&input, &[seed]);
        eps[i] = cache.output()[[0, 0]];
        jac[i] = cache.tout[0][[0, 0]];
        logp += -0.5 * eps[i] * eps[i] - 0.5 * LOG_2PI + (jac[i].abs() + JAC_FLOOR).ln();
    }
    Ok((logp, eps, jac))
}

/// Full Jacobians of the stacked latent flow `r` at one time step:
/// `(J_curr, J_prev)` with `J[i, j] = d r_i / d z_j`.
pub fn flow_jacobians(
    z_prev: &Array1<f64>,
    z_curr: &Array1<f64>,
    params: &ModelParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let d_z = params.config.d_z;
    if z_prev.len() != d_z || z_curr.len() != d_z {
        return Err(shape_mismatch(d_z, (z_prev.len(), z_curr.len())));
    }
    let mut input = Array2::zeros((1, 2 * d_z));
    for i in 0..d_z {
        input[[0, i]] = z_prev[i];
        input[[0, d_z + i]] = z_curr[i];
    }
    let seeds: Vec<Array2<f64>> = (0..2 * d_z)
        .map(|j| one_hot_rows(1, 2 * d_z, j))
        .collect();
    let mut j_curr = Array2::zeros((d_z, d_z));
    let mut j_prev = Array2::zeros((d_z, d_z));
    for i in 0..d_z {
        let cache = params.r_flows[i].forward_cached(&input, &seeds);
        for j in 0..d_z {
            j_prev[[i, j]] = cache.tout[j][[0, 0]];
            j_curr[[i, j]] = cache.tout[d_z + j][[0, 0]];
        }
    }
    Ok((j_curr, j_prev))
}

/// A `rows x dim` matrix whose every row is the `hot`-th basis vector.
pub(crate) fn one_hot_rows(rows: usize, dim: usize, hot: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |(_, j)| if j == hot { 1.0 } else { 0.0 })
}

/// Stacks consecutive latent rows into `(prev, curr)` matrices, zero-padding
/// the predecessor of the first step when the slice starts the sequence.
pub fn lagged_pairs(z: &Array2<f64>, starts_sequence: bool) -> (Array2<f64>, Array2<f64>) {
    let (t_len, d_z) = z.dim();
    let n_pairs = if starts_sequence { t_len } else { t_len - 1 };
    let mut prev = Array2::zeros((n_pairs, d_z));
    let mut curr = Array2::zeros((n_pairs, d_z));
    let offset = if starts_sequence { 0 } else { 1 };
    for p in 0..n_pairs {
        let t = p + offset;
        if t > 0 {
            prev.row_mut(p).assign(&z.index_axis(Axis(0), t - 1));
        }
        curr.row_mut(p).assign(&z.index_axis(Axis(0), t));
    }
    (prev, curr)
}
