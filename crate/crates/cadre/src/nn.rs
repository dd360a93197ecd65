//! Dense networks with reverse-mode gradients, including gradients of
//! input-derivative (tangent) outputs.
//!
//! The training objective penalizes entries of network Jacobians, so the
//! backward pass must differentiate not only the network output but also
//! selected directional derivatives of it. Tangents are propagated forward
//! alongside values (`tpre = t W^T`, `tpost = act'(pre) * tpre`) and the
//! backward pass walks both paths, picking up the `act''` cross term where the
//! activation is curved. For piecewise-linear activations that term vanishes,
//! which keeps the pass exact almost everywhere.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// First derivative, given pre-activation `x` and post-activation `fx`.
    #[inline]
    fn d1(&self, x: f64, fx: f64) -> f64 {
        match *self {
            Activation::LeakyRelu(s) => {
                if x >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => 1.0 - fx * fx,
            Activation::Identity => 1.0,
        }
    }

    /// Second derivative; zero for the piecewise-linear cases.
    #[inline]
    fn d2(&self, _x: f64, fx: f64) -> f64 {
        match *self {
            Activation::LeakyRelu(_) | Activation::Identity => 0.0,
            Activation::Tanh => -2.0 * fx * (1.0 - fx * fx),
        }
    }
}

/// One dense layer; weights are `out x in`, applied as `pre = a W^T + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub act: Activation,
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Forward caches needed by [`Mlp::backward`].
pub struct MlpCache {
    /// Layer inputs; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    pres: Vec<Array2<f64>>,
    posts: Vec<Array2<f64>>,
    /// `tin[m][k]`: input of layer `k` on tangent path `m`.
    tin: Vec<Vec<Array2<f64>>>,
    /// `tpre[m][k]`: pre-activation tangent of layer `k` on path `m`.
    tpre: Vec<Vec<Array2<f64>>>,
    /// Final tangent outputs, one per path.
    pub tout: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.posts.last().expect("empty network")
    }
}

impl Mlp {
    /// Random init: weights N(0, 1/fan_in), zero biases.
    pub fn init<R: Rng>(dims: &[usize], acts: &[Activation], rng: &mut R) -> Self {
        assert_eq!(dims.len(), acts.len() + 1, "one activation per layer");
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(d, &act)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let std = (1.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    let n: f64 = rng.sample(StandardNormal);
                    n * std
                });
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                    act,
                }
            })
            .collect();
        Self { layers }
    }

    /// All-zero network of the given shape.
    pub fn zeros(dims: &[usize], acts: &[Activation]) -> Self {
        assert_eq!(dims.len(), acts.len() + 1);
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(d, &act)| Dense {
                w: Array2::zeros((d[1], d[0])),
                b: Array1::zeros(d[1]),
                act,
            })
            .collect();
        Self { layers }
    }

    /// A network computing exactly `x[coord]` on `(-SHIFT, inf)`, built from
    /// leaky-ReLU hidden layers by carrying `x + SHIFT` through the positive
    /// branch (`x = lrelu(x + c) - c`). Strictly monotone on all of `R`, with
    /// unit derivative everywhere above `-SHIFT`. Used to pin flow networks
    /// to the identity in tests and probes.
    pub fn identity_on(
        input_dim: usize,
        coord: usize,
        hidden: usize,
        n_hidden: usize,
        slope: f64,
    ) -> Self {
        const SHIFT: f64 = 64.0;
        assert!(hidden >= 1 && coord < input_dim);
        let mut layers = Vec::new();
        let mut first = Dense {
            w: Array2::zeros((hidden, input_dim)),
            b: Array1::zeros(hidden),
            act: Activation::LeakyRelu(slope),
        };
        first.w[[0, coord]] = 1.0;
        first.b[0] = SHIFT;
        layers.push(first);
        for _ in 1..n_hidden {
            let mut mid = Dense {
                w: Array2::zeros((hidden, hidden)),
                b: Array1::zeros(hidden),
                act: Activation::LeakyRelu(slope),
            };
            mid.w[[0, 0]] = 1.0;
            layers.push(mid);
        }
        let mut last = Dense {
            w: Array2::zeros((1, hidden)),
            b: Array1::zeros(1),
            act: Activation::Identity,
        };
        last.w[[0, 0]] = 1.0;
        last.b[0] = -SHIFT;
        layers.push(last);
        Self { layers }
    }

    /// Scales the final layer (and thus the output) by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let last = self.layers.last_mut().expect("empty network");
        last.w.mapv_inplace(|v| v * c);
        last.b.mapv_inplace(|v| v * c);
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("empty network").w.nrows()
    }

    /// Plain forward pass over a batch (rows are samples).
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let mut pre = a.dot(&layer.w.t());
            pre += &layer.b;
            a = pre.mapv(|v| layer.act.apply(v));
        }
        a
    }

    /// Single-sample convenience wrapper.
    pub fn forward1(&self, x: &Array1<f64>) -> Array1<f64> {
        let x2 = x.clone().insert_axis(Axis(0));
        self.forward(&x2).index_axis(Axis(0), 0).to_owned()
    }

    /// Forward pass retaining caches, optionally carrying tangent seeds
    /// (each `B x in`, one matrix per directional-derivative path).
    pub fn forward_cached(&self, x: &Array2<f64>, tangent_seeds: &[Array2<f64>]) -> MlpCache {
        let n_t = tangent_seeds.len();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut posts = Vec::with_capacity(self.layers.len());
        let mut tin: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(self.layers.len()); n_t];
        let mut tpre: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(self.layers.len()); n_t];
        let mut a = x.clone();
        let mut t: Vec<Array2<f64>> = tangent_seeds.to_vec();
        for layer in &self.layers {
            inputs.push(a.clone());
            let mut pre = a.dot(&layer.w.t());
            pre += &layer.b;
            let post = pre.mapv(|v| layer.act.apply(v));
            let d1 = ndarray::Zip::from(&pre)
                .and(&post)
                .map_collect(|&p, &q| layer.act.d1(p, q));
            for m in 0..n_t {
                tin[m].push(t[m].clone());
                let tp = t[m].dot(&layer.w.t());
                t[m] = &tp * &d1;
                tpre[m].push(tp);
            }
            pres.push(pre);
            posts.push(post);
            a = posts.last().unwrap().clone();
        }
        MlpCache {
            inputs,
            pres,
            posts,
            tin,
            tpre,
            tout: t,
        }
    }

    /// Reverse pass. `d_out` is the adjoint of the network output and
    /// `d_tout[m]` the adjoint of tangent output `m`; parameter gradients
    /// accumulate into `grad`. Returns the adjoint of the network input
    /// (tangent-seed adjoints are dropped since seeds are constants here).
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: &Array2<f64>,
        d_tout: &[Array2<f64>],
        grad: &mut MlpGrad,
    ) -> Array2<f64> {
        assert_eq!(d_tout.len(), cache.tout.len(), "one adjoint per tangent");
        let n_t = d_tout.len();
        let mut d_post = d_out.clone();
        let mut d_tpost: Vec<Array2<f64>> = d_tout.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pres[k];
            let post = &cache.posts[k];
            let d1 = ndarray::Zip::from(pre)
                .and(post)
                .map_collect(|&p, &q| layer.act.d1(p, q));
            let mut d_pre = &d_post * &d1;
            if matches!(layer.act, Activation::Tanh) {
                let d2 = ndarray::Zip::from(pre)
                    .and(post)
                    .map_collect(|&p, &q| layer.act.d2(p, q));
                for m in 0..n_t {
                    d_pre = d_pre + &d2 * &cache.tpre[m][k] * &d_tpost[m];
                }
            }
            let (gw, gb) = &mut grad.layers[k];
            *gw += &d_pre.t().dot(&cache.inputs[k]);
            *gb += &d_pre.sum_axis(Axis(0));
            let mut d_in = d_pre.dot(&layer.w);
            let mut d_tin = Vec::with_capacity(n_t);
            for m in 0..n_t {
                let d_tpre = &d_tpost[m] * &d1;
                *gw += &d_tpre.t().dot(&cache.tin[m][k]);
                d_tin.push(d_tpre.dot(&layer.w));
            }
            // input adjoint of layer 0 is the network-input adjoint
            if k == 0 {
                return d_in;
            }
            d_post = std::mem::take(&mut d_in);
            d_tpost = d_tin;
        }
        unreachable!("network has no layers");
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn for_each_param(&self, mut f: impl FnMut(f64)) {
        for l in &self.layers {
            l.w.iter().for_each(|&v| f(v));
            l.b.iter().for_each(|&v| f(v));
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(&mut f);
            l.b.iter_mut().for_each(&mut f);
        }
    }
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
                .collect(),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        for (gw, gb) in &self.layers {
            gw.iter().for_each(|&v| f(v));
            gb.iter().for_each(|&v| f(v));
        }
    }
}
