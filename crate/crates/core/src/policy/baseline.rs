//! Unstructured comparison policies: MLP and LSTM, each either pure
//! (`u = net(x)`) or residual around the linear gain (`u = K x + net(x)`).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::youla::init_mlp;
use crate::autodiff::{Graph, Mlp, MlpSpec, ParamLayout, Slice};
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Sizes for the baselines. The defaults give 9889 (MLP) and 10225 (LSTM)
/// parameters for the cart–pendulum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineArch {
    pub mlp_hidden: Vec<usize>,
    pub lstm_hidden: usize,
}

impl Default for BaselineArch {
    fn default() -> Self {
        Self { mlp_hidden: vec![96, 96], lstm_hidden: 48 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub n: usize,
    pub m: usize,
    pub k: Mat,
    pub residual: bool,
    pub layout: ParamLayout,
    pub net: Mlp,
}

impl MlpPolicy {
    pub fn new(k: Mat, residual: bool, arch: &BaselineArch) -> Result<Self> {
        let (m, n) = k.shape();
        let mut sizes = vec![n];
        sizes.extend(&arch.mlp_hidden);
        sizes.push(m);
        let mut layout = ParamLayout::new();
        let net = Mlp::allocate(&mut layout, "mlp", MlpSpec::new(sizes, true));
        layout.validate()?;
        Ok(Self { n, m, k, residual, layout, net })
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.len()];
        init_mlp(&self.net, &mut p, rng);
        p
    }

    pub fn control<G: Graph>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let out = self.net.forward(g, x)?;
        Ok(if self.residual {
            let kx = g.matvec_const(&self.k, x);
            g.add(&kx, &out)
        } else {
            out
        })
    }
}

/// LSTM cell `[i f g o] = W [x; h] + b`, `c' = f c + i g`, `h' = o tanh(c')`,
/// followed by a linear readout of `h'`. The cell advances once per
/// integration step and its output is held across the step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmPolicy {
    pub n: usize,
    pub m: usize,
    pub hidden: usize,
    pub k: Mat,
    pub residual: bool,
    pub layout: ParamLayout,
    /// `4H x (n + H)`, gate blocks in order input, forget, cell, output.
    pub w: Slice,
    pub b: Slice,
    /// `m x H`.
    pub w_out: Slice,
    pub b_out: Slice,
}

impl LstmPolicy {
    pub fn new(k: Mat, residual: bool, arch: &BaselineArch) -> Result<Self> {
        let (m, n) = k.shape();
        let h = arch.lstm_hidden;
        if h == 0 {
            return Err(Error::InvalidArgument("lstm_hidden must be positive".into()));
        }
        let mut layout = ParamLayout::new();
        let w = layout.push("lstm_w", 4 * h * (n + h));
        let b = layout.push("lstm_b", 4 * h);
        let w_out = layout.push("readout_w", m * h);
        let b_out = layout.push("readout_b", m);
        layout.validate()?;
        Ok(Self { n, m, hidden: h, k, residual, layout, w, b, w_out, b_out })
    }

    /// `N(0, 1/fan_in)` weights, zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.len()];
        let cell = Normal::new(0.0, ((self.n + self.hidden) as f64).sqrt().recip()).unwrap();
        p[self.w.range()].iter_mut().for_each(|v| *v = cell.sample(rng));
        let out = Normal::new(0.0, (self.hidden as f64).sqrt().recip()).unwrap();
        p[self.w_out.range()].iter_mut().for_each(|v| *v = out.sample(rng));
        p
    }

    /// One cell update; returns `(h', c')`.
    pub fn cell<G: Graph>(&self, g: &mut G, x: &G::V, h: &G::V, c: &G::V) -> (G::V, G::V) {
        let hd = self.hidden;
        let xh = g.concat(&[x, h]);
        let pre = g.matvec_param(self.w, 4 * hd, self.n + hd, &xh);
        let b = g.param(self.b);
        let pre = g.add(&pre, &b);
        let gi = g.slice(&pre, 0, hd);
        let gf = g.slice(&pre, hd, hd);
        let gc = g.slice(&pre, 2 * hd, hd);
        let go = g.slice(&pre, 3 * hd, hd);
        let i = g.sigmoid(&gi);
        let f = g.sigmoid(&gf);
        let cand = g.tanh(&gc);
        let o = g.sigmoid(&go);
        let keep = g.mul(&f, c);
        let write = g.mul(&i, &cand);
        let c_new = g.add(&keep, &write);
        let tc = g.tanh(&c_new);
        let h_new = g.mul(&o, &tc);
        (h_new, c_new)
    }

    pub fn readout<G: Graph>(&self, g: &mut G, h: &G::V) -> G::V {
        let y = g.matvec_param(self.w_out, self.m, self.hidden, h);
        let b = g.param(self.b_out);
        g.add(&y, &b)
    }

    /// Adds `K x` for the residual variant.
    pub fn control<G: Graph>(&self, g: &mut G, x: &G::V, held: &G::V) -> G::V {
        if self.residual {
            let kx = g.matvec_const(&self.k, x);
            g.add(&kx, held)
        } else {
            held.clone()
        }
    }
}
