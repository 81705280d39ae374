//! Continuous-time LRU instance of the Youla-residual policy:
//!
//! ```text
//! xhat' = f(x) - Lx (x - xhat) + g(x) u
//! q'    = Lq q + Gamma Bq (x - xhat)
//! u     = K xhat + MLP_nobias([Re q; x - xhat])
//! xhat0 = x0 + MLP(x0; phi1),  q0 = nu * MLP(x0; phi2)
//! ```
//!
//! with `Lx = diag(-|mu_x|)`, `Lq = diag(-|mu_re| + j mu_im)` and
//! `Gamma = diag(|mu_re|)`. The complex state is carried as real pairs.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mlp, MlpSpec, ParamLayout, Slice};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::plant::InputAffinePlant;

/// Layer sizes for the Youla policy. The defaults give 7016 parameters for
/// the cart–pendulum (`n = 4`, `m = 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YoulaArch {
    pub n_q: usize,
    pub readout_hidden: Vec<usize>,
    pub init_hidden: usize,
}

impl Default for YoulaArch {
    fn default() -> Self {
        Self { n_q: 16, readout_hidden: vec![64, 64], init_hidden: 48 }
    }
}

/// Diagonal matrices of the policy, as plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagonals {
    /// Diagonal of `Lx`, all entries `<= 0`.
    pub lambda_xhat: Vec<f64>,
    /// `(Re, Im)` of each `Lq` eigenvalue.
    pub lambda_q: Vec<(f64, f64)>,
    /// Diagonal of `Gamma`, all entries `>= 0`.
    pub gamma: Vec<f64>,
}

pub fn build_diagonals(mu_xhat: &[f64], mu_re: &[f64], mu_im: &[f64]) -> Diagonals {
    assert_eq!(mu_re.len(), mu_im.len(), "mu_re and mu_im lengths differ");
    Diagonals {
        lambda_xhat: mu_xhat.iter().map(|m| -m.abs()).collect(),
        lambda_q: mu_re.iter().zip(mu_im).map(|(r, i)| (-r.abs(), *i)).collect(),
        gamma: mu_re.iter().map(|r| r.abs()).collect(),
    }
}

/// Right-hand side pieces at one state.
#[derive(Clone, Debug)]
pub struct YoulaRates<V> {
    pub u: V,
    pub dx: V,
    pub dxhat: V,
    pub dq_re: V,
    pub dq_im: V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YoulaLruPolicy {
    pub n: usize,
    pub m: usize,
    pub n_q: usize,
    pub k: Mat,
    pub layout: ParamLayout,
    pub mu_xhat: Slice,
    pub mu_re: Slice,
    pub mu_im: Slice,
    /// `n_q x n`, row-major.
    pub b_q: Slice,
    pub phi1: Mlp,
    pub phi2: Mlp,
    pub nu: Slice,
    pub phi3: Mlp,
}

impl YoulaLruPolicy {
    pub fn new(k: Mat, arch: &YoulaArch) -> Result<Self> {
        let (m, n) = k.shape();
        if arch.n_q == 0 || n == 0 || m == 0 {
            return Err(Error::InvalidArgument("youla policy needs n, m, n_q > 0".into()));
        }
        let mut layout = ParamLayout::new();
        let mu_xhat = layout.push("mu_xhat", n);
        let mu_re = layout.push("mu_q_re", arch.n_q);
        let mu_im = layout.push("mu_q_im", arch.n_q);
        let b_q = layout.push("b_q", arch.n_q * n);
        let phi1 = Mlp::allocate(&mut layout, "phi1", MlpSpec::new(vec![n, arch.init_hidden, n], true));
        let phi2 = Mlp::allocate(&mut layout, "phi2", MlpSpec::new(vec![n, arch.init_hidden, arch.n_q], true));
        let nu = layout.push("nu", arch.n_q);
        let mut sizes = vec![arch.n_q + n];
        sizes.extend(&arch.readout_hidden);
        sizes.push(m);
        let phi3 = Mlp::allocate(&mut layout, "phi3", MlpSpec::new(sizes, false));
        layout.validate()?;
        Ok(Self { n, m, n_q: arch.n_q, k, layout, mu_xhat, mu_re, mu_im, b_q, phi1, phi2, nu, phi3 })
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    /// Controller state `(xhat, q_re, q_im)` length.
    pub fn controller_dim(&self) -> usize {
        self.n + 2 * self.n_q
    }

    pub fn diagonals(&self, params: &[f64]) -> Diagonals {
        build_diagonals(&params[self.mu_xhat.range()], &params[self.mu_re.range()], &params[self.mu_im.range()])
    }

    /// Training initialization: `|mu_xhat|, mu_re ~ U[0.2, 1.5]`,
    /// `mu_im ~ U[-1, 1]`, `Bq ~ N(0, 1/n)`, `nu = 1`, network weights
    /// `N(0, 1/fan_in)` and zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params()];
        let rate = Uniform::new(0.2, 1.5);
        for s in [self.mu_xhat, self.mu_re] {
            p[s.range()].iter_mut().for_each(|v| *v = rate.sample(rng));
        }
        let freq = Uniform::new(-1.0, 1.0);
        p[self.mu_im.range()].iter_mut().for_each(|v| *v = freq.sample(rng));
        let bq = Normal::new(0.0, (1.0 / self.n as f64).sqrt()).unwrap();
        p[self.b_q.range()].iter_mut().for_each(|v| *v = bq.sample(rng));
        p[self.nu.range()].iter_mut().for_each(|v| *v = 1.0);
        for net in [&self.phi1, &self.phi2, &self.phi3] {
            init_mlp(net, &mut p, rng);
        }
        p
    }

    /// Random draw for structural tests: every entry `N(0, std^2)`, then
    /// `|mu_xhat|, |mu_re|` raised to at least `floor`.
    pub fn random_params(&self, rng: &mut impl Rng, std: f64, floor: f64) -> Vec<f64> {
        let dist = Normal::new(0.0, std).unwrap();
        let mut p: Vec<f64> = (0..self.num_params()).map(|_| dist.sample(rng)).collect();
        for s in [self.mu_xhat, self.mu_re] {
            for v in &mut p[s.range()] {
                if v.abs() < floor {
                    *v = if *v < 0.0 { -floor } else { floor };
                }
            }
        }
        p
    }

    /// `(xhat0, q0_re, q0_im)`; the imaginary part starts at zero.
    pub fn init_state<G: Graph>(&self, g: &mut G, x0: &G::V) -> Result<(G::V, G::V, G::V)> {
        let off = self.phi1.forward(g, x0)?;
        let xhat0 = g.add(x0, &off);
        let raw = self.phi2.forward(g, x0)?;
        let nu = g.param(self.nu);
        let q_re = g.mul(&nu, &raw);
        let q_im = g.zeros(self.n_q);
        Ok((xhat0, q_re, q_im))
    }

    /// `u = K xhat + MLP_nobias([q_re; x - xhat])`.
    pub fn control<G: Graph>(&self, g: &mut G, x: &G::V, xhat: &G::V, q_re: &G::V) -> Result<G::V> {
        let e = g.sub(x, xhat);
        self.control_from_error(g, xhat, q_re, &e)
    }

    fn control_from_error<G: Graph>(&self, g: &mut G, xhat: &G::V, q_re: &G::V, e: &G::V) -> Result<G::V> {
        let inp = g.concat(&[q_re, e]);
        let r = self.phi3.forward(g, &inp)?;
        let kx = g.matvec_const(&self.k, xhat);
        Ok(g.add(&kx, &r))
    }

    /// Youla state field `(q_re', q_im')` driven by the error `e = x - xhat`.
    pub fn q_rates<G: Graph>(&self, g: &mut G, q_re: &G::V, q_im: &G::V, e: &G::V) -> (G::V, G::V) {
        let mu_re = g.param(self.mu_re);
        let abs_re = g.abs(&mu_re);
        let mu_im = g.param(self.mu_im);
        let bq_e = g.matvec_param(self.b_q, self.n_q, self.n, e);
        let drive = g.mul(&abs_re, &bq_e);
        let decay_re = g.mul(&abs_re, q_re);
        let rot_re = g.mul(&mu_im, q_im);
        let dq_re = g.sub(&drive, &decay_re);
        let dq_re = g.sub(&dq_re, &rot_re);
        let rot_im = g.mul(&mu_im, q_re);
        let decay_im = g.mul(&abs_re, q_im);
        let dq_im = g.sub(&rot_im, &decay_im);
        (dq_re, dq_im)
    }

    /// Full closed-loop right-hand side. `u` is formed first and then
    /// substituted into the plant and observer equations.
    pub fn rates<G: Graph, P: InputAffinePlant>(
        &self,
        g: &mut G,
        plant: &P,
        x: &G::V,
        xhat: &G::V,
        q_re: &G::V,
        q_im: &G::V,
    ) -> Result<YoulaRates<G::V>> {
        let e = g.sub(x, xhat);
        let u = self.control_from_error(g, xhat, q_re, &e)?;
        let dx = plant.rate(g, x, &u);
        let mu_x = g.param(self.mu_xhat);
        let abs_x = g.abs(&mu_x);
        let correction = g.mul(&abs_x, &e);
        let dxhat = g.add(&dx, &correction);
        let (dq_re, dq_im) = self.q_rates(g, q_re, q_im, &e);
        Ok(YoulaRates { u, dx, dxhat, dq_re, dq_im })
    }
}

/// `N(0, 1/fan_in)` weights, zero biases.
pub(crate) fn init_mlp(net: &Mlp, p: &mut [f64], rng: &mut impl Rng) {
    for (k, (ws, bs)) in net.layers().into_iter().enumerate() {
        let fan_in = net.spec.sizes[k] as f64;
        let dist = Normal::new(0.0, fan_in.sqrt().recip()).unwrap();
        p[ws.range()].iter_mut().for_each(|v| *v = dist.sample(rng));
        if let Some(bs) = bs {
            p[bs.range()].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
