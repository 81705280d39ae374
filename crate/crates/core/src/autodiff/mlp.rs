//! Fully connected tanh networks over parameter slices.

use serde::{Deserialize, Serialize};

use super::{Graph, ParamLayout, Slice};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

/// Layer widths from input to output. Hidden layers use tanh; the output
/// layer uses `output`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub bias: bool,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, bias: bool) -> Self {
        Self { sizes, bias, output: Activation::Identity }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_params(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }
}

/// An [`MlpSpec`] bound to a window of the parameter vector. Each layer
/// stores its row-major weight matrix followed by its bias (if any).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Slice,
}

impl Mlp {
    pub fn allocate(layout: &mut ParamLayout, name: &str, spec: MlpSpec) -> Self {
        let params = layout.push(name, spec.num_params());
        Self { spec, params }
    }

    /// (weight, bias) slices per layer.
    pub fn layers(&self) -> Vec<(Slice, Option<Slice>)> {
        let mut out = Vec::new();
        let mut pos = 0;
        for w in self.spec.sizes.windows(2) {
            let ws = self.params.sub(pos, w[0] * w[1]);
            pos += w[0] * w[1];
            let bs = self.spec.bias.then(|| {
                let b = self.params.sub(pos, w[1]);
                pos += w[1];
                b
            });
            out.push((ws, bs));
        }
        out
    }

    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        mlp_forward(g, x, self.params, &self.spec)
    }
}

pub fn mlp_forward<G: Graph>(g: &mut G, x: &G::V, weights: Slice, spec: &MlpSpec) -> Result<G::V> {
    if spec.sizes.len() < 2 {
        return dim_err("mlp_forward", "need at least input and output sizes");
    }
    if g.len(x) != spec.input_dim() {
        return dim_err("mlp_forward", format!("input {} for spec {:?}", g.len(x), spec.sizes));
    }
    if weights.len != spec.num_params() {
        return dim_err("mlp_forward", format!("{} weights for {} params", weights.len, spec.num_params()));
    }
    let net = Mlp { spec: spec.clone(), params: weights };
    let layers = net.layers();
    let last = layers.len() - 1;
    let mut h = x.clone();
    for (k, (ws, bs)) in layers.into_iter().enumerate() {
        let (cols, rows) = (spec.sizes[k], spec.sizes[k + 1]);
        h = g.matvec_param(ws, rows, cols, &h);
        if let Some(bs) = bs {
            let b = g.param(bs);
            h = g.add(&h, &b);
        }
        if k < last || spec.output == Activation::Tanh {
            h = g.tanh(&h);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eval;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_input_without_bias_is_exact_zero() {
        let spec = MlpSpec::new(vec![5, 7, 7, 2], false);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p: Vec<f64> = (0..spec.num_params()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut g = Eval::new(&p);
            let x = g.zeros(5);
            let y = mlp_forward(&mut g, &x, Slice { offset: 0, len: p.len() }, &spec).unwrap();
            assert!(y.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn identity_layer_with_bias() {
        let spec = MlpSpec::new(vec![2, 2], true);
        let p = vec![1.0, 0.0, 0.0, 1.0, 0.5, -1.5];
        let mut g = Eval::new(&p);
        let x = g.constant(&[2.0, 3.0]);
        let y = mlp_forward(&mut g, &x, Slice { offset: 0, len: 6 }, &spec).unwrap();
        assert_eq!(y, vec![2.5, 1.5]);
    }

    #[test]
    fn single_tanh_layer() {
        let spec = MlpSpec { sizes: vec![1, 1], bias: true, output: Activation::Tanh };
        let p = vec![1.0, 0.0];
        let mut g = Eval::new(&p);
        let x = g.constant(&[0.5]);
        let y = mlp_forward(&mut g, &x, Slice { offset: 0, len: 2 }, &spec).unwrap();
        assert!((y[0] - 0.46211716).abs() < 1e-8);
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let spec = MlpSpec::new(vec![3, 1], false);
        let p = vec![0.0; 3];
        let mut g = Eval::new(&p);
        let x = g.zeros(2);
        assert!(mlp_forward(&mut g, &x, Slice { offset: 0, len: 3 }, &spec).is_err());
    }
}
