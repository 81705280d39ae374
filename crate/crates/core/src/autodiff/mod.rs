//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Model code is written once against [`Graph`]. Running it on [`Eval`]
//! computes plain values; running it on [`Tape`] records every operation so
//! that [`Tape::backward`] can return the gradient with respect to the flat
//! parameter vector. Both backends share the same forward kernels, so a taped
//! value is bit-identical to its untaped counterpart.

mod eval;
pub mod kernels;
pub mod mlp;
pub mod params;
mod tape;

pub use eval::Eval;
pub use kernels::{Binary, Unary};
pub use mlp::{mlp_forward, Activation, Mlp, MlpSpec};
pub use params::{ParamLayout, ParamStore, Slice};
pub use tape::{Tape, Var};

use crate::error::Result;

/// Backend-agnostic vector operations.
///
/// Binary operations broadcast a length-1 operand. Dimension mismatches are
/// programming errors and panic.
pub trait Graph {
    type V: Clone + std::fmt::Debug;

    fn params(&self) -> &[f64];
    fn constant(&mut self, v: &[f64]) -> Self::V;
    /// Leaf holding a copy of a parameter window; gradients flow back into it.
    fn param(&mut self, s: Slice) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a [f64];

    fn unary(&mut self, op: Unary, a: &Self::V) -> Self::V;
    fn binary(&mut self, op: Binary, a: &Self::V, b: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    /// `W x` with `W` a row-major parameter block.
    fn matvec_param(&mut self, w: Slice, rows: usize, cols: usize, x: &Self::V) -> Self::V;
    /// `W x` with `W` a row-major node value.
    fn matvec(&mut self, w: &Self::V, rows: usize, cols: usize, x: &Self::V) -> Self::V;
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sum(&mut self, a: &Self::V) -> Self::V;
    fn concat(&mut self, parts: &[&Self::V]) -> Self::V;
    fn slice(&mut self, a: &Self::V, start: usize, len: usize) -> Self::V;

    fn len(&self, v: &Self::V) -> usize {
        self.value(v).len()
    }

    fn scalar(&mut self, c: f64) -> Self::V {
        self.constant(&[c])
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.binary(Binary::Add, a, b)
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.binary(Binary::Sub, a, b)
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.binary(Binary::Mul, a, b)
    }

    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.binary(Binary::Div, a, b)
    }

    fn neg(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Neg, a)
    }

    fn tanh(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Tanh, a)
    }

    fn sigmoid(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Sigmoid, a)
    }

    fn exp(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Exp, a)
    }

    fn sin(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Sin, a)
    }

    fn cos(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Cos, a)
    }

    fn abs(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Abs, a)
    }

    fn sqrt(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Sqrt, a)
    }

    fn square(&mut self, a: &Self::V) -> Self::V {
        self.unary(Unary::Square, a)
    }

    fn at(&mut self, a: &Self::V, i: usize) -> Self::V {
        self.slice(a, i, 1)
    }

    /// `a + c * b`
    fn axpy(&mut self, a: &Self::V, c: f64, b: &Self::V) -> Self::V {
        let cb = self.scale(b, c);
        self.add(a, &cb)
    }

    fn matvec_const(&mut self, w: &crate::linalg::Mat, x: &Self::V) -> Self::V {
        let wn = self.constant(w.as_slice());
        self.matvec(&wn, w.rows(), w.cols(), x)
    }

    fn zeros(&mut self, n: usize) -> Self::V {
        self.constant(&vec![0.0; n])
    }

    fn scalar_value(&self, v: &Self::V) -> f64 {
        let s = self.value(v);
        assert_eq!(s.len(), 1, "expected a scalar node");
        s[0]
    }
}

/// A scalar objective written against [`Graph`].
pub trait Loss {
    fn eval<G: Graph>(&self, g: &mut G) -> Result<G::V>;
}

/// Untaped evaluation of `loss` at `params`.
pub fn value<L: Loss>(params: &[f64], loss: &L) -> Result<f64> {
    let mut g = Eval::new(params);
    let out = loss.eval(&mut g)?;
    Ok(g.scalar_value(&out))
}

/// Value and gradient of `loss` with respect to every entry of `params`.
pub fn grad<L: Loss>(params: &[f64], loss: &L) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new(params);
    let out = loss.eval(&mut tape)?;
    let v = tape.scalar_value(&out);
    let g = tape.backward(out)?;
    Ok((v, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Poly;
    impl Loss for Poly {
        fn eval<G: Graph>(&self, g: &mut G) -> Result<G::V> {
            let a = g.param(Slice { offset: 0, len: 1 });
            let b = g.param(Slice { offset: 1, len: 1 });
            let a2 = g.square(&a);
            let b3 = g.scale(&b, 3.0);
            Ok(g.add(&a2, &b3))
        }
    }

    struct Constant;
    impl Loss for Constant {
        fn eval<G: Graph>(&self, g: &mut G) -> Result<G::V> {
            let c = g.scalar(4.2);
            let _unused = g.param(Slice { offset: 0, len: 3 });
            Ok(c)
        }
    }

    #[test]
    fn polynomial_gradient() {
        let (v, gr) = grad(&[2.0, 5.0], &Poly).unwrap();
        assert_eq!(v, 19.0);
        assert_eq!(gr, vec![4.0, 3.0]);
        assert_eq!(value(&[2.0, 5.0], &Poly).unwrap(), 19.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (v, gr) = grad(&[1.0, -2.0, 3.0], &Constant).unwrap();
        assert_eq!(v, 4.2);
        assert_eq!(gr, vec![0.0; 3]);
    }

    /// Exercises every op against central differences.
    struct Mixed;
    impl Loss for Mixed {
        fn eval<G: Graph>(&self, g: &mut G) -> Result<G::V> {
            let w = Slice { offset: 0, len: 6 };
            let x = g.param(Slice { offset: 6, len: 3 });
            let y = g.matvec_param(w, 2, 3, &x);
            let t = g.tanh(&y);
            let s = g.sigmoid(&x);
            let e = g.exp(&t);
            let sn = g.sin(&s);
            let cs = g.cos(&x);
            let ab = g.abs(&cs);
            let sq = g.sqrt(&ab);
            let p = g.mul(&sq, &sn);
            let d = g.div(&p, &s);
            let sl = g.slice(&d, 1, 2);
            let cat = g.concat(&[&e, &sl]);
            let nn = g.neg(&cat);
            let wn = g.concat(&[&x, &x]);
            let mv = g.matvec(&wn, 2, 3, &x);
            let dt = g.dot(&mv, &e);
            let su = g.sum(&nn);
            let r = g.sub(&dt, &su);
            Ok(g.mul(&r, &r))
        }
    }

    #[test]
    fn mixed_ops_match_finite_differences() {
        let p = vec![0.3, -0.7, 0.2, 0.5, 0.1, -0.4, 0.9, -0.35, 0.6];
        let (v, gr) = grad(&p, &Mixed).unwrap();
        assert_eq!(v.to_bits(), value(&p, &Mixed).unwrap().to_bits());
        for i in 0..p.len() {
            let h = 1e-6;
            let mut pp = p.clone();
            pp[i] += h;
            let fp = value(&pp, &Mixed).unwrap();
            pp[i] -= 2.0 * h;
            let fm = value(&pp, &Mixed).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - gr[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "coord {i}: {fd} vs {}", gr[i]);
        }
    }

    struct Blowup;
    impl Loss for Blowup {
        fn eval<G: Graph>(&self, g: &mut G) -> Result<G::V> {
            let a = g.param(Slice { offset: 0, len: 1 });
            let z = g.scalar(0.0);
            let d = g.div(&a, &z);
            Ok(g.sum(&d))
        }
    }

    #[test]
    fn non_finite_reports_first_node() {
        let err = grad(&[1.0], &Blowup).unwrap_err();
        assert!(matches!(err, crate::Error::NonFiniteNode { node: 2 }), "{err}");
    }
}
