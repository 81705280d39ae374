use super::kernels::{self, Binary, Unary};
use super::{Graph, Slice};

/// Eager evaluator: every node is an owned vector, nothing is recorded.
pub struct Eval<'p> {
    params: &'p [f64],
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self { params }
    }
}

impl Graph for Eval<'_> {
    type V = Vec<f64>;

    fn params(&self) -> &[f64] {
        self.params
    }

    fn constant(&mut self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    fn param(&mut self, s: Slice) -> Vec<f64> {
        self.params[s.range()].to_vec()
    }

    fn value<'a>(&'a self, v: &'a Vec<f64>) -> &'a [f64] {
        v
    }

    fn unary(&mut self, op: Unary, a: &Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        kernels::unary(op, a, &mut out);
        out
    }

    fn binary(&mut self, op: Binary, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; kernels::broadcast_len("binary", a.len(), b.len())];
        kernels::binary(op, a, b, &mut out);
        out
    }

    fn scale(&mut self, a: &Vec<f64>, c: f64) -> Vec<f64> {
        let mut out = vec![0.0; a.len()];
        kernels::scale(a, c, &mut out);
        out
    }

    fn matvec_param(&mut self, w: Slice, rows: usize, cols: usize, x: &Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; rows];
        kernels::matvec(&self.params[w.range()], rows, cols, x, &mut out);
        out
    }

    fn matvec(&mut self, w: &Vec<f64>, rows: usize, cols: usize, x: &Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; rows];
        kernels::matvec(w, rows, cols, x, &mut out);
        out
    }

    fn dot(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        vec![kernels::dot(a, b)]
    }

    fn sum(&mut self, a: &Vec<f64>) -> Vec<f64> {
        vec![kernels::sum(a)]
    }

    fn concat(&mut self, parts: &[&Vec<f64>]) -> Vec<f64> {
        parts.iter().flat_map(|p| p.iter().copied()).collect()
    }

    fn slice(&mut self, a: &Vec<f64>, start: usize, len: usize) -> Vec<f64> {
        a[start..start + len].to_vec()
    }
}
