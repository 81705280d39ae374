use super::kernels::{self, Binary, Unary};
use super::{Graph, Slice};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    Param { offset: usize },
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    Scale(usize, f64),
    MatVecParam { offset: usize, rows: usize, cols: usize, x: usize },
    MatVec { w: usize, rows: usize, cols: usize, x: usize },
    Dot(usize, usize),
    Sum(usize),
    /// Inputs listed in `Tape::parts[start..start + count]`.
    Concat { start: usize, count: usize },
    Slice { a: usize, start: usize },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
}

/// Recording backend. Node values live in one contiguous arena.
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    values: Vec<f64>,
    parts: Vec<usize>,
    first_non_finite: Option<usize>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1 << 12),
            values: Vec::with_capacity(1 << 16),
            parts: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.first_non_finite
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        let n = &self.nodes[i];
        n.off..n.off + n.len
    }

    fn push(&mut self, op: Op, len: usize) -> Var {
        let idx = self.nodes.len();
        let off = self.values.len();
        self.values.resize(off + len, 0.0);
        let (prev, out) = self.values.split_at_mut(off);
        compute(op, &self.nodes, &self.parts, prev, self.params, out);
        if self.first_non_finite.is_none() && !out.iter().all(|v| v.is_finite()) {
            self.first_non_finite = Some(idx);
        }
        self.nodes.push(Node { op, off, len });
        Var(idx)
    }

    /// Recomputes every node from the recorded operations and returns the
    /// value of `out`. Constants are taken from the original recording.
    pub fn replay(&self, out: Var) -> Vec<f64> {
        let mut vals = vec![0.0; self.values.len()];
        for node in &self.nodes {
            let (prev, rest) = vals.split_at_mut(node.off);
            let dst = &mut rest[..node.len];
            if let Op::Const = node.op {
                dst.copy_from_slice(&self.values[node.off..node.off + node.len]);
            } else {
                compute(node.op, &self.nodes, &self.parts, prev, self.params, dst);
            }
        }
        vals[self.range(out.0)].to_vec()
    }

    /// Reverse sweep from the scalar node `out`; returns d out / d params.
    pub fn backward(&self, out: Var) -> Result<Vec<f64>> {
        if let Some(node) = self.first_non_finite {
            return Err(Error::NonFiniteNode { node });
        }
        assert_eq!(self.nodes[out.0].len, 1, "backward needs a scalar output");
        let mut grad = vec![0.0; self.params.len()];
        let mut adj = vec![0.0; self.values.len()];
        adj[self.nodes[out.0].off] = 1.0;
        let vals = &self.values;
        for idx in (0..=out.0).rev() {
            let node = self.nodes[idx];
            let yo = node.off;
            let n = node.len;
            if adj[yo..yo + n].iter().all(|a| *a == 0.0) {
                continue;
            }
            match node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    for i in 0..n {
                        grad[offset + i] += adj[yo + i];
                    }
                }
                Op::Unary(op, a) => {
                    let ao = self.nodes[a].off;
                    for i in 0..n {
                        adj[ao + i] += adj[yo + i] * kernels::unary_deriv(op, vals[ao + i], vals[yo + i]);
                    }
                }
                Op::Binary(op, a, b) => {
                    let (an, bn) = (self.nodes[a], self.nodes[b]);
                    let (sa, sb) = (an.len > 1, bn.len > 1);
                    for i in 0..n {
                        let ia = an.off + if sa { i } else { 0 };
                        let ib = bn.off + if sb { i } else { 0 };
                        let g = adj[yo + i];
                        let (x, y) = (vals[ia], vals[ib]);
                        let (da, db) = match op {
                            Binary::Add => (g, g),
                            Binary::Sub => (g, -g),
                            Binary::Mul => (g * y, g * x),
                            Binary::Div => (g / y, -g * x / (y * y)),
                        };
                        adj[ia] += da;
                        adj[ib] += db;
                    }
                }
                Op::Scale(a, c) => {
                    let ao = self.nodes[a].off;
                    for i in 0..n {
                        adj[ao + i] += c * adj[yo + i];
                    }
                }
                Op::MatVecParam { offset, rows, cols, x } => {
                    let xo = self.nodes[x].off;
                    for i in 0..rows {
                        let g = adj[yo + i];
                        if g == 0.0 {
                            continue;
                        }
                        let wr = offset + i * cols;
                        for j in 0..cols {
                            grad[wr + j] += g * vals[xo + j];
                            adj[xo + j] += g * self.params[wr + j];
                        }
                    }
                }
                Op::MatVec { w, rows, cols, x } => {
                    let (wo, xo) = (self.nodes[w].off, self.nodes[x].off);
                    for i in 0..rows {
                        let g = adj[yo + i];
                        if g == 0.0 {
                            continue;
                        }
                        let wr = wo + i * cols;
                        for j in 0..cols {
                            adj[wr + j] += g * vals[xo + j];
                            adj[xo + j] += g * vals[wr + j];
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, bo) = (self.nodes[a].off, self.nodes[b].off);
                    let g = adj[yo];
                    for i in 0..self.nodes[a].len {
                        let (x, y) = (vals[ao + i], vals[bo + i]);
                        adj[ao + i] += g * y;
                        adj[bo + i] += g * x;
                    }
                }
                Op::Sum(a) => {
                    let an = self.nodes[a];
                    let g = adj[yo];
                    for i in 0..an.len {
                        adj[an.off + i] += g;
                    }
                }
                Op::Concat { start, count } => {
                    let mut pos = yo;
                    for &p in &self.parts[start..start + count] {
                        let pn = self.nodes[p];
                        for i in 0..pn.len {
                            adj[pn.off + i] += adj[pos + i];
                        }
                        pos += pn.len;
                    }
                }
                Op::Slice { a, start } => {
                    let ao = self.nodes[a].off + start;
                    for i in 0..n {
                        adj[ao + i] += adj[yo + i];
                    }
                }
            }
        }
        Ok(grad)
    }
}

fn compute(op: Op, nodes: &[Node], parts: &[usize], vals: &[f64], params: &[f64], out: &mut [f64]) {
    let v = |i: usize| {
        let n = &nodes[i];
        &vals[n.off..n.off + n.len]
    };
    match op {
        Op::Const => {}
        Op::Param { offset } => out.copy_from_slice(&params[offset..offset + out.len()]),
        Op::Unary(u, a) => kernels::unary(u, v(a), out),
        Op::Binary(b, x, y) => kernels::binary(b, v(x), v(y), out),
        Op::Scale(a, c) => kernels::scale(v(a), c, out),
        Op::MatVecParam { offset, rows, cols, x } => {
            kernels::matvec(&params[offset..offset + rows * cols], rows, cols, v(x), out)
        }
        Op::MatVec { w, rows, cols, x } => kernels::matvec(v(w), rows, cols, v(x), out),
        Op::Dot(a, b) => out[0] = kernels::dot(v(a), v(b)),
        Op::Sum(a) => out[0] = kernels::sum(v(a)),
        Op::Concat { start, count } => {
            let mut pos = 0;
            for &p in &parts[start..start + count] {
                let s = v(p);
                out[pos..pos + s.len()].copy_from_slice(s);
                pos += s.len();
            }
        }
        Op::Slice { a, start } => out.copy_from_slice(&v(a)[start..start + out.len()]),
    }
}

impl Graph for Tape<'_> {
    type V = Var;

    fn params(&self) -> &[f64] {
        self.params
    }

    fn constant(&mut self, v: &[f64]) -> Var {
        let var = self.push(Op::Const, v.len());
        let r = self.range(var.0);
        self.values[r].copy_from_slice(v);
        if self.first_non_finite.is_none() && !v.iter().all(|x| x.is_finite()) {
            self.first_non_finite = Some(var.0);
        }
        var
    }

    fn param(&mut self, s: Slice) -> Var {
        assert!(s.offset + s.len <= self.params.len(), "parameter slice out of range");
        self.push(Op::Param { offset: s.offset }, s.len)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a [f64] {
        &self.values[self.range(v.0)]
    }

    fn unary(&mut self, op: Unary, a: &Var) -> Var {
        let n = self.nodes[a.0].len;
        self.push(Op::Unary(op, a.0), n)
    }

    fn binary(&mut self, op: Binary, a: &Var, b: &Var) -> Var {
        let n = kernels::broadcast_len("binary", self.nodes[a.0].len, self.nodes[b.0].len);
        self.push(Op::Binary(op, a.0, b.0), n)
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let n = self.nodes[a.0].len;
        self.push(Op::Scale(a.0, c), n)
    }

    fn matvec_param(&mut self, w: Slice, rows: usize, cols: usize, x: &Var) -> Var {
        assert_eq!(w.len, rows * cols, "matvec_param: slice size");
        assert_eq!(self.nodes[x.0].len, cols, "dimension mismatch in matvec_param");
        self.push(Op::MatVecParam { offset: w.offset, rows, cols, x: x.0 }, rows)
    }

    fn matvec(&mut self, w: &Var, rows: usize, cols: usize, x: &Var) -> Var {
        assert_eq!(self.nodes[w.0].len, rows * cols, "matvec: matrix size");
        assert_eq!(self.nodes[x.0].len, cols, "dimension mismatch in matvec");
        self.push(Op::MatVec { w: w.0, rows, cols, x: x.0 }, rows)
    }

    fn dot(&mut self, a: &Var, b: &Var) -> Var {
        assert_eq!(self.nodes[a.0].len, self.nodes[b.0].len, "dimension mismatch in dot");
        self.push(Op::Dot(a.0, b.0), 1)
    }

    fn sum(&mut self, a: &Var) -> Var {
        self.push(Op::Sum(a.0), 1)
    }

    fn concat(&mut self, parts: &[&Var]) -> Var {
        let start = self.parts.len();
        let mut n = 0;
        for p in parts {
            self.parts.push(p.0);
            n += self.nodes[p.0].len;
        }
        self.push(Op::Concat { start, count: parts.len() }, n)
    }

    fn slice(&mut self, a: &Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.nodes[a.0].len, "slice out of range");
        self.push(Op::Slice { a: a.0, start }, len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_reproduces_value_bit_exactly() {
        let p = [0.3, -1.2, 2.5, 0.7];
        let mut t = Tape::new(&p);
        let x = t.param(Slice { offset: 0, len: 2 });
        let w = Slice { offset: 0, len: 4 };
        let y = t.matvec_param(w, 2, 2, &x);
        let c = t.constant(&[0.1, -0.2]);
        let z = t.binary(Binary::Mul, &y, &c);
        let e = t.tanh(&z);
        let s = t.sum(&e);
        let recorded = t.value(&s)[0];
        assert_eq!(t.replay(s)[0].to_bits(), recorded.to_bits());
    }
}
