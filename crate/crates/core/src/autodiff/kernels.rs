//! Forward kernels shared by the eager evaluator and the tape, so both
//! produce bit-identical values for the same operation order.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Tanh,
    Sigmoid,
    Exp,
    Sin,
    Cos,
    /// Absolute value; differentiated with d|0| = 0.
    Abs,
    Sqrt,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[inline]
pub fn unary_scalar(op: Unary, a: f64) -> f64 {
    match op {
        Unary::Neg => -a,
        Unary::Tanh => a.tanh(),
        Unary::Sigmoid => 1.0 / (1.0 + (-a).exp()),
        Unary::Exp => a.exp(),
        Unary::Sin => a.sin(),
        Unary::Cos => a.cos(),
        Unary::Abs => a.abs(),
        Unary::Sqrt => a.sqrt(),
        Unary::Square => a * a,
    }
}

/// Derivative of `op` at input `a` given the already computed output `y`.
#[inline]
pub fn unary_deriv(op: Unary, a: f64, y: f64) -> f64 {
    match op {
        Unary::Neg => -1.0,
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Exp => y,
        Unary::Sin => a.cos(),
        Unary::Cos => -a.sin(),
        Unary::Abs => {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Sqrt => 0.5 / y,
        Unary::Square => 2.0 * a,
    }
}

#[inline]
pub fn binary_scalar(op: Binary, a: f64, b: f64) -> f64 {
    match op {
        Binary::Add => a + b,
        Binary::Sub => a - b,
        Binary::Mul => a * b,
        Binary::Div => a / b,
    }
}

pub fn unary(op: Unary, a: &[f64], out: &mut [f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o = unary_scalar(op, *x);
    }
}

/// Output length of a broadcasting binary op; either side may have length 1.
pub fn broadcast_len(op: &str, a: usize, b: usize) -> usize {
    match (a, b) {
        _ if a == b => a,
        (1, n) | (n, 1) => n,
        _ => panic!("dimension mismatch in {op}: {a} vs {b}"),
    }
}

pub fn binary(op: Binary, a: &[f64], b: &[f64], out: &mut [f64]) {
    let (sa, sb) = (a.len() > 1, b.len() > 1);
    for (i, o) in out.iter_mut().enumerate() {
        let x = if sa { a[i] } else { a[0] };
        let y = if sb { b[i] } else { b[0] };
        *o = binary_scalar(op, x, y);
    }
}

pub fn scale(a: &[f64], c: f64, out: &mut [f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o = c * x;
    }
}

/// Row-major `w (rows x cols) * x`.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    assert_eq!(w.len(), rows * cols, "matvec: matrix storage");
    assert_eq!(x.len(), cols, "dimension mismatch in matvec: {rows}x{cols} * {}", x.len());
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(x) {
            acc += wij * xj;
        }
        *o = acc;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch in dot");
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn sum(a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        acc += x;
    }
    acc
}
