//! Linear analysis and synthesis at the origin.
//!
//! `solve_lyapunov` reduces `A'P + PA = -Q` with a real Schur factorization
//! `A = U T U'` and then solves the vectorized equation one diagonal block
//! column of `T` at a time. Hurwitz testing is Lyapunov plus Cholesky;
//! LQR gains come from Kleinman–Newton iteration on the Riccati equation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lu_solve, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPair {
    pub a: Mat,
    pub b: Mat,
}

impl LinearPair {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if !a.is_square() || b.rows() != a.rows() {
            return Err(Error::Dim { op: "LinearPair", detail: format!("A {:?}, B {:?}", a.shape(), b.shape()) });
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &Mat) -> Result<Mat> {
        self.a.add(&self.b.matmul(k)?)
    }
}

/// Diagonal blocks of a quasi-upper-triangular matrix, grown while the
/// subdiagonal entry is nonzero.
fn diagonal_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && t[(end, end - 1)] != 0.0 {
            end += 1;
        }
        blocks.push((start, end - start));
        start = end;
    }
    blocks
}

/// Solves `A'P + PA = -Q` for symmetric `Q`.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    if !a.is_square() || q.shape() != a.shape() {
        return Err(Error::Dim { op: "solve_lyapunov", detail: format!("A {:?}, Q {:?}", a.shape(), q.shape()) });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let schur = nalgebra::Schur::try_new(a.to_nalgebra(), f64::EPSILON, 10_000)
        .ok_or(Error::Singular("schur factorization did not converge"))?;
    let (u, t) = schur.unpack();
    let c = -(u.transpose() * q.to_nalgebra() * &u);
    let tt = t.transpose();

    // T'Y + YT = C, block column J:
    //   T' Y_J + Y_J T_JJ = C_J - sum_{K<J} Y_K T_KJ
    let mut y = DMatrix::<f64>::zeros(n, n);
    for (j0, bj) in diagonal_blocks(&t) {
        let mut rhs = c.columns(j0, bj).into_owned();
        if j0 > 0 {
            rhs -= y.columns(0, j0) * t.view((0, j0), (j0, bj));
        }
        let dim = n * bj;
        let mut sys = DMatrix::<f64>::zeros(dim, dim);
        for blk in 0..bj {
            // I_b (x) T'
            sys.view_mut((blk * n, blk * n), (n, n)).copy_from(&tt);
            // T_JJ' (x) I_n : entry (blk, other) = T_JJ[other, blk]
            for other in 0..bj {
                let coef = t[(j0 + other, j0 + blk)];
                if coef != 0.0 {
                    for i in 0..n {
                        sys[(blk * n + i, other * n + i)] += coef;
                    }
                }
            }
        }
        let vec_rhs = DMatrix::from_column_slice(dim, 1, rhs.as_slice());
        let sol = lu_solve(sys, vec_rhs).ok_or(Error::EigenvalueSumZero)?;
        for blk in 0..bj {
            for i in 0..n {
                y[(i, j0 + blk)] = sol[(blk * n + i, 0)];
            }
        }
    }
    let p = &u * y * u.transpose();
    Ok(Mat::from_nalgebra(&p).symmetrize())
}

/// `|A'P + PA + Q|_F`.
pub fn lyapunov_residual(a: &Mat, p: &Mat, q: &Mat) -> f64 {
    let at = a.transpose();
    at.matmul(p).unwrap().add(&p.matmul(a).unwrap()).unwrap().add(q).unwrap().frobenius()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HurwitzVerdict {
    Hurwitz,
    NotSquare,
    NonFinite,
    /// The Lyapunov operator is singular: some eigenvalue pair sums to zero.
    Singular,
    /// The Lyapunov solution exists but is not positive definite.
    NotPositiveDefinite,
}

impl HurwitzVerdict {
    pub fn is_hurwitz(&self) -> bool {
        matches!(self, HurwitzVerdict::Hurwitz)
    }
}

pub fn hurwitz_verdict(a: &Mat) -> HurwitzVerdict {
    if !a.is_square() {
        return HurwitzVerdict::NotSquare;
    }
    if !a.as_slice().iter().all(|v| v.is_finite()) {
        return HurwitzVerdict::NonFinite;
    }
    match solve_lyapunov(a, &Mat::identity(a.rows())) {
        Err(_) => HurwitzVerdict::Singular,
        Ok(p) if p.is_positive_definite() => HurwitzVerdict::Hurwitz,
        Ok(_) => HurwitzVerdict::NotPositiveDefinite,
    }
}

/// All eigenvalues in the open left half-plane.
pub fn is_hurwitz(a: &Mat) -> bool {
    hurwitz_verdict(a).is_hurwitz()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiOptions {
    /// Stop when `|P_{k+1} - P_k|_F <= tol (1 + |P_{k+1}|_F)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Required final Riccati residual.
    pub residual_tol: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self { tol: 1e-13, max_iter: 100, residual_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrSolution {
    /// `u = K x`, `K = -R^{-1} B' P`.
    pub k: Mat,
    pub p: Mat,
    pub iterations: usize,
    /// Riccati residual after each Kleinman iterate.
    pub residuals: Vec<f64>,
}

/// `|A'P + PA - P B R^{-1} B' P + Q|_F`.
pub fn care_residual(pair: &LinearPair, q: &Mat, r: &Mat, p: &Mat) -> Result<f64> {
    let rinv_bt_p = r.solve(&pair.b.transpose())?.matmul(p)?;
    let quad = p.matmul(&pair.b)?.matmul(&rinv_bt_p)?;
    let lin = pair.a.transpose().matmul(p)?.add(&p.matmul(&pair.a)?)?;
    Ok(lin.sub(&quad)?.add(q)?.frobenius())
}

/// Stabilizing seed: zero if `A` is already Hurwitz, otherwise the Bass gain
/// `K0 = -B' P0^{-1}` with `(A + eta I) P0 + P0 (A + eta I)' = 2 B B'` and
/// `eta = 1 + |A|_F`.
pub fn stabilizing_seed(pair: &LinearPair) -> Result<Mat> {
    let (n, m) = (pair.n(), pair.m());
    if is_hurwitz(&pair.a) {
        return Ok(Mat::zeros(m, n));
    }
    let eta = 1.0 + pair.a.frobenius();
    let shifted = pair.a.add(&Mat::identity(n).scale(eta))?.scale(-1.0);
    let bbt2 = pair.b.matmul(&pair.b.transpose())?.scale(2.0);
    let p0 = solve_lyapunov(&shifted.transpose(), &bbt2).map_err(|_| Error::NotStabilizable)?;
    if !p0.is_positive_definite() {
        return Err(Error::NotStabilizable);
    }
    let k0 = p0.solve(&pair.b)?.transpose().scale(-1.0);
    if !is_hurwitz(&pair.closed_loop(&k0)?) {
        return Err(Error::NotStabilizable);
    }
    Ok(k0)
}

/// Continuous-time LQR by Kleinman–Newton iteration.
pub fn lqr(pair: &LinearPair, q: &Mat, r: &Mat) -> Result<LqrSolution> {
    lqr_with(pair, q, r, &RiccatiOptions::default())
}

pub fn lqr_with(pair: &LinearPair, q: &Mat, r: &Mat, opts: &RiccatiOptions) -> Result<LqrSolution> {
    let (n, m) = (pair.n(), pair.m());
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dim { op: "lqr", detail: format!("Q {:?}, R {:?} for n={n}, m={m}", q.shape(), r.shape()) });
    }
    if !r.is_positive_definite() {
        return Err(Error::InvalidArgument("R must be positive definite".into()));
    }
    let rinv_bt = r.solve(&pair.b.transpose())?;
    let mut k = stabilizing_seed(pair)?;
    let mut p_prev: Option<Mat> = None;
    let mut residuals = Vec::new();
    for it in 1..=opts.max_iter {
        let acl = pair.closed_loop(&k)?;
        let rhs = q.add(&k.transpose().matmul(&r.matmul(&k)?)?)?;
        let p = solve_lyapunov(&acl, &rhs).map_err(|_| Error::NotStabilizable)?;
        k = rinv_bt.matmul(&p)?.scale(-1.0);
        residuals.push(care_residual(pair, q, r, &p)?);
        let done = p_prev
            .as_ref()
            .is_some_and(|pp| p.sub(pp).map(|d| d.frobenius()).unwrap_or(f64::INFINITY) <= opts.tol * (1.0 + p.frobenius()));
        p_prev = Some(p);
        if done {
            let p = p_prev.unwrap();
            let res = *residuals.last().unwrap();
            if res > opts.residual_tol * (1.0 + p.frobenius()) || !is_hurwitz(&pair.closed_loop(&k)?) {
                return Err(Error::NoConvergence(it));
            }
            return Ok(LqrSolution { k, p, iterations: it, residuals });
        }
    }
    Err(Error::NoConvergence(opts.max_iter))
}

/// Constructive test: an LQR design with identity weights succeeds and
/// stabilizes.
pub fn check_stabilizable(pair: &LinearPair) -> bool {
    let (n, m) = (pair.n(), pair.m());
    lqr(pair, &Mat::identity(n), &Mat::identity(m)).is_ok()
}
