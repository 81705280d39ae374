//! Black-box controller classes on plain vectors:
//!
//! * Q-policies `xhat' = f(x) - s(x - xhat) + g(x) u`, `q' = f_q(q, xhat, x)`,
//!   `u = K xhat + h_q(q, xhat, x)`;
//! * dynamic controllers `x_c' = f_c(x_c, x)`, `u = h_c(x_c, x)`.
//!
//! Used for the sufficiency checks and the necessity construction.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Eval;
use crate::error::{Error, Result};
use crate::lincontrol::{hurwitz_verdict, HurwitzVerdict, LinearPair};
use crate::linalg::{fd_jacobian, norm, Mat};
use crate::ode::{simulate, Dynamics, Rollout};
use crate::plant::InputAffinePlant;

pub type Map1<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;
pub type Map2<'a> = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64> + 'a>;
pub type Map3<'a> = Box<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + 'a>;

pub struct GenericQPolicy<'a> {
    pub n: usize,
    pub n_q: usize,
    pub m: usize,
    pub k: Mat,
    /// Error field `s(zeta)`.
    pub s: Map1<'a>,
    /// `f_q(q, xhat, x)`.
    pub f_q: Map3<'a>,
    /// `h_q(q, xhat, x)`.
    pub h_q: Map3<'a>,
}

pub struct GenericCController<'a> {
    pub n: usize,
    pub n_c: usize,
    pub m: usize,
    /// `f_c(x_c, x)`.
    pub f_c: Map2<'a>,
    /// `h_c(x_c, x)`.
    pub h_c: Map2<'a>,
    pub x_c0: Vec<f64>,
}

impl<'a> GenericCController<'a> {
    /// Static feedback `u = K x` (`n_c = 0`).
    pub fn static_gain(k: Mat) -> Self {
        let (m, n) = k.shape();
        let kk = k.clone();
        Self {
            n,
            n_c: 0,
            m,
            f_c: Box::new(|_, _| Vec::new()),
            h_c: Box::new(move |_, x| kk.matvec(x).expect("K x")),
            x_c0: Vec::new(),
        }
    }

    /// `x_c' = A_c x_c + B_c x`, `u = C_c x_c + D_c x`.
    pub fn linear(ac: Mat, bc: Mat, cc: Mat, dc: Mat, x_c0: Vec<f64>) -> Result<Self> {
        let n_c = ac.rows();
        let n = bc.cols();
        let m = cc.rows();
        if !ac.is_square() || bc.rows() != n_c || cc.cols() != n_c || dc.shape() != (m, n) || x_c0.len() != n_c {
            return Err(Error::Dim { op: "GenericCController::linear", detail: "inconsistent A_c, B_c, C_c, D_c".into() });
        }
        Ok(Self {
            n,
            n_c,
            m,
            f_c: Box::new(move |xc, x| {
                let a = ac.matvec(xc).expect("A_c x_c");
                let b = bc.matvec(x).expect("B_c x");
                a.iter().zip(&b).map(|(p, q)| p + q).collect()
            }),
            h_c: Box::new(move |xc, x| {
                let c = cc.matvec(xc).expect("C_c x_c");
                let d = dc.matvec(x).expect("D_c x");
                c.iter().zip(&d).map(|(p, q)| p + q).collect()
            }),
            x_c0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub pass: bool,
    pub detail: String,
    /// Failing input, when one was found.
    pub witness: Option<Vec<f64>>,
}

impl ConditionResult {
    fn from_verdict(v: HurwitzVerdict, what: &str) -> Self {
        Self { pass: v.is_hurwitz(), detail: format!("{what}: {v:?}"), witness: None }
    }

    fn fail(detail: String, witness: Option<Vec<f64>>) -> Self {
        Self { pass: false, detail, witness }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub i: ConditionResult,
    pub ii: ConditionResult,
    pub iii: ConditionResult,
    pub iv: ConditionResult,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.i.pass && self.ii.pass && self.iii.pass && self.iv.pass
    }
}

pub const FD_STEP: f64 = 1e-6;
const IDENTITY_DRAWS: usize = 100;

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite evaluation of {what}")))
    }
}

/// Uniform point in the closed unit ball: Gaussian direction, radius
/// `U^(1/d)`.
fn ball_point(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let r: f64 = rng.gen::<f64>().powf(1.0 / d.max(1) as f64);
    let len = norm(&v);
    if len == 0.0 {
        return vec![0.0; d];
    }
    v.iter().map(|x| x * r / len).collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())))
}

/// Checks the four sufficiency conditions. Jacobians are central
/// differences; the identity in iv is sampled on `(q, y)` in the unit ball.
pub fn check_conditions(q: &GenericQPolicy, pair: &LinearPair, seed: u64) -> Result<ConditionReport> {
    let (n, n_q) = (q.n, q.n_q);
    if pair.n() != n || q.k.shape() != (pair.m(), n) {
        return Err(Error::Dim { op: "check_conditions", detail: format!("K {:?} for pair n={}, m={}", q.k.shape(), pair.n(), pair.m()) });
    }
    let i = ConditionResult::from_verdict(hurwitz_verdict(&pair.closed_loop(&q.k)?), "A + B K");

    let zn = vec![0.0; n];
    let zq = vec![0.0; n_q];
    let s0 = (q.s)(&zn);
    finite(&s0, "s(0)")?;
    let ii = if norm(&s0) != 0.0 {
        ConditionResult::fail(format!("s(0) = {s0:?}"), Some(zn.clone()))
    } else {
        let js = fd_jacobian(|z| (q.s)(z), &zn, FD_STEP);
        finite(js.as_slice(), "ds/dzeta")?;
        ConditionResult::from_verdict(hurwitz_verdict(&js), "ds/dzeta")
    };

    let fq0 = (q.f_q)(&zq, &zn, &zn);
    finite(&fq0, "f_q(0,0,0)")?;
    let iii = if norm(&fq0) != 0.0 {
        ConditionResult::fail(format!("f_q(0,0,0) = {fq0:?}"), Some(zq.clone()))
    } else if n_q == 0 {
        ConditionResult { pass: true, detail: "empty Youla state".into(), witness: None }
    } else {
        let jq = fd_jacobian(|qq| (q.f_q)(qq, &zn, &zn), &zq, FD_STEP);
        finite(jq.as_slice(), "df_q/dq")?;
        ConditionResult::from_verdict(hurwitz_verdict(&jq), "df_q/dq")
    };

    let hq0 = (q.h_q)(&zq, &zn, &zn);
    finite(&hq0, "h_q(0,0,0)")?;
    let iv = if norm(&hq0) != 0.0 {
        ConditionResult::fail(format!("h_q(0,0,0) = {hq0:?}"), Some(zq.clone()))
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut result = ConditionResult { pass: true, detail: format!("{IDENTITY_DRAWS} draws"), witness: None };
        for _ in 0..IDENTITY_DRAWS {
            let qq = ball_point(&mut rng, n_q);
            let y = ball_point(&mut rng, n);
            let (fa, fb) = ((q.f_q)(&qq, &y, &y), (q.f_q)(&qq, &zn, &zn));
            let (ha, hb) = ((q.h_q)(&qq, &y, &y), (q.h_q)(&qq, &zn, &zn));
            for (v, w) in [(&fa, "f_q"), (&fb, "f_q"), (&ha, "h_q"), (&hb, "h_q")] {
                finite(v, w)?;
            }
            let bad = if !close(&fa, &fb) {
                Some("f_q(q,y,y) != f_q(q,0,0)")
            } else if !close(&ha, &hb) {
                Some("h_q(q,y,y) != h_q(q,0,0)")
            } else {
                None
            };
            if let Some(msg) = bad {
                let mut w = qq.clone();
                w.extend(&y);
                result = ConditionResult::fail(msg.into(), Some(w));
                break;
            }
        }
        result
    };
    Ok(ConditionReport { i, ii, iii, iv })
}

/// Closed loop of a plant with a Q-policy, state `(x, xhat, q)`.
pub struct QLoop<'q, 'a, P> {
    pub policy: &'q GenericQPolicy<'a>,
    pub plant: &'q P,
}

impl<P: InputAffinePlant> QLoop<'_, '_, P> {
    fn split<'z>(&self, z: &'z [f64]) -> (&'z [f64], &'z [f64], &'z [f64]) {
        let n = self.policy.n;
        (&z[..n], &z[n..2 * n], &z[2 * n..])
    }

    pub fn control(&self, z: &[f64]) -> Vec<f64> {
        let (x, xhat, q) = self.split(z);
        let kx = self.policy.k.matvec(xhat).expect("K xhat");
        let r = (self.policy.h_q)(q, xhat, x);
        kx.iter().zip(&r).map(|(a, b)| a + b).collect()
    }

    pub fn rate(&self, z: &[f64]) -> Vec<f64> {
        let (x, xhat, q) = self.split(z);
        let u = self.control(z);
        let dx = self.plant.rate_at(x, &u);
        let e: Vec<f64> = x.iter().zip(xhat).map(|(a, b)| a - b).collect();
        let s = (self.policy.s)(&e);
        let fx = self.plant.f_at(x);
        let gu = self.plant.g_at(x).matvec(&u).expect("g u");
        let mut out = dx;
        out.extend(fx.iter().zip(&s).zip(&gu).map(|((f, s), g)| f - s + g));
        out.extend((self.policy.f_q)(q, xhat, x));
        out
    }
}

impl<'p, P: InputAffinePlant> Dynamics<Eval<'p>> for QLoop<'_, '_, P> {
    fn field(&mut self, _g: &mut Eval<'p>, z: &Vec<f64>) -> Result<Vec<f64>> {
        Ok(self.rate(z))
    }

    fn input(&mut self, _g: &mut Eval<'p>, z: &Vec<f64>) -> Result<Vec<f64>> {
        Ok(self.control(z))
    }
}

/// Closed loop of a plant with a dynamic controller, state `(x, x_c)`.
pub struct CLoop<'c, 'a, P> {
    pub controller: &'c GenericCController<'a>,
    pub plant: &'c P,
}

impl<P: InputAffinePlant> CLoop<'_, '_, P> {
    pub fn control(&self, z: &[f64]) -> Vec<f64> {
        let n = self.controller.n;
        (self.controller.h_c)(&z[n..], &z[..n])
    }

    pub fn rate(&self, z: &[f64]) -> Vec<f64> {
        let n = self.controller.n;
        let u = self.control(z);
        let mut out = self.plant.rate_at(&z[..n], &u);
        out.extend((self.controller.f_c)(&z[n..], &z[..n]));
        out
    }

    /// Jacobian of the closed loop at the origin, central differences.
    pub fn jacobian(&self) -> Mat {
        let zero = vec![0.0; self.controller.n + self.controller.n_c];
        fd_jacobian(|z| self.rate(z), &zero, FD_STEP)
    }
}

impl<'p, P: InputAffinePlant> Dynamics<Eval<'p>> for CLoop<'_, '_, P> {
    fn field(&mut self, _g: &mut Eval<'p>, z: &Vec<f64>) -> Result<Vec<f64>> {
        Ok(self.rate(z))
    }

    fn input(&mut self, _g: &mut Eval<'p>, z: &Vec<f64>) -> Result<Vec<f64>> {
        Ok(self.control(z))
    }
}

pub fn simulate_q_loop<P: InputAffinePlant>(
    policy: &GenericQPolicy,
    plant: &P,
    z0: &[f64],
    h: f64,
    steps: usize,
) -> Result<Rollout> {
    if z0.len() != 2 * policy.n + policy.n_q {
        return Err(Error::Dim { op: "simulate_q_loop", detail: format!("z0 has {} entries", z0.len()) });
    }
    simulate(&mut QLoop { policy, plant }, z0, h, steps, None)
}

pub fn simulate_c_loop<P: InputAffinePlant>(
    controller: &GenericCController,
    plant: &P,
    x0: &[f64],
    h: f64,
    steps: usize,
) -> Result<Rollout> {
    if x0.len() != controller.n {
        return Err(Error::Dim { op: "simulate_c_loop", detail: format!("x0 has {} entries", x0.len()) });
    }
    let mut z0 = x0.to_vec();
    z0.extend(&controller.x_c0);
    simulate(&mut CLoop { controller, plant }, &z0, h, steps, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{linearize, CartPole};

    fn cartpole_pair() -> LinearPair {
        let (a, b) = linearize(&CartPole::default()).unwrap();
        LinearPair::new(a, b).unwrap()
    }

    fn linear_q<'a>(k: Mat, read_x: bool) -> GenericQPolicy<'a> {
        let n = k.cols();
        GenericQPolicy {
            n,
            n_q: 2,
            m: k.rows(),
            k,
            s: Box::new(|z| z.iter().map(|v| -v).collect()),
            f_q: Box::new(|q, xhat, x| vec![-q[0] + (x[0] - xhat[0]), -2.0 * q[1]]),
            h_q: Box::new(move |q, xhat, x| {
                let e = if read_x { x[2] } else { x[2] - xhat[2] };
                vec![0.3 * q[0] + e]
            }),
        }
    }

    fn stabilizing_k() -> Mat {
        let pair = cartpole_pair();
        crate::lincontrol::lqr(&pair, &Mat::diag(&[10.0, 1.0, 100.0, 1.0]), &Mat::diag(&[0.1])).unwrap().k
    }

    #[test]
    fn well_formed_policy_passes() {
        let report = check_conditions(&linear_q(stabilizing_k(), false), &cartpole_pair(), 0).unwrap();
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn reading_x_directly_breaks_iv() {
        let report = check_conditions(&linear_q(stabilizing_k(), true), &cartpole_pair(), 0).unwrap();
        assert!(report.i.pass && report.ii.pass && report.iii.pass);
        assert!(!report.iv.pass);
        let w = report.iv.witness.unwrap();
        assert_eq!(w.len(), 2 + 4);
        assert!(w[2 + 2] != 0.0);
    }

    #[test]
    fn zero_gain_fails_i_on_cartpole() {
        let report = check_conditions(&linear_q(Mat::zeros(1, 4), false), &cartpole_pair(), 0).unwrap();
        assert_eq!(report.i.pass, crate::lincontrol::is_hurwitz(&cartpole_pair().a));
        assert!(!report.i.pass);
    }

    #[test]
    fn nonzero_s_at_origin_fails_ii() {
        let mut q = linear_q(stabilizing_k(), false);
        q.s = Box::new(|z| z.iter().map(|v| 0.1 - v).collect());
        let report = check_conditions(&q, &cartpole_pair(), 0).unwrap();
        assert!(!report.ii.pass);
    }

    #[test]
    fn static_controller_loop_matches_plant_rate() {
        let plant = CartPole::default();
        let k = stabilizing_k();
        let c = GenericCController::static_gain(k.clone());
        let cl = CLoop { controller: &c, plant: &plant };
        let x = [0.01, 0.0, -0.02, 0.03];
        let u = k.matvec(&x).unwrap();
        assert_eq!(cl.rate(&x), plant.rate_at(&x, &u));
        let pair = cartpole_pair();
        let j = cl.jacobian();
        let acl = pair.closed_loop(&k).unwrap();
        assert!(j.sub(&acl).unwrap().max_abs() < 1e-6);
    }
}
