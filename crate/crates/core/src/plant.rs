//! Input-affine plants `x' = f(x) + g(x) u`, the cart–pendulum instance and
//! its obstacle-avoidance stage cost.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph};
use crate::error::{Error, Result};
use crate::linalg::{fd_jacobian, norm, Mat};
use crate::ode::Rollout;

pub trait InputAffinePlant: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// `(f(x), g(x))` with `g` flattened row-major as `n x m`.
    fn drift_and_gain<G: Graph>(&self, g: &mut G, x: &G::V) -> (G::V, G::V);

    /// Closed-form Jacobian of `f` at the origin, when known.
    fn closed_form_linearization(&self) -> Option<(Mat, Mat)> {
        None
    }

    /// `f(x) + g(x) u`.
    fn rate<G: Graph>(&self, g: &mut G, x: &G::V, u: &G::V) -> G::V {
        let (fx, gx) = self.drift_and_gain(g, x);
        let gu = if self.input_dim() == 1 { g.mul(&gx, u) } else { g.matvec(&gx, self.state_dim(), self.input_dim(), u) };
        g.add(&fx, &gu)
    }

    fn f_at(&self, x: &[f64]) -> Vec<f64> {
        let mut g = Eval::new(&[]);
        let xv = g.constant(x);
        self.drift_and_gain(&mut g, &xv).0
    }

    fn g_at(&self, x: &[f64]) -> Mat {
        let mut g = Eval::new(&[]);
        let xv = g.constant(x);
        let gx = self.drift_and_gain(&mut g, &xv).1;
        Mat::from_row_major(self.state_dim(), self.input_dim(), gx).expect("g(x) shape")
    }

    fn rate_at(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut g = Eval::new(&[]);
        let xv = g.constant(x);
        let uv = g.constant(u);
        self.rate(&mut g, &xv, &uv)
    }
}

/// `(A, B) = (df/dx(0), g(0))`. Uses the closed form when the plant has one,
/// central differences otherwise.
pub fn linearize<P: InputAffinePlant>(plant: &P) -> Result<(Mat, Mat)> {
    let n = plant.state_dim();
    let zero = vec![0.0; n];
    let f0 = norm(&plant.f_at(&zero));
    if f0 > 1e-10 {
        return Err(Error::NotEquilibrium(f0));
    }
    if let Some(ab) = plant.closed_form_linearization() {
        return Ok(ab);
    }
    let a = fd_jacobian(|x| plant.f_at(x), &zero, 1e-6);
    Ok((a, plant.g_at(&zero)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPlant {
    pub a: Mat,
    pub b: Mat,
}

impl LinearPlant {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if !a.is_square() || b.rows() != a.rows() {
            return Err(Error::Dim { op: "LinearPlant", detail: format!("A {:?}, B {:?}", a.shape(), b.shape()) });
        }
        Ok(Self { a, b })
    }

    pub fn double_integrator() -> Self {
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        Self { a, b: Mat::column(&[0.0, 1.0]) }
    }
}

impl InputAffinePlant for LinearPlant {
    fn state_dim(&self) -> usize {
        self.a.rows()
    }

    fn input_dim(&self) -> usize {
        self.b.cols()
    }

    fn drift_and_gain<G: Graph>(&self, g: &mut G, x: &G::V) -> (G::V, G::V) {
        let fx = g.matvec_const(&self.a, x);
        let gx = g.constant(self.b.as_slice());
        (fx, gx)
    }
}

/// Physical constants of the cart–pendulum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleParams {
    /// Cart mass (kg).
    pub cart_mass: f64,
    /// Pendulum mass (kg).
    pub pole_mass: f64,
    /// Pendulum length (m).
    pub length: f64,
    /// Cart friction (N s / m).
    pub friction: f64,
    pub gravity: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self { cart_mass: 1.0, pole_mass: 0.1, length: 1.0, friction: 0.1, gravity: 9.81 }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cart_mass, self.pole_mass, self.length, self.friction, self.gravity];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("cart-pole parameters must be positive: {self:?}")))
        }
    }
}

/// State `(p, p', theta, theta')`, input the horizontal force on the cart.
/// `theta = 0` is upright.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self { params }
    }
}

impl InputAffinePlant for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift_and_gain<G: Graph>(&self, g: &mut G, x: &G::V) -> (G::V, G::V) {
        let CartPoleParams { cart_mass: mc, pole_mass: mp, length: l, friction: b, gravity: grav } = self.params;
        let pd = g.at(x, 1);
        let th = g.at(x, 2);
        let thd = g.at(x, 3);
        let s = g.sin(&th);
        let c = g.cos(&th);
        let thd2 = g.square(&thd);
        let s2 = g.square(&s);
        let big_m = g.scalar(mc);
        let den = g.axpy(&big_m, mp, &s2);
        let sc = g.mul(&s, &c);
        let s_thd2 = g.mul(&s, &thd2);
        let b_pd = g.scale(&pd, b);

        // m L sin(th) th'^2 + m g sin(th) cos(th) - b p'
        let t1 = g.scale(&s_thd2, mp * l);
        let t2 = g.axpy(&t1, mp * grav, &sc);
        let num2 = g.sub(&t2, &b_pd);
        let acc2 = g.div(&num2, &den);

        // (M + m) g sin(th) - m L cos(th) sin(th) th'^2 + b p' cos(th)
        let u1 = g.scale(&s, (mc + mp) * grav);
        let cs_thd2 = g.mul(&sc, &thd2);
        let u2 = g.axpy(&u1, -mp * l, &cs_thd2);
        let b_pd_c = g.mul(&b_pd, &c);
        let num4 = g.add(&u2, &b_pd_c);
        let l_den = g.scale(&den, l);
        let acc4 = g.div(&num4, &l_den);

        let fx = g.concat(&[&pd, &acc2, &thd, &acc4]);

        let zero = g.scalar(0.0);
        let one = g.scalar(1.0);
        let g2 = g.div(&one, &den);
        let neg_c = g.neg(&c);
        let g4 = g.div(&neg_c, &l_den);
        let gx = g.concat(&[&zero, &g2, &zero, &g4]);
        (fx, gx)
    }

    fn closed_form_linearization(&self) -> Option<(Mat, Mat)> {
        let CartPoleParams { cart_mass: mc, pole_mass: mp, length: l, friction: b, gravity: grav } = self.params;
        let a = Mat::from_rows(&[
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, -b / mc, grav * mp / mc, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, b / (mc * l), grav * (mc + mp) / (mc * l), 0.0],
        ])
        .unwrap();
        let bm = Mat::column(&[0.0, 1.0 / mc, 0.0, -1.0 / (mc * l)]);
        Some((a, bm))
    }
}

/// Cartesian position of the pendulum tip, `(p + L sin(theta), L cos(theta))`.
pub fn tip_position(x: &[f64], length: f64) -> [f64; 2] {
    [x[0] + length * x[2].sin(), length * x[2].cos()]
}

/// Two circular obstacles around the tip path and the cost weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleField {
    pub centers: Vec<[f64; 2]>,
    pub radius: f64,
    pub eps_safe: f64,
    pub beta: f64,
    pub kappa: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for ObstacleField {
    fn default() -> Self {
        Self {
            centers: vec![[0.0, 0.45], [0.35, 0.75]],
            radius: 0.18,
            eps_safe: 0.05,
            beta: 1.0,
            kappa: 10.0,
            gamma1: 1.0,
            gamma2: 50.0,
        }
    }
}

/// Smoothing of the tip-to-center distance near the center.
pub const DISTANCE_SMOOTHING: f64 = 1e-9;

impl ObstacleField {
    pub fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0
            && self.eps_safe > 0.0
            && self.beta > 0.0
            && self.kappa > 0.0
            && self.gamma1 >= 0.0
            && self.gamma2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid obstacle field: {self:?}")))
        }
    }
}

/// Piecewise penalty: zero beyond `R + eps`, quadratic on `[R, R + eps)`,
/// exponential barrier inside the obstacle.
pub fn obstacle_penalty(d: f64, field: &ObstacleField) -> f64 {
    let (r, eps) = (field.radius, field.eps_safe);
    if d >= r + eps {
        0.0
    } else if d >= r {
        (r + eps - d).powi(2)
    } else {
        eps * eps + field.beta * ((field.kappa * (r - d)).exp() - 1.0)
    }
}

/// [`obstacle_penalty`] on a graph node; the branch is chosen from the value
/// and only the active branch is differentiated.
pub fn obstacle_penalty_node<G: Graph>(g: &mut G, d: &G::V, field: &ObstacleField) -> G::V {
    let (r, eps) = (field.radius, field.eps_safe);
    let dv = g.scalar_value(d);
    if dv >= r + eps {
        g.scalar(0.0)
    } else if dv >= r {
        let neg = g.scale(d, -1.0);
        let edge = g.scalar(r + eps);
        let gap = g.add(&edge, &neg);
        g.square(&gap)
    } else {
        let neg = g.scale(d, -field.kappa);
        let rk = g.scalar(field.kappa * r);
        let arg = g.add(&rk, &neg);
        let e = g.exp(&arg);
        let base = g.scalar(eps * eps - field.beta);
        g.axpy(&base, field.beta, &e)
    }
}

/// Running cost `l(x)` integrated along a rollout.
pub trait StageCost: Sync {
    fn eval<G: Graph>(&self, g: &mut G, x: &G::V) -> G::V;

    fn at(&self, x: &[f64]) -> f64 {
        let mut g = Eval::new(&[]);
        let xv = g.constant(x);
        let c = self.eval(&mut g, &xv);
        c[0]
    }
}

/// `gamma1 * x'x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticCost {
    pub gamma1: f64,
}

impl StageCost for QuadraticCost {
    fn eval<G: Graph>(&self, g: &mut G, x: &G::V) -> G::V {
        let q = g.dot(x, x);
        g.scale(&q, self.gamma1)
    }
}

/// The cart–pendulum avoidance task: plant plus obstacle stage cost
/// `gamma1 x'x + gamma2 sum_i phi_i(d_i)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleTask {
    pub plant: CartPole,
    pub field: ObstacleField,
}

impl ObstacleTask {
    pub fn new(params: CartPoleParams, field: ObstacleField) -> Self {
        Self { plant: CartPole::new(params), field }
    }

    pub fn distances(&self, x: &[f64]) -> Vec<f64> {
        let tip = tip_position(x, self.plant.params.length);
        self.field
            .centers
            .iter()
            .map(|c| ((tip[0] - c[0]).powi(2) + (tip[1] - c[1]).powi(2) + DISTANCE_SMOOTHING.powi(2)).sqrt())
            .collect()
    }

    /// Grid points where the tip is strictly inside some obstacle.
    pub fn penetrations(&self, rollout: &Rollout) -> usize {
        rollout.z.iter().filter(|z| self.distances(&z[..4]).iter().any(|d| *d < self.field.radius)).count()
    }

    pub fn min_clearance(&self, rollout: &Rollout) -> f64 {
        rollout
            .z
            .iter()
            .flat_map(|z| self.distances(&z[..4]))
            .fold(f64::INFINITY, f64::min)
            - self.field.radius
    }

    /// CSV with header `t,p,pdot,theta,thetadot,u,tip_x,tip_y,stage_cost`.
    pub fn trajectory_csv(&self, rollout: &Rollout) -> String {
        let mut out = String::from("t,p,pdot,theta,thetadot,u,tip_x,tip_y,stage_cost\n");
        for ((t, z), u) in rollout.t.iter().zip(&rollout.z).zip(&rollout.u) {
            let x = &z[..4];
            let tip = tip_position(x, self.plant.params.length);
            let u0 = u.first().copied().unwrap_or(0.0);
            out.push_str(&format!(
                "{t},{},{},{},{},{u0},{},{},{}\n",
                x[0],
                x[1],
                x[2],
                x[3],
                tip[0],
                tip[1],
                self.at(x)
            ));
        }
        out
    }
}

impl StageCost for ObstacleTask {
    fn eval<G: Graph>(&self, g: &mut G, x: &G::V) -> G::V {
        let f = &self.field;
        let quad = g.dot(x, x);
        let mut total = g.scale(&quad, f.gamma1);
        if f.gamma2 == 0.0 || f.centers.is_empty() {
            return total;
        }
        let l = self.plant.params.length;
        let p = g.at(x, 0);
        let th = g.at(x, 2);
        let s = g.sin(&th);
        let c = g.cos(&th);
        let tip_x = g.axpy(&p, l, &s);
        let tip_y = g.scale(&c, l);
        let mut pen = g.scalar(0.0);
        for center in &f.centers {
            let cx = g.scalar(-center[0]);
            let cy = g.scalar(-center[1]);
            let dx = g.add(&tip_x, &cx);
            let dy = g.add(&tip_y, &cy);
            let dx2 = g.square(&dx);
            let dy2 = g.square(&dy);
            let r2 = g.add(&dx2, &dy2);
            let delta = g.scalar(DISTANCE_SMOOTHING * DISTANCE_SMOOTHING);
            let r2s = g.add(&r2, &delta);
            let d = g.sqrt(&r2s);
            let phi = obstacle_penalty_node(g, &d, f);
            pen = g.add(&pen, &phi);
        }
        total = g.axpy(&total, f.gamma2, &pen);
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cp() -> CartPole {
        CartPole::default()
    }

    #[test]
    fn drift_vanishes_at_upright() {
        assert_eq!(cp().f_at(&[0.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn drift_with_cart_velocity() {
        let f = cp().f_at(&[0.0, 1.0, 0.0, 0.0]);
        let expected = [1.0, -0.1, 0.0, 0.1];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{f:?}");
        }
    }

    #[test]
    fn input_gain() {
        let g0 = cp().g_at(&[0.0; 4]);
        assert_eq!(g0.as_slice(), &[0.0, 1.0, 0.0, -1.0]);
        let g90 = cp().g_at(&[0.0, 0.0, FRAC_PI_2, 0.0]);
        assert!((g90[(1, 0)] - 1.0 / 1.1).abs() < 1e-15);
        assert!(g90[(3, 0)].abs() < 1e-15);
        let a = cp().g_at(&[0.3, 0.0, 0.4, 0.0]);
        let b = cp().g_at(&[-2.0, 5.0, 0.4, -7.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn linearization_matches_closed_form_and_fd() {
        let (a, b) = linearize(&cp()).unwrap();
        assert_eq!(a[(1, 1)], -0.1);
        assert!((a[(1, 2)] - 0.981).abs() < 1e-15);
        assert!((a[(3, 1)] - 0.1).abs() < 1e-15 && (a[(3, 2)] - 10.791).abs() < 1e-12);
        assert_eq!(b.as_slice(), &[0.0, 1.0, 0.0, -1.0]);
        let fd = fd_jacobian(|x| cp().f_at(x), &[0.0; 4], 1e-6);
        assert!(fd.sub(&a).unwrap().max_abs() < 1e-5);
        let rel = fd.sub(&a).unwrap().max_abs() / a.max_abs();
        assert!(rel < 1e-6);
    }

    #[test]
    fn linearize_rejects_shifted_equilibrium() {
        let p = LinearPlant::new(Mat::identity(1), Mat::identity(1)).unwrap();
        assert!(linearize(&p).is_ok());
        struct Shifted;
        impl InputAffinePlant for Shifted {
            fn state_dim(&self) -> usize {
                1
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn drift_and_gain<G: Graph>(&self, g: &mut G, x: &G::V) -> (G::V, G::V) {
                let one = g.scalar(1.0);
                (g.add(x, &one), one)
            }
        }
        assert!(matches!(linearize(&Shifted), Err(Error::NotEquilibrium(_))));
    }

    #[test]
    fn double_integrator_linearization() {
        let (a, b) = linearize(&LinearPlant::double_integrator()).unwrap();
        assert_eq!(a.to_rows(), vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(b.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn tip_positions() {
        assert_eq!(tip_position(&[0.0; 4], 1.0), [0.0, 1.0]);
        let t = tip_position(&[0.0, 0.0, FRAC_PI_2, 0.0], 1.0);
        assert!((t[0] - 1.0).abs() < 1e-15 && t[1].abs() < 1e-15);
        let t = tip_position(&[2.0, 0.0, PI, 0.0], 1.0);
        assert!((t[0] - 2.0).abs() < 1e-15 && (t[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn penalty_branches() {
        let f = ObstacleField::default();
        let (r, eps) = (f.radius, f.eps_safe);
        assert_eq!(obstacle_penalty(r + eps, &f), 0.0);
        assert!((obstacle_penalty(r, &f) - eps * eps).abs() < 1e-15);
        assert!((obstacle_penalty(r - 1e-15, &f) - eps * eps).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_continuous_and_non_increasing() {
        let f = ObstacleField::default();
        for edge in [f.radius, f.radius + f.eps_safe] {
            let l = obstacle_penalty(edge - 1e-14, &f);
            let r = obstacle_penalty(edge, &f);
            assert!((l - r).abs() < 1e-12);
        }
        let n = 10_000;
        let top = 2.0 * (f.radius + f.eps_safe);
        let mut prev = f64::INFINITY;
        for k in 0..=n {
            let d = top * k as f64 / n as f64;
            let v = obstacle_penalty(d, &f);
            assert!(v <= prev && v >= 0.0);
            if d >= f.radius + f.eps_safe {
                assert_eq!(v, 0.0);
            }
            prev = v;
        }
    }

    #[test]
    fn penalty_node_matches_scalar() {
        let f = ObstacleField::default();
        for d in [0.0, 0.1, 0.18, 0.2, 0.23, 0.5] {
            let mut g = Eval::new(&[]);
            let dv = g.scalar(d);
            let p = obstacle_penalty_node(&mut g, &dv, &f);
            assert!((p[0] - obstacle_penalty(d, &f)).abs() < 1e-14);
        }
    }

    #[test]
    fn stage_cost_cases() {
        let task = ObstacleTask::default();
        assert_eq!(task.at(&[0.0; 4]), 0.0);
        let mut quad = task.clone();
        quad.field.gamma2 = 0.0;
        let x = [0.3, -0.2, 0.5, 1.0];
        assert!((quad.at(&x) - 1.38).abs() < 1e-14);

        // Tip at distance R straight below c1 = (0, 0.45): theta = 0, cart far
        // from c2, tip (p, 1) at distance R from (p, 0.45)? Move the obstacle
        // instead so that the tip (0, 1) sits exactly R above it.
        let mut t2 = task.clone();
        t2.field.centers = vec![[0.0, 1.0 - t2.field.radius], [5.0, 5.0]];
        let x = [0.0; 4];
        let d = t2.distances(&x);
        assert!((d[0] - t2.field.radius).abs() < 1e-12);
        let expected = t2.field.gamma2 * t2.field.eps_safe.powi(2);
        assert!((t2.at(&x) - expected).abs() < 1e-9);
    }
}
