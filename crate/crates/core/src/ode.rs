//! Fixed-step classical RK4 over [`Graph`] values, so the same code path
//! yields plain trajectories or a differentiable tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph};
use crate::error::{Error, Result};

/// Autonomous vector field integrated by [`rk4_step`].
pub trait Dynamics<G: Graph> {
    /// Called once per macro-step on the grid-point state, before the four
    /// stages. Used by policies that hold their output across a step.
    fn begin_step(&mut self, _g: &mut G, _z: &G::V) -> Result<()> {
        Ok(())
    }

    fn field(&mut self, g: &mut G, z: &G::V) -> Result<G::V>;

    /// Control input at a grid point, for reporting only.
    fn input(&mut self, _g: &mut G, _z: &G::V) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

/// Adapts a closure into [`Dynamics`].
pub struct FnField<F>(pub F);

impl<G: Graph, F: FnMut(&mut G, &G::V) -> G::V> Dynamics<G> for FnField<F> {
    fn field(&mut self, g: &mut G, z: &G::V) -> Result<G::V> {
        Ok((self.0)(g, z))
    }
}

fn checked<G: Graph>(g: &G, v: G::V, stage: usize, step: Option<usize>) -> Result<G::V> {
    if g.value(&v).iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFiniteStage { stage, step })
    }
}

fn step_impl<G: Graph, D: Dynamics<G>>(
    g: &mut G,
    sys: &mut D,
    z: &G::V,
    h: f64,
    step: Option<usize>,
) -> Result<G::V> {
    let k1 = sys.field(g, z)?;
    let k1 = checked(g, k1, 1, step)?;
    let z2 = g.axpy(z, 0.5 * h, &k1);
    let k2 = sys.field(g, &z2)?;
    let k2 = checked(g, k2, 2, step)?;
    let z3 = g.axpy(z, 0.5 * h, &k2);
    let k3 = sys.field(g, &z3)?;
    let k3 = checked(g, k3, 3, step)?;
    let z4 = g.axpy(z, h, &k3);
    let k4 = sys.field(g, &z4)?;
    let k4 = checked(g, k4, 4, step)?;
    let inner = g.add(&k2, &k3);
    let outer = g.add(&k1, &k4);
    let s = g.axpy(&outer, 2.0, &inner);
    Ok(g.axpy(z, h / 6.0, &s))
}

/// One classical RK4 step `z + (h/6)(k1 + 2k2 + 2k3 + k4)`.
pub fn rk4_step<G: Graph, D: Dynamics<G>>(g: &mut G, sys: &mut D, z: &G::V, h: f64) -> Result<G::V> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    step_impl(g, sys, z, h, None)
}

/// Integrates `steps` RK4 steps and returns only the final state.
pub fn integrate<G: Graph, D: Dynamics<G>>(
    g: &mut G,
    sys: &mut D,
    z0: G::V,
    h: f64,
    steps: usize,
) -> Result<G::V> {
    validate(h, steps)?;
    let mut z = z0;
    for k in 0..steps {
        sys.begin_step(g, &z)?;
        z = step_impl(g, sys, &z, h, Some(k))?;
    }
    Ok(z)
}

fn validate(h: f64, steps: usize) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("rollout needs at least one step".into()));
    }
    Ok(())
}

/// Recorded trajectory on the uniform grid `t_k = k h`, `k = 0..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub h: f64,
    pub t: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Index of the running-cost accumulator inside `z`, if any.
    pub cost_index: Option<usize>,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.steps() as f64
    }

    /// Accumulated cost at `T`.
    pub fn cost(&self) -> f64 {
        let i = self.cost_index.expect("rollout without a cost accumulator");
        self.z.last().expect("non-empty")[i]
    }

    pub fn final_state(&self) -> &[f64] {
        self.z.last().expect("non-empty")
    }
}

/// Integrates and records the state and input at every grid point.
pub fn rollout<G: Graph, D: Dynamics<G>>(
    g: &mut G,
    sys: &mut D,
    z0: G::V,
    h: f64,
    steps: usize,
    cost_index: Option<usize>,
) -> Result<(Rollout, G::V)> {
    validate(h, steps)?;
    let mut rec = Rollout {
        h,
        t: Vec::with_capacity(steps + 1),
        z: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        cost_index,
    };
    let mut z = z0;
    for k in 0..=steps {
        sys.begin_step(g, &z)?;
        rec.t.push(k as f64 * h);
        rec.z.push(g.value(&z).to_vec());
        let u = sys.input(g, &z)?;
        rec.u.push(u);
        if k < steps {
            z = step_impl(g, sys, &z, h, Some(k))?;
        }
    }
    Ok((rec, z))
}

/// Plain-value convenience around [`rollout`].
pub fn simulate<D: for<'p> Dynamics<Eval<'p>>>(
    sys: &mut D,
    z0: &[f64],
    h: f64,
    steps: usize,
    cost_index: Option<usize>,
) -> Result<Rollout> {
    let mut g = Eval::new(&[]);
    let z = g.constant(z0);
    rollout(&mut g, sys, z, h, steps, cost_index).map(|(r, _)| r)
}

/// Scalar field `f(z)` on plain slices as [`Dynamics`].
pub struct PlainField<F>(pub F);

impl<'p, F: FnMut(&[f64]) -> Vec<f64>> Dynamics<Eval<'p>> for PlainField<F> {
    fn field(&mut self, _g: &mut Eval<'p>, z: &Vec<f64>) -> Result<Vec<f64>> {
        Ok((self.0)(z))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderEstimate {
    pub error_h: f64,
    pub error_half: f64,
    /// `log2(error_h / error_half)`; `None` when both errors vanish.
    pub order: Option<f64>,
}

impl OrderEstimate {
    pub fn ratio(&self) -> f64 {
        self.error_h / self.error_half
    }

    pub fn is_exact(&self) -> bool {
        self.order.is_none()
    }
}

/// Richardson estimate of the global order of RK4 on `f` against `exact(T)`.
pub fn convergence_order<F>(f: F, exact: &[f64], z0: &[f64], horizon: f64, h: f64) -> Result<OrderEstimate>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let err = |step: f64| -> Result<f64> {
        let n = (horizon / step).round() as usize;
        let r = simulate(&mut PlainField(|z: &[f64]| f(z)), z0, step, n, None)?;
        Ok(r.final_state().iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let error_h = err(h)?;
    let error_half = err(0.5 * h)?;
    let order = (error_h > 0.0 || error_half > 0.0).then(|| (error_h / error_half).log2());
    Ok(OrderEstimate { error_h, error_half, order })
}
