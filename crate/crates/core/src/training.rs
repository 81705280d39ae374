//! Batched policy-gradient training through unrolled RK4 rollouts.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Graph, Loss};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::ode::{integrate, rollout, Rollout};
use crate::plant::{InputAffinePlant, ObstacleTask, StageCost};
use crate::policy::{ClosedLoop, Policy, PolicyArch, PolicyKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub policy: PolicyKind,
    /// Horizon `T` in seconds; must be a whole number of steps.
    pub horizon: f64,
    pub step: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Per-coordinate standard deviation of the initial states.
    pub sigma0: f64,
    pub seed: u64,
    /// Structural Hurwitz spot check period in epochs (Youla only, 0 = off).
    pub hurwitz_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Youla,
            horizon: 4.0,
            step: 0.01,
            batch: 16,
            epochs: 100,
            lr: 5e-3,
            sigma0: 0.05,
            seed: 0,
            hurwitz_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn steps(&self) -> Result<usize> {
        steps_for(self.horizon, self.step)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::InvalidArgument("sigma0 must be positive".into()));
        }
        Ok(())
    }
}

/// `N` with `N h = T`.
pub fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("need T > 0 and h > 0, got T = {horizon}, h = {h}")));
    }
    let n = (horizon / h).round();
    if n < 1.0 || (n * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidArgument(format!("T = {horizon} is not a whole number of steps h = {h}")));
    }
    Ok(n as usize)
}

/// `batch` i.i.d. draws from `N(0, sigma0^2 I_n)`.
pub fn sample_init(batch: usize, n: usize, sigma0: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma0 = {sigma0} must be positive")));
    }
    let dist = Normal::new(0.0, sigma0).expect("valid normal");
    Ok((0..batch).map(|_| (0..n).map(|_| dist.sample(rng)).collect()).collect())
}

/// `J_T` read from the rollout's cost accumulator.
pub fn truncated_cost(r: &Rollout) -> f64 {
    r.cost()
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// Applies one update. Returns `false` and leaves everything untouched
    /// when a gradient entry is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<bool> {
        if params.len() != grads.len() || grads.len() != self.m.len() {
            return Err(Error::Dim { op: "adam_step", detail: format!("{} params, {} grads, {} state", params.len(), grads.len(), self.m.len()) });
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Ok(false);
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(true)
    }
}

/// `J_T` of one closed-loop trajectory as a function of the parameters.
pub struct TrajectoryLoss<'a, P, C> {
    pub policy: &'a Policy,
    pub plant: &'a P,
    pub cost: &'a C,
    pub x0: &'a [f64],
    pub h: f64,
    pub steps: usize,
}

impl<P: InputAffinePlant, C: StageCost> Loss for TrajectoryLoss<'_, P, C> {
    fn eval<G: Graph>(&self, g: &mut G) -> Result<G::V> {
        let z0 = self.policy.initial_state(g, self.x0)?;
        let mut cl = ClosedLoop::new(self.policy, self.plant, self.cost);
        let z = integrate(g, &mut cl, z0, self.h, self.steps)?;
        Ok(g.at(&z, self.policy.cost_index()))
    }
}

/// Recorded closed-loop rollout at fixed parameters.
pub fn simulate_policy<P: InputAffinePlant, C: StageCost>(
    policy: &Policy,
    params: &[f64],
    plant: &P,
    cost: &C,
    x0: &[f64],
    h: f64,
    steps: usize,
) -> Result<Rollout> {
    let mut g = autodiff::Eval::new(params);
    let z0 = policy.initial_state(&mut g, x0)?;
    let mut cl = ClosedLoop::new(policy, plant, cost);
    rollout(&mut g, &mut cl, z0, h, steps, Some(policy.cost_index())).map(|(r, _)| r)
}

#[cfg(feature = "parallel")]
fn map_batch<T: Send, F: Fn(&Vec<f64>) -> T + Sync + Send>(xs: &[Vec<f64>], f: F) -> Vec<T> {
    use rayon::prelude::*;
    xs.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_batch<T, F: Fn(&Vec<f64>) -> T>(xs: &[Vec<f64>], f: F) -> Vec<T> {
    xs.iter().map(f).collect()
}

/// Per-trajectory costs (non-finite or failed rollouts report `+inf`).
pub fn batch_costs<P: InputAffinePlant, C: StageCost>(
    policy: &Policy,
    params: &[f64],
    plant: &P,
    cost: &C,
    x0s: &[Vec<f64>],
    h: f64,
    steps: usize,
) -> Vec<f64> {
    map_batch(x0s, |x0| {
        let loss = TrajectoryLoss { policy, plant, cost, x0, h, steps };
        autodiff::value(params, &loss).ok().filter(|v| v.is_finite()).unwrap_or(f64::INFINITY)
    })
}

/// Mean batch cost, its gradient and the per-trajectory costs. The gradient
/// is `None` when any trajectory failed.
pub struct BatchGrad {
    pub mean: f64,
    pub grad: Option<Vec<f64>>,
    pub costs: Vec<f64>,
}

pub fn batch_grad<P: InputAffinePlant, C: StageCost>(
    policy: &Policy,
    params: &[f64],
    plant: &P,
    cost: &C,
    x0s: &[Vec<f64>],
    h: f64,
    steps: usize,
) -> BatchGrad {
    let per: Vec<Option<(f64, Vec<f64>)>> = map_batch(x0s, |x0| {
        let loss = TrajectoryLoss { policy, plant, cost, x0, h, steps };
        autodiff::grad(params, &loss).ok().filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
    });
    let costs: Vec<f64> = per.iter().map(|p| p.as_ref().map_or(f64::INFINITY, |(v, _)| *v)).collect();
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let grad = if per.iter().all(Option::is_some) {
        let mut acc = vec![0.0; params.len()];
        for (_, g) in per.iter().flatten() {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let scale = 1.0 / x0s.len() as f64;
        acc.iter_mut().for_each(|a| *a *= scale);
        Some(acc)
    } else {
        None
    };
    BatchGrad { mean, grad, costs }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_cost: f64,
    pub min_cost: f64,
    pub max_cost: f64,
    /// The batch had a failed or non-finite trajectory; parameters were
    /// rolled back and no update was applied.
    pub flagged: bool,
}

/// Batch statistics before each epoch's update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub epochs: Vec<EpochStats>,
    /// Seconds per epoch. Not part of the reproducible record.
    pub wall_secs: Vec<f64>,
}

impl LearningCurve {
    pub const CSV_HEADER: &'static str = "epoch,mean_cost,min_cost,max_cost";

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Mean cost of a 1-based epoch.
    pub fn mean_at(&self, epoch: usize) -> Option<f64> {
        self.epochs.get(epoch.checked_sub(1)?).map(|e| e.mean_cost)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.mean_cost, e.min_cost, e.max_cost));
        }
        out
    }

    pub fn flagged_epochs(&self) -> Vec<usize> {
        self.epochs.iter().filter(|e| e.flagged).map(|e| e.epoch).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HurwitzSpot {
    pub epoch: usize,
    pub hurwitz: bool,
}

pub struct TrainResult {
    pub policy: Policy,
    pub params: Vec<f64>,
    pub curve: LearningCurve,
    /// Structural checks during training (Youla only).
    pub spot_checks: Vec<HurwitzSpot>,
    /// Structural check at the final parameters; `None` for classes without
    /// the guarantee.
    pub final_hurwitz: Option<bool>,
}

/// Trains one policy on the obstacle task with the fixed gain `k`.
///
/// The parameter initialization and all batches come from one ChaCha stream
/// seeded by `cfg.seed`, so the curve is a deterministic function of the
/// configuration. An epoch whose batch contains a failed trajectory is
/// flagged and its parameters and optimizer state are restored.
pub fn train(cfg: &TrainConfig, arch: &PolicyArch, task: &ObstacleTask, k: &Mat) -> Result<TrainResult> {
    train_with(cfg, arch, task, k, |_| {})
}

/// [`train`] with a per-epoch callback.
pub fn train_with(
    cfg: &TrainConfig,
    arch: &PolicyArch,
    task: &ObstacleTask,
    k: &Mat,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainResult> {
    cfg.validate()?;
    let steps = cfg.steps()?;
    let plant = &task.plant;
    let policy = Policy::build(cfg.policy, k.clone(), arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = policy.init_params(&mut rng);
    let mut adam = Adam::new(params.len());
    let mut curve = LearningCurve::default();
    let mut spot_checks = Vec::new();
    let structural = cfg.policy.is_structural();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let x0s = sample_init(cfg.batch, plant.state_dim(), cfg.sigma0, &mut rng)?;
        let bg = batch_grad(&policy, &params, plant, task, &x0s, cfg.step, steps);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &bg.costs {
            min = min.min(*c);
            max = max.max(*c);
        }
        let mut flagged = true;
        if let Some(grad) = &bg.grad {
            let snapshot = (params.clone(), adam.clone());
            if adam.step(&mut params, grad, cfg.lr)? && params.iter().all(|p| p.is_finite()) {
                flagged = false;
            } else {
                (params, adam) = snapshot;
            }
        }
        let stats = EpochStats { epoch, mean_cost: bg.mean, min_cost: min, max_cost: max, flagged };
        on_epoch(&stats);
        curve.epochs.push(stats);
        curve.wall_secs.push(start.elapsed().as_secs_f64());
        if structural && cfg.hurwitz_every > 0 && epoch % cfg.hurwitz_every == 0 {
            let hurwitz = crate::verify::structural_verdict(&policy, &params, plant)?.is_hurwitz();
            spot_checks.push(HurwitzSpot { epoch, hurwitz });
        }
    }
    let final_hurwitz = if structural {
        Some(crate::verify::structural_verdict(&policy, &params, plant)?.is_hurwitz())
    } else {
        None
    };
    Ok(TrainResult { policy, params, curve, spot_checks, final_hurwitz })
}

/// Per-epoch mean, min and max of the mean cost across runs (the envelope
/// of several seeds).
pub fn envelope(curves: &[&LearningCurve]) -> Result<Vec<EpochStats>> {
    let len = curves.first().map_or(0, |c| c.len());
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidArgument("curves have different lengths".into()));
    }
    Ok((0..len)
        .map(|i| {
            let v: Vec<f64> = curves.iter().map(|c| c.epochs[i].mean_cost).collect();
            EpochStats {
                epoch: i + 1,
                mean_cost: v.iter().sum::<f64>() / v.len() as f64,
                min_cost: v.iter().copied().fold(f64::INFINITY, f64::min),
                max_cost: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                flagged: curves.iter().any(|c| c.epochs[i].flagged),
            }
        })
        .collect())
}

pub fn envelope_csv(rows: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_cost,min_cost,max_cost\n");
    for e in rows {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.mean_cost, e.min_cost, e.max_cost));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{simulate, PlainField};
    use crate::plant::{CartPole, LinearPlant, QuadraticCost};

    #[test]
    fn sampling() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_init(4, 4, 0.05, &mut a).unwrap(), sample_init(4, 4, 0.05, &mut b).unwrap());
        assert!(sample_init(1, 4, 0.0, &mut a).is_err());
        let xs = sample_init(10_000, 4, 0.05, &mut a).unwrap();
        for j in 0..4 {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / 1e4;
            let var = xs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / (1e4 - 1.0);
            let sd = var.sqrt();
            assert!((0.048..=0.052).contains(&sd), "coordinate {j}: {sd}");
        }
    }

    #[test]
    fn adam_first_steps() {
        let mut adam = Adam::new(1);
        let mut p = vec![0.0];
        assert!(adam.step(&mut p, &[1.0], 1e-2).unwrap());
        assert!((p[0] + 1e-2).abs() < 1e-9);
        let d1 = p[0];
        assert!(adam.step(&mut p, &[1.0], 1e-2).unwrap());
        let d2 = p[0] - d1;
        assert!(d2 < 0.0 && ((d2 - d1) / d1).abs() < 0.01);

        let mut adam = Adam::new(3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert!(!adam.step(&mut p, &[f64::NAN, 0.0, 0.0], 0.1).unwrap());
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn truncated_cost_cases() {
        // Frozen state, constant running cost c = 2.
        let r = simulate(&mut PlainField(|_: &[f64]| vec![0.0, 2.0]), &[1.0, 0.0], 0.01, 300, Some(1)).unwrap();
        assert!((truncated_cost(&r) - 6.0).abs() < 1e-12);
        // x' = -x, l = x^2: J_inf = 1/2, J_6 = (1 - e^-12)/2.
        let r = simulate(&mut PlainField(|z: &[f64]| vec![-z[0], z[0] * z[0]]), &[1.0, 0.0], 0.01, 600, Some(1)).unwrap();
        assert!((truncated_cost(&r) - 0.5).abs() < 1e-4);
    }

    fn cartpole_k() -> Mat {
        let (a, b) = crate::plant::linearize(&CartPole::default()).unwrap();
        let pair = crate::lincontrol::LinearPair::new(a, b).unwrap();
        crate::lincontrol::lqr(&pair, &Mat::diag(&[10.0, 1.0, 100.0, 1.0]), &Mat::diag(&[0.1])).unwrap().k
    }

    #[test]
    fn zero_state_costs_nothing() {
        let task = ObstacleTask::default();
        let p = Policy::build(PolicyKind::Youla, cartpole_k(), &PolicyArch::default()).unwrap();
        let mut params = p.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let Policy::Youla(y) = &p else { unreachable!() };
        for s in [y.phi1.params, y.phi2.params] {
            params[s.range()].iter_mut().for_each(|v| *v = 0.0);
        }
        let r = simulate_policy(&p, &params, &task.plant, &QuadraticCost { gamma1: 1.0 }, &[0.0; 4], 0.01, 100).unwrap();
        assert_eq!(truncated_cost(&r), 0.0);
    }

    #[test]
    fn zero_lr_single_epoch() {
        let cfg = TrainConfig { epochs: 1, batch: 1, lr: 0.0, horizon: 0.2, ..Default::default() };
        let task = ObstacleTask::default();
        let k = cartpole_k();
        let res = train(&cfg, &PolicyArch::default(), &task, &k).unwrap();
        assert_eq!(res.curve.len(), 1);
        let fresh = res.policy.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        assert_eq!(res.params, fresh);
        assert_eq!(res.final_hurwitz, Some(true));
    }

    #[test]
    fn deterministic_curves() {
        let cfg = TrainConfig { epochs: 3, batch: 4, horizon: 0.5, ..Default::default() };
        let task = ObstacleTask::default();
        let k = cartpole_k();
        for kind in [PolicyKind::Youla, PolicyKind::PureLstm] {
            let cfg = TrainConfig { policy: kind, ..cfg.clone() };
            let a = train(&cfg, &PolicyArch::default(), &task, &k).unwrap();
            let b = train(&cfg, &PolicyArch::default(), &task, &k).unwrap();
            assert_eq!(a.curve.to_csv(), b.curve.to_csv());
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let task = ObstacleTask::default();
        let p = Policy::build(PolicyKind::Youla, cartpole_k(), &PolicyArch::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = p.init_params(&mut rng);
        let x0s = sample_init(3, 4, 0.05, &mut rng).unwrap();
        let (h, steps) = (0.01, 100);
        let bg = batch_grad(&p, &params, &task.plant, &task, &x0s, h, steps);
        let grad = bg.grad.unwrap();
        let mean = |q: &[f64]| batch_costs(&p, q, &task.plant, &task, &x0s, h, steps).iter().sum::<f64>() / 3.0;
        use rand::Rng;
        let mut checked = 0;
        while checked < 5 {
            let i = rng.gen_range(0..params.len());
            if grad[i].abs() < 1e-8 {
                continue;
            }
            let eps = 1e-6 * (1.0 + params[i].abs());
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[i] += eps;
            dn[i] -= eps;
            let fd = (mean(&up) - mean(&dn)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() <= 1e-3 * grad[i].abs().max(fd.abs()), "coord {i}: {fd} vs {}", grad[i]);
            checked += 1;
        }
    }

    #[test]
    fn failed_trajectory_has_no_gradient() {
        // Unstable plant with a gain that does nothing: the state blows up.
        let plant = LinearPlant::new(Mat::diag(&[50.0]), Mat::diag(&[1.0])).unwrap();
        let p = Policy::build(PolicyKind::PureMlp, Mat::zeros(1, 1), &PolicyArch::default()).unwrap();
        let params = p.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let x0s = vec![vec![1.0]];
        let bg = batch_grad(&p, &params, &plant, &QuadraticCost { gamma1: 1e300 }, &x0s, 0.01, 2000);
        assert!(bg.grad.is_none());
        assert_eq!(bg.costs, vec![f64::INFINITY]);
    }
}
