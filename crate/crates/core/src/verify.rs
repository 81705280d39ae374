//! Post-hoc checks: closed-loop Jacobian at the origin, exponential decay
//! fits and the truncated-cost tail bound.
//!
//! Jacobians are central differences on the plain-value field, independent
//! of the tape that training differentiates through.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lincontrol::{hurwitz_verdict, HurwitzVerdict};
use crate::linalg::{fd_jacobian, norm, Mat};
use crate::ode::Rollout;
use crate::plant::{InputAffinePlant, StageCost};
use crate::policy::{Policy, FD_STEP};
use crate::training::simulate_policy;

/// Tolerance on `|F(0)|` before linearizing.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

/// Jacobian of the closed-loop field over `(x, controller state)` at the
/// origin.
pub fn closed_loop_jacobian<P: InputAffinePlant>(policy: &Policy, params: &[f64], plant: &P) -> Result<Mat> {
    let zero = vec![0.0; policy.cost_index()];
    let f0 = norm(&policy.augmented_field(params, plant, &zero)?);
    if !(f0 <= EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium(f0));
    }
    let field = |z: &[f64]| policy.augmented_field(params, plant, z).unwrap_or_else(|_| vec![f64::NAN; z.len()]);
    Ok(fd_jacobian(field, &zero, FD_STEP))
}

/// Hurwitz verdict of [`closed_loop_jacobian`].
pub fn structural_verdict<P: InputAffinePlant>(policy: &Policy, params: &[f64], plant: &P) -> Result<HurwitzVerdict> {
    Ok(hurwitz_verdict(&closed_loop_jacobian(policy, params, plant)?))
}

/// `|x(t)| ~ k |x(0)| exp(-lambda t)` fitted on a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub k: f64,
    pub lambda: f64,
    pub window: (f64, f64),
    /// RMSE of the log-linear fit.
    pub residual: f64,
    /// `|x(0)|`, the tested radius.
    pub c: f64,
}

/// Least-squares line through `(t, ln |x(t)|)` for samples inside `window`.
/// `norms[0]` is taken as `|x(0)|`.
pub fn fit_decay(t: &[f64], norms: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if t.len() != norms.len() || t.is_empty() {
        return Err(Error::Dim { op: "fit_decay", detail: format!("{} times, {} norms", t.len(), norms.len()) });
    }
    let tol = 1e-9 * window.1.abs().max(1.0);
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= window.0 - tol && t[i] <= window.1 + tol).collect();
    if idx.len() < 2 || window.0 >= window.1 {
        return Err(Error::InvalidArgument(format!("window {window:?} holds {} samples", idx.len())));
    }
    if let Some(&i) = idx.iter().find(|&&i| !(norms[i] > 0.0)) {
        return Err(Error::NonPositiveNorm(i, norms[i]));
    }
    if !(norms[0] > 0.0) {
        return Err(Error::NonPositiveNorm(0, norms[0]));
    }
    let n = idx.len() as f64;
    let xs: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| norms[i].ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(DecayFit { k: intercept.exp() / norms[0], lambda: -slope, window, residual: (rss / n).sqrt(), c: norms[0] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub t_cut: f64,
    pub p: f64,
    pub m: f64,
    /// Common decay rate `min(lambda_x, lambda_u)`.
    pub gamma: f64,
    /// Envelope constants: `|x| <= A e^{-gamma t}`, `|u| <= B e^{-gamma t}`
    /// on the tail window.
    pub a: f64,
    pub b: f64,
    pub bound: f64,
    /// Accumulated cost between `t_cut` and the end of the rollout.
    pub actual: f64,
    /// `l <= M (|x|^p + |u|^p)` at every tail grid point.
    pub pointwise_ok: bool,
    /// `None` when the pointwise bound fails or no decay was found.
    pub pass: Option<bool>,
}

/// Compares the accumulated cost after `t_cut` with
/// `M (A^p + B^p) / (p gamma) exp(-p gamma t_cut)`.
///
/// `n` is the plant state dimension inside `rollout.z`; `stage(x, u)` is the
/// running cost whose integral sits at `rollout.cost_index`.
pub fn tail_bound_check(
    rollout: &Rollout,
    n: usize,
    stage: impl Fn(&[f64], &[f64]) -> f64,
    p: f64,
    m: f64,
    t_cut: f64,
) -> Result<TailReport> {
    if !(p > 0.0 && m > 0.0) {
        return Err(Error::InvalidArgument(format!("need p > 0 and M > 0, got p = {p}, M = {m}")));
    }
    let t_end = *rollout.t.last().expect("non-empty rollout");
    let tol = 1e-9 * t_end.max(1.0);
    let start = rollout.t.iter().position(|&t| t >= t_cut - tol).ok_or_else(|| {
        Error::InvalidArgument(format!("t_cut = {t_cut} beyond the rollout end {t_end}"))
    })?;
    let xn: Vec<f64> = rollout.z.iter().map(|z| norm(&z[..n])).collect();
    let un: Vec<f64> = rollout.u.iter().map(|u| norm(u)).collect();
    let ci = rollout.cost_index.ok_or_else(|| Error::InvalidArgument("rollout has no cost accumulator".into()))?;
    let actual = rollout.cost() - rollout.z[start][ci];

    let pointwise_ok = (start..rollout.t.len()).all(|i| {
        let l = stage(&rollout.z[i][..n], &rollout.u[i]);
        l <= m * (xn[i].powf(p) + un[i].powf(p)) * (1.0 + 1e-12) + 1e-300
    });

    // Rates are fitted to the running envelope max_{s >= t} |.|(s): it majorizes
    // the signal, and zero crossings of a scalar input do not bend the fit.
    let rate = |norms: &[f64]| -> Result<Option<f64>> {
        let mut env = norms[start..].to_vec();
        for i in (0..env.len().saturating_sub(1)).rev() {
            env[i] = env[i].max(env[i + 1]);
        }
        let positive = env.iter().take_while(|v| **v > 0.0).count();
        if positive < 2 {
            return Ok(None);
        }
        let t = &rollout.t[start..start + positive];
        Ok(Some(fit_decay(t, &env[..positive], (t[0], t[positive - 1]))?.lambda))
    };
    let gamma = match (rate(&xn)?, rate(&un)?) {
        (None, None) => f64::INFINITY,
        (a, b) => a.unwrap_or(f64::INFINITY).min(b.unwrap_or(f64::INFINITY)),
    };
    let mut rep = TailReport { t_cut, p, m, gamma, a: 0.0, b: 0.0, bound: 0.0, actual, pointwise_ok, pass: None };
    if gamma.is_infinite() {
        // Identically zero tail.
        rep.pass = pointwise_ok.then_some(actual <= 0.0);
        return Ok(rep);
    }
    if !(gamma > 0.0) {
        return Ok(rep);
    }
    let env = |norms: &[f64]| (start..norms.len()).map(|i| norms[i] * (gamma * rollout.t[i]).exp()).fold(0.0, f64::max);
    rep.a = env(&xn);
    rep.b = env(&un);
    rep.bound = m * (rep.a.powf(p) + rep.b.powf(p)) / (p * gamma) * (-p * gamma * t_cut).exp();
    if pointwise_ok {
        rep.pass = Some(actual <= rep.bound);
    }
    Ok(rep)
}

/// Decay and tail verification of one policy from one initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheck {
    pub x0: Vec<f64>,
    pub final_norm: f64,
    pub decay: Option<DecayFit>,
    pub tail: Option<TailReport>,
}

/// Rollout from `x0` over `[0, horizon]`, decay fit on the final half and
/// tail check from the midpoint with `p = 2` and `M` = the quadratic weight.
pub fn check_trajectory<P: InputAffinePlant, C: StageCost>(
    policy: &Policy,
    params: &[f64],
    plant: &P,
    cost: &C,
    quad_weight: f64,
    x0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<TrajectoryCheck> {
    let steps = crate::training::steps_for(horizon, h)?;
    let r = simulate_policy(policy, params, plant, cost, x0, h, steps)?;
    let n = plant.state_dim();
    let norms: Vec<f64> = r.z.iter().map(|z| norm(&z[..n])).collect();
    let decay = fit_decay(&r.t, &norms, (horizon / 2.0, horizon)).ok();
    let tail = tail_bound_check(&r, n, |x, _| cost.at(x), 2.0, quad_weight, horizon / 2.0).ok();
    Ok(TrajectoryCheck { x0: x0.to_vec(), final_norm: *norms.last().unwrap(), decay, tail })
}

/// Uniform direction on the sphere of radius `r` in `R^n`.
pub fn sphere_point(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let len = norm(&v);
        if len > 1e-12 {
            return v.iter().map(|x| x * r / len).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesReport {
    pub kind: String,
    /// Verdict at the given parameters; `None` when the class has no
    /// structural guarantee.
    pub hurwitz: Option<bool>,
    /// Fraction of random structural parameter draws whose closed loop is
    /// Hurwitz (Youla only).
    pub hurwitz_pass_rate: Option<f64>,
    pub decay_fits: Vec<Option<DecayFit>>,
    pub tail_checks: Vec<Option<TailReport>>,
    /// Largest tested initial radius from which every sampled trajectory
    /// ends below its initial norm with a positive decay rate on the final
    /// half of the horizon.
    pub largest_converged_radius: Option<f64>,
}

pub struct LesOptions {
    pub draws: usize,
    pub radius: f64,
    pub horizon: f64,
    pub h: f64,
    pub quad_weight: f64,
    pub seed: u64,
    pub radii: Vec<f64>,
}

impl Default for LesOptions {
    fn default() -> Self {
        Self { draws: 100, radius: 0.05, horizon: 10.0, h: 0.01, quad_weight: 1.0, seed: 0, radii: vec![0.05, 0.1, 0.2, 0.4] }
    }
}

/// Structural pass rate over random parameter draws (floor 0.05, entries
/// `N(0, 0.5^2)`) plus decay/tail checks of the given parameters from
/// `draws` initial states on the sphere of radius `opts.radius`.
pub fn les_report<P: InputAffinePlant, C: StageCost>(
    policy: &Policy,
    params: &[f64],
    plant: &P,
    cost: &C,
    opts: &LesOptions,
) -> Result<LesReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let structural = policy.kind().is_structural();
    let hurwitz = if structural { Some(structural_verdict(policy, params, plant)?.is_hurwitz()) } else { None };
    let hurwitz_pass_rate = match policy {
        Policy::Youla(y) if opts.draws > 0 => {
            let mut pass = 0;
            for _ in 0..opts.draws {
                let draw = y.random_params(&mut rng, 0.5, 0.05);
                if structural_verdict(policy, &draw, plant)?.is_hurwitz() {
                    pass += 1;
                }
            }
            Some(pass as f64 / opts.draws as f64)
        }
        _ => None,
    };
    let n = plant.state_dim();
    let mut decay_fits = Vec::new();
    let mut tail_checks = Vec::new();
    for _ in 0..opts.draws {
        let x0 = sphere_point(&mut rng, n, opts.radius);
        match check_trajectory(policy, params, plant, cost, opts.quad_weight, &x0, opts.horizon, opts.h) {
            Ok(c) => {
                decay_fits.push(c.decay);
                tail_checks.push(c.tail);
            }
            Err(_) => {
                decay_fits.push(None);
                tail_checks.push(None);
            }
        }
    }
    let mut largest = None;
    let steps = crate::training::steps_for(opts.horizon, opts.h)?;
    'radii: for &r in &opts.radii {
        for _ in 0..10 {
            let x0 = sphere_point(&mut rng, n, r);
            let ok = simulate_policy(policy, params, plant, cost, &x0, opts.h, steps)
                .map(|ro| {
                    let norms: Vec<f64> = ro.z.iter().map(|z| norm(&z[..n])).collect();
                    let decaying = fit_decay(&ro.t, &norms, (opts.horizon / 2.0, opts.horizon)).is_ok_and(|f| f.lambda > 0.0);
                    decaying && norms[norms.len() - 1] < r
                })
                .unwrap_or(false);
            if !ok {
                break 'radii;
            }
        }
        largest = Some(r);
    }
    Ok(LesReport {
        kind: policy.kind().to_string(),
        hurwitz,
        hurwitz_pass_rate,
        decay_fits,
        tail_checks,
        largest_converged_radius: largest,
    })
}
