//! Rewriting a stabilizing dynamic controller `x_c' = f_c(x_c, x)`,
//! `u = h_c(x_c, x)` as a Q-policy with `q = (q1, q2)`, `n_q = n + n_c`:
//!
//! ```text
//! eta   = q1 + (x - xhat)
//! f_q   = [f(eta) - s(x - xhat) + g(eta) h_c(q2, eta);  f_c(q2, eta)]
//! h_q   = -K q1 + h_c(q2, eta)
//! ```
//!
//! Started from `xhat(0) = q1(0)` and `q2(0) = x_c(0)`, the two closed loops
//! produce the same input trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lincontrol::{is_hurwitz, LinearPair};
use crate::linalg::{fd_jacobian, norm, Mat};
use crate::plant::InputAffinePlant;
use crate::policy::{check_conditions, simulate_c_loop, simulate_q_loop, GenericCController, GenericQPolicy, Map1, FD_STEP};

/// Default error field `s(zeta) = -zeta`.
pub fn default_error_field<'a>() -> Map1<'a> {
    Box::new(|z| z.iter().map(|v| -v).collect())
}

/// Builds the equivalent Q-policy. `K` must satisfy condition i and `s`
/// condition ii; violations are reported as [`Error::Precondition`].
pub fn necessity_transform<'a, P: InputAffinePlant>(
    c: &'a GenericCController<'a>,
    plant: &'a P,
    pair: &LinearPair,
    k: Mat,
    s: Map1<'a>,
) -> Result<GenericQPolicy<'a>> {
    let (n, n_c, m) = (c.n, c.n_c, c.m);
    if plant.state_dim() != n || plant.input_dim() != m || k.shape() != (m, n) || c.x_c0.len() != n_c {
        return Err(Error::Dim { op: "necessity_transform", detail: format!("n={n}, n_c={n_c}, m={m}, K {:?}", k.shape()) });
    }
    if !is_hurwitz(&pair.closed_loop(&k)?) {
        return Err(Error::Precondition("condition i: A + B K is not Hurwitz".into()));
    }
    let zero = vec![0.0; n];
    if norm(&s(&zero)) != 0.0 {
        return Err(Error::Precondition("condition ii: s(0) != 0".into()));
    }
    if !is_hurwitz(&fd_jacobian(|z| s(z), &zero, FD_STEP)) {
        return Err(Error::Precondition("condition ii: ds/dzeta(0) is not Hurwitz".into()));
    }
    let s = std::rc::Rc::new(s);
    let (s_field, s_fq) = (s.clone(), s);
    let eta = move |q: &[f64], xhat: &[f64], x: &[f64]| -> Vec<f64> {
        // x - xhat first, so that eta = q1 exactly whenever x == xhat.
        (0..n).map(|i| q[i] + (x[i] - xhat[i])).collect()
    };
    let k_neg = k.scale(-1.0);
    Ok(GenericQPolicy {
        n,
        n_q: n + n_c,
        m,
        k,
        s: Box::new(move |z| s_field(z)),
        f_q: Box::new(move |q, xhat, x| {
            let e: Vec<f64> = x.iter().zip(xhat).map(|(a, b)| a - b).collect();
            let eta = eta(q, xhat, x);
            let q2 = &q[n..];
            let hc = (c.h_c)(q2, &eta);
            let f_eta = plant.f_at(&eta);
            let g_hc = plant.g_at(&eta).matvec(&hc).expect("g h_c");
            let se = s_fq(&e);
            let mut out: Vec<f64> = (0..n).map(|i| f_eta[i] - se[i] + g_hc[i]).collect();
            out.extend((c.f_c)(q2, &eta));
            out
        }),
        h_q: Box::new(move |q, xhat, x| {
            let eta = eta(q, xhat, x);
            let hc = (c.h_c)(&q[n..], &eta);
            let kq = k_neg.matvec(&q[..n]).expect("K q1");
            kq.iter().zip(&hc).map(|(a, b)| a + b).collect()
        }),
    })
}

/// Initial closed-loop state of the transformed policy:
/// `(x0, xhat0, q1(0), q2(0)) = (x0, q1_0, q1_0, x_c(0))`.
pub fn matched_initial_state(c: &GenericCController, x0: &[f64], q1_0: &[f64]) -> Vec<f64> {
    let mut z = x0.to_vec();
    z.extend(q1_0);
    z.extend(q1_0);
    z.extend(&c.x_c0);
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub max_input_deviation: f64,
    pub max_state_deviation: f64,
    /// `max |xhat - q1|` over the grid.
    pub max_internal_gap: f64,
    pub steps: usize,
}

/// Simulates both closed loops on the same RK4 grid from `x0` and the given
/// transformed-policy initial state, and compares them pointwise.
pub fn equivalence_check<P: InputAffinePlant>(
    c: &GenericCController,
    q: &GenericQPolicy,
    plant: &P,
    x0: &[f64],
    z0_q: &[f64],
    horizon: f64,
    h: f64,
) -> Result<EquivalenceReport> {
    let steps = (horizon / h).round() as usize;
    if steps == 0 || ((steps as f64) * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} is not a multiple of h = {h}")));
    }
    let rc = simulate_c_loop(c, plant, x0, h, steps)?;
    let rq = simulate_q_loop(q, plant, z0_q, h, steps)?;
    let n = c.n;
    let dist = |a: &[f64], b: &[f64]| norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    let mut rep = EquivalenceReport { max_input_deviation: 0.0, max_state_deviation: 0.0, max_internal_gap: 0.0, steps };
    for k in 0..=steps {
        rep.max_input_deviation = rep.max_input_deviation.max(dist(&rc.u[k], &rq.u[k]));
        rep.max_state_deviation = rep.max_state_deviation.max(dist(&rc.z[k][..n], &rq.z[k][..n]));
        rep.max_internal_gap = rep.max_internal_gap.max(dist(&rq.z[k][n..2 * n], &rq.z[k][2 * n..3 * n]));
    }
    Ok(rep)
}

/// Whether the original closed loop is locally exponentially stable, judged
/// by its Jacobian at the origin.
pub fn source_is_les<P: InputAffinePlant>(c: &GenericCController, plant: &P) -> bool {
    is_hurwitz(&crate::policy::CLoop { controller: c, plant }.jacobian())
}

/// Transform plus condition report, as printed by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub n_q: usize,
    pub conditions: crate::policy::ConditionReport,
    pub source_les: bool,
    pub equivalence: Vec<EquivalenceReport>,
}

pub fn necessity_report<P: InputAffinePlant>(
    c: &GenericCController,
    plant: &P,
    pair: &LinearPair,
    k: Mat,
    x0s: &[Vec<f64>],
    horizon: f64,
    h: f64,
) -> Result<NecessityReport> {
    let q = necessity_transform(c, plant, pair, k, default_error_field())?;
    let conditions = check_conditions(&q, pair, 0)?;
    let equivalence = x0s
        .iter()
        .map(|x0| equivalence_check(c, &q, plant, x0, &matched_initial_state(c, x0, x0), horizon, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(NecessityReport { n_q: q.n_q, conditions, source_les: source_is_les(c, plant), equivalence })
}
