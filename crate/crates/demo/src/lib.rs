//! WebAssembly bindings for the static page in `www/`. Every export takes
//! plain numbers and returns a JSON string; the `*_json` functions hold the
//! logic and are what the native tests call.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

use youla_core::lincontrol::{is_hurwitz, lqr, LinearPair};
use youla_core::linalg::Mat;
use youla_core::plant::{linearize, tip_position, ObstacleTask};
use youla_core::policy::{Policy, PolicyArch, PolicyKind};
use youla_core::training::{simulate_policy, steps_for};
use youla_core::verify::structural_verdict;

fn pair(task: &ObstacleTask) -> Result<LinearPair, String> {
    let (a, b) = linearize(&task.plant).map_err(|e| e.to_string())?;
    LinearPair::new(a, b).map_err(|e| e.to_string())
}

fn gain(task: &ObstacleTask, q: &[f64; 4], r: f64) -> Result<(Mat, Mat), String> {
    let sol = lqr(&pair(task)?, &Mat::diag(q), &Mat::diag(&[r])).map_err(|e| e.to_string())?;
    Ok((sol.k, sol.p))
}

/// LQR gain for the cart–pendulum with diagonal weights.
pub fn design_json(q: [f64; 4], r: f64) -> Result<String, String> {
    let task = ObstacleTask::default();
    let (k, p) = gain(&task, &q, r)?;
    let acl = pair(&task)?.closed_loop(&k).map_err(|e| e.to_string())?;
    Ok(json!({ "K": k.to_rows(), "P": p.to_rows(), "hurwitz": is_hurwitz(&acl) }).to_string())
}

/// Closed-loop rollout from `theta0` with either the bare LQR gain or a
/// freshly initialized Youla policy around it.
pub fn rollout_json(policy: &str, seed: u64, theta0: f64, horizon: f64, q: [f64; 4], r: f64) -> Result<String, String> {
    let task = ObstacleTask::default();
    let (k, _) = gain(&task, &q, r)?;
    let arch = PolicyArch::default();
    let (p, params) = match policy {
        "lqr" => {
            // A residual MLP with all-zero weights is exactly u = Kx.
            let p = Policy::build(PolicyKind::ResidualMlp, k, &arch).map_err(|e| e.to_string())?;
            let n = p.num_params();
            (p, vec![0.0; n])
        }
        "youla" => {
            let p = Policy::build(PolicyKind::Youla, k, &arch).map_err(|e| e.to_string())?;
            let params = p.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
            (p, params)
        }
        other => return Err(format!("unknown policy `{other}`")),
    };
    let h = 0.01;
    let steps = steps_for(horizon, h).map_err(|e| e.to_string())?;
    let x0 = [0.0, 0.0, theta0, 0.0];
    let ro = simulate_policy(&p, &params, &task.plant, &task, &x0, h, steps).map_err(|e| e.to_string())?;
    let l = task.plant.params.length;
    let tips: Vec<[f64; 2]> = ro.z.iter().map(|z| tip_position(&z[..4], l)).collect();
    Ok(json!({
        "t": ro.t,
        "theta": ro.z.iter().map(|z| z[2]).collect::<Vec<_>>(),
        "cart": ro.z.iter().map(|z| z[0]).collect::<Vec<_>>(),
        "u": ro.u.iter().map(|u| u[0]).collect::<Vec<_>>(),
        "tip_x": tips.iter().map(|t| t[0]).collect::<Vec<_>>(),
        "tip_y": tips.iter().map(|t| t[1]).collect::<Vec<_>>(),
        "cost": ro.cost(),
        "penetrations": task.penetrations(&ro),
        "obstacles": task.field.centers,
        "radius": task.field.radius,
        "length": l,
    })
    .to_string())
}

/// Structural Hurwitz check of `draws` random Youla parameter vectors with
/// the given eigenvalue floor.
pub fn structural_json(draws: u32, seed: u64, floor: f64) -> Result<String, String> {
    if !(floor > 0.0) {
        return Err("the eigenvalue floor must be positive".into());
    }
    let task = ObstacleTask::default();
    let (k, _) = gain(&task, &[10.0, 1.0, 100.0, 1.0], 0.1)?;
    let p = Policy::build(PolicyKind::Youla, k, &PolicyArch::default()).map_err(|e| e.to_string())?;
    let Policy::Youla(y) = &p else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    for _ in 0..draws {
        let params = y.random_params(&mut rng, 0.5, floor);
        if structural_verdict(&p, &params, &task.plant).map_err(|e| e.to_string())?.is_hurwitz() {
            passed += 1;
        }
    }
    Ok(json!({ "draws": draws, "passed": passed, "num_params": p.num_params() }).to_string())
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn design(q1: f64, q2: f64, q3: f64, q4: f64, r: f64) -> Result<String, JsValue> {
    to_js(design_json([q1, q2, q3, q4], r))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn rollout(policy: &str, seed: u32, theta0: f64, horizon: f64, q1: f64, q2: f64, q3: f64, q4: f64, r: f64) -> Result<String, JsValue> {
    to_js(rollout_json(policy, seed as u64, theta0, horizon, [q1, q2, q3, q4], r))
}

#[wasm_bindgen]
pub fn structural(draws: u32, seed: u32, floor: f64) -> Result<String, JsValue> {
    to_js(structural_json(draws, seed as u64, floor))
}
