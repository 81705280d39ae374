use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use youla_core::lincontrol::{lqr, lyapunov_residual, solve_lyapunov, LinearPair};
use youla_core::linalg::Mat;
use youla_core::ode::convergence_order;
use youla_core::plant::{linearize, CartPole};
use youla_core::policy::{Checkpoint, Policy, PolicyArch, PolicyKind};
use youla_core::training::Adam;
use youla_core::verify::{fit_decay, structural_verdict};

fn cartpole_gain() -> Mat {
    let (a, b) = linearize(&CartPole::default()).unwrap();
    lqr(&LinearPair::new(a, b).unwrap(), &Mat::diag(&[10.0, 1.0, 100.0, 1.0]), &Mat::diag(&[0.1])).unwrap().k
}

fn small_arch() -> PolicyArch {
    let mut arch = PolicyArch::default();
    arch.youla.n_q = 4;
    arch.youla.readout_hidden = vec![8];
    arch.youla.init_hidden = 6;
    arch.baseline.mlp_hidden = vec![8];
    arch.baseline.lstm_hidden = 5;
    arch
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lyapunov_residual_is_small(entries in prop::collection::vec(-1.0f64..1.0, 9), shift in 2.5f64..5.0) {
        // Gershgorin: diagonal shifted by more than any row sum keeps A Hurwitz.
        let mut a = Mat::from_row_major(3, 3, entries).unwrap();
        for i in 0..3 {
            a[(i, i)] -= shift;
        }
        let q = Mat::identity(3);
        let p = solve_lyapunov(&a, &q).unwrap();
        prop_assert!(lyapunov_residual(&a, &p, &q) < 1e-10);
        prop_assert!(p.is_positive_definite());
    }

    #[test]
    fn youla_draws_fix_the_origin_and_are_hurwitz(seed in any::<u64>()) {
        let p = Policy::build(PolicyKind::Youla, cartpole_gain(), &small_arch()).unwrap();
        let Policy::Youla(y) = &p else { unreachable!() };
        let params = y.random_params(&mut ChaCha8Rng::seed_from_u64(seed), 0.5, 0.05);
        let plant = CartPole::default();
        let f0 = p.augmented_field(&params, &plant, &vec![0.0; p.cost_index()]).unwrap();
        prop_assert!(f0.iter().all(|v| *v == 0.0));
        prop_assert!(structural_verdict(&p, &params, &plant).unwrap().is_hurwitz());
    }

    #[test]
    fn checkpoints_restore_bit_exactly(seed in any::<u64>(), kind in prop::sample::select(PolicyKind::ALL.to_vec())) {
        let arch = small_arch();
        let p = Policy::build(kind, cartpole_gain(), &arch).unwrap();
        let params = p.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        let json = p.checkpoint(&params, &arch).unwrap().to_json().unwrap();
        let (q, restored) = Checkpoint::from_json(&json).unwrap().restore().unwrap();
        prop_assert_eq!(q, p);
        prop_assert_eq!(restored, params);
    }

    #[test]
    fn decay_fit_recovers_exponentials(k in 0.1f64..10.0, lambda in 0.05f64..5.0) {
        let t: Vec<f64> = (0..=400).map(|i| i as f64 * 0.01).collect();
        let norms: Vec<f64> = t.iter().map(|s| k * (-lambda * s).exp()).collect();
        let fit = fit_decay(&t, &norms, (2.0, 4.0)).unwrap();
        prop_assert!((fit.lambda - lambda).abs() < 1e-6 * lambda.max(1.0));
        prop_assert!((fit.k - 1.0).abs() < 1e-6);
        prop_assert!(fit.residual < 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order_on_linear_decay(rate in 0.2f64..3.0) {
        let exact = [(-rate).exp()];
        let est = convergence_order(move |z| vec![-rate * z[0]], &exact, &[1.0], 1.0, 0.05).unwrap();
        prop_assert!((12.0..=20.0).contains(&est.ratio()), "ratio {}", est.ratio());
    }
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut adam = Adam::new(3);
    let mut params = vec![1.0, -2.0, 0.5];
    assert!(adam.step(&mut params, &[3.0, -0.01, 1e3], 1e-2).unwrap());
    assert_relative_eq!(params[0], 1.0 - 1e-2, max_relative = 1e-6);
    assert_relative_eq!(params[1], -2.0 + 1e-2, max_relative = 1e-6);
    assert_relative_eq!(params[2], 0.5 - 1e-2, max_relative = 1e-6);
}
