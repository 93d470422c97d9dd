use mpnode::models::{Activation, MlpSpec};
use mpnode::mp::{init_penalty_state, make_partition, mp_loss, vanilla_mse_loss};
use mpnode::ode::{IntegratorConfig, Method, Trajectory};
use ndarray::Array2;
use proptest::prelude::*;

fn ulps_apart(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn one_window_equals_plain_rollout_loss(
        seed in 0u64..10_000,
        n in 2usize..40,
        hidden in 1usize..6,
        mu in 0.0f64..100.0,
        noise in prop::collection::vec(-2.0f64..2.0, 80),
    ) {
        let spec = MlpSpec::new(2, &[hidden], Activation::Tanh, false);
        let theta = spec.init_params(seed);
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let states = Array2::from_shape_fn((n, 2), |(i, j)| noise[2 * i + j]);
        let data = Trajectory::new(times, states).unwrap();
        let pen = init_penalty_state(&data, &make_partition(n, 1).unwrap()).unwrap();
        let cfg = IntegratorConfig::fixed(Method::Rk4, 0.05);
        let rhs = spec.bind(0);
        let a = mp_loss(&rhs, theta.values(), &pen, &data, mu, &cfg).unwrap();
        let b = vanilla_mse_loss(&rhs, theta.values(), &data, &cfg).unwrap();
        prop_assert_eq!(a.l_p, 0.0);
        prop_assert!(ulps_apart(a.total, b) <= 4, "{} vs {}", a.total, b);
    }
}
