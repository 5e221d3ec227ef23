use diaggeo::hessian::{hessian_diag_layer, hessian_full_two_layer};
use diaggeo::model::{generate_problem, init_weights, NetworkConfig, DEFAULT_A_BAND};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn full_hessian_diagonal_equals_layer_diagonals(d in 1usize..=12, seed in any::<u64>()) {
        let w = init_weights(&NetworkConfig::two_layer(d, 0.25), seed).unwrap();
        let p = generate_problem(d, DEFAULT_A_BAND, 0.0, seed ^ 3).unwrap();
        let h = hessian_full_two_layer(&w, &p).unwrap().assemble();
        prop_assert!(h.asymmetry() <= 1e-12);
        let diag: Vec<f64> = (1..=2)
            .flat_map(|k| hessian_diag_layer(&w, k).unwrap().values)
            .collect();
        for (i, v) in diag.iter().enumerate() {
            prop_assert!((h[(i, i)].abs() - v).abs() <= 1e-14 * v.abs().max(1.0));
        }
    }

    #[test]
    fn diagonal_ignores_the_problem_instance(d in 1usize..=16, seed in any::<u64>(), other in any::<u64>()) {
        // The diagonal depends only on the weights once the data is whitened,
        // so regenerating the target with a different seed leaves it unchanged.
        let w = init_weights(&NetworkConfig::two_layer(d, 0.5), seed).unwrap();
        let a = generate_problem(d, DEFAULT_A_BAND, 0.0, seed).unwrap();
        let b = generate_problem(d, DEFAULT_A_BAND, 0.0, other).unwrap();
        let full_a = hessian_full_two_layer(&w, &a).unwrap().assemble();
        let full_b = hessian_full_two_layer(&w, &b).unwrap().assemble();
        for i in 0..full_a.rows() {
            prop_assert_eq!(full_a[(i, i)], full_b[(i, i)]);
        }
    }
}
