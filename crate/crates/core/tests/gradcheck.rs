mod common;

#[test]
fn combined_objective_gradients_match_central_differences() {
    for seed in [1, 2] {
        let g = common::gradient_check(seed, 100);
        assert!(g.params <= 10_000, "{} parameters", g.params);
        assert_eq!(g.checked, 100);
        assert!(g.max_rel <= 1e-4, "seed {seed}: {}", g.worst);
    }
}
