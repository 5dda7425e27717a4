use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shlm_core::model::ModelConfig;
use shlm_core::predictor::{opt_preset, predictor_flops, predictor_flops_exact, Topology};

#[test]
fn reference_reductions() {
    for (name, pct) in [("opt-1.3b", 19.11), ("opt-30b", 19.55), ("opt-175b", 19.76)] {
        let cfg = opt_preset(name).unwrap();
        let got = 100.0 * predictor_flops(&cfg, Topology::Shadow, 2048).reduction_vs_dejavu;
        assert!((got - pct).abs() <= 0.01, "{name}: {got}");
    }
}

#[test]
fn dejavu_minus_shadow_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let cfg = ModelConfig {
            num_layers: rng.random_range(1..200),
            embed_dim: rng.random_range(1..20_000),
            heads_per_layer: rng.random_range(1..200),
            ffn_dim: rng.random_range(1..80_000),
            ..ModelConfig::toy()
        };
        let p1: u128 = rng.random_range(1..10_000);
        let (dejavu, shadow) = predictor_flops_exact(&cfg, p1);
        assert_eq!(dejavu - shadow, (cfg.num_layers as u128 - 1) * cfg.embed_dim as u128 * p1);
    }
}

#[test]
fn reduction_does_not_depend_on_predictor_width() {
    let cfg = opt_preset("opt-13b").unwrap();
    let a = predictor_flops(&cfg, Topology::Shadow, 512).reduction_vs_dejavu;
    let b = predictor_flops(&cfg, Topology::Shadow, 4096).reduction_vs_dejavu;
    assert!((a - b).abs() < 1e-12);
}
