mod common;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shlm_core::model::{all_units, ForwardOptions, LossScope, MaskSet, ModelConfig, TransformerModel, UnitId};

fn tokens() -> Vec<u32> {
    vec![7, 100, 3, 255, 42, 42, 9, 0, 128, 61, 17, 200]
}

fn logits<T: shlm_core::tensor::Float>(m: &TransformerModel<T>, mask: Option<&MaskSet>) -> Vec<T> {
    let opts = ForwardOptions {
        mask,
        ..Default::default()
    };
    m.forward(&tokens(), &opts).unwrap().logits
}

#[test]
fn identity_mask_is_bit_identical_to_dense() {
    for seed in 0..3 {
        let m = common::spread_model(ModelConfig::tiny(), seed);
        let dense = MaskSet::dense(m.config());
        assert_eq!(logits(&m, None), logits(&m, Some(&dense)));
        let m32 = m.cast::<f32>();
        assert_eq!(logits(&m32, None), logits(&m32, Some(&dense)));
    }
}

#[test]
fn reference_forward_matches_model() {
    let m = common::spread_model(ModelConfig::tiny(), 4);
    let got = logits(&m, None);
    let want = common::reference_logits(&m, &tokens(), None);
    let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn single_head_mask_equals_subtracting_its_contribution() {
    let m = common::spread_model(ModelConfig::tiny(), 5);
    let cfg = m.config().clone();
    let dense = logits(&m, None);
    for l in 0..cfg.num_layers {
        for h in 0..cfg.heads_per_layer {
            let mask = MaskSet::with_pruned(&cfg, [UnitId::head(l, h)]);
            let got = logits(&m, Some(&mask));
            let want = common::reference_logits(&m, &tokens(), Some((l, h)));
            let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-6, "layer {l} head {h}: {worst}");
            assert_ne!(got, dense, "layer {l} head {h} had no effect");
        }
    }
}

#[test]
fn mask_union_composes_exactly() {
    let m = common::spread_model(ModelConfig::tiny(), 6);
    let cfg = m.config().clone();
    let units: Vec<UnitId> = all_units(&cfg).collect();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = units.clone();
        a.shuffle(&mut rng);
        let mut b = units.clone();
        b.shuffle(&mut rng);
        let (pa, pb) = (&a[..10], &b[..15]);
        let ma = MaskSet::with_pruned(&cfg, pa.iter().copied());
        let mb = MaskSet::with_pruned(&cfg, pb.iter().copied());
        let union = MaskSet::with_pruned(&cfg, pa.iter().chain(pb).copied());
        assert_eq!(ma.intersect(&mb), union);
        assert_eq!(mb.intersect(&ma), union);
        assert_eq!(logits(&m, Some(&ma.intersect(&mb))), logits(&m, Some(&union)));
        let la = m.loss(&tokens(), Some(&ma.intersect(&mb)), LossScope::Full).unwrap();
        let lu = m.loss(&tokens(), Some(&union), LossScope::Full).unwrap();
        assert_eq!(la, lu);
    }
}
