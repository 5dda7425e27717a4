//! End-to-end runs on the tiny preset: results must not depend on the
//! number of worker threads.

use shlm_core::criteria::{collect_criteria, CollectOptions, CriterionKind, Example, Mode};
use shlm_core::data::{ingest_text, synthetic_corpus, SplitFractions, TokenStream, TokenizerKind};
use shlm_core::model::{train_lm, ModelConfig, TrainConfig, TransformerModel};
use shlm_core::predictor::{build_dataset, predictor_fidelity, train_predictor, PredictorConfig, Topology};

fn stream() -> TokenStream {
    ingest_text(&synthetic_corpus(3, 40_000), TokenizerKind::Byte, SplitFractions::default()).unwrap()
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn trained(s: &TokenStream, threads: usize) -> TransformerModel<f32> {
    in_pool(threads, || {
        let mut m = TransformerModel::<f32>::init(ModelConfig::tiny(), 9).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            seed: 9,
            ..Default::default()
        };
        train_lm(&mut m, &s.train, &cfg).unwrap();
        m
    })
}

fn examples(s: &TokenStream, n: usize) -> Vec<Example> {
    (0..n).map(|i| Example::window(s.train[i * 53..i * 53 + 32].to_vec())).collect()
}

#[test]
fn training_is_thread_count_independent() {
    let s = stream();
    assert_eq!(trained(&s, 1), trained(&s, 3));
}

#[test]
fn criteria_are_thread_count_independent() {
    let s = stream();
    let m = trained(&s, 1).cast::<f64>();
    let ex = examples(&s, 6);
    for kind in CriterionKind::ALL {
        let mode = if kind.is_contextual() { Mode::Contextual } else { Mode::Aggregate };
        let run = |t| in_pool(t, || collect_criteria(&m, &ex, kind, mode, &CollectOptions::default()).unwrap().into_vec());
        let (a, b) = (run(1), run(4));
        assert_eq!(a, b, "{kind}");
        assert!(a.iter().all(|v| v.values.iter().all(|x| !x.is_nan())), "{kind}");
    }
}

#[test]
fn predictor_pipeline_is_reproducible() {
    let s = stream();
    let m = trained(&s, 1).cast::<f64>();
    let ex = examples(&s, 40);
    for topology in [Topology::Shadow, Topology::DejaVu, Topology::FullSeq] {
        let pcfg = PredictorConfig {
            topology,
            epochs: 5,
            batch_size: 8,
            ..Default::default()
        };
        let run = |t| {
            in_pool(t, || {
                let ds = build_dataset(&m, &ex, CriterionKind::PlainAct, 0, &pcfg, &CollectOptions::default()).unwrap();
                let (p, log) = train_predictor(&ds, &pcfg, 1).unwrap();
                let fid = predictor_fidelity(&p, ds.heldout()).unwrap();
                (p.flat_params(), log, fid)
            })
        };
        let (a, b) = (run(1), run(2));
        assert_eq!(a.0, b.0, "{topology}");
        assert_eq!(a.1, b.1, "{topology}");
        assert_eq!(a.2, b.2, "{topology}");
        assert!(a.2.spearman_global.is_finite(), "{topology}");
    }
}
