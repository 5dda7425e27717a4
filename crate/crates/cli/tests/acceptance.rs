//! Acceptance run: one PASS/FAIL line per criterion with the raw values
//! behind it. Exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shlm_core::analytics::{
    bootstrap_p_positive, emit_report, perplexity, rank_variance, spearman, MaskSource, ReportFormat,
};
use shlm_core::criteria::{
    capture_example, collect_criteria, first_order_terms, CollectOptions, CriterionKind, Example, Mode,
};
use shlm_core::data::{ingest_text, synthetic_corpus, SplitFractions, TokenStream, TokenizerKind};
use shlm_core::model::{
    all_units, train_lm, ForwardOptions, LossScope, MaskSet, ModelConfig, TrainConfig, TransformerModel, UnitId,
    UnitScales,
};
use shlm_core::predictor::{
    build_dataset, fidelity_from_predictions, opt_preset, predictor_fidelity, predictor_flops, predictor_flops_exact,
    train_predictor, PredictorConfig, Topology,
};
use shlm_core::pruning::{oracle_ablation, oracle_vector, sparsity_sweep, PruneScope, ScoreSource, SweepOptions};
use shlm_core::tensor::check_gradient;

// Tolerances and thresholds, fixed here and nowhere else.
const FLOPS_TOL_PP: f64 = 0.01;
const FLOPS_RUNTIME_S: f64 = 1.0;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const HVP_REL_TOL: f64 = 1e-3;
const AUTODIFF_RUNTIME_S: f64 = 60.0;
const HEAD_MASK_TOL: f64 = 1e-6;
const TAYLOR_EPS: f64 = 1e-3;
const TAYLOR_REL_TOL: f64 = 0.05;
const TAYLOR_ABS_FLOOR: f64 = 1e-9;
const ORACLE_MIN_RHO: f64 = 0.4;
const ORACLE_TREND_MIN_SEEDS: usize = 3;
const FIDELITY_MAX_P: f64 = 0.01;
const EXACT_RHO_TOL: f64 = 1e-12;
const GLOBAL_LOCAL_MIN_SEEDS: usize = 4;
const UNIFORM_PPL_TOL: f64 = 1e-6;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const LM_STEPS: usize = 300;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} criterion {id} ({name}): {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, name, pass, detail }
}

fn corpus(bytes: usize) -> TokenStream {
    ingest_text(&synthetic_corpus(0, bytes), TokenizerKind::Byte, SplitFractions::default()).unwrap()
}

fn train(cfg: ModelConfig, stream: &TokenStream, seed: u64) -> TransformerModel<f32> {
    let mut m = TransformerModel::<f32>::init(cfg, seed).unwrap();
    let tc = TrainConfig {
        steps: LM_STEPS,
        seed,
        ..Default::default()
    };
    train_lm(&mut m, &stream.train, &tc).unwrap();
    m
}

fn flops() -> Outcome {
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, want) in [("opt-1.3b", 19.11), ("opt-30b", 19.55), ("opt-175b", 19.76)] {
        let got = 100.0 * predictor_flops(&opt_preset(name).unwrap(), Topology::Shadow, 2048).reduction_vs_dejavu;
        pass &= (got - want).abs() <= FLOPS_TOL_PP;
        lines.push(format!("{name} {got:.4}%"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut identity_failures = 0;
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
        if dejavu - shadow != (cfg.num_layers as u128 - 1) * cfg.embed_dim as u128 * p1 {
            identity_failures += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= identity_failures == 0 && secs < FLOPS_RUNTIME_S;
    report(
        1,
        "FLOPs reproduction",
        pass,
        format!("{}; identity failures {identity_failures}/100; {secs:.3}s", lines.join(", ")),
    )
}

fn autodiff() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0, String::new());
    for seed in 0..10 {
        for case in common::op_cases(seed) {
            let r = check_gradient(&case.loss, &case.point, &case.shape, GRAD_STEP).unwrap();
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, format!("{} seed {seed}", case.name));
            }
        }
    }
    let hvp_worst = (0..10).map(|s| common::hvp_rel_error(s, 6).unwrap()).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let pass = worst.0 <= GRAD_REL_TOL && hvp_worst <= HVP_REL_TOL && secs < AUTODIFF_RUNTIME_S;
    report(
        2,
        "autodiff correctness",
        pass,
        format!(
            "{} ops x 10 seeds, worst gradient rel error {:.2e} ({}); worst HVP rel error {hvp_worst:.2e}; {secs:.2}s",
            common::op_cases(0).len(),
            worst.0,
            worst.1
        ),
    )
}

fn mask_semantics() -> Outcome {
    let tokens: Vec<u32> = vec![7, 100, 3, 255, 42, 42, 9, 0, 128, 61, 17, 200];
    let m = common::spread_model(ModelConfig::tiny(), 5);
    let cfg = m.config().clone();
    let logits = |mask: Option<&MaskSet>| m.forward(&tokens, &ForwardOptions { mask, ..Default::default() }).unwrap().logits;
    let identity = logits(None) == logits(Some(&MaskSet::dense(&cfg)));
    let m32 = m.cast::<f32>();
    let identity32 = m32.forward(&tokens, &ForwardOptions::default()).unwrap().logits
        == m32
            .forward(
                &tokens,
                &ForwardOptions {
                    mask: Some(&MaskSet::dense(&cfg)),
                    ..Default::default()
                },
            )
            .unwrap()
            .logits;
    let mut head_worst: f64 = 0.0;
    for l in 0..cfg.num_layers {
        for h in 0..cfg.heads_per_layer {
            let got = logits(Some(&MaskSet::with_pruned(&cfg, [UnitId::head(l, h)])));
            let want = common::reference_logits(&m, &tokens, Some((l, h)));
            head_worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(head_worst, f64::max);
        }
    }
    let units: Vec<UnitId> = all_units(&cfg).collect();
    let mut union_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let pick = |rng: &mut ChaCha8Rng| -> Vec<UnitId> { units.iter().copied().filter(|_| rng.random_bool(0.2)).collect() };
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        let ma = MaskSet::with_pruned(&cfg, a.iter().copied());
        let mb = MaskSet::with_pruned(&cfg, b.iter().copied());
        let union = MaskSet::with_pruned(&cfg, a.iter().chain(&b).copied());
        union_ok &= ma.intersect(&mb) == union && logits(Some(&ma.intersect(&mb))) == logits(Some(&union));
    }
    report(
        3,
        "mask semantics",
        identity && identity32 && head_worst <= HEAD_MASK_TOL && union_ok,
        format!(
            "identity bit-identical f64 {identity} f32 {identity32}; single-head worst |diff| {head_worst:.2e}; union composition exact {union_ok}"
        ),
    )
}

fn taylor() -> Outcome {
    let stream = corpus(200_000);
    let m = train(ModelConfig::toy(), &stream, 0).cast::<f64>();
    let cfg = m.config().clone();
    let (mut checked, mut failures, mut worst_ratio) = (0, 0, 0.0f64);
    for p in 0..3 {
        let toks = stream.val[p * 64..p * 64 + 48].to_vec();
        let cap = capture_example(&m, &Example::window(toks.clone()), &CollectOptions::default()).unwrap();
        let terms = first_order_terms(&cap).unwrap();
        let base = m.loss(&toks, None, LossScope::Full).unwrap();
        for (i, u) in all_units(&cfg).enumerate() {
            let mut sc = UnitScales::ones(&cfg);
            sc.set(u, 1.0 - TAYLOR_EPS);
            let delta = m.scaled_loss(&toks, &sc, LossScope::Full).unwrap() - base;
            // Shrinking the gate by ε moves the loss by −ε·Σ(A⊙g) to first order.
            let predicted = -TAYLOR_EPS * terms[i];
            let tol = TAYLOR_REL_TOL * predicted.abs() + TAYLOR_ABS_FLOOR;
            let ratio = (delta - predicted).abs() / tol;
            worst_ratio = worst_ratio.max(ratio);
            checked += 1;
            if ratio > 1.0 {
                failures += 1;
            }
        }
    }
    report(
        4,
        "plainact Taylor consistency",
        failures == 0,
        format!("{checked} unit-prompt pairs, {failures} outside tolerance, worst error/tolerance {worst_ratio:.3}"),
    )
}

fn oracle_alignment() -> Outcome {
    let stream = corpus(200_000);
    let mut rows = Vec::new();
    let (mut min_rho, mut trend) = (f64::INFINITY, 0);
    for seed in SEEDS {
        let m = train(ModelConfig::tiny(), &stream, seed).cast::<f64>();
        let cfg = m.config().clone();
        let windows: Vec<Vec<u32>> = (0..32).map(|i| stream.val[i * 100..i * 100 + 64].to_vec()).collect();
        let oracle = oracle_vector(&oracle_ablation(&m, &windows, PruneScope::Both, 4096).unwrap(), &cfg);
        let examples: Vec<Example> = windows.iter().cloned().map(Example::window).collect();
        let rho = |kind| {
            let s = collect_criteria(&m, &examples, kind, Mode::Aggregate, &CollectOptions::default()).unwrap().into_vec();
            spearman(&s[0].values, &oracle).unwrap()
        };
        let (plain, l2) = (rho(CriterionKind::PlainAct), rho(CriterionKind::L2Norm));
        min_rho = min_rho.min(plain);
        if plain >= l2 {
            trend += 1;
        }
        rows.push(format!("seed {seed}: plainact {plain:.4} l2norm {l2:.4}"));
    }
    report(
        5,
        "oracle alignment",
        min_rho >= ORACLE_MIN_RHO && trend >= ORACLE_TREND_MIN_SEEDS,
        format!("{}; min plainact rho {min_rho:.4}; plainact >= l2norm on {trend}/5", rows.join("; ")),
    )
}

/// Criteria 6 and 7 share trained models.
fn predictor_and_sweeps(sweep_dir: &Path) -> (Outcome, Outcome) {
    let stream = corpus(400_000);
    let mut fid_rows = Vec::new();
    let mut fid_pass = true;
    let mut gl_rows = Vec::new();
    let mut global_wins = 0;
    let mut exact = (f64::NAN, f64::NAN);
    for seed in SEEDS {
        let m = train(ModelConfig::small(), &stream, seed);
        let m64 = m.cast::<f64>();
        let examples: Vec<Example> =
            (0..400).map(|i| Example::window(stream.train[i * 97..i * 97 + 48].to_vec())).collect();
        let pcfg = PredictorConfig::default();
        let ds = build_dataset(&m64, &examples, CriterionKind::PlainAct, 0, &pcfg, &CollectOptions::default()).unwrap();
        let (p, log) = train_predictor(&ds, &pcfg, seed).unwrap();
        let fid = predictor_fidelity(&p, ds.heldout()).unwrap();
        let pval = bootstrap_p_positive(&fid.per_example, 1000, seed).unwrap();
        let var = ds.heldout_target_variance();
        let mse = *log.heldout_mse.last().unwrap();
        fid_pass &= mse < var && fid.spearman_global > 0.0 && pval < FIDELITY_MAX_P;
        fid_rows.push(format!(
            "seed {seed}: mse {mse:.4} var {var:.4} rho {:.4} p {pval:.4}",
            fid.spearman_global
        ));
        if seed == SEEDS[0] {
            let targets: Vec<Vec<f64>> = ds.heldout().iter().map(|e| e.target.clone()).collect();
            let negated: Vec<Vec<f64>> = targets.iter().map(|t| t.iter().map(|v| -v).collect()).collect();
            let covered = pcfg.covered_layers(m.config());
            let cfg = m.config();
            exact = (
                fidelity_from_predictions(&targets, &targets, &covered, cfg).unwrap().spearman_global,
                fidelity_from_predictions(&negated, &targets, &covered, cfg).unwrap().spearman_global,
            );
        }

        let calib: Vec<Example> = (0..32).map(|i| Example::window(stream.train[i * 501..i * 501 + 64].to_vec())).collect();
        let scores = collect_criteria(&m64, &calib, CriterionKind::PlainAct, Mode::Aggregate, &CollectOptions::default())
            .unwrap()
            .into_vec();
        let opts = SweepOptions {
            seed,
            ..Default::default()
        };
        let eval = &stream.val[..8192.min(stream.val.len())];
        let records = sparsity_sweep(&m, ScoreSource::Static(&scores[0]), &opts, eval).unwrap();
        emit_report(&records, &sweep_dir.join(format!("sweep_seed{seed}.csv")), ReportFormat::Csv).unwrap();
        let at = |s: &str| {
            records
                .iter()
                .find(|r| r.strategy == s && (r.sparsity - 0.5).abs() < 1e-9)
                .unwrap()
                .perplexity
        };
        let (local, global) = (at("local"), at("global"));
        if global <= local {
            global_wins += 1;
        }
        gl_rows.push(format!("seed {seed}: global {global:.3} local {local:.3}"));
    }
    let exact_ok = (exact.0 - 1.0).abs() <= EXACT_RHO_TOL && (exact.1 + 1.0).abs() <= EXACT_RHO_TOL;
    let six = report(
        6,
        "predictor learnability",
        fid_pass && exact_ok,
        format!("{}; exact oracle rho {} negated {}", fid_rows.join("; "), exact.0, exact.1),
    );
    let seven = report(
        7,
        "global vs local",
        global_wins >= GLOBAL_LOCAL_MIN_SEEDS,
        format!(
            "{}; global <= local on {global_wins}/5; sweeps in {}",
            gl_rows.join("; "),
            sweep_dir.display()
        ),
    );
    (six, seven)
}

fn spearman_values() -> Outcome {
    let a = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let same = spearman(&[0.3, -1.0, 7.0, 2.0], &[0.3, -1.0, 7.0, 2.0]).unwrap();
    let rev = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
    report(
        8,
        "Spearman unit values",
        a == 0.8 && same == 1.0 && rev == -1.0,
        format!("swapped middle {a}, identical {same}, reversed {rev}"),
    )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn cli_determinism(work: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_shlm");
    let run = |args: &[&str], out: &Path| -> bool {
        let status = Command::new(bin)
            .args(args)
            .arg("--out")
            .arg(out)
            .stdout(Stdio::null())
            .status()
            .unwrap();
        status.success()
    };
    let lm = work.join("lm");
    let config = work.join("config.json");
    let base = serde_json::json!({
        "model": ModelConfig::tiny(),
        "train": { "steps": 30 },
        "synthetic_bytes": 60_000,
        "examples": 40,
        "eval_tokens": 2048,
        "oracle_windows": 2,
        "predictor": { "epochs": 4, "batch_size": 8 },
        "sweep": { "grid": [0.0, 0.5] },
        "shots_list": [0, 1],
    });
    std::fs::write(&config, base.to_string()).unwrap();
    let cfg = config.to_str().unwrap();
    let mut results = Vec::new();
    let mut all_ok = run(&["--config", cfg, "train-lm"], &lm);
    let mut with_ckpt = base.clone();
    with_ckpt["checkpoint"] = serde_json::json!(lm.join("model.shlm"));
    let config2 = work.join("config_ckpt.json");
    std::fs::write(&config2, with_ckpt.to_string()).unwrap();
    let cfg2 = config2.to_str().unwrap();
    let pred = work.join("pred_ref");
    all_ok &= run(&["--config", cfg2, "train-predictor"], &pred);
    let predictor = pred.join("predictor.shlm");
    let predictor = predictor.to_str().unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("train-lm", vec!["--config", cfg, "train-lm"]),
        ("eval", vec!["--config", cfg2, "eval"]),
        ("collect", vec!["--config", cfg2, "collect"]),
        ("collect-contextual", vec!["--config", cfg2, "collect", "--contextual", "--criterion", "fisher"]),
        ("train-predictor", vec!["--config", cfg2, "train-predictor"]),
        ("eval-predictor", vec!["--config", cfg2, "eval-predictor", "--predictor", predictor]),
        ("sweep", vec!["--config", cfg2, "sweep"]),
        ("sweep-predictor", vec!["--config", cfg2, "sweep", "--predictor", predictor]),
        ("rank-variance", vec!["--config", cfg2, "rank-variance"]),
        ("fewshot", vec!["--config", cfg2, "fewshot"]),
        ("flops", vec!["--config", cfg2, "flops", "--model-preset", "opt-13b"]),
        ("oracle", vec!["--config", cfg2, "oracle", "--scope", "heads"]),
    ];
    for (name, args) in &commands {
        let (a, b) = (work.join(format!("{name}_a")), work.join(format!("{name}_b")));
        let ok = run(args, &a) && run(args, &b);
        let same = ok && files(&a) == files(&b) && !files(&a).is_empty();
        all_ok &= same;
        results.push(format!("{name} {}", if same { "identical" } else { "DIFFERENT" }));
    }
    let rep = work.join("reproduced");
    let rep_ok = run(&["reproduce", "--manifest", work.join("sweep_a/manifest.json").to_str().unwrap()], &rep)
        && files(&rep) == files(&work.join("sweep_a"));
    all_ok &= rep_ok;
    results.push(format!("reproduce {}", if rep_ok { "identical" } else { "DIFFERENT" }));
    report(9, "determinism", all_ok, results.join(", "))
}

fn statistics_sanity() -> Outcome {
    let m = TransformerModel::<f64>::zeros(ModelConfig::tiny()).unwrap();
    let stream: Vec<u32> = (0..1000).map(|i| (i * 37 % 256) as u32).collect();
    let ppl = perplexity(&m, MaskSource::Dense, &stream, 128).unwrap();
    let trained = common::spread_model(ModelConfig::tiny(), 8);
    let prompt = Example::window(vec![5, 90, 14, 200, 3, 3, 77, 18]);
    let dup = vec![prompt.clone(), prompt.clone(), prompt];
    let table = rank_variance(&trained, &dup, CriterionKind::GradNorm, &CollectOptions::default()).unwrap();
    let all_zero = table.rows.iter().all(|r| r.rank_variance == 0.0) && table.layer_variance.iter().all(|&v| v == 0.0);
    report(
        10,
        "statistics sanity",
        (ppl - 256.0).abs() <= UNIFORM_PPL_TOL && all_zero,
        format!("uniform-logits perplexity {ppl} (vocab 256); duplicated-prompt rank variance all zero {all_zero}"),
    )
}

fn main() {
    let t = Instant::now();
    let scratch = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&scratch);
    std::fs::create_dir_all(scratch.join("cli")).unwrap();
    let mut outcomes = vec![flops(), autodiff(), mask_semantics(), taylor(), oracle_alignment()];
    let (six, seven) = predictor_and_sweeps(&scratch);
    outcomes.extend([six, seven, spearman_values(), cli_determinism(&scratch.join("cli")), statistics_sanity()]);
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        t.elapsed().as_secs_f64()
    );
    for o in &failed {
        println!("failed: criterion {} ({}): {}", o.id, o.name, o.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
