use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use shlm_core::analytics::{
    bootstrap_p_positive, emit_report, fewshot_examples, fewshot_study, perplexity, rank_variance, EvalRecord,
    FewshotStudy, FidelityRecord, MaskSource, ReportFormat, ReportRecord,
};
use shlm_core::criteria::{
    collect_criteria, write_scores_csv, write_sidecar, CollectOptions, CriterionKind, Example, Mode, ScoreSidecar,
};
use shlm_core::data::{ingest_corpus, ingest_text, synthetic_corpus, TokenStream, TokenizerKind};
use shlm_core::model::{file_hash, train_lm, ModelConfig, TransformerModel};
use shlm_core::predictor::{
    build_dataset, opt_preset, predictor_fidelity, predictor_flops, train_predictor, Predictor, Topology,
};
use shlm_core::pruning::{
    mask_from_json, oracle_ablation, sparsity_sweep, write_oracle_csv, PruneScope, ScoreSource, Strategy,
    MAX_ORACLE_UNITS,
};

use crate::config::ExperimentConfig;
use crate::manifest::{config_hash, sha256_hex, Manifest};
use crate::{CliError, Command};

fn parse<T: std::str::FromStr<Err = shlm_core::Error>>(value: &str) -> Result<T, CliError> {
    value.parse::<T>().map_err(CliError::from)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(shlm_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    fn report<R: ReportRecord>(&mut self, stem: &str, records: &[R]) -> Result<(), CliError> {
        let csv = self.path(&format!("{stem}.csv"));
        emit_report(records, &csv, ReportFormat::Csv)?;
        let json = self.path(&format!("{stem}.json"));
        emit_report(records, &json, ReportFormat::Json)?;
        Ok(())
    }

    fn stream(&mut self) -> Result<TokenStream, CliError> {
        Ok(match self.cfg.corpus.clone() {
            Some(p) => {
                self.record_input(&p)?;
                ingest_corpus(&p, self.cfg.tokenizer, self.cfg.split)?
            }
            None => ingest_text(&synthetic_corpus(0, self.cfg.synthetic_bytes), self.cfg.tokenizer, self.cfg.split)?,
        })
    }

    fn checkpoint_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| self.cfg.checkpoint.clone())
            .ok_or_else(|| CliError::Config("checkpoint: required (config field or --checkpoint)".into()))
    }

    fn model<T: shlm_core::tensor::Float>(&mut self, flag: &Option<PathBuf>) -> Result<TransformerModel<T>, CliError> {
        let path = self.checkpoint_path(flag)?;
        if !path.exists() {
            return Err(CliError::Config(format!("checkpoint: {} does not exist", path.display())));
        }
        self.record_input(&path)?;
        Ok(TransformerModel::load(&path)?)
    }

    fn eval_stream<'a>(&self, stream: &'a TokenStream) -> &'a [u32] {
        &stream.val[..self.cfg.eval_tokens.min(stream.val.len())]
    }

    fn collect_options(&self) -> CollectOptions {
        CollectOptions {
            target_only: self.cfg.target_only,
            ..Default::default()
        }
    }

    /// Plain windows from the train split, or few-shot prompts when `shots > 0`.
    fn examples(&self, stream: &TokenStream, shots: usize, max_len: usize) -> Vec<Example> {
        let n = self.cfg.examples;
        if shots > 0 {
            let per = n.div_ceil(self.cfg.templates.len());
            let mut ex = fewshot_examples(&self.cfg.templates, shots, per, self.cfg.seed(), &stream.tokenizer, max_len);
            ex.truncate(n);
            return ex;
        }
        let len = self.cfg.example_len.min(max_len);
        let span = stream.train.len().saturating_sub(len);
        let stride = (span / n).max(1);
        (0..n)
            .map(|i| (i * stride) % (span + 1))
            .map(|s| Example::window(stream.train[s..s + len].to_vec()))
            .collect()
    }

    fn finish(mut self, command: Command, workers: usize) -> Result<(), CliError> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            let path = self.out.join(name);
            let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
            outputs.insert(name.clone(), sha256_hex(&bytes));
        }
        let manifest = Manifest {
            tool: "shlm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            seed: self.cfg.seed(),
            workers,
            config_hash: config_hash(&self.cfg),
            config: self.cfg.clone(),
            inputs: std::mem::take(&mut self.inputs),
            outputs,
        };
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

fn criterion_or(flag: &Option<String>, default: CriterionKind) -> Result<CriterionKind, CliError> {
    flag.as_deref().map(parse).transpose().map(|c| c.unwrap_or(default))
}

pub fn execute(command: Command, mut cfg: ExperimentConfig, out: &Path, workers: usize) -> Result<(), CliError> {
    // Flags mirror config fields and are folded in before validation.
    match &command {
        Command::TrainLm { preset, steps } => {
            if let Some(p) = preset {
                cfg.model = ModelConfig::preset(p).ok_or_else(|| CliError::Config(format!("preset: unknown value {p:?}")))?;
            }
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
        }
        Command::Collect {
            criterion,
            contextual,
            shots,
            ..
        } => {
            cfg.criterion = criterion_or(criterion, cfg.criterion)?;
            if *contextual {
                cfg.mode = Mode::Contextual;
            }
            if let Some(s) = shots {
                cfg.shots = *s;
            }
        }
        Command::TrainPredictor {
            criterion,
            topology,
            epochs,
            shots,
            ..
        } => {
            cfg.criterion = criterion_or(criterion, cfg.criterion)?;
            cfg.criterion.require_contextual().map_err(CliError::from)?;
            if let Some(t) = topology {
                cfg.predictor.topology = parse::<Topology>(t)?;
            }
            if let Some(e) = epochs {
                cfg.predictor.epochs = *e;
            }
            if let Some(s) = shots {
                cfg.shots = *s;
            }
        }
        Command::Sweep {
            criterion,
            sparsity,
            strategy,
            ..
        } => {
            cfg.criterion = criterion_or(criterion, cfg.criterion)?;
            if let Some(g) = sparsity {
                cfg.sweep.grid = g.clone();
            }
            if let Some(s) = strategy {
                cfg.sweep.strategies = s.iter().map(|x| parse::<Strategy>(x)).collect::<Result<_, _>>()?;
            }
        }
        Command::Fewshot { criterion, shots, .. } => {
            cfg.criterion = criterion_or(criterion, cfg.criterion)?;
            if let Some(s) = shots {
                cfg.shots_list = s.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    cfg.sweep.seed = cfg.seed();
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut run = Run {
        cfg,
        out: out.to_path_buf(),
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    match &command {
        Command::TrainLm { .. } => train_lm_cmd(&mut run)?,
        Command::Eval { checkpoint, mask } => eval_cmd(&mut run, checkpoint, mask)?,
        Command::Collect { checkpoint, .. } => collect_cmd(&mut run, checkpoint)?,
        Command::TrainPredictor { checkpoint, .. } => train_predictor_cmd(&mut run, checkpoint)?,
        Command::EvalPredictor { checkpoint, predictor } => eval_predictor_cmd(&mut run, checkpoint, predictor)?,
        Command::Sweep {
            checkpoint, predictor, ..
        } => sweep_cmd(&mut run, checkpoint, predictor)?,
        Command::RankVariance { checkpoint, criterion } => rank_variance_cmd(&mut run, checkpoint, criterion)?,
        Command::Fewshot { checkpoint, .. } => fewshot_cmd(&mut run, checkpoint)?,
        Command::Flops { model_preset, p1 } => flops_cmd(&mut run, model_preset, *p1)?,
        Command::Oracle { checkpoint, scope } => oracle_cmd(&mut run, checkpoint, scope)?,
        Command::Reproduce { .. } => return Err(CliError::Config("command: manifests cannot record reproduce".into())),
    }
    run.finish(command, workers)
}

fn train_lm_cmd(run: &mut Run) -> Result<(), CliError> {
    let stream = run.stream()?;
    let mut model_cfg = run.cfg.model.clone();
    let vocab = stream.tokenizer.vocab_size();
    match run.cfg.tokenizer {
        TokenizerKind::Word => model_cfg.vocab_size = vocab,
        TokenizerKind::Byte if model_cfg.vocab_size < vocab => {
            return Err(CliError::Config(format!("model.vocab_size: byte tokenizer needs {vocab}")));
        }
        TokenizerKind::Byte => {}
    }
    let seed = run.cfg.seed();
    let mut model = TransformerModel::<f32>::init(model_cfg, seed)?;
    let train_cfg = shlm_core::model::TrainConfig {
        seed,
        ..run.cfg.train.clone()
    };
    let log = train_lm(&mut model, &stream.train, &train_cfg)?;
    let ckpt = run.path("model.shlm");
    model.save(&ckpt)?;
    if run.cfg.tokenizer == TokenizerKind::Word {
        let vocab_path = run.path("vocab.json");
        stream.tokenizer.save_vocab(&vocab_path)?;
    }
    let ppl = perplexity(&model, MaskSource::Dense, run.eval_stream(&stream), run.cfg.sweep.window_len)?;
    run.write_json(
        "training_log.json",
        &json!({
            "step_losses": log.step_losses,
            "final_loss": log.final_loss(),
            "val_perplexity": ppl,
        }),
    )?;
    println!("final train loss {:.4}, validation perplexity {ppl:.4}", log.final_loss().unwrap_or(f64::NAN));
    Ok(())
}

fn eval_cmd(run: &mut Run, checkpoint: &Option<PathBuf>, mask: &Option<PathBuf>) -> Result<(), CliError> {
    let model = run.model::<f32>(checkpoint)?;
    let stream = run.stream()?;
    let mask = match mask {
        Some(p) => {
            run.record_input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Some(mask_from_json(&text, model.config())?)
        }
        None => None,
    };
    let source = mask.as_ref().map_or(MaskSource::Dense, MaskSource::Static);
    let tokens = run.eval_stream(&stream);
    let ppl = perplexity(&model, source, tokens, run.cfg.sweep.window_len)?;
    run.write_json("eval.json", &json!({ "perplexity": ppl, "tokens": tokens.len() }))?;
    println!("perplexity {ppl}");
    Ok(())
}

fn collect_cmd(run: &mut Run, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let model = run.model::<f64>(checkpoint)?;
    let stream = run.stream()?;
    let examples = run.examples(&stream, run.cfg.shots, model.config().max_seq_len);
    let scores = collect_criteria(&model, &examples, run.cfg.criterion, run.cfg.mode, &run.collect_options())?.into_vec();
    let path = run.path("scores.csv");
    write_scores_csv(&path, &scores, model.config())?;
    let sidecar = ScoreSidecar {
        criterion: run.cfg.criterion,
        mode: run.cfg.mode,
        shots: run.cfg.shots,
        seed: run.cfg.seed(),
        checkpoint_hash: run.inputs.values().next().cloned().unwrap_or_default(),
        examples: examples.len(),
    };
    let side = run.path("scores.json");
    write_sidecar(&side, &sidecar)?;
    println!("{} score vector(s) for {} examples", scores.len(), examples.len());
    Ok(())
}

fn fidelity_artifacts(run: &mut Run, predictor: &Predictor, dataset: &shlm_core::predictor::CriteriaDataset) -> Result<(), CliError> {
    let seed = run.cfg.seed();
    let fid = predictor_fidelity(predictor, dataset.heldout())?;
    let p = bootstrap_p_positive(&fid.per_example, 1000, seed)?;
    let record = FidelityRecord {
        topology: predictor.topology().to_string(),
        criterion: predictor.criterion().to_string(),
        spearman_global: fid.spearman_global,
        spearman_local: fid.spearman_local,
        mse: fid.mse,
        seed,
    };
    run.report("fidelity", &[record])?;
    run.write_json(
        "fidelity_detail.json",
        &json!({
            "fidelity": fid,
            "bootstrap_p": p,
            "heldout_target_variance": dataset.heldout_target_variance(),
        }),
    )?;
    println!(
        "held-out spearman {:.4} (per layer {:.4}), mse {:.5}, bootstrap p {p:.4}",
        fid.spearman_global, fid.spearman_local, fid.mse
    );
    Ok(())
}

fn train_predictor_cmd(run: &mut Run, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let model = run.model::<f64>(checkpoint)?;
    let stream = run.stream()?;
    let examples = run.examples(&stream, run.cfg.shots, model.config().max_seq_len);
    let pcfg = run.cfg.predictor.clone();
    let dataset = build_dataset(&model, &examples, run.cfg.criterion, run.cfg.shots, &pcfg, &run.collect_options())?;
    let (predictor, log) = train_predictor(&dataset, &pcfg, run.cfg.seed())?;
    let path = run.path("predictor.shlm");
    predictor.save(&path)?;
    run.write_json("predictor_log.json", &log)?;
    fidelity_artifacts(run, &predictor, &dataset)
}

fn eval_predictor_cmd(run: &mut Run, checkpoint: &Option<PathBuf>, flag: &Option<PathBuf>) -> Result<(), CliError> {
    let model = run.model::<f64>(checkpoint)?;
    let path = flag
        .clone()
        .or_else(|| run.cfg.predictor_checkpoint.clone())
        .ok_or_else(|| CliError::Config("predictor_checkpoint: required (config field or --predictor)".into()))?;
    run.record_input(&path)?;
    let predictor = Predictor::load(&path)?;
    let stream = run.stream()?;
    let examples = run.examples(&stream, run.cfg.shots, model.config().max_seq_len);
    let dataset = build_dataset(
        &model,
        &examples,
        predictor.criterion(),
        run.cfg.shots,
        predictor.config(),
        &run.collect_options(),
    )?;
    fidelity_artifacts(run, &predictor, &dataset)
}

fn sweep_cmd(run: &mut Run, checkpoint: &Option<PathBuf>, predictor: &Option<PathBuf>) -> Result<(), CliError> {
    let model64 = run.model::<f64>(checkpoint)?;
    let model = model64.cast::<f32>();
    let stream = run.stream()?;
    let tokens = run.eval_stream(&stream).to_vec();
    let records: Vec<EvalRecord> = match predictor {
        Some(p) => {
            run.record_input(p)?;
            let pred = Predictor::load(p)?;
            sparsity_sweep(&model, ScoreSource::Predictor(&pred), &run.cfg.sweep, &tokens)?
        }
        None => {
            let examples = run.examples(&stream, run.cfg.shots, model.config().max_seq_len);
            let scores =
                collect_criteria(&model64, &examples, run.cfg.criterion, Mode::Aggregate, &run.collect_options())?.into_vec();
            sparsity_sweep(&model, ScoreSource::Static(&scores[0]), &run.cfg.sweep, &tokens)?
        }
    };
    for r in &records {
        println!("{} sparsity {}: perplexity {}", r.strategy, r.sparsity, r.perplexity);
    }
    run.report("sweep", &records)
}

fn rank_variance_cmd(run: &mut Run, checkpoint: &Option<PathBuf>, criterion: &Option<String>) -> Result<(), CliError> {
    let criterion = criterion_or(criterion, CriterionKind::GradNorm)?;
    let model = run.model::<f64>(checkpoint)?;
    let stream = run.stream()?;
    let examples = run.examples(&stream, run.cfg.shots, model.config().max_seq_len);
    let table = rank_variance(&model, &examples, criterion, &run.collect_options())?;
    run.report("rank_variance", &table.rows)?;
    run.write_json("rank_variance_layers.json", &json!({ "criterion": criterion, "layer_variance": table.layer_variance }))?;
    for (l, v) in table.layer_variance.iter().enumerate() {
        println!("layer {l}: mean head-rank variance {v:.4}");
    }
    Ok(())
}

fn fewshot_cmd(run: &mut Run, checkpoint: &Option<PathBuf>) -> Result<(), CliError> {
    let model = run.model::<f64>(checkpoint)?;
    let stream = run.stream()?;
    let tokens = run.eval_stream(&stream).to_vec();
    let per = run.cfg.examples.div_ceil(run.cfg.templates.len());
    let study = FewshotStudy {
        templates: &run.cfg.templates,
        shots: &run.cfg.shots_list,
        prompts_per_template: per,
        criterion: run.cfg.criterion,
        collect: CollectOptions {
            target_only: run.cfg.target_only,
            ..Default::default()
        },
        sweep: run.cfg.sweep.clone(),
    };
    let rows = fewshot_study(&model, &stream.tokenizer, &study, &tokens)?;
    for r in &rows {
        println!("{}-shot {} sparsity {}: perplexity {}", r.shots, r.strategy, r.sparsity, r.perplexity);
    }
    run.report("fewshot", &rows)
}

fn flops_cmd(run: &mut Run, preset: &Option<String>, p1: Option<usize>) -> Result<(), CliError> {
    let (model, default_p1) = match preset {
        Some(name) => (
            opt_preset(name).ok_or_else(|| CliError::Config(format!("model_preset: unknown value {name:?}")))?,
            2048,
        ),
        None => (run.cfg.model.clone(), run.cfg.predictor.hidden_dim_for(&run.cfg.model)),
    };
    let p1 = p1.unwrap_or(default_p1);
    if p1 == 0 {
        return Err(CliError::Config("p1: must be at least 1".into()));
    }
    let rows: Vec<_> = Topology::ALL
        .iter()
        .map(|&t| {
            let f = predictor_flops(&model, t, p1);
            json!({
                "topology": t,
                "flops": f.flops,
                "reduction_vs_dejavu": f.reduction_vs_dejavu,
            })
        })
        .collect();
    let shadow = predictor_flops(&model, Topology::Shadow, p1);
    println!(
        "{}: shadow predictor {:.4e} FLOPs vs dejavu {:.4e}, reduction {:.2}%",
        preset.as_deref().unwrap_or("config model"),
        shadow.flops,
        shadow.dejavu_flops,
        100.0 * shadow.reduction_vs_dejavu
    );
    run.write_json("flops.json", &json!({ "model": model, "p1": p1, "topologies": rows }))
}

fn oracle_cmd(run: &mut Run, checkpoint: &Option<PathBuf>, scope: &Option<String>) -> Result<(), CliError> {
    let scope = scope.as_deref().map(parse::<PruneScope>).transpose()?.unwrap_or(PruneScope::Both);
    let model = run.model::<f64>(checkpoint)?;
    let stream = run.stream()?;
    let len = run.cfg.example_len.min(model.config().max_seq_len);
    let windows: Vec<Vec<u32>> = stream
        .val
        .chunks_exact(len)
        .take(run.cfg.oracle_windows)
        .map(|w| w.to_vec())
        .collect();
    let entries = oracle_ablation(&model, &windows, scope, MAX_ORACLE_UNITS)?;
    let path = run.path("oracle.csv");
    write_oracle_csv(&path, &entries)?;
    println!("{} units ablated over {} windows", entries.len(), windows.len());
    Ok(())
}
