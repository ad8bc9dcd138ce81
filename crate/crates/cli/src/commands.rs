// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use logitflow::data::{Dataset, Example, ExampleKind, HopKind, HopQuery, Vocab};
use logitflow::experiments::{build_kg_task, run_claim, write_flow_artifacts, ClaimStatus, Precision, Scale};
use logitflow::interp::{
    activation_patch, aggregate_logit_flow, compare_case_sets, corrupt_subject, extract_back_attention_scores,
    group_columns, logit_difference_curve, write_csv, write_heatmap, LogitFlowMap, MatrixExport, PatchResult,
};
use logitflow::model::{BackAttentionConfig, Checkpoint, Transformer};
use logitflow::numerics::Tensor;
use logitflow::training::{evaluate_exact_match, finetune_back_attention, train, Accuracy, EpochRecord};

use crate::config::{ExperimentConfig, Task};
use crate::manifest::Run;
use crate::CliError;

fn progress(r: &EpochRecord) {
    println!("{}", r.progress_line());
}

fn print_accuracy(acc: &Accuracy) {
    println!("{:<12} {:>8} {:>8} {:>9}", "kind", "correct", "total", "accuracy");
    for (k, &(c, t)) in &acc.counts {
        println!("{:<12} {c:>8} {t:>8} {:>8.2}%", k.name(), 100.0 * c as f64 / t.max(1) as f64);
    }
    if acc.is_empty() {
        println!("(no examples)");
    }
}

fn load_dataset(path: &Path, vocab: &Vocab) -> Result<Dataset, CliError> {
    let ds = Dataset::load(path)?;
    if ds.header.vocab_sha256 != vocab.hash() {
        return Err(CliError::Validation(format!(
            "{}: dataset vocabulary does not match the model's",
            path.display()
        )));
    }
    Ok(ds)
}

/// Writes the dataset files for the configured task into `dir`.
fn write_datasets(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let vocab = cfg.vocab();
    let mut files = Vec::new();
    let mut save = |name: &str, params: serde_json::Value, examples: Vec<Example>| -> Result<(), CliError> {
        let path = dir.join(format!("{name}.jsonl"));
        Dataset::new(cfg.seed, params, &vocab, name, examples)?.save(&path)?;
        files.push(path);
        Ok(())
    };
    match cfg.task {
        Task::Arithmetic => {
            let split = logitflow::data::gen_arithmetic_with(cfg.seed, &cfg.data.arithmetic)?;
            let params = serde_json::to_value(cfg.data.arithmetic).map_err(logitflow::Error::from)?;
            save("train", params.clone(), split.train)?;
            save("test", params, split.test)?;
        }
        Task::Kg => {
            let task = build_kg_task(&cfg.kg_setup(), cfg.seed)?;
            let queries = task
                .queries
                .iter()
                .map(|q| q.to_example(&task.vocab))
                .collect::<logitflow::Result<Vec<_>>>()?;
            let params = serde_json::to_value(&cfg.data).map_err(logitflow::Error::from)?;
            save("train", params.clone(), task.train)?;
            save("queries", params, queries)?;
        }
    }
    Ok(files)
}

pub fn gen_data(cfg: &ExperimentConfig, out: PathBuf) -> Result<(), CliError> {
    let mut run = Run::start("gen-data", cfg, out)?;
    for path in write_datasets(cfg, &run.out.clone())? {
        let ds = Dataset::load(&path)?;
        let counts: Vec<String> = ds.count_by_kind().iter().map(|(k, n)| format!("{}={n}", k.name())).collect();
        println!("{}: {} examples ({})", path.display(), ds.examples.len(), counts.join(", "));
        run.artifact(path);
    }
    run.finish()?;
    Ok(())
}

/// Training and evaluation sets: `train.jsonl` plus the held-out file of the task.
fn training_data(
    cfg: &ExperimentConfig,
    data: Option<&Path>,
    run: &mut Run,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>), CliError> {
    let dir = match data {
        Some(d) => d.to_path_buf(),
        None => {
            let d = run.out.join("data");
            write_datasets(cfg, &d)?;
            d
        }
    };
    let vocab = cfg.vocab();
    let train_path = dir.join("train.jsonl");
    let held_path = dir.join(match cfg.task {
        Task::Arithmetic => "test.jsonl",
        Task::Kg => "queries.jsonl",
    });
    let train_set = load_dataset(&train_path, &vocab)?.examples;
    let held = load_dataset(&held_path, &vocab)?.examples;
    run.input(&train_path)?;
    run.input(&held_path)?;
    // Per-epoch evaluation set: double sums, or distinct first-hop prompts.
    let mut seen = std::collections::BTreeSet::new();
    let eval: Vec<Example> = held
        .iter()
        .filter(|e| match cfg.task {
            Task::Arithmetic => e.kind == ExampleKind::DoubleSum,
            Task::Kg => e.kind == ExampleKind::FirstHop && seen.insert(e.prompt_ids.clone()),
        })
        .cloned()
        .collect();
    Ok((train_set, eval, held))
}

fn save_model(run: &mut Run, cfg: &ExperimentConfig, model: &Transformer, name: &str) -> Result<PathBuf, CliError> {
    let path = run.out.join(name);
    Checkpoint::new(model)
        .with_metadata("vocab_sha256", cfg.vocab().hash())?
        .with_metadata("task", cfg.task)?
        .save(&path)?;
    run.checkpoint(&path)?;
    println!("checkpoint: {}", path.display());
    Ok(path)
}

pub fn train_cmd(cfg: &ExperimentConfig, data: Option<&Path>, out: PathBuf) -> Result<(), CliError> {
    let vocab = cfg.vocab();
    let mut run = Run::start("train", cfg, out)?;
    let (train_set, eval, held) = training_data(cfg, data, &mut run)?;
    let mc = cfg.model_config(vocab.len());
    let tc = cfg.train_config();
    macro_rules! typed {
        ($s:ty) => {{
            let mut m = Transformer::<$s>::new(mc, cfg.back_attention.clone())?;
            let r = train(&mut m, &train_set, &eval, &tc, &mut progress)?;
            (m.cast::<f64>(), r)
        }};
    }
    let (model, report) = match cfg.precision {
        Precision::F32 => typed!(f32),
        Precision::F64 => typed!(f64),
    };
    run.write_json("report.json", &report)?;
    save_model(&mut run, cfg, &model, "model.ckpt")?;
    let acc = evaluate_exact_match(&model, &held)?;
    print_accuracy(&acc);
    run.write_json("accuracy.json", &acc)?;
    run.finish()?;
    Ok(())
}

/// Loads a checkpoint and rejects it when it was trained on another vocabulary.
fn load_checkpoint(path: &Path, cfg: &mut ExperimentConfig) -> Result<Transformer, CliError> {
    let ck = Checkpoint::load(path)?;
    if let Some(h) = ck.metadata.get("vocab_sha256").and_then(|v| v.as_str()) {
        if h != cfg.vocab().hash() {
            return Err(CliError::Validation(format!(
                "{}: checkpoint vocabulary does not match the configured task",
                path.display()
            )));
        }
    }
    let m = &ck.model.config;
    if m.vocab_size != cfg.vocab().len() {
        return Err(CliError::Validation(format!(
            "checkpoint vocab size {} != task vocab size {}",
            m.vocab_size,
            cfg.vocab().len()
        )));
    }
    // Echo what will actually run.
    cfg.model.num_layers = m.num_layers;
    cfg.model.model_dim = m.model_dim;
    cfg.model.num_heads = m.num_heads;
    cfg.model.ffn_width = Some(m.ffn_width);
    cfg.model.max_positions = m.max_positions;
    cfg.model.activation = m.activation;
    cfg.model.normalize = m.normalize;
    cfg.back_attention = ck.model.back_attention.clone().or(cfg.back_attention.take());
    Ok(ck.model)
}

pub fn eval_cmd(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path, out: PathBuf) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    let model = load_checkpoint(checkpoint, &mut cfg)?;
    let ds = load_dataset(data, &cfg.vocab())?;
    let mut run = Run::start("eval", &cfg, out)?;
    run.input(checkpoint)?;
    run.input(data)?;
    let acc = evaluate_exact_match(&model, &ds.examples)?;
    print_accuracy(&acc);
    run.write_json("accuracy.json", &acc)?;
    run.finish()?;
    Ok(())
}

pub fn finetune_cmd(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: Option<&Path>,
    ba: BackAttentionConfig,
    out: PathBuf,
) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    let base = load_checkpoint(checkpoint, &mut cfg)?;
    if base.back_attention.is_some() {
        return Err(CliError::Validation("checkpoint already has back attention".into()));
    }
    ba.validate(base.config.num_layers)?;
    cfg.back_attention = Some(ba.clone());
    let mut run = Run::start("finetune-ba", &cfg, out)?;
    run.input(checkpoint)?;
    let (train_set, eval, held) = training_data(&cfg, data, &mut run)?;
    let tc = cfg.train_config();
    macro_rules! typed {
        ($s:ty) => {{
            let b = base.cast::<$s>();
            let (m, r) = finetune_back_attention(&b, ba, &train_set, &eval, &tc, &mut progress)?;
            (m.cast::<f64>(), r)
        }};
    }
    let (model, report) = match cfg.precision {
        Precision::F32 => typed!(f32),
        Precision::F64 => typed!(f64),
    };
    run.write_json("report.json", &report)?;
    save_model(&mut run, &cfg, &model, "model_ba.ckpt")?;
    let acc = evaluate_exact_match(&model, &held)?;
    print_accuracy(&acc);
    run.write_json("accuracy.json", &acc)?;
    run.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    LogitFlow,
    Patch,
    LogitDiff,
    BaScores,
    Compare,
}

impl Analysis {
    fn name(self) -> &'static str {
        match self {
            Self::LogitFlow => "logit-flow",
            Self::Patch => "patch",
            Self::LogitDiff => "logit-diff",
            Self::BaScores => "ba-scores",
            Self::Compare => "compare",
        }
    }
}

pub struct AnalyzeArgs<'a> {
    pub checkpoint: &'a Path,
    pub queries: &'a Path,
    pub kind: Option<ExampleKind>,
    pub correct_only: bool,
}

fn hop_query(e: &Example) -> Option<HopQuery> {
    let kind = match e.kind {
        ExampleKind::FirstHop => HopKind::FirstHop,
        ExampleKind::SecondHop => HopKind::SecondHop,
        ExampleKind::TwoHop => HopKind::TwoHop,
        _ => return None,
    };
    Some(HopQuery {
        kind,
        e1: e.meta_usize("e1")?,
        r1: e.meta_usize("r1")?,
        e2: e.meta_usize("e2")?,
        r2: e.meta_usize("r2")?,
        e3: e.meta_usize("e3")?,
        gold: e.meta_usize("gold")?,
        conflict_r1: e.meta_usize("conflict_r1"),
        conflict_r2: e.meta_usize("conflict_r2"),
        single_hop_conflict: e.meta_usize("single_hop_conflict"),
        prompt: e.prompt_ids.clone(),
        spans: e.spans.clone(),
    })
}

fn labels_of(e: &Example) -> Vec<String> {
    e.spans.iter().map(|s| s.label.clone()).collect()
}

fn export(run: &mut Run, stem: &str, kind: &str, m: &Tensor, labels: &[String]) -> Result<(), CliError> {
    let e = MatrixExport {
        kind,
        matrix: m,
        labels,
    };
    let csv = run.out.join(format!("{stem}.csv"));
    write_csv(&csv, &[e])?;
    let svg = run.out.join(format!("{stem}.svg"));
    write_heatmap(&svg, stem, &e)?;
    run.artifact(csv);
    run.artifact(svg);
    Ok(())
}

fn mean_of(mut ts: Vec<Tensor>) -> Result<Tensor, CliError> {
    let n = ts.len() as f64;
    let mut acc = ts.pop().ok_or_else(|| CliError::Validation("no queries to analyse".into()))?;
    for t in &ts {
        acc.add_assign(t)?;
    }
    Ok(acc.scale(1.0 / n))
}

pub fn analyze(cfg: &ExperimentConfig, which: Analysis, args: &AnalyzeArgs<'_>, out: PathBuf) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    let model = load_checkpoint(args.checkpoint, &mut cfg)?;
    if which == Analysis::BaScores && model.back_attention.is_none() {
        return Err(logitflow::Error::Absent("back attention").into());
    }
    let vocab = cfg.vocab();
    let ds = load_dataset(args.queries, &vocab)?;
    let mut run = Run::start(&format!("analyze {}", which.name()), &cfg, out)?;
    run.input(args.checkpoint)?;
    run.input(args.queries)?;

    let mut examples: Vec<&Example> = ds
        .examples
        .iter()
        .filter(|e| args.kind.is_none_or(|k| e.kind == k))
        .collect();
    if args.correct_only {
        let verdicts = logitflow::training::exact_match_verdicts(&model, &ds.examples)?;
        let ok: std::collections::HashSet<*const Example> = ds
            .examples
            .iter()
            .zip(verdicts)
            .filter(|(_, v)| *v)
            .map(|(e, _)| e as *const Example)
            .collect();
        examples.retain(|e| ok.contains(&(*e as *const Example)));
    }
    // Averages need a common column layout.
    if which != Analysis::Compare {
        if let Some(first) = examples.first() {
            let labels = labels_of(first);
            let len = first.prompt_ids.len();
            examples.retain(|e| labels_of(e) == labels && e.prompt_ids.len() == len);
        }
        if which == Analysis::LogitDiff {
            examples.retain(|e| e.meta_usize("single_hop_conflict").is_some());
        }
        examples.truncate(cfg.analysis.max_queries);
    }
    println!("{} queries selected", examples.len());

    match which {
        Analysis::LogitFlow => {
            let mut maps = Vec::new();
            for e in &examples {
                let trace = model.trace(&e.prompt_ids)?;
                maps.push(aggregate_logit_flow(
                    &model,
                    &trace,
                    e.answer_ids[0],
                    cfg.analysis.top_k,
                    Some(&e.spans),
                    cfg.analysis.normalization,
                )?);
            }
            if maps.is_empty() {
                return Err(CliError::Validation("no queries to analyse".into()));
            }
            let mean = LogitFlowMap::mean(&maps)?;
            for p in write_flow_artifacts(&run.out.clone(), "logit_flow", &mean)? {
                run.artifact(p);
            }
            for label in &mean.labels {
                println!(
                    "{label}: attention share {:.2}%, FFN attribution share {:.2}%",
                    100.0 * mean.attn_share(label).unwrap_or(0.0),
                    100.0 * mean.attribution_share(label).unwrap_or(0.0)
                );
            }
        }
        Analysis::Patch => {
            let mut results = Vec::new();
            for (i, e) in examples.iter().enumerate() {
                let corrupt = corrupt_subject(&vocab, &e.prompt_ids, &e.spans, cfg.seed.wrapping_add(i as u64))?;
                results.push(activation_patch(&model, &e.prompt_ids, &corrupt, e.answer_ids[0])?);
            }
            let mean = PatchResult::mean_effects(&results)?;
            let first = examples.first().expect("non-empty after mean");
            export(&mut run, "patch_positions", "patch_effect", &mean, &(0..mean.cols()).map(|p| p.to_string()).collect::<Vec<_>>())?;
            let grouped = group_columns(&mean, &first.spans)?;
            export(&mut run, "patch_spans", "patch_effect", &grouped, &labels_of(first))?;
        }
        Analysis::LogitDiff => {
            let mut curves = Vec::new();
            let mut labels = Vec::new();
            for e in &examples {
                let trace = model.trace(&e.prompt_ids)?;
                let c = vocab.entity(e.meta_usize("single_hop_conflict").expect("filtered"))?;
                let curve = logit_difference_curve(&model, &trace, e.answer_ids[0], c, &e.spans, cfg.analysis.reduce)?;
                labels = curve.labels.clone();
                curves.push(curve.values);
            }
            let mean = mean_of(curves)?;
            export(&mut run, "logit_diff", "logit_difference", &mean, &labels)?;
        }
        Analysis::BaScores => {
            let mut grids = Vec::new();
            for e in &examples {
                let trace = model.trace(&e.prompt_ids)?;
                let s = extract_back_attention_scores(&trace)?;
                grids.push(group_columns(&s.grid(e.prompt_ids.len() - 1), &e.spans)?);
            }
            let mean = mean_of(grids)?;
            export(&mut run, "ba_scores", "back_attention_score", &mean, &labels_of(examples[0]))?;
        }
        Analysis::Compare => {
            let queries: Vec<HopQuery> = examples.iter().filter_map(|e| hop_query(e)).collect();
            let cmp = compare_case_sets(&model, &vocab, &queries, &cfg.compare_config())?;
            let [c, b, o] = cmp.split();
            println!(
                "{} two-hop queries: {c:.2}% correct, {b:.2}% bridge errors, {o:.2}% other-conflict errors",
                cmp.total
            );
            for (name, set) in [("correct", &cmp.correct_set), ("bridge", &cmp.bridge_set)] {
                println!(
                    "{name}: {} cases, {} analysed, r1 share {}",
                    set.count,
                    set.analysed,
                    set.r1_share.map_or("n/a".into(), |s| format!("{:.2}%", 100.0 * s))
                );
                if let Some(map) = &set.flow {
                    for p in write_flow_artifacts(&run.out.clone(), &format!("{name}_flow"), map)? {
                        run.artifact(p);
                    }
                }
            }
            run.write_json("comparison.json", &cmp)?;
        }
    }
    run.finish()?;
    Ok(())
}

pub fn repro(id: &str, scale: Scale, out: PathBuf) -> Result<(), CliError> {
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    println!("# repro {id} at scale {scale:?}");
    let report = run_claim(id, scale, Some(&out), &mut |line| println!("{line}"))?;
    for l in &report.lines {
        println!("{l}");
    }
    let metrics: BTreeMap<_, _> = report.metrics.iter().collect();
    for (k, v) in metrics {
        println!("metric {k} = {v}");
    }
    println!("{}", report.summary());
    if report.status == ClaimStatus::Fail {
        return Err(CliError::Acceptance(report.summary()));
    }
    Ok(())
}
