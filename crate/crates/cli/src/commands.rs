use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use exitnet::evaluation::{
    emit_prediction_plot, emit_report, evaluate_model, latency_bench, predict, EvalReport, Inference, LatencyEntry,
    LatencyRow, PanelPrediction, ReportFormat,
};
use exitnet::gradcheck::{self, CaseReport};
use exitnet::rng::{derive_seed, derived, stream};
use exitnet::signal::{build_dataset, format_annotations, read_dataset, write_dataset, ArtifactKind, ArtifactRates};
use exitnet::trainer::{self, load_checkpoint, save_checkpoint, EpochRecord};
use exitnet::uncertainty::aggregate_exits;
use exitnet::{Checkpoint, ExitBundle, Model, Segment, Variant};
use serde_json::json;

use crate::config::{sha256_hex, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{
    prepare_output_dir, write_file, BenchArgs, Cli, Command, EvalArgs, GlobalArgs, GradcheckArgs, PredictArgs,
    SynthArgs, TrainArgs, VariantArg,
};

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => synth(g, a, out).map(drop),
        Command::Train(a) => train(g, a, out).map(drop),
        Command::Eval(a) => eval(g, a, out).map(drop),
        Command::Predict(a) => predict_plot(g, a, out).map(drop),
        Command::Gradcheck(a) => gradcheck(a, out).map(drop),
        Command::Bench(a) => bench(g, a, out).map(drop),
    }
}

fn say(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

/// Defaults, then the config file, then global flags. The root seed drives
/// training as well, so the two never disagree.
pub fn resolve(global: &GlobalArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = global.threads {
        cfg.threads = threads;
    }
    cfg.train.seed = cfg.seed;
    if cfg.threads > 1 {
        log::info!("--threads {} recorded; all kernels run on one thread", cfg.threads);
    }
    Ok(cfg)
}

fn load_split(dir: &Path, file: &str) -> CliResult<Vec<Segment>> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(CliError::Data(format!("missing dataset file {}", path.display())));
    }
    Ok(read_dataset(&path)?)
}

fn artifact_fraction(segments: &[Segment]) -> f64 {
    let total: usize = segments.iter().map(|s| s.y.len()).sum();
    let art: usize = segments.iter().map(Segment::artifact_count).sum();
    if total == 0 {
        0.0
    } else {
        art as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub digest: String,
    pub patients: [BTreeSet<u32>; 3],
    pub segments: [usize; 3],
    pub artifact_fraction: f64,
}

pub fn synth(global: &GlobalArgs, args: &SynthArgs, out: &mut dyn Write) -> CliResult<SynthSummary> {
    let mut cfg = resolve(global)?;
    let spec = &mut cfg.dataset.synth;
    if let Some(p) = args.patients {
        spec.patients = p;
    }
    if let Some(m) = args.minutes {
        spec.minutes = m;
    }
    if let Some(c) = args.channels {
        spec.channels = c;
    }
    if let Some(r) = args.artifact_rate {
        spec.rates = ArtifactRates::uniform(r / ArtifactKind::ARTIFACTS.len() as f64);
    }
    cfg.validate()?;
    prepare_output_dir(&args.out, global.force)?;

    let built = build_dataset(&cfg.dataset, cfg.seed)?;
    let splits = [("train", &built.splits.train), ("val", &built.splits.val), ("test", &built.splits.test)];
    let all: Vec<Segment> = splits.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    let fraction = artifact_fraction(&all);
    if fraction == 0.0 {
        log::warn!("dataset is entirely clean; models trained on it cannot learn artifacts");
    }
    let patients = built.splits.patients();
    let mut manifest_splits = serde_json::Map::new();
    for ((name, segs), pats) in splits.iter().zip(&patients) {
        let path = args.out.join(format!("{name}.e4gd"));
        write_dataset(&path, segs)?;
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        manifest_splits.insert(
            (*name).into(),
            json!({
                "file": format!("{name}.e4gd"),
                "patients": pats,
                "segments": segs.len(),
                "artifact_fraction": artifact_fraction(segs),
                "sha256": sha256_hex(&bytes),
            }),
        );
    }
    write_file(&args.out.join("annotations.txt"), format_annotations(&built.annotations).as_bytes())?;
    let digest = cfg.echo(&args.out)?;
    let manifest = json!({
        "seed": cfg.seed,
        "config_sha256": digest,
        "raw_segments": built.raw_segments,
        "artifact_fraction": fraction,
        "splits": manifest_splits,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&args.out.join("manifest.json"), format!("{text}\n").as_bytes())?;

    let segments = [splits[0].1.len(), splits[1].1.len(), splits[2].1.len()];
    let mut msg = String::new();
    for ((name, _), (pats, n)) in splits.iter().zip(patients.iter().zip(segments)) {
        let _ = writeln!(msg, "{name:<5} {:>3} patients {n:>5} segments", pats.len());
    }
    let _ = writeln!(msg, "artifact fraction {fraction:.4}, written to {}", args.out.display());
    say(out, &msg)?;
    Ok(SynthSummary { digest, patients, segments, artifact_fraction: fraction })
}

fn apply_variant(cfg: &mut RunConfig, variant: Option<VariantArg>, dropout: Option<f64>) -> CliResult<()> {
    let current_p = match cfg.train.variant {
        Variant::Mcdrop { p } => p,
        _ => exitnet::model::DEFAULT_DROPOUT,
    };
    let chosen = match variant {
        Some(VariantArg::Vanilla) => Some(Variant::Vanilla),
        Some(VariantArg::EarlyExit) => Some(Variant::EarlyExit),
        Some(VariantArg::Mcdrop) => Some(Variant::Mcdrop { p: dropout.unwrap_or(current_p) }),
        None => None,
    };
    if let Some(v) = chosen {
        cfg.train.variant = v;
        cfg.model.variant = v;
    } else if let (Some(p), Variant::Mcdrop { .. }) = (dropout, cfg.train.variant) {
        cfg.train.variant = Variant::Mcdrop { p };
        cfg.model.variant = cfg.train.variant;
    }
    if dropout.is_some() && !matches!(cfg.train.variant, Variant::Mcdrop { .. }) {
        return Err(CliError::Config(format!("--dropout applies to mcdrop, variant is {}", cfg.train.variant)));
    }
    if cfg.train.variant != cfg.model.variant {
        return Err(CliError::Config(format!(
            "train variant {} disagrees with model variant {}",
            cfg.train.variant, cfg.model.variant
        )));
    }
    Ok(())
}

/// Every segment must be `[input_channels, input_length]`.
fn check_geometry(model: &exitnet::ModelConfig, segments: &[Segment], what: &str) -> CliResult<()> {
    let want = [model.input_channels, model.input_length];
    if let Some(s) = segments.iter().find(|s| s.x.shape() != want) {
        return Err(CliError::Data(format!(
            "{what} segment has shape {:?}; model expects (C, T) = {want:?}",
            s.x.shape()
        )));
    }
    Ok(())
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let exits = history.first().map_or(0, |r| r.exit_losses.len());
    let mut s = String::from("epoch,train_loss,val_f1");
    for k in 1..=exits {
        let _ = write!(s, ",exit_{k}_loss");
    }
    s.push('\n');
    for r in history {
        let _ = write!(s, "{},{},{}", r.epoch, r.train_loss, r.val_f1);
        for l in &r.exit_losses {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
    }
    s
}

pub fn train(global: &GlobalArgs, args: &TrainArgs, out: &mut dyn Write) -> CliResult<Checkpoint> {
    let mut cfg = resolve(global)?;
    apply_variant(&mut cfg, args.variant, args.dropout)?;
    let t = &mut cfg.train;
    if let Some(v) = args.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    cfg.validate()?;
    let train_set = load_split(&args.data, "train.e4gd")?;
    let val_set = load_split(&args.data, "val.e4gd")?;
    check_geometry(&cfg.model, &train_set, "training")?;
    check_geometry(&cfg.model, &val_set, "validation")?;
    prepare_output_dir(&args.out, global.force)?;

    let model = Model::build(cfg.model.clone(), &mut derived(cfg.seed, &[stream::MODEL_INIT]))?;
    log::info!(
        "training {} ({} parameters) on {} segments, validating on {}",
        cfg.train.variant,
        model.parameter_count(),
        train_set.len(),
        val_set.len()
    );
    let ckpt = trainer::train(model, &train_set, &val_set, &cfg.train)?;
    save_checkpoint(&ckpt, &args.out.join("checkpoint.e4gc"))?;
    write_file(&args.out.join("history.csv"), history_csv(&ckpt.history).as_bytes())?;
    cfg.echo(&args.out)?;
    let best_f1 = ckpt.history.iter().find(|r| r.epoch == ckpt.best_epoch).map_or(f64::NAN, |r| r.val_f1);
    say(
        out,
        &format!(
            "{} epochs, best epoch {} with validation F1 {best_f1:.4}, written to {}\n",
            ckpt.history.len(),
            ckpt.best_epoch,
            args.out.display()
        ),
    )?;
    Ok(ckpt)
}

fn mc_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, &[stream::MC_SAMPLE])
}

fn load_model(path: &Path) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Data(format!("missing checkpoint {}", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

pub fn eval(global: &GlobalArgs, args: &EvalArgs, out: &mut dyn Write) -> CliResult<Vec<EvalReport>> {
    let mut cfg = resolve(global)?;
    if let Some(n) = args.samples {
        cfg.eval.samples = n;
    }
    cfg.validate()?;
    let checkpoints: Vec<Checkpoint> = args.checkpoint.iter().map(|p| load_model(p)).collect::<CliResult<_>>()?;
    if args.samples.is_some() {
        if let Some(c) = checkpoints.iter().find(|c| !matches!(c.model.variant(), Variant::Mcdrop { .. })) {
            return Err(CliError::Config(format!("--samples requires mcdrop checkpoints, got {}", c.model.variant())));
        }
    }
    let data = load_split(&args.data, args.split.file_name())?;
    prepare_output_dir(&args.out, global.force)?;
    let digest = cfg.echo(&args.out)?;

    let mut reports: Vec<EvalReport> = Vec::new();
    for (ckpt, path) in checkpoints.iter().zip(&args.checkpoint) {
        check_geometry(ckpt.model.config(), &data, "evaluation")?;
        let inference = Inference::for_model(&ckpt.model, cfg.eval.samples, mc_seed(&cfg));
        let seed = ckpt.train_config.as_ref().map_or(cfg.seed, |t| t.seed);
        log::info!("evaluating {} ({})", path.display(), ckpt.model.variant());
        let run = evaluate_model(&ckpt.model, &data, inference)?.run_metrics(seed);
        let name = ckpt.model.variant().name();
        match reports.iter_mut().find(|r| r.model == name) {
            Some(r) => r.runs.push(run),
            None => reports.push(EvalReport {
                model: name.into(),
                runs: vec![run],
                latency_ratio: None,
                config_digest: digest.clone(),
            }),
        }
    }
    let text = emit_report(&reports, ReportFormat::Text);
    write_file(&args.out.join("report.txt"), text.as_bytes())?;
    write_file(&args.out.join("report.csv"), emit_report(&reports, ReportFormat::Delimited).as_bytes())?;
    say(out, &text)?;
    Ok(reports)
}

fn exit_mask(logits: &exitnet::Tensor<f32>) -> CliResult<Vec<u8>> {
    Ok(aggregate_exits(&ExitBundle { logits: vec![logits.clone()] })?.predictions())
}

pub fn masks_csv(labels: &[u8], panels: &[PanelPrediction]) -> String {
    let mut s = String::from("t,label");
    for p in panels {
        let _ = write!(s, ",{}", p.title.replace(' ', "_"));
    }
    s.push('\n');
    for (t, y) in labels.iter().enumerate() {
        let _ = write!(s, "{t},{y}");
        for p in panels {
            let _ = write!(s, ",{}", p.predicted[t]);
        }
        s.push('\n');
    }
    s
}

pub fn predict_plot(global: &GlobalArgs, args: &PredictArgs, out: &mut dyn Write) -> CliResult<Vec<PanelPrediction>> {
    let mut cfg = resolve(global)?;
    if let Some(n) = args.samples {
        cfg.eval.samples = n;
    }
    cfg.validate()?;
    let ckpt = load_model(&args.checkpoint)?;
    let data = load_split(&args.data, args.split.file_name())?;
    let seg = data.get(args.index).ok_or_else(|| {
        CliError::Data(format!("segment index {} out of range; split has {} segments", args.index, data.len()))
    })?;
    let one = std::slice::from_ref(seg);
    check_geometry(ckpt.model.config(), one, "selected")?;
    prepare_output_dir(&args.out, global.force)?;

    let (_, bundles) = predict(&ckpt.model, one, Inference::SinglePass)?;
    let mut panels = Vec::new();
    for (k, logits) in bundles[0].logits.iter().enumerate() {
        panels.push(PanelPrediction { title: format!("exit {}", k + 1), predicted: exit_mask(logits)? });
    }
    let inference = Inference::for_model(&ckpt.model, cfg.eval.samples, mc_seed(&cfg));
    let (agg, _) = predict(&ckpt.model, one, inference)?;
    panels.push(PanelPrediction { title: "aggregate".into(), predicted: agg[0].predictions() });

    emit_prediction_plot(seg.x.data(), &seg.y, &panels, &args.out.join("prediction.svg"))?;
    write_file(&args.out.join("masks.csv"), masks_csv(&seg.y, &panels).as_bytes())?;
    cfg.echo(&args.out)?;
    say(out, &format!("{} panels written to {}\n", panels.len(), args.out.display()))?;
    Ok(panels)
}

pub fn gradcheck_table(reports: &[CaseReport], tolerance: f64) -> String {
    let mut s = format!("{:<22} {:>14}  status (tolerance {tolerance:e})\n", "op", "max_rel_error");
    for r in reports {
        let _ = writeln!(s, "{:<22} {:>14.3e}  {}", r.name, r.max_rel_error, if r.passed { "PASS" } else { "FAIL" });
    }
    s
}

pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CliResult<Vec<CaseReport>> {
    let mut cases = gradcheck::default_suite(0);
    if args.include_faulty {
        cases.push(gradcheck::corrupted_elu_case(0));
    }
    let tol = gradcheck::DEFAULT_TOLERANCE;
    let reports = gradcheck::run_suite(&cases, gradcheck::DEFAULT_EPS, tol)?;
    say(out, &gradcheck_table(&reports, tol))?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(CliError::Verification(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

pub fn latency_table(rows: &[LatencyRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$}  {:>12}  {:>7}\n", "model", "mean_s", "ratio");
    for r in rows {
        let _ = writeln!(s, "{:<width$}  {:>12.6}  {:>6.2}x", r.name, r.mean_seconds, r.ratio);
    }
    s
}

pub fn bench(global: &GlobalArgs, args: &BenchArgs, out: &mut dyn Write) -> CliResult<Vec<LatencyRow>> {
    let mut cfg = resolve(global)?;
    if let Some(n) = args.samples {
        cfg.eval.samples = n;
    }
    if let Some(n) = args.runs {
        cfg.eval.latency_runs = n;
    }
    cfg.validate()?;
    let checkpoints: Vec<Checkpoint> = args.checkpoint.iter().map(|p| load_model(p)).collect::<CliResult<_>>()?;
    let data = load_split(&args.data, args.split.file_name())?;
    for c in &checkpoints {
        check_geometry(c.model.config(), &data, "benchmark")?;
    }
    if let Some(dir) = &args.out {
        prepare_output_dir(dir, global.force)?;
    }

    let mut names: Vec<String> = Vec::new();
    for c in &checkpoints {
        let base = match c.model.variant() {
            Variant::Mcdrop { .. } => format!("mcdrop({})", cfg.eval.samples),
            v => v.name().to_string(),
        };
        let dup = names.iter().filter(|n| n.split('#').next() == Some(base.as_str())).count();
        names.push(if dup == 0 { base } else { format!("{base}#{}", dup + 1) });
    }
    let seed = mc_seed(&cfg);
    let mut entries: Vec<LatencyEntry<'_>> = checkpoints
        .iter()
        .zip(names)
        .map(|(c, name)| {
            let inference = Inference::for_model(&c.model, cfg.eval.samples, seed);
            let model = &c.model;
            LatencyEntry { name, run: Box::new(move |segs: &[Segment]| predict(model, segs, inference).map(drop)) }
        })
        .collect();
    let rows = latency_bench(&mut entries, &data, cfg.eval.latency_runs)?;
    let table = latency_table(&rows);
    if let Some(dir) = &args.out {
        write_file(&dir.join("latency.txt"), table.as_bytes())?;
        cfg.echo(dir)?;
    }
    say(out, &table)?;
    Ok(rows)
}
