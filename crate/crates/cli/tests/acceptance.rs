//! Acceptance suite. Runs every criterion at its pinned tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use exitnet::evaluation::{EvalReport, LatencyRow};
use exitnet::losses::{ensemble_loss_value, exit_loss_value};
use exitnet::model::LayerShape;
use exitnet::rng::{derived, seeded, stream};
use exitnet::signal::{
    apply_filter, augment_mix, design_bandpass, design_notch, preprocess, read_dataset, segment, synth_generate,
    Annotation, ArtifactKind, FilterMode, PreprocessConfig, Recording, SynthSpec, SAMPLE_RATE,
};
use exitnet::trainer::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use exitnet::uncertainty::{aggregate_exits, brier, predictive_confidence, predictive_entropy};
use exitnet::{Checkpoint, ExitBundle, LossWeights, Model, ModelConfig, Phase, Tensor, Variant};
use exitnet_cli::{commands, BenchArgs, EvalArgs, GlobalArgs, GradcheckArgs, SplitArg, SynthArgs, TrainArgs, VariantArg};
use rand::Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(id: usize, title: &'static str, checks: &[(bool, String)], extra: String) -> Outcome {
    let failed: Vec<&str> = checks.iter().filter(|(ok, _)| !ok).map(|(_, m)| m.as_str()).collect();
    let detail = if failed.is_empty() { extra } else { format!("{extra}; failed: {}", failed.join("; ")) };
    Outcome { id, title, passed: failed.is_empty(), detail }
}

fn global(seed: u64) -> GlobalArgs {
    GlobalArgs { config: None, seed: Some(seed), threads: None, force: true }
}

fn sink() -> Vec<u8> {
    Vec::new()
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let result = commands::gradcheck(&GradcheckArgs { include_faulty: false }, &mut sink());
    let secs = start.elapsed().as_secs_f64();
    let required = [
        "conv1d",
        "maxpool1d",
        "upsample_nearest",
        "batchnorm1d_train",
        "elu",
        "concat_channels",
        "softmax_cross_entropy",
        "dice_loss",
    ];
    match result {
        Ok(reports) => {
            let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            let names: BTreeSet<&str> = reports.iter().map(|r| r.name).collect();
            let checks = [
                (worst < 1e-4, format!("max relative error {worst:.2e}")),
                (required.iter().all(|op| names.contains(op)), format!("ops covered {names:?}")),
                (secs < 60.0, format!("runtime {secs:.1} s")),
            ];
            outcome(1, "gradient oracle", &checks, format!("{} ops, max rel err {worst:.2e}, {secs:.2} s", reports.len()))
        }
        Err(e) => outcome(1, "gradient oracle", &[(false, e.to_string())], String::new()),
    }
}

/// Output shapes for a 1 x 2500 input, per layer, in execution order.
const SHAPE_TABLE: &[(&str, &str, [usize; 2])] = &[
    ("encoder1", "conv_bn_elu", [5, 2500]),
    ("encoder1", "max_pool", [5, 1250]),
    ("encoder2", "conv_bn_elu", [7, 1250]),
    ("encoder2", "max_pool", [7, 625]),
    ("encoder3", "conv_bn_elu", [9, 625]),
    ("encoder3", "max_pool", [9, 312]),
    ("encoder4", "conv_bn_elu", [12, 312]),
    ("encoder4", "max_pool", [12, 156]),
    ("encoder5", "conv_bn_elu", [16, 156]),
    ("encoder5", "max_pool", [16, 78]),
    ("bottleneck", "conv_bn_elu", [22, 78]),
    ("decoder1", "upsample", [22, 156]),
    ("decoder1", "conv_bn_elu", [16, 156]),
    ("decoder1", "concatenate", [32, 156]),
    ("decoder1", "conv_bn_elu_merge", [16, 156]),
    ("exit1", "upsample", [16, 2500]),
    ("exit1", "conv", [2, 2500]),
    ("decoder2", "upsample", [16, 312]),
    ("decoder2", "conv_bn_elu", [12, 312]),
    ("decoder2", "concatenate", [24, 312]),
    ("decoder2", "conv_bn_elu_merge", [12, 312]),
    ("exit2", "upsample", [12, 2500]),
    ("exit2", "conv", [2, 2500]),
    ("decoder3", "upsample", [12, 625]),
    ("decoder3", "conv_bn_elu", [9, 625]),
    ("decoder3", "concatenate", [18, 625]),
    ("decoder3", "conv_bn_elu_merge", [9, 625]),
    ("exit3", "upsample", [9, 2500]),
    ("exit3", "conv", [2, 2500]),
    ("decoder4", "upsample", [9, 1250]),
    ("decoder4", "conv_bn_elu", [7, 1250]),
    ("decoder4", "concatenate", [14, 1250]),
    ("decoder4", "conv_bn_elu_merge", [7, 1250]),
    ("exit4", "upsample", [7, 2500]),
    ("exit4", "conv", [2, 2500]),
    ("decoder5", "upsample", [7, 2500]),
    ("decoder5", "conv_bn_elu", [5, 2500]),
    ("decoder5", "concatenate", [10, 2500]),
    ("decoder5", "conv_bn_elu_merge", [5, 2500]),
    ("head", "conv_elu", [5, 2500]),
    ("head", "conv", [2, 2500]),
];

fn shape_conformance() -> Outcome {
    let model = Model::build(ModelConfig::default(), &mut seeded(0)).unwrap();
    let x = Tensor::from_fn(&[1, 2500], |i| ((i as f32) * 0.02).cos());
    let mut trace: Vec<LayerShape> = Vec::new();
    model.forward_traced(&x, Phase::Eval, &mut seeded(0), Some(&mut trace)).unwrap();
    let mut mismatches = Vec::new();
    for (i, (block, layer, want)) in SHAPE_TABLE.iter().enumerate() {
        let got = trace.get(i).map(|t| {
            let s = if t.shape.len() == 3 && t.shape[0] == 1 { &t.shape[1..] } else { &t.shape[..] };
            (t.block.as_str(), t.layer, s.to_vec())
        });
        if got != Some((block, layer, want.to_vec())) {
            mismatches.push(format!("row {i} {block}/{layer}: {got:?}"));
        }
    }
    let checks = [
        (trace.len() == SHAPE_TABLE.len(), format!("{} layers traced, {} expected", trace.len(), SHAPE_TABLE.len())),
        (mismatches.is_empty(), mismatches.join(", ")),
    ];
    outcome(2, "shape conformance", &checks, format!("{} layer shapes exact", SHAPE_TABLE.len()))
}

fn entropy_of(p: &exitnet::uncertainty::ProbMap) -> Vec<f64> {
    predictive_entropy(p).data().to_vec()
}

fn probability_invariants() -> Outcome {
    let mut rng = seeded(33);
    let ln2 = std::f64::consts::LN_2;
    let (mut sum_err, mut ent_lo, mut ent_hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    let (mut conf_lo, mut conf_hi, mut brier_lo, mut brier_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut jensen_gap = f64::INFINITY;
    for _ in 0..1000 {
        let b = rng.random_range(1..=6);
        let t = rng.random_range(1..=64);
        let scale: f32 = rng.random_range(0.1..8.0);
        let normal = Normal::new(0.0f32, scale).unwrap();
        let logits: Vec<Tensor<f32>> = (0..b).map(|_| Tensor::from_fn(&[2, t], |_| normal.sample(&mut rng))).collect();
        let labels: Vec<u8> = (0..t).map(|_| rng.random_range(0..2u8)).collect();
        let bundle = ExitBundle { logits };
        let agg = aggregate_exits(&bundle).unwrap();
        for k in 0..t {
            sum_err = sum_err.max((agg.prob(0, k) + agg.prob(1, k) - 1.0).abs());
        }
        let h = entropy_of(&agg);
        for &v in &h {
            ent_lo = ent_lo.min(v);
            ent_hi = ent_hi.max(v);
        }
        for &c in predictive_confidence(&agg).data() {
            conf_lo = conf_lo.min(c);
            conf_hi = conf_hi.max(c);
        }
        let bs = brier(&agg, &labels).unwrap();
        brier_lo = brier_lo.min(bs);
        brier_hi = brier_hi.max(bs);
        let per_exit: Vec<Vec<f64>> = bundle
            .logits
            .iter()
            .map(|l| entropy_of(&aggregate_exits(&ExitBundle { logits: vec![l.clone()] }).unwrap()))
            .collect();
        for k in 0..t {
            let mean_h = per_exit.iter().map(|e| e[k]).sum::<f64>() / b as f64;
            jensen_gap = jensen_gap.min(h[k] - mean_h);
        }
    }
    let checks = [
        (sum_err <= 1e-6, format!("column sum error {sum_err:.2e}")),
        (ent_lo >= 0.0 && ent_hi <= ln2, format!("entropy range [{ent_lo}, {ent_hi}]")),
        (conf_lo >= 0.5 && conf_hi <= 1.0, format!("confidence range [{conf_lo}, {conf_hi}]")),
        (brier_lo >= 0.0 && brier_hi <= 2.0, format!("brier range [{brier_lo}, {brier_hi}]")),
        (jensen_gap >= -1e-8, format!("min entropy gap {jensen_gap:.2e}")),
    ];
    outcome(
        3,
        "probability invariants",
        &checks,
        format!("1000 bundles, sum err {sum_err:.1e}, min Jensen gap {jensen_gap:.1e}"),
    )
}

/// Lag in samples that maximises the cross-correlation of `a` and `b`.
fn best_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
    let n = a.len() as i64;
    (-max_lag..=max_lag)
        .max_by(|&l1, &l2| {
            let corr = |lag: i64| -> f64 {
                (0..n).filter(|&i| (0..n).contains(&(i + lag))).map(|i| a[i as usize] * b[(i + lag) as usize]).sum()
            };
            corr(l1).total_cmp(&corr(l2))
        })
        .unwrap()
}

fn filter_suite() -> Outcome {
    let start = Instant::now();
    let cfg = PreprocessConfig::default();
    let fs = SAMPLE_RATE;
    let bp = design_bandpass(cfg.low_hz, cfg.high_hz, fs, cfg.order).unwrap();
    let notch = design_notch(cfg.notch_hz, cfg.notch_q, fs).unwrap();
    let chain = cfg.cascade().unwrap();
    let (dc, nyq) = (bp.magnitude(0.0, fs), bp.magnitude(fs / 2.0, fs));
    let notch_db = 20.0 * notch.magnitude(60.0, fs).max(1e-300).log10();
    let chain_db = 20.0 * (chain.magnitude(60.0, fs).max(1e-300) / chain.magnitude(10.0, fs)).log10();
    let radius = [bp.pole_radius(), notch.pole_radius(), chain.pole_radius()].into_iter().fold(0.0, f64::max);

    let x: Vec<f64> = (0..2500).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / fs).sin()).collect();
    let y = apply_filter(&x, &chain, FilterMode::ForwardBackward).unwrap();
    let lag = best_lag(&x[250..2250], &y[250..2250], 25);
    let secs = start.elapsed().as_secs_f64();
    let checks = [
        (dc < 1e-12 && nyq < 1e-12, format!("|H| at DC {dc:.1e}, Nyquist {nyq:.1e}")),
        (notch_db <= -40.0 && chain_db <= -40.0, format!("60 Hz attenuation notch {notch_db:.1} dB, chain {chain_db:.1} dB")),
        (bp.is_stable() && notch.is_stable() && chain.is_stable(), format!("max pole radius {radius:.6}")),
        (lag == 0, format!("5 Hz lag {lag} samples")),
        (secs < 10.0, format!("runtime {secs:.2} s")),
    ];
    outcome(
        4,
        "filter suite",
        &checks,
        format!("notch {notch_db:.0} dB, pole radius {radius:.4}, lag {lag}, {secs:.2} s"),
    )
}

fn loss_decomposition() -> Outcome {
    let mut rng = seeded(44);
    let mut one_hot_err = 0.0f64;
    let mut linear_err = 0.0f64;
    for _ in 0..50 {
        let t = rng.random_range(8..=128);
        let logits: Vec<Tensor<f32>> = (0..5).map(|_| Tensor::from_fn(&[2, t], |_| rng.random_range(-4.0..4.0))).collect();
        let labels: Vec<u8> = (0..t).map(|_| rng.random_range(0..2u8)).collect();
        let bundle = ExitBundle { logits };
        let unit = LossWeights::uniform(1);
        let exit_losses: Vec<f64> = bundle.logits.iter().map(|l| exit_loss_value(l, &labels, &unit).unwrap()).collect();

        let first = LossWeights { alpha: vec![1.0, 0.0, 0.0, 0.0, 0.0], ..LossWeights::uniform(5) };
        one_hot_err = one_hot_err.max((ensemble_loss_value(&bundle, &labels, &first).unwrap() - exit_losses[0]).abs());

        let a: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
        let (s, u) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + u * y).collect();
        let value = |alpha: &[f64]| {
            ensemble_loss_value(&bundle, &labels, &LossWeights { alpha: alpha.to_vec(), ..LossWeights::uniform(5) }).unwrap()
        };
        let brute: f64 = combo.iter().zip(&exit_losses).map(|(w, l)| w * l).sum();
        linear_err = linear_err.max((value(&combo) - brute).abs());
        linear_err = linear_err.max((value(&combo) - (s * value(&a) + u * value(&b))).abs());
    }
    let checks = [
        (one_hot_err <= 1e-6, format!("one-hot error {one_hot_err:.2e}")),
        (linear_err <= 1e-6, format!("linearity error {linear_err:.2e}")),
    ];
    outcome(8, "loss decomposition", &checks, format!("one-hot err {one_hot_err:.1e}, linearity err {linear_err:.1e}"))
}

fn synth_into(dir: &Path, seed: u64, patients: Option<u32>, minutes: Option<f64>) -> PathBuf {
    let args = SynthArgs { out: dir.to_path_buf(), patients, minutes, channels: None, artifact_rate: None };
    commands::synth(&global(seed), &args, &mut sink()).unwrap();
    dir.to_path_buf()
}

fn train_into(data: &Path, out: &Path, seed: u64, variant: VariantArg, max_epochs: usize) -> Checkpoint {
    let args = TrainArgs {
        data: data.to_path_buf(),
        out: out.to_path_buf(),
        variant: Some(variant),
        max_epochs: Some(max_epochs),
        patience: None,
        lr: None,
        batch_size: None,
        dropout: None,
    };
    commands::train(&global(seed), &args, &mut sink()).unwrap()
}

fn eval_one(ckpt: &Path, data: &Path, out: &Path) -> EvalReport {
    let args = EvalArgs {
        checkpoint: vec![ckpt.to_path_buf()],
        data: data.to_path_buf(),
        out: out.to_path_buf(),
        samples: None,
        split: SplitArg::Test,
    };
    commands::eval(&global(0), &args, &mut sink()).unwrap().remove(0)
}

fn determinism(root: &Path) -> Outcome {
    let data = synth_into(&root.join("det_data"), 11, Some(6), Some(0.67));
    let a = train_into(&data, &root.join("det_a"), 3, VariantArg::EarlyExit, 3);
    let _ = train_into(&data, &root.join("det_b"), 3, VariantArg::EarlyExit, 3);
    let bytes_a = std::fs::read(root.join("det_a/checkpoint.e4gc")).unwrap();
    let bytes_b = std::fs::read(root.join("det_b/checkpoint.e4gc")).unwrap();

    let decoded = decode_checkpoint(&bytes_a).unwrap();
    let reencoded = encode_checkpoint(&decoded);
    let copy = root.join("det_copy.e4gc");
    save_checkpoint(&decoded, &copy).unwrap();
    let loaded = load_checkpoint(&copy).unwrap();

    let test = read_dataset(&data.join("test.e4gd")).unwrap();
    let x = exitnet::evaluation::stack_inputs(&test).unwrap();
    let original = a.model.forward_batch(&x, Phase::Eval, &mut seeded(0)).unwrap();
    let reloaded = loaded.model.forward_batch(&x, Phase::Eval, &mut seeded(0)).unwrap();
    let bits = |bs: &[ExitBundle]| -> Vec<u32> {
        bs.iter().flat_map(|b| b.logits.iter().flat_map(|l| l.data().iter().map(|v| v.to_bits()))).collect()
    };
    let checks = [
        (bytes_a == bytes_b, "repeated training produced different checkpoint bytes".to_string()),
        (reencoded == bytes_a, "decode/encode changed bytes".to_string()),
        (std::fs::read(&copy).unwrap() == bytes_a, "save after load changed bytes".to_string()),
        (bits(&original) == bits(&reloaded), "loaded model logits differ".to_string()),
    ];
    outcome(
        9,
        "determinism and persistence",
        &checks,
        format!("{} byte checkpoint, {} test segments compared bitwise", bytes_a.len(), test.len()),
    )
}

fn annotation_mass(anns: &[Annotation], fs: f64) -> usize {
    anns.iter().map(|a| {
        let (s, e) = a.sample_range(fs);
        e - s
    }).sum()
}

fn pipeline_contracts(default_data: &Path) -> Outcome {
    let splits: Vec<_> =
        ["train.e4gd", "val.e4gd", "test.e4gd"].iter().map(|f| read_dataset(&default_data.join(f)).unwrap()).collect();
    let patients: Vec<BTreeSet<u32>> = splits.iter().map(|s| s.iter().map(|g| g.patient_id).collect()).collect();
    let disjoint = patients[0].is_disjoint(&patients[1])
        && patients[0].is_disjoint(&patients[2])
        && patients[1].is_disjoint(&patients[2]);

    let clean = splits[0].iter().find(|s| s.is_clean()).expect("clean training segment");
    let foreign = splits.iter().flatten().find(|s| !s.is_clean() && s.patient_id != clean.patient_id).expect("artifact segment");
    let cross_rejected = augment_mix(clean, foreign, 1.0).is_err();

    // Mass over every generated recording at default settings.
    let spec = SynthSpec::default();
    let mut mass_errors = 0;
    let mut total_mass = 0;
    for r in synth_generate(&spec, 0).unwrap() {
        let rec = preprocess(&r.recording, &PreprocessConfig::default()).unwrap();
        let segs = segment(&rec, &r.annotations).unwrap();
        let got: usize = segs.iter().map(|s| s.artifact_count()).sum();
        let want = annotation_mass(&r.annotations, SAMPLE_RATE);
        total_mass += want;
        mass_errors += usize::from(got != want);
    }
    // An interval straddling a window boundary is split, not lost.
    let rec = Recording::new(0, 0, SAMPLE_RATE, vec![0.0; 7500]).unwrap();
    let ann = Annotation { patient_id: 0, channel_id: 0, start_s: 8.0, end_s: 13.2, kind: ArtifactKind::Muscle };
    let segs = segment(&rec, std::slice::from_ref(&ann)).unwrap();
    let straddle = segs.iter().map(|s| s.artifact_count()).sum::<usize>() == annotation_mass(&[ann], SAMPLE_RATE);

    let checks = [
        (disjoint, format!("patient sets {patients:?}")),
        (cross_rejected, "cross-patient mix accepted".to_string()),
        (mass_errors == 0, format!("{mass_errors} recordings lost mask mass")),
        (straddle, "boundary-straddling interval lost mass".to_string()),
    ];
    outcome(
        10,
        "pipeline contracts",
        &checks,
        format!("splits disjoint, cross-patient mix rejected, {total_mass} annotated samples preserved"),
    )
}

struct Trained {
    data: PathBuf,
    ee: PathBuf,
    vanilla: PathBuf,
}

const E2E_EPOCHS: usize = 30;

fn end_to_end(root: &Path) -> (Outcome, Trained, EvalReport) {
    let start = Instant::now();
    let data = synth_into(&root.join("data_s0"), 0, None, None);
    let ee_ckpt = train_into(&data, &root.join("ee_s0"), 0, VariantArg::EarlyExit, E2E_EPOCHS);
    let va_ckpt = train_into(&data, &root.join("va_s0"), 0, VariantArg::Vanilla, E2E_EPOCHS);
    let ee = root.join("ee_s0/checkpoint.e4gc");
    let vanilla = root.join("va_s0/checkpoint.e4gc");
    let ee_report = eval_one(&ee, &data, &root.join("eval_ee_s0"));
    let va_report = eval_one(&vanilla, &data, &root.join("eval_va_s0"));
    let secs = start.elapsed().as_secs_f64();

    let best_val = ee_ckpt.history.iter().map(|r| r.val_f1).fold(f64::NEG_INFINITY, f64::max);
    let reached = ee_ckpt.history.iter().find(|r| r.val_f1 >= 0.90).map(|r| r.epoch);
    let (f_ee, f_va) = (ee_report.runs[0].f1, va_report.runs[0].f1);
    let checks = [
        (reached.is_some_and(|e| e <= E2E_EPOCHS), format!("best early-exit validation F1 {best_val:.4}")),
        ((f_ee - f_va).abs() < 0.05, format!("test F1 early-exit {f_ee:.4} vs vanilla {f_va:.4}")),
        (secs < 15.0 * 60.0, format!("runtime {secs:.0} s")),
    ];
    let detail = format!(
        "val F1 >= 0.90 at epoch {}, best {best_val:.3}; test F1 early-exit {f_ee:.3}, vanilla {f_va:.3} (|diff| {:.3}); \
         {} + {} epochs, {secs:.0} s",
        reached.map_or("never".into(), |e| e.to_string()),
        (f_ee - f_va).abs(),
        ee_ckpt.history.len(),
        va_ckpt.history.len(),
    );
    (outcome(5, "end-to-end learning", &checks, detail), Trained { data, ee, vanilla }, ee_report)
}

fn uncertainty_ordering(root: &Path, seed0: &EvalReport) -> Outcome {
    let mut reports = vec![(0u64, seed0.clone())];
    for seed in [1u64, 2] {
        let data = synth_into(&root.join(format!("data_s{seed}")), seed, None, None);
        train_into(&data, &root.join(format!("ee_s{seed}")), seed, VariantArg::EarlyExit, E2E_EPOCHS);
        let r = eval_one(&root.join(format!("ee_s{seed}/checkpoint.e4gc")), &data, &root.join(format!("eval_ee_s{seed}")));
        reports.push((seed, r));
    }
    let mut checks = Vec::new();
    let mut parts = Vec::new();
    for (seed, r) in &reports {
        let tp = &r.runs[0].time_point;
        let (et, ef, bt, bf) = (tp.mean_entropy_true, tp.mean_entropy_false, tp.brier_true, tp.brier_false);
        let ent_ok = matches!((et, ef), (Some(t), Some(f)) if f > t);
        let brier_ok = matches!((bt, bf), (Some(t), Some(f)) if f > t);
        checks.push((ent_ok, format!("seed {seed} entropy true {et:?} false {ef:?}")));
        checks.push((brier_ok, format!("seed {seed} brier true {bt:?} false {bf:?}")));
        let show = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.3}"));
        parts.push(format!(
            "seed {seed}: H {}<{}, BS {}<{}",
            show(et),
            show(ef),
            show(bt),
            show(bf)
        ));
    }
    outcome(6, "uncertainty ordering", &checks, parts.join("; "))
}

fn latency_ordering(root: &Path, trained: &Trained) -> Outcome {
    let mc = root.join("mcdrop_latency.e4gc");
    let model = Model::build(
        ModelConfig::default().with_variant(Variant::Mcdrop { p: exitnet::model::DEFAULT_DROPOUT }),
        &mut derived(0, &[stream::MODEL_INIT]),
    )
    .unwrap();
    save_checkpoint(&Checkpoint::untrained(model), &mc).unwrap();
    let args = BenchArgs {
        checkpoint: vec![trained.vanilla.clone(), mc, trained.ee.clone()],
        data: trained.data.clone(),
        samples: Some(5),
        runs: Some(5),
        split: SplitArg::Test,
        out: Some(root.join("bench")),
    };
    let rows: Vec<LatencyRow> = commands::bench(&global(0), &args, &mut sink()).unwrap();
    let (va, mc, ee) = (rows[0].mean_seconds, rows[1].mean_seconds, rows[2].mean_seconds);
    let checks = [
        (mc >= 3.0 * ee, format!("mcdrop/early-exit {:.2}x", mc / ee)),
        (ee <= 1.5 * va, format!("early-exit/vanilla {:.2}x", ee / va)),
    ];
    outcome(
        7,
        "latency ordering",
        &checks,
        format!(
            "vanilla 1.00x, mcdrop(5) {:.2}x, early-exit {:.2}x; mcdrop/early-exit {:.2}x",
            mc / va,
            ee / va,
            mc / ee
        ),
    )
}

fn main() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let mut results = vec![
        gradient_oracle(),
        shape_conformance(),
        probability_invariants(),
        filter_suite(),
        loss_decomposition(),
        determinism(root),
    ];
    let (e2e, trained, ee_report) = end_to_end(root);
    results.push(e2e);
    results.push(uncertainty_ordering(root, &ee_report));
    results.push(latency_ordering(root, &trained));
    results.push(pipeline_contracts(&trained.data));
    results.sort_by_key(|r| r.id);

    println!("acceptance criteria");
    for r in &results {
        println!("criterion {:>2} {:<28} {}  {}", r.id, r.title, if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed in {:.0} s", results.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
