//! Classification metrics, per-exit analysis, latency measurement and report
//! emission.

mod plot;
mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Phase;
use crate::error::{Error, Result};
use crate::model::{ExitBundle, Model, Variant};
use crate::rng::seeded;
use crate::signal::Segment;
use crate::tensor::Tensor;
use crate::uncertainty::{
    aggregate_exits, mcdrop_infer_batch, split_by_correctness, PartitionSums, PartitionSummary, ProbMap,
};

pub use plot::{emit_prediction_plot, prediction_svg, spans, PanelPrediction, Span, SpanKind};
pub use report::{emit_report, format_mean_std, parse_delimited, MeanStd, ReportFormat, EvalReport, RunMetrics};

/// Per-time-point confusion counts with class 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(pred: &[u8], labels: &[u8]) -> Result<Self> {
        if pred.len() != labels.len() {
            return Err(Error::shape("confusion", format!("{} predictions for {} labels", pred.len(), labels.len())));
        }
        let mut c = Self::default();
        for (&p, &y) in pred.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let (p, r) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Metrics { precision: p, recall: r, f1, degenerate: precision.is_none() || recall.is_none() || p + r == 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A zero denominator was replaced by 0.
    pub degenerate: bool,
}

pub fn f1_precision_recall(probs: &ProbMap, labels: &[u8]) -> Result<Metrics> {
    Ok(ConfusionCounts::from_predictions(&probs.predictions(), labels)?.metrics())
}

fn exit_counts(bundle: &ExitBundle, labels: &[u8]) -> Result<Vec<ConfusionCounts>> {
    bundle
        .logits
        .iter()
        .map(|l| {
            let single = ExitBundle { logits: vec![l.clone()] };
            ConfusionCounts::from_predictions(&aggregate_exits(&single)?.predictions(), labels)
        })
        .collect()
}

/// F1 of every exit from its own arg-max.
pub fn per_exit_f1(bundle: &ExitBundle, labels: &[u8]) -> Result<Vec<f64>> {
    Ok(exit_counts(bundle, labels)?.iter().map(|c| c.metrics().f1).collect())
}

/// How predictive distributions are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inference {
    /// One deterministic pass; all exits are averaged.
    SinglePass,
    /// Average of stochastic dropout passes.
    McDrop { samples: usize, seed: u64 },
}

impl Inference {
    pub fn for_model(model: &Model, samples: usize, seed: u64) -> Self {
        match model.variant() {
            Variant::Mcdrop { .. } => Self::McDrop { samples, seed },
            _ => Self::SinglePass,
        }
    }
}

pub const EVAL_BATCH: usize = 50;

/// Stacks segments into a `[n, 1, T]` batch.
pub fn stack_inputs(segments: &[Segment]) -> Result<Tensor<f32>> {
    let xs: Vec<Tensor<f32>> = segments.iter().map(|s| s.x.clone()).collect();
    Tensor::stack(&xs)
}

/// Predictive distributions for every segment, plus per-exit bundles for
/// single-pass inference.
pub fn predict(model: &Model, segments: &[Segment], inference: Inference) -> Result<(Vec<ProbMap>, Vec<ExitBundle>)> {
    let mut probs = Vec::with_capacity(segments.len());
    let mut bundles = Vec::new();
    for (b, chunk) in segments.chunks(EVAL_BATCH).enumerate() {
        let x = stack_inputs(chunk)?;
        match inference {
            Inference::SinglePass => {
                let out = model.forward_batch(&x, Phase::Eval, &mut seeded(0))?;
                for bundle in out {
                    probs.push(aggregate_exits(&bundle)?);
                    bundles.push(bundle);
                }
            }
            Inference::McDrop { samples, seed } => {
                let chunk_seed = crate::rng::derive_seed(seed, &[b as u64]);
                probs.extend(mcdrop_infer_batch(model, &x, samples, chunk_seed)?);
            }
        }
    }
    Ok((probs, bundles))
}

/// Accumulated evaluation of one model over a segment set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelEval {
    pub counts: ConfusionCounts,
    pub per_exit: Vec<ConfusionCounts>,
    pub time_correct: PartitionSums,
    pub time_wrong: PartitionSums,
    sample_means: [SampleMean; 6],
    pub segments: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct SampleMean {
    sum: f64,
    count: u64,
}

impl SampleMean {
    fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.count += 1;
        }
    }

    fn merge(&mut self, o: &Self) {
        self.sum += o.sum;
        self.count += o.count;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

impl ModelEval {
    pub fn push(&mut self, probs: &ProbMap, bundle: Option<&ExitBundle>, labels: &[u8]) -> Result<()> {
        self.counts.merge(&ConfusionCounts::from_predictions(&probs.predictions(), labels)?);
        if let Some(b) = bundle {
            let c = exit_counts(b, labels)?;
            if self.per_exit.is_empty() {
                self.per_exit = vec![ConfusionCounts::default(); c.len()];
            }
            for (acc, x) in self.per_exit.iter_mut().zip(&c) {
                acc.merge(x);
            }
        }
        let u = split_by_correctness(probs, labels)?;
        self.time_correct.merge(&u.correct);
        self.time_wrong.merge(&u.wrong);
        let s = &u.summary;
        for (acc, v) in self.sample_means.iter_mut().zip([
            s.mean_entropy_true,
            s.mean_entropy_false,
            s.brier_true,
            s.brier_false,
            s.confidence_true,
            s.confidence_false,
        ]) {
            acc.push(v);
        }
        self.segments += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.counts.merge(&other.counts);
        if self.per_exit.is_empty() {
            self.per_exit = other.per_exit.clone();
        } else {
            for (a, b) in self.per_exit.iter_mut().zip(&other.per_exit) {
                a.merge(b);
            }
        }
        self.time_correct.merge(&other.time_correct);
        self.time_wrong.merge(&other.time_wrong);
        for (a, b) in self.sample_means.iter_mut().zip(&other.sample_means) {
            a.merge(b);
        }
        self.segments += other.segments;
    }

    pub fn metrics(&self) -> Metrics {
        self.counts.metrics()
    }

    pub fn per_exit_f1(&self) -> Vec<f64> {
        self.per_exit.iter().map(|c| c.metrics().f1).collect()
    }

    /// Partition metrics pooled over all time points.
    pub fn time_point_summary(&self) -> PartitionSummary {
        PartitionSummary::from_sums(&self.time_correct, &self.time_wrong)
    }

    /// Partition metrics computed per segment, then averaged over segments
    /// where the partition is non-empty.
    pub fn per_sample_summary(&self) -> PartitionSummary {
        let m = self.sample_means.map(|s| s.mean());
        PartitionSummary {
            mean_entropy_true: m[0],
            mean_entropy_false: m[1],
            brier_true: m[2],
            brier_false: m[3],
            confidence_true: m[4],
            confidence_false: m[5],
        }
    }

    pub fn run_metrics(&self, seed: u64) -> RunMetrics {
        let m = self.metrics();
        RunMetrics {
            seed,
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
            degenerate: m.degenerate,
            per_exit_f1: self.per_exit_f1(),
            time_point: self.time_point_summary(),
            per_sample: self.per_sample_summary(),
        }
    }
}

pub fn evaluate_model(model: &Model, segments: &[Segment], inference: Inference) -> Result<ModelEval> {
    if segments.is_empty() {
        return Err(Error::EmptyData("evaluation set".into()));
    }
    let mut eval = ModelEval::default();
    let (probs, bundles) = predict(model, segments, inference)?;
    for (i, (p, s)) in probs.iter().zip(segments).enumerate() {
        eval.push(p, bundles.get(i), &s.y)?;
    }
    Ok(eval)
}

/// Aggregated-prediction F1 over a segment set under single-pass inference.
pub fn validation_f1(model: &Model, segments: &[Segment]) -> Result<f64> {
    let mut counts = ConfusionCounts::default();
    for chunk in segments.chunks(EVAL_BATCH) {
        let (probs, _) = predict(model, chunk, Inference::SinglePass)?;
        for (p, s) in probs.iter().zip(chunk) {
            counts.merge(&ConfusionCounts::from_predictions(&p.predictions(), &s.y)?);
        }
    }
    Ok(counts.metrics().f1)
}

/// A named inference routine timed by [`latency_bench`].
pub struct LatencyEntry<'a> {
    pub name: String,
    pub run: LatencyRun<'a>,
}

pub type LatencyRun<'a> = Box<dyn FnMut(&[Segment]) -> Result<()> + 'a>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub name: String,
    pub mean_seconds: f64,
    /// Mean time over the first entry's mean time.
    pub ratio: f64,
}

/// Wall-clock mean of `n_runs` full passes over `data` per entry.
pub fn latency_bench(entries: &mut [LatencyEntry<'_>], data: &[Segment], n_runs: usize) -> Result<Vec<LatencyRow>> {
    if data.is_empty() {
        return Err(Error::EmptyData("latency benchmark set".into()));
    }
    if entries.is_empty() || n_runs == 0 {
        return Err(Error::invalid("latency_bench", "need at least one entry and one run"));
    }
    let mut means = Vec::with_capacity(entries.len());
    for e in entries.iter_mut() {
        (e.run)(data)?;
        let start = Instant::now();
        for _ in 0..n_runs {
            (e.run)(data)?;
        }
        means.push(start.elapsed().as_secs_f64() / n_runs as f64);
    }
    let base = means[0].max(f64::MIN_POSITIVE);
    Ok(entries
        .iter()
        .zip(means)
        .map(|(e, m)| LatencyRow { name: e.name.clone(), mean_seconds: m, ratio: m / base })
        .collect())
}
