//! Ensemble aggregation and predictive-uncertainty metrics.
//!
//! The aggregated distribution at each time point is the mean of the per-exit
//! softmax outputs. Entropy uses the natural logarithm, so for two classes it
//! lies in `[0, ln 2]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Phase};
use crate::error::{Error, Result};
use crate::model::{ExitBundle, Model, Variant};
use crate::rng::{derived, stream};
use crate::tensor::Tensor;

/// Aggregated class probabilities, `classes × T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    probs: Tensor<f64>,
    sources: usize,
}

impl ProbMap {
    pub fn new(probs: Tensor<f64>, sources: usize) -> Result<Self> {
        if probs.rank() != 2 || probs.shape()[0] < 2 {
            return Err(Error::shape("prob_map", format!("expected [classes >= 2, T], got {:?}", probs.shape())));
        }
        let (c, t) = (probs.shape()[0], probs.shape()[1]);
        for j in 0..t {
            let col: f64 = (0..c).map(|k| probs.data()[k * t + j]).sum();
            if (col - 1.0).abs() > 1e-6 || (0..c).any(|k| !(0.0..=1.0).contains(&probs.data()[k * t + j])) {
                return Err(Error::invalid("prob_map", format!("column {j} is not a distribution")));
            }
        }
        Ok(Self { probs, sources })
    }

    pub fn probs(&self) -> &Tensor<f64> {
        &self.probs
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn classes(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn prob(&self, class: usize, t: usize) -> f64 {
        self.probs.data()[class * self.len() + t]
    }

    /// Arg-max class at `t`; ties resolve to the lower class index.
    pub fn predicted(&self, t: usize) -> usize {
        (1..self.classes()).fold(0, |best, c| if self.prob(c, t) > self.prob(best, t) { c } else { best })
    }

    pub fn predictions(&self) -> Vec<u8> {
        (0..self.len()).map(|t| self.predicted(t) as u8).collect()
    }
}

/// Softmax of a single `classes × T` logit tensor in double precision.
pub fn softmax_probs(logits: &Tensor<f32>) -> Result<Tensor<f64>> {
    let (n, c, l) = logits.ncl()?;
    if logits.rank() != 2 || c < 2 {
        return Err(Error::shape("softmax", format!("expected [classes >= 2, T], got {:?}", logits.shape())));
    }
    let x: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
    Tensor::new(logits.shape(), softmax_rows(&x, n, c, l))
}

/// Mean of the per-exit softmax distributions.
pub fn aggregate_exits(bundle: &ExitBundle) -> Result<ProbMap> {
    let first = bundle.logits.first().ok_or_else(|| Error::invalid("aggregate_exits", "empty bundle"))?;
    let mut acc = vec![0.0f64; first.len()];
    for l in &bundle.logits {
        if l.shape() != first.shape() {
            return Err(Error::shape("aggregate_exits", format!("{:?} vs {:?}", l.shape(), first.shape())));
        }
        for (a, p) in acc.iter_mut().zip(softmax_probs(l)?.data()) {
            *a += p;
        }
    }
    let b = bundle.logits.len() as f64;
    acc.iter_mut().for_each(|a| *a /= b);
    ProbMap::new(Tensor::new(first.shape(), acc)?, bundle.logits.len())
}

/// Clamped to `[0, ln C]`: near the uniform distribution the rounded sum can
/// overshoot the bound by an ulp.
fn entropy_at(p: &ProbMap, t: usize) -> f64 {
    let h = -(0..p.classes())
        .map(|c| p.prob(c, t))
        .filter(|&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>();
    h.clamp(0.0, (p.classes() as f64).ln())
}

fn brier_at(p: &ProbMap, t: usize, label: u8) -> f64 {
    (0..p.classes())
        .map(|c| {
            let target = if c == label as usize { 1.0 } else { 0.0 };
            (p.prob(c, t) - target).powi(2)
        })
        .sum()
}

fn confidence_at(p: &ProbMap, t: usize) -> f64 {
    (0..p.classes()).map(|c| p.prob(c, t)).fold(0.0, f64::max)
}

/// Per time point `−Σ p ln p`, with `0 ln 0 = 0`.
pub fn predictive_entropy(p: &ProbMap) -> Tensor<f64> {
    Tensor::from_fn(&[p.len()], |t| entropy_at(p, t))
}

/// Per time point maximum class probability.
pub fn predictive_confidence(p: &ProbMap) -> Tensor<f64> {
    Tensor::from_fn(&[p.len()], |t| confidence_at(p, t))
}

fn check_labels(p: &ProbMap, labels: &[u8]) -> Result<()> {
    if labels.len() != p.len() {
        return Err(Error::shape("labels", format!("{} labels for {} time points", labels.len(), p.len())));
    }
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v as usize >= p.classes()) {
        return Err(Error::Label { index, value });
    }
    Ok(())
}

/// Mean squared distance between probability vectors and one-hot labels.
pub fn brier(p: &ProbMap, labels: &[u8]) -> Result<f64> {
    check_labels(p, labels)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok((0..p.len()).map(|t| brier_at(p, t, labels[t])).sum::<f64>() / p.len() as f64)
}

/// Running sums of the uncertainty metrics over one correctness partition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionSums {
    pub count: u64,
    pub entropy: f64,
    pub brier: f64,
    pub confidence: f64,
}

impl PartitionSums {
    fn push(&mut self, entropy: f64, brier: f64, confidence: f64) {
        self.count += 1;
        self.entropy += entropy;
        self.brier += brier;
        self.confidence += confidence;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.entropy += other.entropy;
        self.brier += other.brier;
        self.confidence += other.confidence;
    }

    fn mean(&self, total: f64) -> Option<f64> {
        (self.count > 0).then(|| total / self.count as f64)
    }

    pub fn mean_entropy(&self) -> Option<f64> {
        self.mean(self.entropy)
    }

    pub fn mean_brier(&self) -> Option<f64> {
        self.mean(self.brier)
    }

    pub fn mean_confidence(&self) -> Option<f64> {
        self.mean(self.confidence)
    }
}

/// Uncertainty metrics for correct ("true") and incorrect ("false") predictions.
///
/// Partition means are `None` when the partition is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub mean_entropy_true: Option<f64>,
    pub mean_entropy_false: Option<f64>,
    pub brier_true: Option<f64>,
    pub brier_false: Option<f64>,
    pub confidence_true: Option<f64>,
    pub confidence_false: Option<f64>,
}

impl PartitionSummary {
    pub fn from_sums(correct: &PartitionSums, wrong: &PartitionSums) -> Self {
        Self {
            mean_entropy_true: correct.mean_entropy(),
            mean_entropy_false: wrong.mean_entropy(),
            brier_true: correct.mean_brier(),
            brier_false: wrong.mean_brier(),
            confidence_true: correct.mean_confidence(),
            confidence_false: wrong.mean_confidence(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyReport {
    pub entropy_per_t: Tensor<f64>,
    pub confidence_per_t: Tensor<f64>,
    pub brier: f64,
    pub correct: PartitionSums,
    pub wrong: PartitionSums,
    pub summary: PartitionSummary,
}

/// Partition time points by whether the arg-max prediction matches the label
/// and summarise each side.
pub fn split_by_correctness(p: &ProbMap, labels: &[u8]) -> Result<UncertaintyReport> {
    check_labels(p, labels)?;
    let entropy_per_t = predictive_entropy(p);
    let confidence_per_t = predictive_confidence(p);
    let mut correct = PartitionSums::default();
    let mut wrong = PartitionSums::default();
    let mut total_brier = 0.0;
    for (t, &label) in labels.iter().enumerate() {
        let b = brier_at(p, t, label);
        total_brier += b;
        let side = if p.predicted(t) == label as usize { &mut correct } else { &mut wrong };
        side.push(entropy_per_t.data()[t], b, confidence_per_t.data()[t]);
    }
    let brier = if labels.is_empty() { 0.0 } else { total_brier / labels.len() as f64 };
    Ok(UncertaintyReport {
        entropy_per_t,
        confidence_per_t,
        brier,
        summary: PartitionSummary::from_sums(&correct, &wrong),
        correct,
        wrong,
    })
}

/// Monte Carlo dropout: average softmax over `n_samples` stochastic passes.
/// Pass `i` draws its dropout masks from a stream derived from `(seed, i)`.
pub fn mcdrop_infer(model: &Model, x: &Tensor<f32>, n_samples: usize, seed: u64) -> Result<ProbMap> {
    if x.rank() != 2 {
        return Err(Error::shape("mcdrop_infer", format!("expected [channels, T], got {:?}", x.shape())));
    }
    let batch = x.clone().reshape(&[1, x.shape()[0], x.shape()[1]])?;
    Ok(mcdrop_infer_batch(model, &batch, n_samples, seed)?.remove(0))
}

/// Batched [`mcdrop_infer`] over a `[batch, channels, T]` tensor.
pub fn mcdrop_infer_batch(model: &Model, xs: &Tensor<f32>, n_samples: usize, seed: u64) -> Result<Vec<ProbMap>> {
    if !matches!(model.variant(), Variant::Mcdrop { .. }) {
        return Err(Error::Variant { expected: "mcdrop".into(), actual: model.variant().to_string() });
    }
    if n_samples == 0 {
        return Err(Error::invalid("mcdrop_infer", "need at least one sample"));
    }
    let mut per_item: Vec<ExitBundle> = Vec::new();
    for i in 0..n_samples {
        let mut rng = derived(seed, &[stream::MC_SAMPLE, i as u64]);
        let out = model.forward_batch(xs, Phase::EvalSampling, &mut rng)?;
        if per_item.is_empty() {
            per_item = out.into_iter().map(|b| ExitBundle { logits: b.logits }).collect();
        } else {
            for (acc, b) in per_item.iter_mut().zip(out) {
                acc.logits.extend(b.logits);
            }
        }
    }
    per_item.iter().map(aggregate_exits).collect()
}
