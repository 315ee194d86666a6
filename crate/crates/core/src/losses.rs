//! Joint cross-entropy + Dice segmentation loss and the weighted sum over exits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ExitBundle;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Per-exit weights, deepest exit first.
    pub alpha: Vec<f64>,
    pub ce_weight: f64,
    pub dice_weight: f64,
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    /// Uniform weights over the five exits of the default network.
    fn default() -> Self {
        Self::uniform(5)
    }
}

impl LossWeights {
    pub fn uniform(exits: usize) -> Self {
        Self { alpha: vec![1.0; exits], ce_weight: 1.0, dice_weight: 1.0, dice_smooth: 1.0 }
    }

    pub fn validate(&self, exits: usize) -> Result<()> {
        if self.alpha.len() != exits {
            return Err(Error::shape(
                "ensemble_loss",
                format!("{} exit weights for {exits} exits", self.alpha.len()),
            ));
        }
        if self.alpha.iter().chain([&self.ce_weight, &self.dice_weight]).any(|&a| !(a >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::Config("dice smooth term must be positive".into()));
        }
        Ok(())
    }
}

pub fn cross_entropy<F: Scalar>(tape: &mut Tape<F>, logits: Var, labels: &[u8]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

pub fn dice_loss<F: Scalar>(tape: &mut Tape<F>, logits: Var, labels: &[u8], smooth: f64) -> Result<Var> {
    tape.dice_loss(logits, labels, F::of(smooth))
}

/// `ce_weight · CE + dice_weight · Dice` for one exit.
pub fn exit_loss<F: Scalar>(tape: &mut Tape<F>, logits: Var, labels: &[u8], w: &LossWeights) -> Result<Var> {
    let ce = cross_entropy(tape, logits, labels)?;
    let dice = dice_loss(tape, logits, labels, w.dice_smooth)?;
    tape.weighted_sum(&[(ce, F::of(w.ce_weight)), (dice, F::of(w.dice_weight))])
}

pub struct EnsembleLoss {
    pub total: Var,
    pub per_exit: Vec<Var>,
}

/// `Σ_i alpha_i · exit_loss(logits_i)`.
pub fn ensemble_loss<F: Scalar>(
    tape: &mut Tape<F>,
    exits: &[Var],
    labels: &[u8],
    w: &LossWeights,
) -> Result<EnsembleLoss> {
    w.validate(exits.len())?;
    let per_exit = exits
        .iter()
        .map(|&e| exit_loss(tape, e, labels, w))
        .collect::<Result<Vec<_>>>()?;
    let terms: Vec<(Var, F)> = per_exit.iter().zip(&w.alpha).map(|(&v, &a)| (v, F::of(a))).collect();
    let total = tape.weighted_sum(&terms)?;
    Ok(EnsembleLoss { total, per_exit })
}

fn eval_scalar(logits: &Tensor<f32>, f: impl FnOnce(&mut Tape<f64>, Var) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.leaf(logits.cast::<f64>(), false);
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).data()[0])
}

/// Loss value of one logit tensor, evaluated in double precision.
pub fn exit_loss_value(logits: &Tensor<f32>, labels: &[u8], w: &LossWeights) -> Result<f64> {
    eval_scalar(logits, |t, v| exit_loss(t, v, labels, w))
}

/// Weighted ensemble loss of a bundle, evaluated in double precision.
pub fn ensemble_loss_value(bundle: &ExitBundle, labels: &[u8], w: &LossWeights) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = bundle.logits.iter().map(|l| tape.leaf(l.cast(), false)).collect();
    let out = ensemble_loss(&mut tape, &vars, labels, w)?;
    Ok(tape.value(out.total).data()[0])
}
