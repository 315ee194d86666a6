//! Temporal U-Net with early-exit branches.
//!
//! The encoder halves the sequence at every stage, the decoder restores it
//! through nearest-neighbour upsampling and skip concatenation. In the
//! early-exit variant each hidden decoder block feeds an exit branch that
//! upsamples straight to the input length and projects to class logits, so a
//! single pass produces `B = hidden decoder blocks + 1` predictions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, NormStats, Phase, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Mcdrop { p: f64 },
    EarlyExit,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Mcdrop { .. } => "mcdrop",
            Variant::EarlyExit => "early_exit",
        }
    }

    pub fn dropout_p(&self) -> f64 {
        match self {
            Variant::Mcdrop { p } => *p,
            _ => 0.0,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub kernel_size: usize,
    pub input_channels: usize,
    pub input_length: usize,
    pub num_classes: usize,
    pub variant: Variant,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_channels: vec![5, 7, 9, 12, 16, 22],
            decoder_channels: vec![16, 12, 9, 7, 5],
            kernel_size: 4,
            input_channels: 1,
            input_length: 2500,
            num_classes: 2,
            variant: Variant::EarlyExit,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Predictions produced by one forward pass.
    pub fn num_exits(&self) -> usize {
        match self.variant {
            Variant::EarlyExit => self.decoder_channels.len(),
            _ => 1,
        }
    }

    /// Zero-padding `(left, right)` that keeps convolution length unchanged.
    pub fn padding(&self) -> (usize, usize) {
        let total = self.kernel_size - 1;
        (total / 2, total - total / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let enc = &self.encoder_channels;
        let dec = &self.decoder_channels;
        if enc.len() < 2 || dec.len() != enc.len() - 1 {
            return Err(Error::Config(format!(
                "need one more encoder stage than decoder stages, got {} and {}",
                enc.len(),
                dec.len()
            )));
        }
        let mirrored: Vec<usize> = enc[..enc.len() - 1].iter().rev().copied().collect();
        if *dec != mirrored {
            return Err(Error::Config(format!("decoder channels {dec:?} must mirror encoder {enc:?}")));
        }
        if enc.iter().chain(dec).any(|&c| c == 0) || self.input_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernel_size == 0 {
            return Err(Error::Config("kernel size must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let pools = enc.len() - 1;
        if self.input_length >> pools < 1 || self.input_length < 2usize.pow(pools as u32) {
            return Err(Error::Config(format!(
                "input length {} too short for {pools} pooling stages",
                self.input_length
            )));
        }
        if let Variant::Mcdrop { p } = self.variant {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
            }
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch norm epsilon must be > 0 and momentum in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub name: String,
    pub stats: RunningStats<f32>,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvBnElu {
    conv: Conv,
    gamma: usize,
    beta: usize,
    norm: usize,
}

#[derive(Clone, Copy, Debug)]
struct DecoderBlock {
    up: ConvBnElu,
    merge: ConvBnElu,
}

/// Parameters and topology of the network.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    norms: Vec<NormState>,
    encoder: Vec<ConvBnElu>,
    bottleneck: ConvBnElu,
    decoder: Vec<DecoderBlock>,
    exits: Vec<Conv>,
    head: [Conv; 2],
}

/// The `B` per-exit logit tensors of one sample, each `classes × length`,
/// ordered from the deepest exit to the final head.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitBundle {
    pub logits: Vec<Tensor<f32>>,
}

impl ExitBundle {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// One recorded layer output (per-sample shape, batch axis dropped).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub block: String,
    pub layer: &'static str,
    pub shape: Vec<usize>,
}

/// Result of recording a forward pass on a tape.
pub struct TapeForward {
    /// One `batch × classes × length` node per exit.
    pub exits: Vec<Var>,
    /// Leaf node for every parameter, indexed like [`Model::params`].
    pub params: Vec<Var>,
    /// Batch statistics per norm layer (train phase only).
    pub batch_stats: Vec<(usize, BatchStats<f32>)>,
}

struct Builder<'a> {
    params: Vec<Param>,
    norms: Vec<NormState>,
    kernel: usize,
    rng: &'a mut SeededRng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize) -> Conv {
        let bound = 1.0 / ((c_in * self.kernel) as f64).sqrt();
        let rng = &mut *self.rng;
        let w = Tensor::from_fn(&[c_out, c_in, self.kernel], |_| rng.random_range(-bound..bound) as f32);
        self.params.push(Param { name: format!("{name}.weight"), value: w });
        self.params.push(Param { name: format!("{name}.bias"), value: Tensor::zeros(&[c_out]) });
        Conv { weight: self.params.len() - 2, bias: self.params.len() - 1 }
    }

    fn conv_bn_elu(&mut self, name: &str, c_in: usize, c_out: usize) -> ConvBnElu {
        let conv = self.conv(&format!("{name}.conv"), c_in, c_out);
        self.params.push(Param { name: format!("{name}.bn.gamma"), value: Tensor::full(&[c_out], 1.0) });
        self.params.push(Param { name: format!("{name}.bn.beta"), value: Tensor::zeros(&[c_out]) });
        self.norms.push(NormState { name: format!("{name}.bn"), stats: RunningStats::new(c_out) });
        ConvBnElu {
            conv,
            gamma: self.params.len() - 2,
            beta: self.params.len() - 1,
            norm: self.norms.len() - 1,
        }
    }
}

struct Pass<'a> {
    tape: &'a mut Tape<f32>,
    model: &'a Model,
    pvars: Vec<Var>,
    phase: Phase,
    batch_stats: Vec<(usize, BatchStats<f32>)>,
    trace: Option<&'a mut Vec<LayerShape>>,
}

impl Pass<'_> {
    fn record(&mut self, block: &str, layer: &'static str, v: Var) {
        if let Some(trace) = self.trace.as_deref_mut() {
            let shape = self.tape.shape(v);
            let shape = if shape.len() == 3 { shape[1..].to_vec() } else { shape.to_vec() };
            trace.push(LayerShape { block: block.to_string(), layer, shape });
        }
    }

    fn conv(&mut self, x: Var, c: Conv) -> Result<Var> {
        let (pl, pr) = self.model.config.padding();
        self.tape.conv1d(x, self.pvars[c.weight], self.pvars[c.bias], pl, pr)
    }

    fn conv_bn_elu(&mut self, x: Var, l: ConvBnElu) -> Result<Var> {
        let h = self.conv(x, l.conv)?;
        let eps = self.model.config.bn_epsilon as f32;
        let (gamma, beta) = (self.pvars[l.gamma], self.pvars[l.beta]);
        let h = if self.phase.uses_batch_stats() {
            let (h, stats) = self.tape.batch_norm(h, gamma, beta, NormStats::Batch, eps)?;
            self.batch_stats.push((l.norm, stats.expect("batch statistics")));
            h
        } else {
            let running = &self.model.norms[l.norm].stats;
            self.tape.batch_norm(h, gamma, beta, NormStats::Running(running), eps)?.0
        };
        Ok(self.tape.elu(h))
    }
}

impl Model {
    pub fn build(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut b = Builder { params: Vec::new(), norms: Vec::new(), kernel: config.kernel_size, rng };
        let enc = &config.encoder_channels;
        let dec = &config.decoder_channels;

        let mut encoder = Vec::new();
        let mut c_prev = config.input_channels;
        for (i, &c) in enc[..enc.len() - 1].iter().enumerate() {
            encoder.push(b.conv_bn_elu(&format!("encoder{}", i + 1), c_prev, c));
            c_prev = c;
        }
        let bottleneck = b.conv_bn_elu("bottleneck", c_prev, enc[enc.len() - 1]);
        c_prev = enc[enc.len() - 1];

        let mut decoder = Vec::new();
        for (i, &c) in dec.iter().enumerate() {
            let skip = enc[enc.len() - 2 - i];
            let up = b.conv_bn_elu(&format!("decoder{}.up", i + 1), c_prev, c);
            let merge = b.conv_bn_elu(&format!("decoder{}.merge", i + 1), c + skip, c);
            decoder.push(DecoderBlock { up, merge });
            c_prev = c;
        }

        let mut exits = Vec::new();
        if config.variant == Variant::EarlyExit {
            for (i, &c) in dec[..dec.len() - 1].iter().enumerate() {
                exits.push(b.conv(&format!("exit{}.conv", i + 1), c, config.num_classes));
            }
        }
        let head = [
            b.conv("head.conv1", c_prev, c_prev),
            b.conv("head.conv2", c_prev, config.num_classes),
        ];
        let (params, norms) = (b.params, b.norms);
        Ok(Self { config, params, norms, encoder, bottleneck, decoder, exits, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn norms(&self) -> &[NormState] {
        &self.norms
    }

    /// Scalar count over convolution weights/biases and norm scale/shift.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Fold training-batch statistics into the running estimates.
    pub fn commit_batch_stats(&mut self, stats: &[(usize, BatchStats<f32>)]) {
        let momentum = self.config.bn_momentum as f32;
        for (idx, s) in stats {
            self.norms[*idx].stats.update(s, momentum);
        }
    }

    /// Every parameter and running statistic under a stable name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> =
            self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for n in &self.norms {
            let c = n.stats.mean.len();
            out.push((format!("{}.running_mean", n.name), Tensor::new(&[c], n.stats.mean.clone()).expect("shape")));
            out.push((format!("{}.running_var", n.name), Tensor::new(&[c], n.stats.var.clone()).expect("shape")));
        }
        out
    }

    /// Rebuild from a configuration plus tensors named as in
    /// [`named_tensors`](Self::named_tensors).
    pub fn from_named_tensors(config: ModelConfig, tensors: &[(String, Tensor<f32>)]) -> Result<Self> {
        let mut model = Self::build(config, &mut crate::rng::seeded(0))?;
        let lookup = |name: &str| -> Result<&Tensor<f32>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::corrupt("checkpoint", format!("missing tensor {name}")))
        };
        for p in &mut model.params {
            let t = lookup(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::corrupt(
                    "checkpoint",
                    format!("{} has shape {:?}, expected {:?}", p.name, t.shape(), p.value.shape()),
                ));
            }
            p.value = t.clone();
        }
        for n in &mut model.norms {
            let c = n.stats.mean.len();
            let mean = lookup(&format!("{}.running_mean", n.name))?;
            let var = lookup(&format!("{}.running_var", n.name))?;
            if mean.len() != c || var.len() != c {
                return Err(Error::corrupt("checkpoint", format!("{} running stats length", n.name)));
            }
            n.stats = RunningStats { mean: mean.data().to_vec(), var: var.data().to_vec() };
        }
        if tensors.len() != model.params.len() + 2 * model.norms.len() {
            return Err(Error::corrupt("checkpoint", "unexpected extra model tensors"));
        }
        Ok(model)
    }

    fn check_input(&self, shape: &[usize]) -> Result<usize> {
        let (c, t) = (self.config.input_channels, self.config.input_length);
        match *shape {
            [n, ci, ti] if ci == c && ti == t => Ok(n),
            [ci, ti] if ci == c && ti == t => Ok(1),
            _ => Err(Error::shape("forward", format!("expected input [{c}, {t}] or [batch, {c}, {t}], got {shape:?}"))),
        }
    }

    /// Record a forward pass on `tape`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<f32>,
        x: Var,
        phase: Phase,
        requires_grad: bool,
        rng: &mut SeededRng,
        trace: Option<&mut Vec<LayerShape>>,
    ) -> Result<TapeForward> {
        self.check_input(tape.shape(x))?;
        let pvars = self.params.iter().map(|p| tape.leaf(p.value.clone(), requires_grad)).collect();
        let mut pass = Pass { tape, model: self, pvars, phase, batch_stats: Vec::new(), trace };
        let t_len = self.config.input_length;
        let drop_p = self.config.variant.dropout_p();
        let sampling = matches!(self.config.variant, Variant::Mcdrop { .. }) && phase.dropout_active();

        let mut h = x;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (i, blk) in self.encoder.iter().enumerate() {
            let name = format!("encoder{}", i + 1);
            h = pass.conv_bn_elu(h, *blk)?;
            pass.record(&name, "conv_bn_elu", h);
            skips.push(h);
            h = pass.tape.maxpool1d(h, 2, 2)?;
            pass.record(&name, "max_pool", h);
        }
        h = pass.conv_bn_elu(h, self.bottleneck)?;
        pass.record("bottleneck", "conv_bn_elu", h);

        let mut exits = Vec::with_capacity(self.config.num_exits());
        for (i, blk) in self.decoder.iter().enumerate() {
            let name = format!("decoder{}", i + 1);
            let skip = skips.pop().expect("one skip per decoder block");
            let skip_len = *pass.tape.shape(skip).last().expect("rank");
            h = pass.tape.upsample_nearest(h, skip_len)?;
            pass.record(&name, "upsample", h);
            h = pass.conv_bn_elu(h, blk.up)?;
            pass.record(&name, "conv_bn_elu", h);
            h = pass.tape.concat_channels(h, skip)?;
            pass.record(&name, "concatenate", h);
            h = pass.conv_bn_elu(h, blk.merge)?;
            pass.record(&name, "conv_bn_elu_merge", h);
            if sampling {
                h = pass.tape.dropout(h, drop_p, rng)?;
            }
            if let Some(&exit) = self.exits.get(i) {
                let name = format!("exit{}", i + 1);
                let e = pass.tape.upsample_nearest(h, t_len)?;
                pass.record(&name, "upsample", e);
                let e = pass.conv(e, exit)?;
                pass.record(&name, "conv", e);
                exits.push(e);
            }
        }
        h = pass.conv(h, self.head[0])?;
        h = pass.tape.elu(h);
        pass.record("head", "conv_elu", h);
        h = pass.conv(h, self.head[1])?;
        pass.record("head", "conv", h);
        exits.push(h);

        Ok(TapeForward { exits, params: pass.pvars, batch_stats: pass.batch_stats })
    }

    /// Forward a `[channels, T]` sample or `[batch, channels, T]` batch and
    /// split the exits per sample.
    pub fn forward_batch(&self, x: &Tensor<f32>, phase: Phase, rng: &mut SeededRng) -> Result<Vec<ExitBundle>> {
        self.forward_traced(x, phase, rng, None)
    }

    pub fn forward_traced(
        &self,
        x: &Tensor<f32>,
        phase: Phase,
        rng: &mut SeededRng,
        trace: Option<&mut Vec<LayerShape>>,
    ) -> Result<Vec<ExitBundle>> {
        let n = self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let out = self.forward_tape(&mut tape, xv, phase, false, rng, trace)?;
        let mut bundles = vec![ExitBundle { logits: Vec::with_capacity(out.exits.len()) }; n];
        for e in &out.exits {
            let value = tape.value(*e);
            for (i, b) in bundles.iter_mut().enumerate() {
                let item = if value.rank() == 3 { value.batch_item(i)? } else { value.clone() };
                b.logits.push(item);
            }
        }
        Ok(bundles)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &Tensor<f32>, phase: Phase, rng: &mut SeededRng) -> Result<ExitBundle> {
        if x.rank() != 2 {
            return Err(Error::shape("forward", format!("expected [channels, T], got {:?}", x.shape())));
        }
        Ok(self.forward_batch(x, phase, rng)?.remove(0))
    }
}
