//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for the backward rule. Nodes only ever reference earlier nodes, so a
//! single reverse sweep visits each node once in topological order.

mod kernels;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ncl, shape_like, Scalar, Tensor};

pub(crate) use kernels::softmax_channels as softmax_rows;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward-pass phase. Controls batch-norm statistics and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, dropout off.
    Eval,
    /// Running statistics, dropout active (Monte Carlo sampling).
    EvalSampling,
}

impl Phase {
    pub fn dropout_active(self) -> bool {
        !matches!(self, Phase::Eval)
    }

    pub fn uses_batch_stats(self) -> bool {
        matches!(self, Phase::Train)
    }
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased (population) variance.
    pub var: Vec<F>,
    pub count: usize,
}

/// Running mean/variance carried between batches.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Scalar> RunningStats<F> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![F::zero(); channels], var: vec![F::one(); channels] }
    }

    /// Exponential update; the variance is stored unbiased.
    pub fn update(&mut self, batch: &BatchStats<F>, momentum: F) {
        let m = batch.count as f64;
        let unbias = if m > 1.0 { F::of(m / (m - 1.0)) } else { F::one() };
        for c in 0..self.mean.len() {
            self.mean[c] = (F::one() - momentum) * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = (F::one() - momentum) * self.var[c] + momentum * batch.var[c] * unbias;
        }
    }
}

pub enum NormStats<'a, F> {
    Batch,
    Running(&'a RunningStats<F>),
}

/// Backward rule supplied by the caller of [`Tape::custom_unary`]: receives
/// `(grad_output, input, output)` and returns the input gradient.
pub type CustomBackward<F> = Box<dyn Fn(&[F], &[F], &[F]) -> Vec<F>>;

enum Op<F> {
    Leaf,
    Conv1d { input: Var, weight: Var, bias: Var, dims: kernels::ConvDims },
    MaxPool { input: Var, argmax: Vec<u32> },
    Upsample { input: Var, rows: usize, l_in: usize, l_out: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F>, batch: bool },
    Elu { input: Var },
    Mask { input: Var, mask: Vec<F> },
    Concat { a: Var, b: Var },
    Softmax { input: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { input: Var },
    WeightedSum { terms: Vec<(Var, F)> },
    CrossEntropy { logits: Var, probs: Vec<F>, labels: Vec<u8> },
    Dice { logits: Var, probs: Vec<F>, labels: Vec<u8>, smooth: F },
    Custom { input: Var, backward: CustomBackward<F> },
}

impl<F> Op<F> {
    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv1d { input, weight, bias, .. } => vec![*input, *weight, *bias],
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::Concat { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::WeightedSum { terms } => terms.iter().map(|t| t.0).collect(),
            Op::MaxPool { input, .. }
            | Op::Upsample { input, .. }
            | Op::Elu { input }
            | Op::Mask { input, .. }
            | Op::Softmax { input }
            | Op::Sum { input }
            | Op::Custom { input, .. } => vec![*input],
            Op::CrossEntropy { logits, .. } | Op::Dice { logits, .. } => vec![*logits],
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Single-owner recording of a computation.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<Tensor<F>> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[var.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient for `var`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var) -> Tensor<F> {
        self.get(var).unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<F>> {
        self.grads.get_mut(var.0)?.take()
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let requires_grad = op.operands().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Stride-1 convolution with explicit zero padding on each side.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, pad_left: usize, pad_right: usize) -> Result<Var> {
        let (n, c_in, l_in) = ncl(self.shape(input))?;
        let ws = self.shape(weight).to_vec();
        let [c_out, w_cin, k] = ws[..] else {
            return Err(Error::shape("conv1d", format!("weight must be rank 3, got {ws:?}")));
        };
        if w_cin != c_in {
            return Err(Error::shape("conv1d", format!("input has {c_in} channels, weight expects {w_cin}")));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::shape("conv1d", format!("bias {:?} for {c_out} outputs", self.shape(bias))));
        }
        if k == 0 || k > l_in + pad_left + pad_right {
            return Err(Error::shape("conv1d", format!("kernel {k} longer than padded input {}", l_in + pad_left + pad_right)));
        }
        let l_out = l_in + pad_left + pad_right - k + 1;
        let dims = kernels::ConvDims { n, c_in, c_out, k, l_in, l_out, pad_left };
        let mut out = vec![F::zero(); n * c_out * l_out];
        kernels::conv1d_forward(
            &dims,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &mut out,
        );
        let shape = shape_like(self.shape(input), c_out, l_out);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Conv1d { input, weight, bias, dims }))
    }

    pub fn maxpool1d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (n, c, l) = ncl(self.shape(input))?;
        if kernel == 0 || stride == 0 {
            return Err(Error::invalid("maxpool1d", "kernel and stride must be positive"));
        }
        if l < kernel {
            return Err(Error::shape("maxpool1d", format!("length {l} shorter than kernel {kernel}")));
        }
        let l_out = (l - kernel) / stride + 1;
        let (out, argmax) = kernels::maxpool_forward(self.value(input).data(), n * c, l, kernel, stride, l_out);
        let value = Tensor::new(&shape_like(self.shape(input), c, l_out), out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    /// Nearest-neighbour resize: output `j` copies input `floor(j * L / target)`.
    pub fn upsample_nearest(&mut self, input: Var, target_len: usize) -> Result<Var> {
        let (n, c, l) = ncl(self.shape(input))?;
        if target_len == 0 || l == 0 {
            return Err(Error::shape("upsample_nearest", "empty input or target"));
        }
        let out = kernels::upsample_forward(self.value(input).data(), n * c, l, target_len);
        let value = Tensor::new(&shape_like(self.shape(input), c, target_len), out)?;
        Ok(self.push(value, Op::Upsample { input, rows: n * c, l_in: l, l_out: target_len }))
    }

    /// Batch normalisation over the batch and length axes.
    ///
    /// With [`NormStats::Batch`] the returned [`BatchStats`] should be folded
    /// into the layer's running statistics by the caller.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, F>,
        epsilon: F,
    ) -> Result<(Var, Option<BatchStats<F>>)> {
        if !(epsilon > F::zero()) {
            return Err(Error::invalid("batchnorm1d", "epsilon must be positive"));
        }
        let (n, c, l) = ncl(self.shape(input))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batchnorm1d", format!("affine parameters must have {c} channels")));
        }
        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                let (m, v) = kernels::channel_moments(self.value(input).data(), n, c, l);
                let bs = BatchStats { mean: m.clone(), var: v.clone(), count: n * l };
                (m, v, Some(bs))
            }
            NormStats::Running(rs) => {
                if rs.mean.len() != c || rs.var.len() != c {
                    return Err(Error::shape("batchnorm1d", "running statistics channel count"));
                }
                (rs.mean.clone(), rs.var.clone(), None)
            }
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + epsilon).sqrt()).collect();
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![F::zero(); x.len()];
        let mut out = vec![F::zero(); x.len()];
        for bi in 0..n {
            for ch in 0..c {
                let r = (bi * c + ch) * l..(bi * c + ch + 1) * l;
                for i in r {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + b[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(input), out)?;
        let batch = batch_stats.is_some();
        let var_out = self.push(value, Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch });
        Ok((var_out, batch_stats))
    }

    /// Exponential linear unit with alpha = 1.
    pub fn elu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| if x > F::zero() { x } else { x.exp_m1() });
        self.push(value, Op::Elu { input })
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout(&mut self, input: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        let keep = F::of(1.0 / (1.0 - p));
        let n = self.value(input).len();
        let mask: Vec<F> = (0..n)
            .map(|_| if p > 0.0 && rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        let x = self.value(input);
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, Op::Mask { input, mask }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, la) = ncl(self.shape(a))?;
        let (nb, cb, lb) = ncl(self.shape(b))?;
        if la != lb || na != nb || self.shape(a).len() != self.shape(b).len() {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} and {:?} differ outside the channel axis", self.shape(a), self.shape(b)),
            ));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for i in 0..na {
            out.extend_from_slice(&xa[i * ca * la..(i + 1) * ca * la]);
            out.extend_from_slice(&xb[i * cb * lb..(i + 1) * cb * lb]);
        }
        let value = Tensor::new(&shape_like(self.shape(a), ca + cb, la), out)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    /// Softmax across the class (channel) axis at every time point.
    pub fn softmax_classes(&mut self, input: Var) -> Result<Var> {
        let (n, c, l) = ncl(self.shape(input))?;
        if c < 2 {
            return Err(Error::shape("softmax_classes", format!("need at least 2 classes, got {c}")));
        }
        let out = kernels::softmax_channels(self.value(input).data(), n, c, l);
        let value = Tensor::new(self.shape(input), out)?;
        Ok(self.push(value, Op::Softmax { input }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { input })
    }

    /// `Σ coefficient_i · term_i` over equally shaped operands.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| Error::invalid("weighted_sum", "no terms"))?;
        let shape = self.shape(first).to_vec();
        let mut data = vec![F::zero(); self.value(first).len()];
        for &(v, w) in terms {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::shape("weighted_sum", format!("{:?} vs {shape:?}", self.shape(v))));
            }
            for (d, &x) in data.iter_mut().zip(self.value(v).data()) {
                *d += w * x;
            }
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::WeightedSum { terms: terms.to_vec() }))
    }

    /// Mean negative log-likelihood of the true class over all time points.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let (n, c, l) = ncl(self.shape(logits))?;
        check_labels(labels, n * l, c)?;
        let x = self.value(logits).data();
        let probs = kernels::softmax_channels(x, n, c, l);
        let mut total = 0.0f64;
        for b in 0..n {
            for t in 0..l {
                let base = b * c * l + t;
                let mut mx = F::neg_infinity();
                for ch in 0..c {
                    mx = mx.max(x[base + ch * l]);
                }
                let mut z = 0.0f64;
                for ch in 0..c {
                    z += (x[base + ch * l] - mx).as_f64().exp();
                }
                let lse = mx.as_f64() + z.ln();
                let y = labels[b * l + t] as usize;
                total += lse - x[base + y * l].as_f64();
            }
        }
        let value = Tensor::scalar(F::of(total / (n * l) as f64));
        Ok(self.push(value, Op::CrossEntropy { logits, probs, labels: labels.to_vec() }))
    }

    /// Soft Dice loss on class 1, averaged over the batch:
    /// `1 − (2·Σ p·y + s) / (Σ p + Σ y + s)`.
    pub fn dice_loss(&mut self, logits: Var, labels: &[u8], smooth: F) -> Result<Var> {
        if !(smooth > F::zero()) {
            return Err(Error::invalid("dice_loss", "smooth term must be positive"));
        }
        let (n, c, l) = ncl(self.shape(logits))?;
        check_labels(labels, n * l, c)?;
        let probs = kernels::softmax_channels(self.value(logits).data(), n, c, l);
        let mut total = 0.0f64;
        for b in 0..n {
            let (inter, denom) = dice_sums(&probs, labels, b, c, l);
            let s = smooth.as_f64();
            total += 1.0 - (2.0 * inter + s) / (denom + s);
        }
        let value = Tensor::scalar(F::of(total / n as f64));
        Ok(self.push(value, Op::Dice { logits, probs, labels: labels.to_vec(), smooth }))
    }

    /// Elementwise op with a caller-provided value and backward rule.
    pub fn custom_unary(&mut self, input: Var, value: Tensor<F>, backward: CustomBackward<F>) -> Result<Var> {
        if value.shape() != self.shape(input) {
            return Err(Error::shape("custom_unary", "output must match input shape"));
        }
        Ok(self.push(value, Op::Custom { input, backward }))
    }

    /// Reverse sweep from a scalar root. Gradients accumulate across every
    /// use of a node.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![F::one()]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only nodes that require gradients report one.
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Vec<F>>], var: Var) -> Option<&'a mut Vec<F>> {
        if !self.nodes[var.0].requires_grad {
            return None;
        }
        let len = self.nodes[var.0].value.len();
        Some(grads[var.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    fn backward_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { input, weight, bias, dims } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                // Operands are distinct nodes, so take them out one at a time.
                let mut dx = self.grad_slot(grads, *input).map(std::mem::take);
                let mut dw = self.grad_slot(grads, *weight).map(std::mem::take);
                let mut db = self.grad_slot(grads, *bias).map(std::mem::take);
                kernels::conv1d_backward(
                    dims,
                    x,
                    w,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, buf) in [(*input, dx), (*weight, dw), (*bias, db)] {
                    if let Some(buf) = buf {
                        grads[v.0] = Some(buf);
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for (&gv, &src) in g.iter().zip(argmax) {
                        dx[src as usize] += gv;
                    }
                }
            }
            Op::Upsample { input, rows, l_in, l_out } => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    kernels::upsample_backward(g, *rows, *l_in, *l_out, dx);
                }
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch } => {
                let (n, c, l) = ncl(node.value.shape()).expect("batchnorm shape");
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                            sum_g[ch] += g[i].as_f64();
                            sum_gx[ch] += (g[i] * xhat[i]).as_f64();
                        }
                    }
                }
                if let Some(dg) = self.grad_slot(grads, *gamma) {
                    for ch in 0..c {
                        dg[ch] += F::of(sum_gx[ch]);
                    }
                }
                if let Some(dbeta) = self.grad_slot(grads, *beta) {
                    for ch in 0..c {
                        dbeta[ch] += F::of(sum_g[ch]);
                    }
                }
                if let Some(dx) = self.grad_slot(grads, *input) {
                    let m = (n * l) as f64;
                    for b in 0..n {
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch];
                            let mg = F::of(sum_g[ch] / m);
                            let mgx = F::of(sum_gx[ch] / m);
                            for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                                if *batch {
                                    dx[i] += scale * (g[i] - mg - xhat[i] * mgx);
                                } else {
                                    dx[i] += scale * g[i];
                                }
                            }
                        }
                    }
                }
            }
            Op::Elu { input } => {
                let y = node.value.data();
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += if yv > F::zero() { gv } else { gv * (yv + F::one()) };
                    }
                }
            }
            Op::Mask { input, mask } => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Concat { a, b } => {
                let (n, ca, l) = ncl(self.shape(*a)).expect("concat shape");
                let cb = ncl(self.shape(*b)).expect("concat shape").1;
                let c = ca + cb;
                if let Some(da) = self.grad_slot(grads, *a) {
                    for i in 0..n {
                        add_into(&mut da[i * ca * l..(i + 1) * ca * l], &g[i * c * l..(i * c + ca) * l]);
                    }
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for i in 0..n {
                        add_into(&mut db[i * cb * l..(i + 1) * cb * l], &g[(i * c + ca) * l..(i + 1) * c * l]);
                    }
                }
            }
            Op::Softmax { input } => {
                let (n, c, l) = ncl(node.value.shape()).expect("softmax shape");
                let p = node.value.data();
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for b in 0..n {
                        for t in 0..l {
                            let base = b * c * l + t;
                            let dot: F = (0..c).map(|ch| g[base + ch * l] * p[base + ch * l]).sum();
                            for ch in 0..c {
                                let i = base + ch * l;
                                dx[i] += p[i] * (g[i] - dot);
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.grad_slot(grads, v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                if let Some(da) = self.grad_slot(grads, *a) {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(&vb) {
                        *d += gv * y;
                    }
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(&va) {
                        *d += gv * x;
                    }
                }
            }
            Op::Sum { input } => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    if let Some(d) = self.grad_slot(grads, v) {
                        for (dv, &gv) in d.iter_mut().zip(g) {
                            *dv += w * gv;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, probs, labels } => {
                let (n, c, l) = ncl(self.shape(*logits)).expect("logit shape");
                let scale = g[0] / F::of((n * l) as f64);
                if let Some(dx) = self.grad_slot(grads, *logits) {
                    for b in 0..n {
                        for t in 0..l {
                            let y = labels[b * l + t] as usize;
                            for ch in 0..c {
                                let i = b * c * l + ch * l + t;
                                let target = if ch == y { F::one() } else { F::zero() };
                                dx[i] += scale * (probs[i] - target);
                            }
                        }
                    }
                }
            }
            Op::Dice { logits, probs, labels, smooth } => {
                let (n, c, l) = ncl(self.shape(*logits)).expect("logit shape");
                if let Some(dx) = self.grad_slot(grads, *logits) {
                    let s = smooth.as_f64();
                    for b in 0..n {
                        let (inter, denom) = dice_sums(probs, labels, b, c, l);
                        let den = denom + s;
                        let num = 2.0 * inter + s;
                        for t in 0..l {
                            let y = labels[b * l + t] as f64;
                            // d(loss)/d(p1) for this time point
                            let dp = -(2.0 * y * den - num) / (den * den) / n as f64;
                            let dp = g[0] * F::of(dp);
                            let p1 = probs[b * c * l + l + t];
                            for ch in 0..c {
                                let i = b * c * l + ch * l + t;
                                let delta = if ch == 1 { F::one() } else { F::zero() };
                                dx[i] += dp * p1 * (delta - probs[i]);
                            }
                        }
                    }
                }
            }
            Op::Custom { input, backward } => {
                let dgrad = backward(g, self.value(*input).data(), node.value.data());
                if let Some(dx) = self.grad_slot(grads, *input) {
                    add_into(dx, &dgrad);
                }
            }
        }
    }
}

fn check_labels(labels: &[u8], expected: usize, classes: usize) -> Result<()> {
    if labels.len() != expected {
        return Err(Error::shape("labels", format!("expected {expected} labels, got {}", labels.len())));
    }
    if classes < 2 {
        return Err(Error::shape("labels", format!("need at least 2 classes, got {classes}")));
    }
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v > 1) {
        return Err(Error::Label { index, value });
    }
    Ok(())
}

/// `(Σ p·y, Σ p + Σ y)` over one batch item, using class-1 probabilities.
fn dice_sums<F: Scalar>(probs: &[F], labels: &[u8], b: usize, c: usize, l: usize) -> (f64, f64) {
    let p1 = &probs[b * c * l + l..b * c * l + 2 * l];
    let y = &labels[b * l..(b + 1) * l];
    let mut inter = 0.0;
    let mut sum = 0.0;
    for (&p, &yv) in p1.iter().zip(y) {
        let p = p.as_f64();
        inter += p * yv as f64;
        sum += p + yv as f64;
    }
    (inter, sum)
}

#[cfg(test)]
mod tests;
