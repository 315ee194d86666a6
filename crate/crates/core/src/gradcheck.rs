//! Central finite-difference verification of every tape op, run in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NormStats, RunningStats, Tape, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for every element `i`.
pub fn finite_diff_grad<F: Scalar>(f: impl Fn(&Tensor<F>) -> F, x: &Tensor<F>, eps: F) -> Tensor<F> {
    let mut probe = x.clone();
    let two = F::of(2.0);
    Tensor::from_fn(x.shape(), |i| {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        (up - down) / (two * eps)
    })
}

/// Largest elementwise `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn max_relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

type BuildFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One op under test: the inputs it is differentiated against and a closure
/// recording the op on a tape.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    build: BuildFn,
}

impl GradCase {
    pub fn new(
        name: &'static str,
        inputs: Vec<Tensor<f64>>,
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self { name, inputs, build: Box::new(build) }
    }

    /// Scalar objective: the op output contracted with fixed pseudo-random
    /// weights, so every output element contributes a distinct gradient.
    fn objective(&self, tape: &mut Tape<f64>, inputs: &[Tensor<f64>]) -> Result<Var> {
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = (self.build)(tape, &vars)?;
        if tape.value(out).is_scalar() {
            return Ok(out);
        }
        let shape = tape.shape(out).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let weights = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
        let w = tape.leaf(weights, false);
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    }

    fn eval(&self, inputs: &[Tensor<f64>]) -> f64 {
        let mut tape = Tape::new();
        let root = self.objective(&mut tape, inputs).expect("gradient case must build");
        tape.value(root).data()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn check_case(case: &GradCase, eps: f64, tolerance: f64) -> Result<CaseReport> {
    let mut tape = Tape::new();
    let root = case.objective(&mut tape, &case.inputs)?;
    let grads = tape.backward(root)?;
    let mut worst = 0.0f64;
    for (k, input) in case.inputs.iter().enumerate() {
        // Leaves are recorded first, in input order.
        let analytic = grads.get_or_zeros(Var(k));
        let numeric = finite_diff_grad(
            |probe| {
                let mut all = case.inputs.clone();
                all[k] = probe.clone();
                case.eval(&all)
            },
            input,
            eps,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(CaseReport { name: case.name, max_rel_error: worst, passed: worst < tolerance })
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

/// The full op suite with small (≤ 64 element) random inputs.
pub fn default_suite(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ce_labels = random_labels(&mut rng, 2 * 8);
    let dice_labels = random_labels(&mut rng, 2 * 8);
    let dropout_seed = rng.random::<u64>();
    vec![
        GradCase::new(
            "conv1d",
            vec![random(&mut rng, &[2, 3, 8]), random(&mut rng, &[4, 3, 4]), random(&mut rng, &[4])],
            |t, v| t.conv1d(v[0], v[1], v[2], 1, 2),
        ),
        GradCase::new("maxpool1d", vec![random(&mut rng, &[2, 3, 9])], |t, v| t.maxpool1d(v[0], 2, 2)),
        GradCase::new("upsample_nearest", vec![random(&mut rng, &[2, 2, 7])], |t, v| {
            t.upsample_nearest(v[0], 15)
        }),
        GradCase::new(
            "batchnorm1d_train",
            vec![random(&mut rng, &[2, 3, 6]), random(&mut rng, &[3]), random(&mut rng, &[3])],
            |t, v| Ok(t.batch_norm(v[0], v[1], v[2], NormStats::Batch, 1e-5)?.0),
        ),
        GradCase::new(
            "batchnorm1d_eval",
            vec![random(&mut rng, &[2, 3, 6]), random(&mut rng, &[3]), random(&mut rng, &[3])],
            |t, v| {
                let rs = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
                Ok(t.batch_norm(v[0], v[1], v[2], NormStats::Running(&rs), 1e-5)?.0)
            },
        ),
        GradCase::new("elu", vec![random(&mut rng, &[3, 16])], |t, v| Ok(t.elu(v[0]))),
        GradCase::new("dropout", vec![random(&mut rng, &[3, 16])], move |t, v| {
            t.dropout(v[0], 0.2, &mut ChaCha8Rng::seed_from_u64(dropout_seed))
        }),
        GradCase::new(
            "concat_channels",
            vec![random(&mut rng, &[2, 2, 5]), random(&mut rng, &[2, 3, 5])],
            |t, v| t.concat_channels(v[0], v[1]),
        ),
        GradCase::new("softmax_classes", vec![random(&mut rng, &[2, 3, 6])], |t, v| t.softmax_classes(v[0])),
        GradCase::new("softmax_cross_entropy", vec![random(&mut rng, &[2, 2, 8])], move |t, v| {
            t.cross_entropy(v[0], &ce_labels)
        }),
        GradCase::new("dice_loss", vec![random(&mut rng, &[2, 2, 8])], move |t, v| {
            t.dice_loss(v[0], &dice_labels, 1.0)
        }),
        GradCase::new(
            "weighted_sum",
            vec![random(&mut rng, &[4, 4]), random(&mut rng, &[4, 4])],
            |t, v| {
                let p = t.mul(v[0], v[1])?;
                let s = t.add(p, v[0])?;
                t.weighted_sum(&[(s, 0.7), (v[1], -1.3)])
            },
        ),
    ]
}

pub fn run_suite(cases: &[GradCase], eps: f64, tolerance: f64) -> Result<Vec<CaseReport>> {
    cases.iter().map(|c| check_case(c, eps, tolerance)).collect()
}

/// ELU with a wrong slope on the negative branch; the suite must flag it.
pub fn corrupted_elu_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GradCase::new("corrupted_elu", vec![random(&mut rng, &[2, 8])], |t, v| {
        let value = t.value(v[0]).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        t.custom_unary(
            v[0],
            value,
            Box::new(|g, x, _| g.iter().zip(x).map(|(&g, &x)| if x > 0.0 { g } else { 0.5 * g }).collect()),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_sum_is_ones() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.3 - 1.0);
        let g = finite_diff_grad(|t| t.data().iter().sum(), &x, 1e-4);
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn finite_diff_of_square() {
        let x = Tensor::new(&[1], vec![3.0f64]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &x, 1e-4);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn every_op_passes() {
        let reports = run_suite(&default_suite(7), DEFAULT_EPS, DEFAULT_TOLERANCE).unwrap();
        for r in &reports {
            assert!(r.passed, "{} failed with relative error {:.3e}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let case = corrupted_elu_case(3);
        let report = check_case(&case, DEFAULT_EPS, DEFAULT_TOLERANCE).unwrap();
        assert!(!report.passed);
    }
}
