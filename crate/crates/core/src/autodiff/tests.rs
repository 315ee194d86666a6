use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn t32(shape: &[usize], data: &[f32]) -> Tensor<f32> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn conv_layer(tape: &mut Tape<f32>, c_in: usize, c_out: usize, k: usize, w: f32, b: f32) -> (Var, Var) {
    let weight = tape.leaf(Tensor::full(&[c_out, c_in, k], w), true);
    let bias = tape.leaf(Tensor::full(&[c_out], b), true);
    (weight, bias)
}

#[test]
fn conv1d_keeps_length_with_asymmetric_padding() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f32>::zeros(&[1, 2500]), false);
    let (w, b) = conv_layer(&mut tape, 1, 5, 4, 0.3, 0.0);
    let y = tape.conv1d(x, w, b, 1, 2).unwrap();
    assert_eq!(tape.shape(y), &[5, 2500]);
}

#[test]
fn conv1d_zero_input_gives_bias() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f32>::zeros(&[3, 20]), false);
    let w = tape.leaf(Tensor::from_fn(&[2, 3, 4], |i| i as f32 * 0.1), true);
    let b = tape.leaf(t32(&[2], &[0.5, -1.5]), true);
    let y = tape.conv1d(x, w, b, 1, 2).unwrap();
    let v = tape.value(y).data();
    assert!(v[..20].iter().all(|&x| x == 0.5));
    assert!(v[20..].iter().all(|&x| x == -1.5));
}

#[test]
fn conv1d_identity_kernel() {
    let mut tape = Tape::new();
    let input = Tensor::from_fn(&[1, 9], |i| (i as f32).sin());
    let x = tape.leaf(input.clone(), false);
    let (w, b) = conv_layer(&mut tape, 1, 1, 1, 1.0, 0.0);
    let y = tape.conv1d(x, w, b, 0, 0).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv1d_channel_mismatch_is_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f32>::zeros(&[2, 10]), false);
    let (w, b) = conv_layer(&mut tape, 3, 1, 4, 1.0, 0.0);
    assert!(matches!(tape.conv1d(x, w, b, 1, 2), Err(Error::Shape { .. })));
}

#[test]
fn maxpool_shapes_and_values() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::<f32>::zeros(&[5, 2500]), false);
    let pa = tape.maxpool1d(a, 2, 2).unwrap();
    assert_eq!(tape.shape(pa), &[5, 1250]);
    let b = tape.leaf(Tensor::<f32>::zeros(&[9, 625]), false);
    let pb = tape.maxpool1d(b, 2, 2).unwrap();
    assert_eq!(tape.shape(pb), &[9, 312]);
    let c = tape.leaf(t32(&[1, 4], &[3.0, 1.0, 4.0, 1.0]), false);
    let pc = tape.maxpool1d(c, 2, 2).unwrap();
    assert_eq!(tape.value(pc).data(), &[3.0, 4.0]);
    let short = tape.leaf(Tensor::<f32>::zeros(&[1, 1]), false);
    assert!(tape.maxpool1d(short, 2, 2).is_err());
}

#[test]
fn maxpool_tie_routes_to_first_index() {
    let mut tape = Tape::new();
    let x = tape.leaf(t32(&[1, 4], &[2.0, 2.0, 1.0, 1.0]), true);
    let y = tape.maxpool1d(x, 2, 2).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap().get(x).unwrap();
    assert_eq!(g.data(), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn upsample_integer_ratio_repeats() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn(&[2, 78], |i| i as f32), false);
    let y = tape.upsample_nearest(x, 156).unwrap();
    let v = tape.value(y).data();
    for c in 0..2 {
        for j in 0..156 {
            assert_eq!(v[c * 156 + j], (c * 78 + j / 2) as f32);
        }
    }
}

#[test]
fn upsample_non_integer_ratio_and_identity() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn(&[12, 312], |i| i as f32), false);
    let y = tape.upsample_nearest(x, 625).unwrap();
    assert_eq!(tape.shape(y), &[12, 625]);
    let same = tape.upsample_nearest(x, 312).unwrap();
    assert_eq!(tape.value(same), tape.value(x));
}

#[test]
fn batchnorm_train_normalises() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn(&[2, 3, 50], |i| ((i * 37) % 11) as f32 * 0.7 + i as f32 * 0.01), false);
    let g = tape.leaf(Tensor::full(&[3], 1.0f32), true);
    let b = tape.leaf(Tensor::zeros(&[3]), true);
    let (y, stats) = tape.batch_norm(x, g, b, NormStats::Batch, 1e-5).unwrap();
    assert!(stats.is_some());
    let v = tape.value(y).data();
    for ch in 0..3 {
        let vals: Vec<f64> = (0..2)
            .flat_map(|n| v[(n * 3 + ch) * 50..(n * 3 + ch + 1) * 50].iter().map(|&x| x as f64))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn(&[2, 10], |i| i as f32), false);
    let g = tape.leaf(Tensor::zeros(&[2]), true);
    let b = tape.leaf(t32(&[2], &[0.25, -4.0]), true);
    let (y, _) = tape.batch_norm(x, g, b, NormStats::Batch, 1e-5).unwrap();
    let v = tape.value(y).data();
    assert!(v[..10].iter().all(|&x| x == 0.25));
    assert!(v[10..].iter().all(|&x| x == -4.0));
}

#[test]
fn batchnorm_eval_with_unit_running_stats() {
    let mut tape = Tape::new();
    let input = Tensor::from_fn(&[2, 6], |i| i as f64 - 3.0);
    let x = tape.leaf(input.clone(), false);
    let g = tape.leaf(Tensor::full(&[2], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[2]), false);
    let rs = RunningStats::new(2);
    let eps = 1e-5;
    let (y, stats) = tape.batch_norm(x, g, b, NormStats::Running(&rs), eps).unwrap();
    assert!(stats.is_none());
    let expected = input.map(|v| v / (1.0 + eps).sqrt());
    assert!(tape.value(y).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn batchnorm_rejects_non_positive_epsilon() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f32>::zeros(&[1, 4]), false);
    let g = tape.leaf(Tensor::full(&[1], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[1]), false);
    assert!(tape.batch_norm(x, g, b, NormStats::Batch, 0.0).is_err());
}

#[test]
fn running_stats_update() {
    let mut rs = RunningStats::<f64>::new(1);
    rs.update(&BatchStats { mean: vec![2.0], var: vec![3.0], count: 4 }, 0.1);
    assert!((rs.mean[0] - 0.2).abs() < 1e-12);
    assert!((rs.var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-12);
}

#[test]
fn elu_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(t32(&[1, 3], &[0.0, 2.0, -1.0]), false);
    let y = tape.elu(x);
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.0);
    assert_eq!(v[1], 2.0);
    assert!((v[2] + 0.632_12).abs() < 1e-5);
}

#[test]
fn dropout_contracts() {
    let input = Tensor::from_fn(&[4, 25], |i| i as f32 + 1.0);
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), false);
    let y = tape.dropout(x, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(tape.value(y), &input);
    let a = tape.dropout(x, 0.2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = tape.dropout(x, 0.2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    assert!(tape.value(a).data().contains(&0.0));
    assert!(tape.dropout(x, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn dropout_expectation_on_constant_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[1, 100], 3.0f64), false);
    let mut total = 0.0;
    let trials = 200;
    for _ in 0..trials {
        let y = tape.dropout(x, 0.2, &mut rng).unwrap();
        total += tape.value(y).data().iter().sum::<f64>();
    }
    // 2·10^4 element draws
    let mean = total / (trials * 100) as f64;
    assert!((mean - 3.0).abs() / 3.0 < 0.02, "mean {mean}");
}

#[test]
fn concat_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::<f32>::zeros(&[16, 156]), false);
    let b = tape.leaf(Tensor::<f32>::zeros(&[16, 156]), false);
    let ab = tape.concat_channels(a, b).unwrap();
    assert_eq!(tape.shape(ab), &[32, 156]);
    let c = tape.leaf(Tensor::<f32>::zeros(&[7, 1250]), false);
    let cc = tape.concat_channels(c, c).unwrap();
    assert_eq!(tape.shape(cc), &[14, 1250]);
    let d = tape.leaf(Tensor::<f32>::zeros(&[7, 1249]), false);
    assert!(tape.concat_channels(c, d).is_err());
}

#[test]
fn concat_with_empty_channels_is_identity() {
    let mut tape = Tape::new();
    let input = Tensor::from_fn(&[3, 5], |i| i as f32);
    let a = tape.leaf(input.clone(), false);
    let e = tape.leaf(Tensor::new(&[0, 5], vec![]).unwrap(), false);
    let y = tape.concat_channels(a, e).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn softmax_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2, 2], vec![0.0f64, 3f64.ln(), 0.0, 0.0]).unwrap(), false);
    let y = tape.softmax_classes(x).unwrap();
    let v = tape.value(y).data();
    // column 0: [0, 0]; column 1: [ln 3, 0]
    assert!((v[0] - 0.5).abs() < 1e-12 && (v[2] - 0.5).abs() < 1e-12);
    assert!((v[1] - 0.75).abs() < 1e-12 && (v[3] - 0.25).abs() < 1e-12);
}

#[test]
fn backward_linear_and_quadratic() {
    let mut tape = Tape::new();
    let data = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
    let x = tape.leaf(data.clone(), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap().get(x).unwrap();
    assert!(g.data().iter().all(|&v| v == 1.0));

    let mut tape = Tape::new();
    let x = tape.leaf(data.clone(), true);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let half = tape.weighted_sum(&[(s, 0.5)]).unwrap();
    let g = tape.backward(half).unwrap().get(x).unwrap();
    assert!(g.max_abs_diff(&data) < 1e-12);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f32>::zeros(&[2, 2]), true);
    let y = tape.elu(x);
    assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot(_))));
}

#[test]
fn cross_entropy_values() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::<f64>::zeros(&[2, 10]), false);
    let ce = tape.cross_entropy(z, &[0, 1, 1, 0, 0, 1, 0, 1, 1, 1]).unwrap();
    assert!((tape.value(ce).data()[0] - 2f64.ln()).abs() < 1e-12);

    let x = tape.leaf(Tensor::new(&[2, 1], vec![3f64.ln(), 0.0]).unwrap(), false);
    let ce = tape.cross_entropy(x, &[0]).unwrap();
    assert!((tape.value(ce).data()[0] + 0.75f64.ln()).abs() < 1e-12);

    assert!(matches!(tape.cross_entropy(x, &[2]), Err(Error::Label { index: 0, value: 2 })));
}

fn prop_tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    proptest::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

proptest! {
    #[test]
    fn softmax_columns_sum_to_one(x in prop_tensor(vec![3, 4, 7]), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), false);
        let p = tape.softmax_classes(v).unwrap();
        let shifted = tape.leaf(x.map(|z| z + shift), false);
        let q = tape.softmax_classes(shifted).unwrap();
        let pv = tape.value(p).data();
        prop_assert!(tape.value(p).max_abs_diff(tape.value(q)) < 1e-12);
        for b in 0..3 {
            for t in 0..7 {
                let s: f64 = (0..4).map(|c| pv[b * 28 + c * 7 + t]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
        prop_assert!(pv.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn maxpool_and_upsample_conserve_gradient(x in prop_tensor(vec![2, 3, 11]), target in 1usize..40) {
        let mut tape = Tape::new();
        let v = tape.leaf(x, true);
        let up = tape.upsample_nearest(v, target).unwrap();
        let pooled = tape.maxpool1d(v, 2, 2).unwrap();
        let w = Tensor::from_fn(tape.shape(up), |i| (i % 5) as f64 - 1.5);
        let wv = tape.leaf(w.clone(), false);
        let prod = tape.mul(up, wv).unwrap();
        let s = tape.sum(prod);
        let g = tape.backward(s).unwrap().get(v).unwrap();
        prop_assert!((g.data().iter().sum::<f64>() - w.data().iter().sum::<f64>()).abs() < 1e-9);

        let w2 = Tensor::from_fn(tape.shape(pooled), |i| (i % 3) as f64 + 0.5);
        let w2v = tape.leaf(w2.clone(), false);
        let prod2 = tape.mul(pooled, w2v).unwrap();
        let s2 = tape.sum(prod2);
        let g2 = tape.backward(s2).unwrap().get(v).unwrap();
        prop_assert!((g2.data().iter().sum::<f64>() - w2.data().iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn conv1d_is_linear_without_bias(x in prop_tensor(vec![2, 12]), w in prop_tensor(vec![3, 2, 4]), a in -3.0f64..3.0) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let ax = tape.leaf(x.map(|v| a * v), false);
        let wv = tape.leaf(w, false);
        let b = tape.leaf(Tensor::zeros(&[3]), false);
        let y = tape.conv1d(xv, wv, b, 1, 2).unwrap();
        let ya = tape.conv1d(ax, wv, b, 1, 2).unwrap();
        for (p, q) in tape.value(y).data().iter().zip(tape.value(ya).data()) {
            prop_assert!((a * p - q).abs() <= 1e-5 * (a * p).abs().max(1e-9) + 1e-12);
        }
    }

    #[test]
    fn random_ops_match_finite_differences(seed in 0u64..1000) {
        let reports = crate::gradcheck::run_suite(
            &crate::gradcheck::default_suite(seed),
            crate::gradcheck::DEFAULT_EPS,
            crate::gradcheck::DEFAULT_TOLERANCE,
        ).unwrap();
        for r in reports {
            prop_assert!(r.passed, "{} rel err {}", r.name, r.max_rel_error);
        }
    }
}
