use cir_core::tensor::gradcheck::{check_inputs, GradCheckOptions};
use cir_core::tensor::{Tape, Tensor, Var};
use cir_core::TensorError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn opts() -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        ..Default::default()
    }
}

/// Weighted sum with fixed random weights, so every output entry contributes.
fn weighted_sum(t: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t.value(x).numel();
    let rows = t.value(x).rows();
    let parts: Vec<_> = (0..rows).map(|i| t.select_rows(x, &[i]).unwrap()).collect();
    let flat = t.concat_cols(&parts).unwrap();
    let w = t.constant(rand_tensor(&mut rng, vec![n, 1]));
    let p = t.matmul(flat, w).unwrap();
    t.sum(p)
}

#[test]
fn matmul_identity_and_exact() {
    let mut t = Tape::<f64>::new();
    let i2 = t.leaf(Tensor::identity(2));
    let i2b = t.leaf(Tensor::identity(2));
    let p = t.matmul(i2, i2b).unwrap();
    assert_eq!(t.value(p), &Tensor::identity(2));

    let a = t.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = t.leaf(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[2.0, 4.0]);
    assert_eq!(t.value(c).shape(), &[2, 1]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::zeros(vec![2, 3]));
    let b = t.leaf(Tensor::zeros(vec![2, 3]));
    match t.matmul(a, b) {
        Err(TensorError::Shape { detail, .. }) => {
            assert!(detail.contains("[2, 3]"), "{detail}");
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, vec![3, 4]);
    let b = rand_tensor(&mut rng, vec![4, 2]);
    let r = check_inputs(
        &[a, b],
        |t, v| {
            let c = t.matmul(v[0], v[1])?;
            Ok(weighted_sum(t, c, 9))
        },
        &opts(),
    )
    .unwrap();
    assert!(r.passes(1e-6), "{:?}", r.worst);
}

#[test]
fn softmax_rows_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![2f64.ln(), 0.0, f64::NEG_INFINITY]]).unwrap());
    let y = t.softmax_rows(x).unwrap();
    let v = t.value(y);
    for j in 0..3 {
        assert!((v.get2(0, j) - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((v.get2(1, 0) - 2.0 / 3.0).abs() < 1e-15);
    assert!((v.get2(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(v.get2(1, 2), 0.0);
}

#[test]
fn softmax_rejects_nan() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::vector(vec![0.0, f64::NAN]).reshape(vec![1, 2]).unwrap());
    assert!(matches!(t.softmax_rows(x), Err(TensorError::NonFinite { .. })));
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, vec![5, 7]).map(|v| 3.0 * v);
    let r = check_inputs(
        &[x],
        |t, v| {
            let y = t.softmax_rows(v[0])?;
            Ok(weighted_sum(t, y, 3))
        },
        &opts(),
    )
    .unwrap();
    assert!(r.passes(1e-6), "{:?}", r.worst);
}

#[test]
fn relu_examples_and_mask_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    // subgradient at exactly zero is zero
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let neg = t.leaf(Tensor::vector(vec![-0.5, -3.0, -1e-9]));
    let z = t.relu(neg);
    assert!(t.value(z).data().iter().all(|&v| v == 0.0));
}

#[test]
fn relu_gradient_matches_finite_differences_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, vec![4, 6]).map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
    let r = check_inputs(
        &[x],
        |t, v| {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        },
        &opts(),
    )
    .unwrap();
    assert!(r.passes(1e-6), "{:?}", r.worst);
}

#[test]
fn cosine_sim_examples() {
    let mut t = Tape::<f64>::new();
    let cases = [
        ([1.0, 0.0], [0.0, 1.0], 0.0),
        ([2.0, 2.0], [1.0, 1.0], 1.0),
        ([3.0, 4.0], [4.0, 3.0], 0.96),
    ];
    for (a, b, want) in cases {
        let a = t.leaf(Tensor::vector(a.to_vec()));
        let b = t.leaf(Tensor::vector(b.to_vec()));
        let c = t.cosine_sim(a, b).unwrap();
        assert!((t.value(c).item() - want).abs() < 1e-15);
    }
    let z = t.leaf(Tensor::vector(vec![0.0, 0.0]));
    let o = t.leaf(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(t.cosine_sim(z, o), Err(TensorError::Degenerate { .. })));
}

#[test]
fn cosine_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, vec![6]);
    let b = rand_tensor(&mut rng, vec![6]);
    let r = check_inputs(&[a, b], |t, v| Ok(t.cosine_sim(v[0], v[1])?), &opts()).unwrap();
    assert!(r.passes(1e-6), "{:?}", r.worst);
}

#[test]
fn backward_of_sum_is_ones_and_requires_scalar_root() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::zeros(vec![2, 3]));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    assert!(matches!(t.backward(x), Err(TensorError::Contract(_))));
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tape::<f64>::new();
    let a = t.leaf(rand_tensor(&mut rng, vec![3, 4]));
    let b = t.leaf(rand_tensor(&mut rng, vec![4, 4]));
    let c = t.matmul(a, b).unwrap();
    let s = t.softmax_rows(c).unwrap();
    let n = t.l2_normalize(s).unwrap();
    let root = weighted_sum(&mut t, n, 1);
    let g1 = t.backward(root).unwrap();
    let g2 = t.backward(root).unwrap();
    assert_eq!(g1.get(a), g2.get(a));
    assert_eq!(g1.get(b), g2.get(b));
}

#[test]
fn plumbing_primitives_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, vec![3, 4]);
    let y = rand_tensor(&mut rng, vec![3, 4]);
    let gamma = rand_tensor(&mut rng, vec![4]);
    let beta = rand_tensor(&mut rng, vec![4]);
    let table = rand_tensor(&mut rng, vec![5, 4]);
    let r = check_inputs(
        &[x, y, gamma, beta, table],
        |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let sc = t.scale(s, 1.7);
            let ln = t.layer_norm(sc, v[2], v[3])?;
            let ge = t.gelu(ln);
            let emb = t.embedding(v[4], &[1, 3, 1])?;
            let cat = t.concat_rows(&[ge, emb])?;
            let bias = t.add_bias(cat, v[3])?;
            let tr = t.transpose(bias)?;
            let sl = t.slice_cols(tr, 1, 4)?;
            let nrm = t.l2_normalize(sl)?;
            let cc = t.concat_cols(&[nrm, nrm])?;
            let shifted = t.add_scalar(cc, 0.3);
            let m = t.mean(shifted);
            let w = weighted_sum(t, cc, 11);
            let tot = t.add(m, w)?;
            Ok(tot)
        },
        &opts(),
    )
    .unwrap();
    assert!(r.passes(1e-6), "{:?}", r.worst);
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, vec![3, 5]).map(|v| 4.0 * v);
    let r = check_inputs(&[x], |t, v| Ok(t.cross_entropy_rows(v[0], &[0, 4, 2])?), &opts()).unwrap();
    assert!(r.passes(1e-6), "{:?}", r.worst);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![3, 4], vals).unwrap());
        let y = t.softmax_rows(x).unwrap();
        for i in 0..3 {
            let row = t.value(y).row(i);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_is_positive_scale_invariant(
        a in proptest::collection::vec(-10.0f64..10.0, 5),
        b in proptest::collection::vec(-10.0f64..10.0, 5),
        c in 1e-3f64..1e3,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let mut t = Tape::<f64>::new();
        let va = t.leaf(Tensor::vector(a.clone()));
        let vca = t.leaf(Tensor::vector(a.iter().map(|x| c * x).collect()));
        let vb = t.leaf(Tensor::vector(b));
        let s1 = t.cosine_sim(va, vb).unwrap();
        let s2 = t.cosine_sim(vca, vb).unwrap();
        prop_assert!((t.value(s1).item() - t.value(s2).item()).abs() < 1e-12);
        prop_assert!(t.value(s1).item().abs() <= 1.0 + 1e-12);
    }
}
