use approx::assert_abs_diff_eq;
use proptest::prelude::{proptest, prop_assert};

use super::*;
use super::Rng;
use crate::error::Error;

fn t2(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(Tensor::identity(2));
    let m = tape.constant(t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let out = tape.matmul(i, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(t2(&[vec![1.0, 2.0]]));
    let b = tape.constant(t2(&[vec![3.0], vec![4.0]]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).shape(), &[1, 1]);
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = Rng::new(11);
    let a: Vec<f32> = (0..35).map(|_| rng.normal() as f32).collect();
    let b: Vec<f32> = (0..21).map(|_| rng.normal() as f32).collect();
    let mut want = [0.0f64; 15];
    for i in 0..5 {
        for j in 0..3 {
            for p in 0..7 {
                want[i * 3 + j] += a[i * 7 + p] as f64 * b[p * 3 + j] as f64;
            }
        }
    }
    let mut tape = Tape::<f32>::new();
    let va = tape.constant(Tensor::new(vec![5, 7], a).unwrap());
    let vb = tape.constant(Tensor::new(vec![7, 3], b).unwrap());
    let out = tape.matmul(va, vb).unwrap();
    for (g, w) in tape.value(out).data().iter().zip(want) {
        assert!((*g as f64 - w).abs() < 1e-6);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t2(&[vec![0.0, 0.0], vec![2f64.ln(), 0.0]]));
    let p = tape.softmax(x).unwrap();
    let d = tape.value(p).data();
    assert_abs_diff_eq!(d[0], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(d[1], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(d[2], 2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(d[3], 1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn softmax_rejects_nan() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(vec![1, 2], vec![f32::NAN, 0.0]).unwrap());
    assert!(matches!(tape.softmax(x), Err(Error::NonFinite(_))));
}

proptest! {
    #[test]
    fn softmax_normalized_and_shift_invariant(xs in proptest::collection::vec(-20.0f64..20.0, 1..16)) {
        let n = xs.len();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, n], xs.clone()).unwrap());
        let shifted = tape.constant(Tensor::new(vec![1, n], xs.iter().map(|v| v + 1000.0).collect()).unwrap());
        let p = tape.softmax(x).unwrap();
        let q = tape.softmax(shifted).unwrap();
        let sum: f64 = tape.value(p).data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        for (a, b) in tape.value(p).data().iter().zip(tape.value(q).data()) {
            prop_assert!(*a > 0.0);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let g4 = tape.constant(Tensor::full(&[4], 1.0));
    let b4 = tape.constant(Tensor::zeros(&[4]));
    let x = tape.constant(t2(&[vec![5.0; 4]]));
    let y = tape.layer_norm(x, g4, b4, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let g2 = tape.constant(Tensor::full(&[2], 1.0));
    let b2 = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(t2(&[vec![1.0, -1.0]]));
    let y = tape.layer_norm(x, g2, b2, 1e-5).unwrap();
    let d = tape.value(y).data();
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert_abs_diff_eq!(d[0], expect, epsilon = 1e-12);
    assert_abs_diff_eq!(d[1], -expect, epsilon = 1e-12);

    let mut rng = Rng::new(5);
    let row: Vec<f64> = (0..32).map(|_| rng.normal() * 3.0 + 1.5).collect();
    let g = tape.constant(Tensor::full(&[32], 1.0));
    let b = tape.constant(Tensor::zeros(&[32]));
    let x = tape.constant(Tensor::new(vec![1, 32], row).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    let d = tape.value(y).data();
    let mean = d.iter().sum::<f64>() / 32.0;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
    assert!(mean.abs() < 1e-6);
    assert!((var - 1.0).abs() < 1e-3);
}

#[test]
fn layer_norm_needs_two_features() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[3, 1]));
    let g = tape.constant(Tensor::zeros(&[1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert!(tape.layer_norm(x, g, b, 1e-5).is_err());
}

#[test]
fn gelu_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![3], vec![0.0, 10.0, -10.0]).unwrap());
    let y = tape.gelu(x);
    let d = tape.value(y).data();
    assert_eq!(d[0], 0.0);
    assert!((d[1] - 10.0).abs() < 1e-4);
    assert!(d[2].abs() < 1e-4);
}

#[test]
fn backward_square() {
    let mut store = ParamStore::<f64>::new();
    let id = store.insert("x", Tensor::scalar(3.0)).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let sq = tape.mul(x, x).unwrap();
    tape.backward(sq, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[6.0]);
}

#[test]
fn backward_sum_of_softmax_is_zero() {
    let mut store = ParamStore::<f64>::new();
    let id = store
        .insert("x", Tensor::new(vec![1, 4], vec![0.3, -1.0, 2.0, 0.1]).unwrap())
        .unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let p = tape.softmax(x).unwrap();
    let s = tape.sum(p);
    tape.backward(s, &mut store).unwrap();
    for g in store.get(id).grad.data() {
        assert!(g.abs() < 1e-12);
    }
}

#[test]
fn backward_rejects_non_scalar_and_zeroes_unreachable() {
    let mut store = ParamStore::<f64>::new();
    let used = store.insert("used", Tensor::full(&[2], 1.0)).unwrap();
    let unused = store.insert("unused", Tensor::full(&[3], 1.0)).unwrap();
    store.get_mut(unused).grad = Tensor::full(&[3], 9.0);
    let mut tape = Tape::new();
    let u = tape.param(&store, used);
    assert!(matches!(tape.backward(u, &mut store), Err(Error::NonScalarLoss(_))));
    let _bound_but_disconnected = tape.param(&store, unused);
    let s = tape.sum(u);
    tape.backward(s, &mut store).unwrap();
    assert_eq!(store.get(used).grad.data(), &[1.0, 1.0]);
    assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0, 0.0]);
}

/// Every op composed into one scalar, checked against finite differences.
#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = Rng::new(21);
    let mut store = ParamStore::<f64>::new();
    let mut rand = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    };
    let x = store.insert("x", rand(&[4, 6])).unwrap();
    let w = store.insert("w", rand(&[6, 6])).unwrap();
    let b = store.insert("b", rand(&[6])).unwrap();
    let g = store.insert("g", rand(&[6])).unwrap();
    let be = store.insert("be", rand(&[6])).unwrap();
    let build = |t: &mut Tape<f64>, p: &ParamStore<f64>| {
        let (x, w, b, g, be) = (t.param(p, x), t.param(p, w), t.param(p, b), t.param(p, g), t.param(p, be));
        let h = t.matmul(x, w)?;
        let h = t.add_row(h, b)?;
        let h = t.gelu(h);
        let h = t.layer_norm(h, g, be, 1e-5)?;
        let left = t.slice_cols(h, 0, 3)?;
        let right = t.slice_cols(h, 3, 3)?;
        let scores = t.matmul_nt(left, right)?;
        let scores = t.scale(scores, 0.5);
        let probs = t.softmax(scores)?;
        let ctx = t.matmul(probs, right)?;
        let both = t.concat_cols(&[ctx, left])?;
        let top = t.slice_rows(both, 0, 2)?;
        let bottom = t.select_rows(both, &[3, 2])?;
        let mx = t.elem_max(&[top, bottom])?;
        let stacked = t.concat_rows(&[mx, top])?;
        let mean = t.mean_rows(stacked);
        let maxr = t.max_rows(stacked);
        let pooled = t.concat_rows(&[mean, maxr])?;
        let flat = t.reshape(pooled, &[2, 6])?;
        let sq = t.mul(flat, flat)?;
        let ce = t.cross_entropy(sq, &[1, 4])?;
        let extra = t.mean(flat);
        t.add(ce, extra)
    };
    let cfg = GradCheckConfig {
        step: 1e-5,
        ..Default::default()
    };
    let report = grad_check(build, &store, &cfg).unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn identical_seed_identical_init() {
    let draw = |seed| {
        let mut r = Rng::new(seed);
        (0..100).map(|_| r.truncated_normal(0.02) as f32).collect::<Vec<_>>()
    };
    let a = draw(9);
    let b = draw(9);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
