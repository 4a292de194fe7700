use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

/// Central finite differences of a scalar function of several tensors.
fn numeric_grads(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    h: f64,
) -> Vec<Vec<f64>> {
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };
    let mut grads = Vec::new();
    for i in 0..inputs.len() {
        let mut g = Vec::new();
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            g.push((eval(&plus) - eval(&minus)) / (2.0 * h));
        }
        grads.push(g);
    }
    grads
}

fn autodiff_grads(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

fn check(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var, tol: f64) {
    let num = numeric_grads(inputs, f, 1e-5);
    let ad = autodiff_grads(inputs, f);
    for (i, (a, n)) in ad.iter().zip(&num).enumerate() {
        let e = rel_err(a, n);
        assert!(e < tol, "input {i}: relative error {e:e}\nautodiff {a:?}\nnumeric  {n:?}");
    }
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::new();
    let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(p).shape(), &[1, 1]);
    assert_eq!(tape.value(p).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 3]));
    match tape.matmul(a, b).unwrap_err() {
        Error::Dimension { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = [random(&[3, 3], &mut rng), random(&[3, 3], &mut rng)];
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        let p = tape.matmul(v[0], v[1]).unwrap();
        tape.sum_all(p)
    };
    check(&inputs, &f, 1e-6);
}

#[test]
fn elementwise_values() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let th = tape.tanh(z);
    let sg = tape.sigmoid(z);
    assert_eq!(tape.value(th).item().unwrap(), 0.0);
    assert_eq!(tape.value(sg).item().unwrap(), 0.5);
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
}

#[test]
fn log_of_nonpositive_is_domain_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(tape.log(x), Err(Error::Domain { op: "log", .. })));
    let x = tape.constant(t(&[1], &[-2.0]));
    assert!(tape.log(x).is_err());
}

#[test]
fn broadcast_rejects_incompatible_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 2]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 4], &mut rng);
    let row = random(&[1, 4], &mut rng);
    let col = random(&[3, 1], &mut rng);
    let positive = x.map(|v| v.abs() + 0.5);
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        let a = tape.tanh(v[0]);
        let b = tape.sigmoid(v[0]);
        let c = tape.mul(a, b).unwrap();
        let d = tape.add(c, v[1]).unwrap();
        let e = tape.mul(d, v[2]).unwrap();
        let r = tape.relu(e);
        let ex = tape.exp(v[0]);
        let s = tape.sub(r, ex).unwrap();
        let l = tape.log(v[3]).unwrap();
        let q = tape.div(s, v[3]).unwrap();
        let w = tape.add(q, l).unwrap();
        let sq = tape.sqrt(v[3]).unwrap();
        let w = tape.mul(w, sq).unwrap();
        tape.sum_all(w)
    };
    check(&[x, row, col, positive], &f, 1e-6);
}

#[test]
fn reductions_by_axis() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let s = tape.sum(x, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
    assert_eq!(tape.value(s).shape(), &[1, 2]);
    let y = tape.constant(t(&[2, 2], &[1.0, 5.0, 3.0, 4.0]));
    let m = tape.max(y, 0).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
    let r = tape.constant(t(&[1, 3], &[7.0, -1.0, 2.5]));
    let mean = tape.mean(r, 0).unwrap();
    assert_eq!(tape.value(mean).data(), &[7.0, -1.0, 2.5]);
}

#[test]
fn reduce_errors() {
    let mut tape = Tape::<f64>::new();
    let empty = tape.constant(Tensor::zeros(vec![0, 3]));
    assert!(tape.sum(empty, 0).is_err());
    let x = tape.constant(Tensor::zeros(vec![2, 3]));
    assert!(tape.sum(x, 2).is_err());
}

#[test]
fn max_routes_gradient_to_first_argmax() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(t(&[3, 1], &[2.0, 2.0, 1.0]));
    let m = tape.max(x, 0).unwrap();
    let l = tape.sum_all(m);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn reduction_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[4, 3], &mut rng);
    let w = random(&[1, 3], &mut rng);
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        let s = tape.sum(v[0], 0).unwrap();
        let m = tape.mean(v[0], 1).unwrap();
        let mx = tape.max(v[0], 0).unwrap();
        let a = tape.mul(s, v[1]).unwrap();
        let b = tape.mul(mx, mx).unwrap();
        let sa = tape.sum_all(a);
        let sb = tape.sum_all(b);
        let sm = tape.sum_all(m);
        let c = tape.add(sa, sb).unwrap();
        tape.add(c, sm).unwrap()
    };
    check(&[x, w], &f, 1e-6);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let s = tape.softmax(x, 0).unwrap();
    for &v in tape.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.constant(t(&[2], &[1000.0, 1000.0]));
    let s = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    let x = tape.constant(t(&[1, 2], &[1f64.ln(), 3f64.ln()]));
    let s = tape.softmax(x, 1).unwrap();
    let d = tape.value(s).data();
    assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[3, 4], &mut rng);
    let w = random(&[3, 4], &mut rng);
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        let s0 = tape.softmax(v[0], 0).unwrap();
        let s1 = tape.softmax(v[0], 1).unwrap();
        let a = tape.mul(s0, v[1]).unwrap();
        let b = tape.mul(s1, s1).unwrap();
        let c = tape.add(a, b).unwrap();
        tape.sum_all(c)
    };
    check(&[x, w], &f, 1e-6);
}

#[test]
fn concat_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(t(&[1, 1], &[1.0]));
    let b = tape.param(t(&[1, 1], &[2.0]));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0]);
    let l = tape.sum_all(c);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[1.0]);
    assert_eq!(tape.grad(b).unwrap(), &[1.0]);

    let widths = [10, 100, 100];
    let blocks: Vec<Var> = widths
        .iter()
        .map(|&w| tape.constant(Tensor::zeros(vec![7, w])))
        .collect();
    let all = tape.concat(&blocks, 1).unwrap();
    assert_eq!(tape.value(all).shape(), &[7, 210]);

    let bad = tape.constant(Tensor::zeros(vec![6, 3]));
    assert!(matches!(
        tape.concat(&[blocks[0], bad], 1),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn concat_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [
        random(&[2, 3], &mut rng),
        random(&[2, 2], &mut rng),
        random(&[1, 3], &mut rng),
        random(&[5, 3], &mut rng),
    ];
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        let h = tape.concat(&[v[0], v[1]], 1).unwrap();
        let r = tape.concat(&[v[0], v[2]], 0).unwrap();
        let hp = tape.matmul(h, v[3]).unwrap();
        let t1 = tape.tanh(hp);
        let rr = tape.mul(r, r).unwrap();
        let a = tape.sum_all(t1);
        let b = tape.sum_all(rr);
        tape.add(a, b).unwrap()
    };
    check(&inputs, &f, 1e-6);
}

#[test]
fn gather_scatter_examples() {
    let mut tape = Tape::<f64>::new();
    let rows = tape.constant(t(&[3, 2], &[1.0, 1.5, 2.0, 2.5, 3.0, 3.5]));
    let g = tape.index_select(rows, &[0, 2]).unwrap();
    assert_eq!(tape.value(g).data(), &[1.0, 1.5, 3.0, 3.5]);
    assert!(matches!(
        tape.index_select(rows, &[3]),
        Err(Error::Bounds { index: 3, .. })
    ));

    let zeros = tape.constant(Tensor::zeros(vec![2, 2]));
    let src = tape.constant(t(&[3, 2], &[1.0, 2.0, 10.0, 20.0, 100.0, 200.0]));
    let s = tape.scatter_add(zeros, &[1, 0, 1], src).unwrap();
    assert_eq!(tape.value(s).data(), &[10.0, 20.0, 101.0, 202.0]);
    assert!(tape.scatter_add(zeros, &[1, 0, 2], src).is_err());

    let perm = [2, 0, 1];
    let gathered = tape.index_select(rows, &perm).unwrap();
    let base = tape.constant(Tensor::zeros(vec![3, 2]));
    let back = tape.scatter_add(base, &perm, gathered).unwrap();
    assert_eq!(tape.value(back).data(), tape.value(rows).data());
}

#[test]
fn gather_scatter_narrow_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs = [random(&[4, 3], &mut rng), random(&[2, 3], &mut rng)];
    let f = |tape: &mut Tape<f64>, v: &[Var]| {
        let g = tape.index_select(v[0], &[3, 1, 3, 0]).unwrap();
        let n = tape.narrow(g, 0, 1, 2).unwrap();
        let s = tape.scatter_add(n, &[1, 1], v[1]).unwrap();
        let c = tape.narrow(s, 1, 1, 2).unwrap();
        let sq = tape.mul(c, c).unwrap();
        let r = tape.reshape(sq, vec![4]).unwrap();
        let e = tape.exp(r);
        tape.sum_all(e)
    };
    check(&inputs, &f, 1e-6);
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(vec![4, 4]));
    assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
    assert!(matches!(
        tape.dropout(x, 1.0, true, &mut rng),
        Err(Error::Config(_))
    ));
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(vec![100_000]));
    let d = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let mean = tape.value(d).data().iter().sum::<f64>() / 1e5;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let w = tape.param(t(&[3], &[0.3, -2.0, 7.0]));
    let l = tape.sum_all(w);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::<f64>::new();
    let w = tape.param(t(&[2], &[1.0, 2.0]));
    let sq = tape.mul(w, w).unwrap();
    let l = tape.sum_all(sq);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_requires_scalar_and_zero_fills_unused() {
    let mut tape = Tape::<f64>::new();
    let w = tape.param(t(&[2], &[1.0, 2.0]));
    let unused = tape.param(t(&[2], &[5.0, 5.0]));
    assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    let l = tape.sum_all(w);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0]);
    let mut empty = Tape::<f64>::new();
    let mut other = Tape::<f64>::new();
    let v = other.constant(Tensor::scalar(1.0));
    assert!(empty.backward(v).is_err());
}

#[test]
fn unrelated_tape_entries_do_not_change_gradients() {
    let x = t(&[2, 2], &[0.5, -0.2, 0.1, 0.9]);
    let run = |noise: bool| {
        let mut tape = Tape::<f64>::new();
        let v = tape.param(x.clone());
        if noise {
            let other = tape.param(Tensor::ones(vec![2, 2]));
            let o = tape.mul(other, v).unwrap();
            let _ = tape.exp(o);
        }
        let th = tape.tanh(v);
        let l = tape.sum_all(th);
        if noise {
            let _ = tape.scale(l, 3.0);
        }
        tape.backward(l).unwrap();
        tape.grad(v).unwrap().to_vec()
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut store = ParamStore::new();
    store.insert("w", t(&[2], &[1.0, -1.0]));
    let mut adam = AdamState::new(AdamConfig::default(), &store);
    adam.step(&mut store, &[vec![0.0, 0.0]], 0).unwrap();
    assert_eq!(store.get(0).data(), &[1.0, -1.0]);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    let cfg = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    let mut store = ParamStore::new();
    store.insert("w", t(&[3], &[0.0, 0.0, 0.0]));
    let mut adam = AdamState::new(cfg, &store);
    adam.step(&mut store, &[vec![3.0, -1e-3, 250.0]], 0).unwrap();
    for (&w, expect) in store.get(0).data().iter().zip([-0.01, 0.01, -0.01]) {
        assert!((w - expect).abs() < 1e-6, "{w}");
    }
}

#[test]
fn adam_minimizes_scalar_quadratic() {
    let cfg = AdamConfig {
        lr: 0.1,
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut store = ParamStore::new();
    store.insert("w", t(&[1], &[1.0]));
    let mut adam = AdamState::new(cfg, &store);
    for _ in 0..200 {
        let w = store.get(0).data()[0];
        adam.step(&mut store, &[vec![2.0 * w]], 0).unwrap();
    }
    assert!(store.get(0).data()[0].abs() < 1e-2);
}

#[test]
fn adam_rejects_non_finite_gradient_by_name() {
    let mut store = ParamStore::new();
    store.insert("head.w", t(&[1], &[1.0]));
    let mut adam = AdamState::new(AdamConfig::default(), &store);
    let err = adam.step(&mut store, &[vec![f64::NAN]], 0).unwrap_err();
    assert!(err.to_string().contains("head.w"));
    assert_eq!(adam.step_count(), 0);
}

#[test]
fn lr_schedule_and_l2_modes() {
    let cfg = AdamConfig::default();
    assert_eq!(cfg.lr_at(0), cfg.lr);
    assert!((cfg.lr_at(2) - cfg.lr * (1.0 - 5e-4f64).powi(2)).abs() < 1e-18);
    let l2 = AdamConfig {
        decay_mode: DecayMode::L2,
        ..cfg
    };
    assert_eq!(l2.lr_at(100), cfg.lr);
    // With a zero gradient only the decay term moves the weight, toward zero.
    let mut store = ParamStore::new();
    store.insert("w", t(&[1], &[2.0]));
    let mut adam = AdamState::new(l2, &store);
    adam.step(&mut store, &[vec![0.0]], 0).unwrap();
    assert!(store.get(0).data()[0] < 2.0);
}

#[test]
fn generic_over_f32() {
    let mut tape = Tape::<f32>::new();
    let a = tape.param(Tensor::new(vec![1, 2], vec![1.0f32, 2.0]).unwrap());
    let b = tape.constant(Tensor::new(vec![2, 1], vec![3.0f32, 4.0]).unwrap());
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(p).data(), &[11.0f32]);
    tape.backward(p).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[3.0f32, 4.0]);
}

proptest! {
    #[test]
    fn softmax_normalized_and_shift_invariant(
        xs in proptest::collection::vec(-50.0f64..50.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let n = xs.len();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![n], xs.clone()).unwrap());
        let shifted = tape.constant(Tensor::new(vec![n], xs.iter().map(|v| v + c).collect()).unwrap());
        let a = tape.softmax(x, 0).unwrap();
        let b = tape.softmax(shifted, 0).unwrap();
        let sa: f64 = tape.value(a).data().iter().sum();
        prop_assert!((sa - 1.0).abs() < 1e-12);
        for (p, q) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            prop_assert!(*p > 0.0 || xs.iter().cloned().fold(f64::MIN, f64::max) - 50.0 > 0.0);
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_gradients_are_deterministic(seed in 0u64..1000) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::<f64>::new();
            let w = tape.param(random(&[3, 3], &mut rng));
            let x = tape.constant(random(&[2, 3], &mut rng));
            let h = tape.matmul(x, w).unwrap();
            let d = tape.dropout(h, 0.3, true, &mut rng).unwrap();
            let s = tape.softmax(d, 1).unwrap();
            let l = tape.sum(s, 0).unwrap();
            let l = tape.mul(l, l).unwrap();
            let l = tape.sum_all(l);
            tape.backward(l).unwrap();
            (tape.value(l).data().to_vec(), tape.grad(w).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
