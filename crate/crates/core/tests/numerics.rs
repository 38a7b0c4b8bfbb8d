use hatelens_core::numerics::{grad_check, Graph, SeqLayout, Tensor, Var};
use hatelens_core::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn assert_grads(params: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let report = grad_check(&params, 1e-5, f).unwrap();
    assert!(report.max_rel_error < 1e-4, "max rel err {} at {:?}", report.max_rel_error, report.worst);
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap());
    let c = g.matmul(i, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

    let row = g.constant(Tensor::row_vector(&[1.0, 2.0]));
    let col = g.constant(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
    let dot = g.matmul(row, col).unwrap();
    assert_eq!(g.value(dot).item(), 11.0);

    let zero = g.constant(Tensor::zeros(1, 1));
    let any = g.constant(Tensor::row_vector(&[7.0, -2.0, 9.0]));
    let z = g.matmul(zero, any).unwrap();
    assert!(g.value(z).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        Error::Dimension {
            op: "matmul",
            lhs: (2, 3),
            rhs: (2, 3)
        }
    );
    assert!(err.to_string().contains("2x3 vs 2x3"));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]).unwrap());
    let y = g.row_softmax(x).unwrap();
    let v = g.value(y);
    for &p in v.row(0) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    // direct evaluation: e^k / (e + e^2 + e^3)
    let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
    for (k, &p) in v.row(1).iter().enumerate() {
        assert!((p - ((k + 1) as f64).exp() / z).abs() < 1e-15);
    }
    assert!((v.get(1, 0) - 0.09003057).abs() < 1e-8);
    assert!((v.get(1, 2) - 0.66524096).abs() < 1e-8);

    let big = g.constant(Tensor::row_vector(&[1000.0, 0.0]));
    let s = g.row_softmax(big).unwrap();
    assert!((g.value(s).get(0, 0) - 1.0).abs() < 1e-12);
    assert!(g.value(s).get(0, 1) < 1e-12);

    let bad = g.constant(Tensor::row_vector(&[f64::NAN, 0.0]));
    assert!(matches!(g.row_softmax(bad), Err(Error::NonFinite(_))));
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[[2.0, 2.0, 2.0], [1.0, 3.0, 0.0]]).unwrap());
    let ones = g.constant(Tensor::filled(1, 3, 1.0));
    let zeros = g.constant(Tensor::zeros(1, 3));
    let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
    assert!(g.value(y).row(0).iter().all(|&v| v == 0.0));

    let pair = g.constant(Tensor::row_vector(&[1.0, 3.0]));
    let g2 = g.constant(Tensor::filled(1, 2, 1.0));
    let b2 = g.constant(Tensor::zeros(1, 2));
    let y = g.layer_norm(pair, g2, b2, 1e-5).unwrap();
    // variance 1, so outputs are +-1/sqrt(1 + 1e-5)
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((g.value(y).get(0, 0) + expect).abs() < 1e-15);
    assert!((g.value(y).get(0, 1) - 1.0).abs() < 1e-4);

    let zero_gain = g.constant(Tensor::zeros(1, 3));
    let bias = g.constant(Tensor::row_vector(&[0.5, -1.0, 2.0]));
    let y = g.layer_norm(x, zero_gain, bias, 1e-5).unwrap();
    for i in 0..2 {
        assert_eq!(g.value(y).row(i), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::row_vector(&[0.0, 0.0]));
    let loss = g.cross_entropy(l, &[0]).unwrap();
    assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-15);

    let l = g.constant(Tensor::row_vector(&[10.0, -10.0]));
    let loss = g.cross_entropy(l, &[0]).unwrap();
    // ln(1 + e^-20)
    let expect = (-20.0f64).exp().ln_1p();
    assert!((g.value(loss).item() - expect).abs() / expect < 1e-6);
    assert!((g.value(loss).item() - 2.06e-9).abs() < 1e-11);

    let mut prev = f64::INFINITY;
    for margin in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        let l = g.constant(Tensor::row_vector(&[margin, -margin]));
        let loss = g.cross_entropy(l, &[0]).unwrap();
        let v = g.value(loss).item();
        assert!(v < prev);
        prev = v;
    }

    let l = g.constant(Tensor::row_vector(&[0.0, 0.0]));
    assert!(matches!(g.cross_entropy(l, &[2]), Err(Error::Input(_))));
}

#[test]
fn grad_check_simple_functions() {
    let report = grad_check(&[Tensor::scalar(3.0)], 1e-5, |g, p| g.mul(p[0], p[0])).unwrap();
    assert!((report.autodiff[0].item() - 6.0).abs() < 1e-12);
    assert!((report.numeric[0].item() - 6.0).abs() < 1e-8);
    assert!(report.max_rel_error < 1e-8);

    let report = grad_check(&[Tensor::scalar(3.0)], 1e-5, |g, _| Ok(g.constant(Tensor::scalar(4.0)))).unwrap();
    assert_eq!(report.autodiff[0].item(), 0.0);
    assert_eq!(report.numeric[0].item(), 0.0);

    let bad = grad_check(&[Tensor::scalar(0.0)], 1e-5, |g, _| Ok(g.constant(Tensor::scalar(f64::NAN))));
    assert!(matches!(bad, Err(Error::NonFinite(_))));
    assert!(grad_check(&[Tensor::scalar(0.0)], 1e-2, |g, p| Ok(g.sum_all(p[0]))).is_err());
}

#[test]
fn backward_twice_requires_reset() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row_vector(&[1.0, -2.0, 0.5]));
    let w = g.param(Tensor::from_rows(&[[0.3], [0.1], [-0.7]]).unwrap());
    let y = g.matmul(x, w).unwrap();
    let y2 = g.mul(y, y).unwrap();
    let s = g.sum_all(y2);
    g.backward(s).unwrap();
    let first = (g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone());
    assert_eq!(g.backward(s), Err(Error::GradientsNotReset));
    g.zero_grad();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &first.0);
    assert_eq!(g.grad(w).unwrap(), &first.1);
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&mut rng, 3, 4);
    let b = random_tensor(&mut rng, 4, 2);
    let c = random_tensor(&mut rng, 3, 4);
    let row = random_tensor(&mut rng, 1, 4);
    let w = random_tensor(&mut rng, 3, 4);

    // weighted sum as a generic scalar readout
    let readout = move |g: &mut Graph, v: Var| -> Result<Var> {
        let (r, c) = g.shape(v);
        let weights = g.constant(Tensor::from_vec(r, c, (0..r * c).map(|i| 0.3 + 0.1 * i as f64).collect()).unwrap());
        let m = g.mul(v, weights)?;
        Ok(g.sum_all(m))
    };

    assert_grads(vec![a.clone(), b.clone()], |g, p| {
        let y = g.matmul(p[0], p[1])?;
        readout(g, y)
    });
    assert_grads(vec![a.clone(), c.clone()], |g, p| {
        let y = g.matmul_transb(p[0], p[1])?;
        readout(g, y)
    });
    assert_grads(vec![a.clone()], |g, p| {
        let y = g.transpose(p[0]);
        readout(g, y)
    });
    assert_grads(vec![a.clone(), c.clone()], |g, p| {
        let y = g.add(p[0], p[1])?;
        let y = g.mul(y, p[1])?;
        readout(g, y)
    });
    assert_grads(vec![a.clone(), row.clone()], |g, p| {
        let y = g.add_row(p[0], p[1])?;
        let y = g.scale(y, -1.7);
        readout(g, y)
    });
    assert_grads(vec![a.clone()], |g, p| {
        let y = g.relu(p[0]);
        readout(g, y)
    });
    assert_grads(vec![a.clone()], |g, p| {
        let y = g.row_softmax(p[0])?;
        readout(g, y)
    });
    assert_grads(vec![a.clone(), row.clone(), w.row(0).to_vec().as_slice().into_row()], |g, p| {
        let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
        readout(g, y)
    });
    assert_grads(vec![a.clone()], |g, p| g.cross_entropy(p[0], &[1, 3, 0]));
    assert_grads(vec![a.clone()], |g, p| {
        let y = g.gather_rows(p[0], &[2, 0, 2, 1])?;
        readout(g, y)
    });
    assert_grads(vec![a.clone(), c.clone()], |g, p| {
        let y = g.concat_rows(&[p[1], p[0]])?;
        readout(g, y)
    });
}

trait IntoRow {
    fn into_row(self) -> Tensor;
}

impl IntoRow for &[f64] {
    fn into_row(self) -> Tensor {
        Tensor::row_vector(self)
    }
}

#[test]
fn attention_matches_finite_differences_with_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layout = SeqLayout { batch: 2, len: 3 };
    let mask = [true, true, false, true, true, true];
    let q = random_tensor(&mut rng, 6, 4);
    let k = random_tensor(&mut rng, 6, 4);
    let v = random_tensor(&mut rng, 6, 4);
    assert_grads(vec![q, k, v], |g, p| {
        let y = g.attention(p[0], p[1], p[2], layout, 2, &mask)?;
        let w = g.constant(Tensor::from_vec(6, 4, (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        let m = g.mul(y, w)?;
        Ok(g.sum_all(m))
    });
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 1..12), 1..6)) {
        let width = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, 0.0); r }).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let y = g.row_softmax(x).unwrap();
        for i in 0..rows.len() {
            let s: f64 = g.value(y).row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(g.value(y).row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, 4, 4);
        let b = random_tensor(&mut rng, 4, 4);
        let c = random_tensor(&mut rng, 4, 4);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_and_softmax_gradients_at_random_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, 2, 5);
        let gain = random_tensor(&mut rng, 1, 5);
        let bias = random_tensor(&mut rng, 1, 5);
        let report = grad_check(&[x, gain, bias], 1e-5, |g, p| {
            let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
            let s = g.row_softmax(y)?;
            let t = g.constant(Tensor::from_vec(2, 5, (0..10).map(|i| i as f64 * 0.1).collect()).unwrap());
            let m = g.mul(s, t)?;
            Ok(g.sum_all(m))
        }).unwrap();
        prop_assert!(report.max_rel_error < 1e-4);
    }
}
