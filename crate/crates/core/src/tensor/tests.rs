use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::<f64>::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a.at(&[i, t]) * b.at(&[t, j]);
            }
            out.data_mut()[i * n + j] = s;
        }
    }
    out
}

#[test]
fn matmul_examples() {
    let id = Tensor::<f64>::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let col = Tensor::<f64>::from_rows(&[[5.0], [6.0]]).unwrap();
    assert_eq!(matmul(&id, &col).unwrap(), col);

    let a = Tensor::<f64>::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
    assert_eq!(matmul(&a, &col).unwrap().data(), &[17.0, 39.0]);

    let a = random(&[7, 3], 1);
    let b = random(&[3, 5], 2);
    let diff = matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)).unwrap();
    assert!(diff < 1e-12);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = matmul(&random(&[2, 3], 0), &random(&[2, 3], 1)).unwrap_err();
    match err {
        TensorError::Shape { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn softmax_examples() {
    let x = Tensor::<f64>::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
    for &v in softmax_rows(&x).unwrap().data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = Tensor::<f64>::from_rows(&[[1000.0, 0.0]]).unwrap();
    let y = softmax_rows(&x).unwrap();
    assert!((y.data()[0] - 1.0).abs() < 1e-15 && y.data()[1] < 1e-300 && y.is_finite());

    let x = random(&[4, 9], 3);
    let y = softmax_rows(&x).unwrap();
    for i in 0..4 {
        let denom: f64 = x.row(i).iter().map(|v| v.exp()).sum();
        for j in 0..9 {
            assert!((y.at(&[i, j]) - x.at(&[i, j]).exp() / denom).abs() < 1e-12);
        }
    }
    let bad = Tensor::<f64>::from_rows(&[[f64::NAN, 0.0]]).unwrap();
    assert!(matches!(softmax_rows(&bad), Err(TensorError::NonFinite { .. })));
}

#[test]
fn rms_norm_examples() {
    let ones = Tensor::<f64>::ones(&[4]);
    let zero = Tensor::<f64>::zeros(&[1, 4]);
    assert_eq!(rms_norm(&zero, &ones).unwrap(), zero);

    let c = -3.0;
    let x = Tensor::<f64>::full(&[1, 4], c);
    let y = rms_norm(&x, &ones).unwrap();
    let expect = c / (c * c + 1e-6f64).sqrt();
    for &v in y.data() {
        assert!((v - expect).abs() < 1e-15);
        assert!((v + 1.0).abs() < 1e-6);
    }

    let x = random(&[3, 6], 4);
    let scale = random(&[6], 5);
    let y = rms_norm(&x, &scale).unwrap();
    for i in 0..3 {
        let ms: f64 = x.row(i).iter().map(|v| v * v).sum::<f64>() / 6.0;
        for j in 0..6 {
            let want = x.at(&[i, j]) / (ms + 1e-6).sqrt() * scale.data()[j];
            assert!((y.at(&[i, j]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn topk_examples() {
    let x = Tensor::<f64>::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
    let (idx, vals) = topk_rows(&x, 3).unwrap();
    assert_eq!(idx, vec![2, 1, 0]);
    assert_eq!(vals.data(), &[3.0, 2.0, 1.0]);

    let x = Tensor::<f64>::from_rows(&[[5.0, 5.0, 1.0]]).unwrap();
    let (idx, vals) = topk_rows(&x, 1).unwrap();
    assert_eq!((idx, vals.data().to_vec()), (vec![0], vec![5.0]));

    assert!(matches!(topk_rows(&x, 4), Err(TensorError::Argument { .. })));

    // full-sort-then-truncate oracle
    let x = random(&[20, 50], 6);
    let (idx, vals) = topk_rows(&x, 5).unwrap();
    for i in 0..20 {
        let mut pairs: Vec<(f64, usize)> = x.row(i).iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for j in 0..5 {
            assert_eq!(idx[i * 5 + j], pairs[j].1);
            assert_eq!(vals.at(&[i, j]), pairs[j].0);
        }
    }
}

#[test]
fn gather_examples() {
    let x = random(&[4, 3], 7);
    let idx: Vec<usize> = (0..4).flat_map(|i| [i, i]).collect();
    let out = gather_rows(&x, &idx, 2).unwrap();
    assert_eq!(out.shape(), &[4, 2, 3]);
    for i in 0..4 {
        for j in 0..2 {
            for c in 0..3 {
                assert_eq!(out.at(&[i, j, c]), x.at(&[i, c]));
            }
        }
    }

    let one = random(&[1, 5], 8);
    assert_eq!(gather_rows(&one, &[0], 1).unwrap().data(), one.data());

    let x = random(&[6, 4], 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let idx: Vec<usize> = (0..18).map(|_| rng.gen_range(0..6)).collect();
    let out = gather_rows(&x, &idx, 3).unwrap();
    for (p, &r) in idx.iter().enumerate() {
        for c in 0..4 {
            assert_eq!(out.data()[p * 4 + c], x.at(&[r, c]));
        }
    }

    match gather_rows(&x, &[0, 6], 1).unwrap_err() {
        TensorError::Index { position, index, bound, .. } => {
            assert_eq!((position, index, bound), (1, 6, 6))
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.variable(random(&[3, 4], 11));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).unwrap().iter().all(|&v| v == 1.0));

    let xt = random(&[5], 12);
    let mut g = Graph::new();
    let x = g.variable(xt.clone());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    let grads = g.backward(half).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), xt.data());
}

#[test]
fn backward_rejects_non_scalar_and_second_call() {
    let mut g = Graph::new();
    let x = g.variable(random(&[2, 2], 13));
    assert!(matches!(g.backward(x), Err(TensorError::Argument { .. })));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.backward(s).unwrap_err(), TensorError::BackwardTwice);
    // a fresh forward re-arms the graph
    let s2 = g.sum(x);
    assert!(g.backward(s2).is_ok());
}

#[test]
fn grad_check_closed_forms() {
    let x = random(&[6], 14);
    let err = grad_check(|g, v| Ok(g.sum(v)), &x, 1e-5).unwrap();
    assert!(err < 1e-9);

    // sigmoid ∘ sum against σ'(s)
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let s = g.sum(v);
    let y = g.sigmoid(s);
    let grads = g.backward(y).unwrap();
    let sv: f64 = x.data().iter().sum();
    let sig = 1.0 / (1.0 + (-sv).exp());
    for &d in grads.wrt(v).unwrap() {
        assert!((d - sig * (1.0 - sig)).abs() < 1e-7);
    }
    let err = grad_check(
        |g, v| {
            let s = g.sum(v);
            Ok(g.sigmoid(s))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-7);
}

/// Every differentiable primitive on 20 random seeds.
#[test]
fn every_op_passes_grad_check() {
    type OpFn = fn(&mut Graph<'_, f64>, Var, u64) -> Result<Var>;
    fn c(g: &mut Graph<'_, f64>, shape: &[usize], seed: u64) -> Var {
        g.constant(random(shape, seed + 1000))
    }
    fn loss(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
        // weight the output so every coordinate matters differently
        let w = c(g, &[g.value(y).len()], seed + 77);
        let n = g.value(y).len();
        let flat = g.reshape(y, &[n])?;
        let p = g.mul(flat, w)?;
        Ok(g.sum(p))
    }
    let cases: Vec<(&str, Vec<usize>, OpFn)> = vec![
        ("add", vec![3, 4], |g, x, s| {
            let b = c(g, &[3, 4], s);
            g.add(x, b)
        }),
        ("sub", vec![3, 4], |g, x, s| {
            let b = c(g, &[3, 4], s);
            g.sub(b, x)
        }),
        ("mul", vec![3, 4], |g, x, _| g.mul(x, x)),
        ("scale", vec![5], |g, x, _| Ok(g.scale(x, -1.7))),
        ("matmul_lhs", vec![3, 4], |g, x, s| {
            let b = c(g, &[4, 2], s);
            g.matmul(x, b)
        }),
        ("matmul_rhs", vec![4, 2], |g, x, s| {
            let a = c(g, &[3, 4], s);
            g.matmul(a, x)
        }),
        ("bmm", vec![2, 3, 4], |g, x, _| {
            let t = g.permute(x, &[0, 2, 1])?;
            g.bmm(x, t)
        }),
        ("transpose", vec![3, 5], |g, x, _| g.transpose(x)),
        ("permute", vec![2, 3, 4], |g, x, _| g.permute(x, &[1, 2, 0])),
        ("add_row", vec![4], |g, x, s| {
            let m = c(g, &[3, 4], s);
            g.add_row(m, x)
        }),
        ("softmax_rows", vec![3, 5], |g, x, _| g.softmax_rows(x)),
        ("rms_norm_x", vec![3, 6], |g, x, s| {
            let sc = c(g, &[6], s);
            g.rms_norm(x, sc)
        }),
        ("rms_norm_scale", vec![6], |g, x, s| {
            let inp = c(g, &[3, 6], s);
            g.rms_norm(inp, x)
        }),
        ("sigmoid", vec![7], |g, x, _| Ok(g.sigmoid(x))),
        ("silu", vec![7], |g, x, _| Ok(g.silu(x))),
        ("concat_rows", vec![2, 3], |g, x, s| {
            let b = c(g, &[1, 3], s);
            g.concat_rows(&[b, x, x])
        }),
        ("slice_rows", vec![5, 2], |g, x, _| g.slice_rows(x, 1, 3)),
        ("gather_rows", vec![4, 3], |g, x, _| g.gather_rows(x, &[3, 0, 0, 2, 1, 3], 2)),
        ("mean_rows", vec![4, 3], |g, x, _| g.mean_rows(x, &[true, false, true, true])),
        ("bce", vec![6], |g, x, _| {
            let p = g.sigmoid(x);
            g.bce(p, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
        }),
    ];
    for (name, shape, op) in cases {
        for seed in 0..20u64 {
            let x = random(&shape, seed);
            let err = grad_check(
                |g, v| {
                    let y = op(g, v, seed)?;
                    loss(g, y, seed)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn embedding_rows_gradient_and_pad() {
    let mut table = random(&[5, 3], 20).with_requires_grad(true);
    table.zero_grad();
    let mut g = Graph::new();
    let e = g.embedding(ParamId(0), &table, &[4, PAD, 4, 1]).unwrap();
    assert_eq!(&g.value(e)[3..6], &[0.0; 3]);
    let s = g.sum(e);
    let grads = g.backward(s).unwrap();
    match &grads.params()[0].1 {
        ParamGrad::Rows { ids, dim, grads } => {
            assert_eq!(ids, &vec![4, 4, 1]);
            assert_eq!(*dim, 3);
            assert!(grads.iter().all(|&v| v == 1.0));
        }
        other => panic!("unexpected {other:?}"),
    }
    let mut g = Graph::<f64>::new();
    assert!(matches!(
        g.embedding(ParamId(0), &table, &[5]),
        Err(TensorError::Index { .. })
    ));
}

#[test]
fn forwards_are_bit_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let a = g.constant(random(&[6, 5], 30));
        let b = g.constant(random(&[5, 4], 31));
        let m = g.matmul(a, b).unwrap();
        let s = g.softmax_rows(m).unwrap();
        g.tensor(s)
    };
    assert_eq!(run(), run());
}

#[test]
fn matmul_flops_are_counted() {
    let mut g = Graph::<f64>::inference();
    let a = g.constant(random(&[3, 4], 0));
    let b = g.constant(random(&[4, 5], 1));
    g.matmul(a, b).unwrap();
    let x = g.constant(random(&[2, 3, 4], 2));
    let y = g.constant(random(&[2, 4, 1], 3));
    g.bmm(x, y).unwrap();
    assert_eq!(g.matmul_flops(), 2 * 3 * 4 * 5 + 2 * 2 * 3 * 4);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
        let n = vals.len();
        let x = Tensor::<f64>::new(&[1, n], vals).unwrap();
        let y = softmax_rows(&x).unwrap();
        let s: f64 = y.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn topk_values_non_increasing(vals in proptest::collection::vec(-5i32..5, 1..30), k in 1usize..30) {
        let n = vals.len();
        let k = k.min(n);
        let x = Tensor::<f64>::new(&[1, n], vals.iter().map(|&v| v as f64).collect()).unwrap();
        let (_, top) = topk_rows(&x, k).unwrap();
        prop_assert!(top.data().windows(2).all(|w| w[0] >= w[1]));
    }
}
