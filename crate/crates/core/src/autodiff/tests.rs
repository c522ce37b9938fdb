use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random linear functional of `y`, so every gradient entry is O(1).
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.value(y).shape());
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>) {
    let r = GradCheck::new(1e-4).run(name, inputs, f).unwrap();
    assert!(r.passed(), "{name}: {:?}", r.failures);
}

/// Naive cross-correlation: one independent loop nest per output element,
/// same accumulation order (kernel row, kernel col, input channel).
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f64],
    (h, w, cin): (usize, usize, usize),
    k: &[f64],
    (kh, kw, cout): (usize, usize, usize),
    stride: (usize, usize),
    dil: (usize, usize),
    same: bool,
) -> (Vec<f64>, usize, usize) {
    let (oh, ow, pt, pl) = if same {
        let oh = h.div_ceil(stride.0);
        let ow = w.div_ceil(stride.1);
        let nh = ((oh - 1) * stride.0 + dil.0 * (kh - 1) + 1).saturating_sub(h);
        let nw = ((ow - 1) * stride.1 + dil.1 * (kw - 1) + 1).saturating_sub(w);
        (oh, ow, nh / 2, nw / 2)
    } else {
        (
            (h - dil.0 * (kh - 1) - 1) / stride.0 + 1,
            (w - dil.1 * (kw - 1) - 1) / stride.1 + 1,
            0,
            0,
        )
    };
    let mut out = vec![0.0; oh * ow * cout];
    for i in 0..oh {
        for j in 0..ow {
            for co in 0..cout {
                let mut acc = 0.0;
                for a in 0..kh {
                    for b in 0..kw {
                        for ci in 0..cin {
                            let r = (i * stride.0 + a * dil.0) as isize - pt as isize;
                            let c = (j * stride.1 + b * dil.1) as isize - pl as isize;
                            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                continue;
                            }
                            let xv = x[(r as usize * w + c as usize) * cin + ci];
                            acc += xv * k[((a * kw + b) * cin + ci) * cout + co];
                        }
                    }
                }
                out[(i * ow + j) * cout + co] = acc;
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new(Mode::Eval);
    let a = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    let i = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let ia = g.matmul(i, a).unwrap();
    assert_eq!(g.value(ia), g.value(a));
    let err = g.matmul(b, b).unwrap_err().to_string();
    assert!(err.contains("[2, 1]"), "{err}");
}

#[test]
fn linear_map_gradient_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let x = rand_tensor(&mut rng, &[4, 2]);
    let r = grad_check(&x, 1e-9, |g, x| {
        let a = g.constant(a.clone());
        let y = g.matmul(a, x)?;
        project(g, y, 2)
    })
    .unwrap();
    assert!(r.passed(), "{:?}", r.failures);
    assert!(r.max_rel_err <= 1e-9);
}

#[test]
fn conv_one_dimensional_examples() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::new(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let k = g.constant(Tensor::new(&[1, 3, 1, 1], vec![1.0; 3]).unwrap());
    let y = g.conv2d(x, k, ConvSpec::same()).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 6.0, 9.0, 7.0]);

    let k2 = g.constant(Tensor::new(&[1, 2, 1, 1], vec![1.0; 2]).unwrap());
    let y = g.conv2d(x, k2, ConvSpec::valid().with_dilation(1, 2)).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, 6.0]);
    assert_eq!(g.value(y).shape(), &[1, 2, 1]);

    let k5 = g.constant(Tensor::new(&[1, 5, 1, 1], vec![1.0; 5]).unwrap());
    assert!(g.conv2d(x, k5, ConvSpec::valid()).is_err());
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new(Mode::Eval);
    let xt = rand_tensor(&mut rng, &[2, 3, 5, 4]);
    let x = g.constant(xt.clone());
    let k = g.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 }));
    let y = g.conv2d(x, k, ConvSpec::same()).unwrap();
    assert_eq!(g.value(y), &xt);
}

#[test]
fn conv_matches_naive_loops_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = [
        ((8, 24, 8), (3, 3), (1, 1), (1, 1), true),
        ((8, 24, 8), (1, 3), (1, 1), (1, 2), true),
        ((6, 20, 8), (1, 3), (1, 2), (1, 1), false),
        ((8, 24, 8), (3, 1), (2, 1), (1, 1), true),
        ((8, 24, 8), (2, 2), (1, 1), (1, 1), true),
        ((7, 13, 5), (3, 3), (2, 2), (1, 1), true),
        ((8, 24, 8), (3, 3), (1, 1), (2, 2), false),
    ];
    for ((h, w, cin), (kh, kw), stride, dil, same) in cases {
        let cout = 4;
        let mut xt = rand_tensor(&mut rng, &[h, w, cin]);
        // exact zeros exercise the skipped-tap path
        for v in xt.data_mut().iter_mut().step_by(5) {
            *v = 0.0;
        }
        let kt = rand_tensor(&mut rng, &[kh, kw, cin, cout]);
        let (want, oh, ow) = naive_conv(xt.data(), (h, w, cin), kt.data(), (kh, kw, cout), stride, dil, same);
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(xt);
        let k = g.constant(kt);
        let spec = ConvSpec {
            stride,
            dilation: dil,
            padding: if same { Padding::Same } else { Padding::Valid },
        };
        let y = g.conv2d(x, k, spec).unwrap();
        assert_eq!(g.value(y).shape(), &[oh, ow, cout]);
        let got = g.value(y).data();
        assert!(
            got.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()),
            "mismatch for {:?}",
            ((h, w, cin), (kh, kw), stride, dil, same)
        );
    }
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (spec, kernel) in [
        (ConvSpec::same(), (3, 3)),
        (ConvSpec::same().with_dilation(1, 2), (1, 3)),
        (ConvSpec::valid().with_stride(1, 2), (1, 3)),
        (ConvSpec::same(), (3, 1)),
    ] {
        let x = rand_tensor(&mut rng, &[2, 3, 7, 3]);
        let k = rand_tensor(&mut rng, &[kernel.0, kernel.1, 3, 2]);
        check("conv2d", &[x, k], |g, v| {
            let y = g.conv2d(v[0], v[1], spec)?;
            project(g, y, 6)
        });
    }
}

#[test]
fn maxpool_shapes_and_values() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::new(&[1, 3, 1], vec![1.0, 5.0, 2.0]).unwrap());
    let y = g.maxpool2d(x, (1, 3), (1, 1), Padding::Valid).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);

    let x = g.constant(Tensor::zeros(&[6, 20, 2]));
    let p1 = g.maxpool2d(x, (1, 3), (1, 2), Padding::Valid).unwrap();
    assert_eq!(g.value(p1).shape(), &[6, 9, 2]);
    let p2 = g.maxpool2d(p1, (1, 3), (1, 2), Padding::Valid).unwrap();
    assert_eq!(g.value(p2).shape(), &[6, 4, 2]);
    let full = g.maxpool2d(p2, (6, 4), (1, 1), Padding::Valid).unwrap();
    assert_eq!(g.value(full).shape(), &[1, 1, 2]);
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[2, 4, 9, 3]);
    check("maxpool", std::slice::from_ref(&x), |g, v| {
        let y = g.maxpool2d(v[0], (1, 3), (1, 2), Padding::Valid)?;
        project(g, y, 9)
    });
    check("avgpool", &[x], |g, v| {
        let y = g.avgpool2d(v[0], (3, 3), (1, 1), Padding::Same)?;
        project(g, y, 10)
    });
}

#[test]
fn avgpool_excludes_padding() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::new(&[1, 2, 1], vec![2.0, 4.0]).unwrap());
    let y = g.avgpool2d(x, (3, 3), (1, 1), Padding::Same).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 3.0]);
}

#[test]
fn layer_norm_properties() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::full(&[2, 5], 3.0));
    let gain = g.constant(Tensor::full(&[5], 1.0));
    let bias = g.constant(Tensor::zeros(&[5]));
    let y = g.layer_norm(x, gain, bias, 1e-6).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = g.constant(rand_tensor(&mut rng, &[7, 16]));
    let y = g.layer_norm(x, gain, bias, 1e-6);
    assert!(matches!(y, Err(AutodiffError::Shape(_))));
    let gain = g.constant(Tensor::full(&[16], 1.0));
    let bias = g.constant(Tensor::zeros(&[16]));
    let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
    for row in g.value(y).data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-6 && (var - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, &[3, 2, 6]);
    let gain = rand_tensor(&mut rng, &[6]);
    let bias = rand_tensor(&mut rng, &[6]);
    check("layer_norm", &[x, gain, bias], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-6)?;
        project(g, y, 13)
    });
}

#[test]
fn dropout_contract() {
    let x = Tensor::from_fn(&[10, 100_000], |i| 1.0 + (i % 7) as f64);
    let mut g = Graph::new(Mode::Eval);
    let v = g.constant(x.clone());
    let y = g.dropout(v, 0.1, 0).unwrap();
    assert_eq!(g.value(y), &x);
    assert!(matches!(g.dropout(v, 1.0, 0), Err(AutodiffError::InvalidRate(_))));

    let mut g = Graph::new(Mode::Train);
    let v = g.constant(x.clone());
    let y = g.dropout(v, 0.0, 0).unwrap();
    assert_eq!(g.value(y), &x);
    let y = g.dropout(v, 0.1, 0).unwrap();
    let out = g.value(y).data();
    let zeros = out.iter().filter(|&&o| o == 0.0).count() as f64 / out.len() as f64;
    assert!((zeros - 0.1).abs() <= 0.01, "zero fraction {zeros}");
    for (o, i) in out.iter().zip(x.data()) {
        assert!(*o == 0.0 || (o - i / 0.9).abs() < 1e-12);
    }
}

#[test]
fn dropout_mask_does_not_depend_on_batch_split() {
    let key = DropoutKey {
        seed: 3,
        step: 9,
        example_offset: 0,
    };
    let x = Tensor::full(&[4, 50], 1.0);
    let mut whole = Graph::new(Mode::Train).with_dropout_key(key);
    let v = whole.constant(x);
    let y = whole.dropout(v, 0.3, 2).unwrap();
    let mut half = Graph::new(Mode::Train).with_dropout_key(DropoutKey { example_offset: 2, ..key });
    let v = half.constant(Tensor::full(&[2, 50], 1.0));
    let z = half.dropout(v, 0.3, 2).unwrap();
    assert_eq!(&whole.value(y).data()[100..], half.value(z).data());
}

#[test]
fn softmax_xent_examples() {
    let mut g = Graph::new(Mode::Eval);
    let v = 4;
    let uniform = g.constant(Tensor::zeros(&[3, v]));
    for eps in [0.0, 0.1, 0.5] {
        let l = g.softmax_xent_smoothed(uniform, &[1, 2, 4], eps).unwrap();
        assert!((g.value(l).item() - (v as f64).ln()).abs() < 1e-12);
    }

    let logits = g.constant(Tensor::new(&[1, 4], vec![10.0, 0.0, 0.0, 0.0]).unwrap());
    let l = g.softmax_xent_smoothed(logits, &[1], 0.1).unwrap();
    // closed form: logsumexp = ln(e^10 + 3); targets 0.925 / 0.025
    let lse = (10f64.exp() + 3.0).ln();
    let want = -(0.925 * (10.0 - lse) + 3.0 * 0.025 * (0.0 - lse));
    assert!((g.value(l).item() - want).abs() < 1e-9);

    let nll = g.softmax_xent_smoothed(logits, &[1], 0.0).unwrap();
    assert!((g.value(nll).item() - (lse - 10.0)).abs() < 1e-12);

    let p = g.probabilities(l).unwrap();
    assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);

    assert!(matches!(
        g.softmax_xent_smoothed(logits, &[0], 0.1),
        Err(AutodiffError::InvalidLabel { label: 0, .. })
    ));
    assert!(g.softmax_xent_smoothed(logits, &[5], 0.1).is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let t = Tensor::from_fn(&[50, 30], |_| rng.random_range(-30.0..30.0));
    for row in softmax_rows(&t).data().chunks(30) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn softmax_xent_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let logits = rand_tensor(&mut rng, &[3, 5]);
    check("xent", &[logits], |g, v| g.softmax_xent_smoothed(v[0], &[2, 5, 1], 0.1));
}

#[test]
fn elementwise_and_structural_ops() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);

    let a = g.constant(Tensor::zeros(&[6, 9, 256]));
    let b = g.constant(Tensor::zeros(&[6, 9, 512]));
    let c = g.concat(&[a, a, b], 2).unwrap();
    assert_eq!(g.value(c).shape(), &[6, 9, 1024]);
    let narrow = g.constant(Tensor::zeros(&[6, 8, 256]));
    assert!(g.concat(&[a, narrow], 2).is_err());

    let t = g.constant(Tensor::from_fn(&[3, 2], |i| i as f64));
    let e = g.embed_gather(t, &[2, 0], &[2]).unwrap();
    assert_eq!(g.value(e).data(), &[4.0, 5.0, 0.0, 1.0]);
    assert!(matches!(
        g.embed_gather(t, &[3], &[1]),
        Err(AutodiffError::IndexOutOfRange { index: 3, rows: 3 })
    ));
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[2, 3, 2]);
    let bias = rand_tensor(&mut rng, &[4]);
    let demo = rand_tensor(&mut rng, &[2, 6]);
    check("concat", &[a.clone(), b.clone()], |g, v| {
        let c = g.concat(&[v[0], v[1]], 2)?;
        let c2 = g.concat(&[v[0], v[0]], 1)?;
        let r = g.reshape(c2, &[2, 24])?;
        let t = g.transpose(r)?;
        let s = g.slice_rows(t, 3, 10)?;
        let p = project(g, c, 17)?;
        let q = project(g, s, 18)?;
        g.add(p, q)
    });
    check("add_bias", &[a.clone(), bias], |g, v| {
        let y = g.add_bias(v[0], v[1])?;
        let y = g.scale(y, -1.5);
        project(g, y, 19)
    });
    let x = rand_tensor(&mut rng, &[2, 3, 6]);
    check("add_broadcast", &[x, demo], |g, v| {
        let y = g.add_broadcast(v[0], v[1])?;
        let y = g.relu(y);
        project(g, y, 20)
    });
}

#[test]
fn embed_gather_accumulates_repeated_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let table = rand_tensor(&mut rng, &[4, 3]);
    let mut g = Graph::new(Mode::Eval);
    let t = g.param(table.clone());
    let e = g.embed_gather(t, &[2, 2], &[2]).unwrap();
    let s = g.sum(e);
    g.backward(s).unwrap();
    let grad = g.grad(t);
    assert_eq!(&grad.data()[6..9], &[2.0, 2.0, 2.0]);
    assert!(grad.data()[..6].iter().all(|&v| v == 0.0));
    check("embed_gather", &[table], |g, v| {
        let e = g.embed_gather(v[0], &[1, 3, 1, 0], &[2, 2])?;
        project(g, e, 22)
    });
}

#[test]
fn backward_contract() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
    let unused = g.param(Tensor::full(&[2, 2], 9.0));
    let s = g.sum(x);
    assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarRoot(_))));
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).data(), &[1.0; 3]);
    assert_eq!(g.grad(unused), Tensor::zeros(&[2, 2]));
    assert_eq!(g.backward(s), Err(AutodiffError::BackwardAlreadyRun));

    let mut g = Graph::new(Mode::Eval).accumulating();
    let x = g.param(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
    let y = g.mul(x, x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let once = g.grad(x);
    g.backward(s).unwrap();
    let twice = g.grad(x);
    assert_eq!(once.data(), &[6.0, 8.0]);
    assert_eq!(twice.data(), &[12.0, 16.0]);
}

#[test]
fn relu_at_zero_is_flagged_not_failed() {
    let x = Tensor::new(&[3], vec![0.0, 0.7, -0.4]).unwrap();
    let r = grad_check(&x, 1e-4, |g, x| {
        let y = g.relu(x);
        Ok(g.sum(y))
    })
    .unwrap();
    assert_eq!(r.non_differentiable, vec![(0, 0)]);
    assert!(r.passed());
    assert_eq!(r.checked, 2);
}

#[test]
fn composite_grid_conv_pool_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let table = rand_tensor(&mut rng, &[6, 4]);
    let k = rand_tensor(&mut rng, &[1, 3, 4, 5]);
    let w = rand_tensor(&mut rng, &[5, 5]);
    let cells: Vec<u32> = (0..2 * 6 * 7).map(|_| rng.random_range(0..6)).collect();
    check("composite", &[table, k, w], |g, v| {
        let x = g.embed_gather(v[0], &cells, &[2, 6, 7])?;
        let y = g.conv2d(x, v[1], ConvSpec::same())?;
        let y = g.relu(y);
        let p = g.maxpool2d(y, (1, 3), (1, 2), Padding::Valid)?;
        let p = g.maxpool2d(p, (6, 3), (1, 1), Padding::Valid)?;
        let h = g.reshape(p, &[2, 5])?;
        let logits = g.matmul(h, v[2])?;
        g.softmax_xent_smoothed(logits, &[3, 1], 0.1)
    });
}

struct WrongSquare;

impl CustomOp for WrongSquare {
    fn name(&self) -> &str {
        "wrong_square"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        Ok(Tensor::from_fn(inputs[0].shape(), |i| inputs[0].data()[i].powi(2)))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        // deliberately missing the factor 2
        vec![Tensor::from_fn(inputs[0].shape(), |i| inputs[0].data()[i] * grad_out.data()[i])]
    }
}

#[test]
fn wrong_backward_is_reported() {
    let x = Tensor::new(&[2], vec![0.3, -1.2]).unwrap();
    let r = grad_check(&x, 1e-4, |g, x| {
        let y = g.custom(&[x], Box::new(WrongSquare))?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(!r.passed());
    assert_eq!(r.failures.len(), 2);
    assert!(r.ops.contains(&"wrong_square".to_string()));
}
