mod common;

use common::{grad_check, random_inputs, random_net};
use varcast_core::ndcore::{Matrix, Rng, Vector};
use varcast_core::nn::{backward_batch, backward_sequence, forward_batch, forward_sequence, ModelKind, StackedNet};

#[test]
fn every_gradient_matches_central_differences() {
    let mut seed = 100;
    for kind in ModelKind::ALL {
        for hidden in [2, 3] {
            for layers in [1, 2] {
                for seq_len in 1..=4 {
                    for batch in [1, 3] {
                        seed += 1;
                        let net = random_net(kind, 2, 2, hidden, layers, seed);
                        let xs = random_inputs(batch, seq_len, 2, &mut Rng::new(seed ^ 0xabc));
                        let out = grad_check(&net, &xs, 1e-5, 1e-4, 1e-7, seed);
                        assert!(
                            out.failures.is_empty(),
                            "{kind} h={hidden} l={layers} T={seq_len} B={batch}: {:?}",
                            &out.failures[..out.failures.len().min(5)]
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn zero_loss_gradient_gives_zero_gradients() {
    for kind in ModelKind::ALL {
        let net = random_net(kind, 2, 3, 3, 2, 5);
        let xs: Vec<Vector> = (0..4).map(|t| Vector::from(vec![t as f64, 1.0])).collect();
        let (_, tape) = forward_sequence(&net, &xs).unwrap();
        let g = backward_sequence(&net, &tape, &Vector::zeros(3)).unwrap();
        assert_eq!(g.max_abs(), 0.0, "{kind}");
    }
}

#[test]
fn head_gradient_is_outer_product_with_features() {
    let mut net = random_net(ModelKind::Lstm, 2, 2, 3, 1, 8);
    // kill the recurrent contribution but keep nonzero features through the biases
    if let varcast_core::nn::LayerParams::Lstm(p) = &mut net.layers[0] {
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_c, &mut p.w_o] {
            w.as_mut_slice().fill(0.0);
        }
    }
    let xs = vec![Vector::from(vec![0.4, -0.9])];
    let (_, tape) = forward_sequence(&net, &xs).unwrap();
    let features = tape.top_feature().row(0).to_vec();
    let loss_grad = Vector::from(vec![0.7, -1.3]);
    let g = backward_sequence(&net, &tape, &loss_grad).unwrap();
    let head = &g.as_net().head_w;
    for o in 0..2 {
        for k in 0..3 {
            assert_eq!(head.get(o, k), loss_grad[o] * features[k]);
        }
    }
    assert_eq!(g.as_net().head_b.as_slice(), loss_grad.as_slice());
}

#[test]
fn tape_from_another_net_is_rejected() {
    let a = random_net(ModelKind::Lstm, 2, 1, 3, 1, 1);
    let b = random_net(ModelKind::Lstm, 2, 1, 3, 2, 1);
    let xs = random_inputs(2, 3, 2, &mut Rng::new(1));
    let (_, tape) = forward_batch(&a, &xs).unwrap();
    let err = backward_batch(&b, &tape, &Matrix::zeros(2, 1)).unwrap_err();
    assert!(matches!(err, varcast_core::Error::Consistency(_)));
    let err = backward_batch(&a, &tape, &Matrix::zeros(3, 1)).unwrap_err();
    assert!(matches!(err, varcast_core::Error::Shape { .. }));
}

#[test]
fn batched_gradient_equals_sum_of_single_sequence_gradients() {
    for kind in ModelKind::ALL {
        let net = random_net(kind, 2, 2, 3, 2, 21);
        let xs = random_inputs(3, 4, 2, &mut Rng::new(3));
        let lg = Matrix::from_fn(3, 2, |r, c| (r as f64 + 1.0) * if c == 0 { 0.5 } else { -0.25 });
        let (_, tape) = forward_batch(&net, &xs).unwrap();
        let batched = backward_batch(&net, &tape, &lg).unwrap();

        let mut summed: Option<Vec<Vec<f64>>> = None;
        for b in 0..3 {
            let seq: Vec<Vector> = xs.iter().map(|x| Vector::from(x.row(b))).collect();
            let (_, t1) = forward_sequence(&net, &seq).unwrap();
            let g = backward_sequence(&net, &t1, &Vector::from(lg.row(b))).unwrap();
            let flat: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.to_vec()).collect();
            summed = Some(match summed {
                None => flat,
                Some(acc) => acc
                    .into_iter()
                    .zip(flat)
                    .map(|(a, f)| a.iter().zip(&f).map(|(x, y)| x + y).collect())
                    .collect(),
            });
        }
        for (bt, st) in batched.tensors().iter().zip(summed.unwrap()) {
            for (x, y) in bt.iter().zip(&st) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{kind}: {x} vs {y}");
            }
        }
    }
}

fn assert_same_bits(a: &StackedNet, b: &StackedNet) {
    let bits = |n: &StackedNet| -> Vec<u64> { n.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect() };
    assert_eq!(bits(a), bits(b));
}

#[test]
fn forward_and_backward_are_deterministic_and_pure() {
    for kind in ModelKind::ALL {
        let net = random_net(kind, 3, 2, 4, 2, 77);
        let before = net.clone();
        let xs = random_inputs(5, 4, 3, &mut Rng::new(9));
        let (p1, t1) = forward_batch(&net, &xs).unwrap();
        let (p2, t2) = forward_batch(&net, &xs).unwrap();
        assert_eq!(p1, p2);
        let lg = Matrix::filled(5, 2, 0.3);
        let g1 = backward_batch(&net, &t1, &lg).unwrap();
        let g2 = backward_batch(&net, &t2, &lg).unwrap();
        assert_same_bits(g1.as_net(), g2.as_net());
        assert_same_bits(&net, &before);
    }
}
