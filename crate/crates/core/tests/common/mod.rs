#![allow(dead_code)]

use varcast_core::ndcore::{Matrix, Rng};
use varcast_core::nn::{backward_batch, forward_batch, init_net, ModelKind, StackedNet};

/// Random net with every tensor (biases too) drawn from `[-scale, scale)`.
pub fn random_net(kind: ModelKind, input: usize, output: usize, hidden: usize, layers: usize, seed: u64) -> StackedNet {
    let mut rng = Rng::new(seed);
    let mut net = init_net(kind, input, output, hidden, layers, &mut rng).unwrap();
    for t in net.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.uniform(-0.8, 0.8);
        }
    }
    net
}

pub fn random_inputs(batch: usize, seq_len: usize, input: usize, rng: &mut Rng) -> Vec<Matrix> {
    (0..seq_len)
        .map(|_| Matrix::from_fn(batch, input, |_, _| rng.uniform(-1.5, 1.5)))
        .collect()
}

/// Scalar probe loss `L = Σ weights ⊙ prediction`.
pub fn probe_loss(net: &StackedNet, xs: &[Matrix], weights: &Matrix) -> f64 {
    let (pred, _) = forward_batch(net, xs).unwrap();
    pred.as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(p, w)| p * w)
        .sum()
}

#[derive(Debug)]
pub struct GradCheckOutcome {
    pub entries: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

/// Compares the reverse pass against central finite differences of
/// [`probe_loss`], entry by entry.
pub fn grad_check(net: &StackedNet, xs: &[Matrix], step: f64, rel_tol: f64, abs_floor: f64, seed: u64) -> GradCheckOutcome {
    let batch = xs[0].rows();
    let mut rng = Rng::new(seed);
    let weights = Matrix::from_fn(batch, net.output_dim, |_, _| rng.uniform(-1.0, 1.0));
    let (_, tape) = forward_batch(net, xs).unwrap();
    let grads = backward_batch(net, &tape, &weights).unwrap();

    let names = net.tensor_names();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut outcome = GradCheckOutcome { entries: 0, worst_rel: 0.0, failures: Vec::new() };
    let mut probe = net.clone();
    for (ti, name) in names.iter().enumerate() {
        for k in 0..analytic[ti].len() {
            let orig = net.tensors()[ti][k];
            probe.tensors_mut()[ti][k] = orig + step;
            let up = probe_loss(&probe, xs, &weights);
            probe.tensors_mut()[ti][k] = orig - step;
            let down = probe_loss(&probe, xs, &weights);
            probe.tensors_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[ti][k];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            outcome.entries += 1;
            if scale > 0.0 {
                outcome.worst_rel = outcome.worst_rel.max(diff / scale);
            }
            if diff > (rel_tol * scale).max(abs_floor) {
                outcome.failures.push(format!("{name}[{k}]: analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    outcome
}
