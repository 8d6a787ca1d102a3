//! Batched forward pass with a recorded tape, and the matching reverse pass.
//!
//! A batch is a sequence of `B x input_dim` matrices, one per timestep; row
//! `b` of every matrix belongs to sample `b`. The head reads the top layer's
//! feature at the final timestep only.

use crate::error::{Error, Result};
use crate::ndcore::{affine_rowmajor, axpy, gemm_nn, gemm_tn, sigmoid_scalar, Matrix, Vector};
use crate::nn::cell::{LstmCellParams, RnnCellParams};
use crate::nn::net::{GradientSet, LayerParams, ModelKind, StackedNet};

#[derive(Clone, Debug)]
enum Step {
    Rnn {
        hx: Matrix,
        h: Matrix,
    },
    Lstm {
        hx: Matrix,
        i: Matrix,
        f: Matrix,
        g: Matrix,
        o: Matrix,
        c: Matrix,
        tanh_c: Matrix,
    },
}

/// One direction of one layer; `steps` are in processing order.
#[derive(Clone, Debug)]
struct DirTape {
    reversed: bool,
    steps: Vec<Step>,
}

#[derive(Clone, Debug)]
enum LayerTape {
    Single(DirTape),
    Bi(DirTape, DirTape),
}

/// Everything the reverse pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    kind: ModelKind,
    hidden: usize,
    input_dim: usize,
    output_dim: usize,
    batch: usize,
    seq_len: usize,
    layers: Vec<LayerTape>,
    /// Top-layer feature at the final timestep, `B x feature_dim`.
    top_feature: Matrix,
    prediction: Matrix,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn prediction(&self) -> &Matrix {
        &self.prediction
    }

    pub fn top_feature(&self) -> &Matrix {
        &self.top_feature
    }

    /// Gate activations `(i, f, o, g, tanh(c))` of every recorded LSTM step,
    /// across all layers and directions.
    pub fn lstm_gates(&self) -> Vec<[&Matrix; 5]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let dirs: Vec<&DirTape> = match layer {
                LayerTape::Single(d) => vec![d],
                LayerTape::Bi(a, b) => vec![a, b],
            };
            for d in dirs {
                for s in &d.steps {
                    if let Step::Lstm {
                        i, f, g, o, tanh_c, ..
                    } = s
                    {
                        out.push([i, f, o, g, tanh_c]);
                    }
                }
            }
        }
        out
    }

    /// Final-timestep hidden state of each direction of the top layer.
    pub fn top_direction_states(&self) -> Vec<Matrix> {
        let h = self.hidden;
        match self.layers.last() {
            Some(LayerTape::Bi(_, _)) => vec![
                column_block(&self.top_feature, 0, h),
                column_block(&self.top_feature, h, 2 * h),
            ],
            _ => vec![self.top_feature.clone()],
        }
    }
}

fn column_block(m: &Matrix, start: usize, end: usize) -> Matrix {
    Matrix::from_fn(m.rows(), end - start, |r, c| m.get(r, start + c))
}

/// `batch` copies of `bias` as rows.
fn bias_rows(bias: &[f64], batch: usize) -> Matrix {
    Matrix::from_fn(batch, bias.len(), |_, c| bias[c])
}

/// Gate weights stacked as rows: `(4 * hidden) x (hidden + input)` in
/// `i, f, c, o` order.
fn stacked_lstm_weights(p: &LstmCellParams) -> Matrix {
    let k = p.w_i.cols();
    let mut data = Vec::with_capacity(4 * p.hidden() * k);
    for w in p.weights() {
        data.extend_from_slice(w.as_slice());
    }
    Matrix::from_vec(4 * p.hidden(), k, data).expect("gate shapes agree")
}

/// `B x (a.cols + b.cols)` row-wise concatenation.
fn concat_cols(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows(), b.rows());
    let cols = a.cols() + b.cols();
    let mut out = Matrix::zeros(a.rows(), cols);
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

/// Fused, transposed gate weights: `(hidden + input) x (4 * hidden)`, the
/// column block `g` holding gate `g` in `i, f, c, o` order.
fn fused_lstm_weights(p: &LstmCellParams) -> (Matrix, Vec<f64>) {
    let h = p.hidden();
    let k = p.w_i.cols();
    let mut wt = Matrix::zeros(k, 4 * h);
    let mut bias = vec![0.0; 4 * h];
    for (g, (w, b)) in p.weights().iter().zip(p.biases()).enumerate() {
        for j in 0..h {
            for c in 0..k {
                wt.set(c, g * h + j, w.get(j, c));
            }
            bias[g * h + j] = b[j];
        }
    }
    (wt, bias)
}

fn lstm_forward(p: &LstmCellParams, xs: &[Matrix], reversed: bool) -> (DirTape, Vec<Matrix>) {
    let h = p.hidden();
    let t_len = xs.len();
    let batch = xs[0].rows();
    let (wt, bias) = fused_lstm_weights(p);
    let mut outputs = vec![Matrix::zeros(0, 0); t_len];
    let mut steps = Vec::with_capacity(t_len);
    let mut h_prev = Matrix::zeros(batch, h);
    let mut c_prev = Matrix::zeros(batch, h);
    for s in 0..t_len {
        let t = if reversed { t_len - 1 - s } else { s };
        let hx = concat_cols(&h_prev, &xs[t]);
        let mut zs = bias_rows(&bias, batch);
        gemm_nn(&mut zs, &hx, &wt);
        let mut i = Matrix::zeros(batch, h);
        let mut f = Matrix::zeros(batch, h);
        let mut g = Matrix::zeros(batch, h);
        let mut o = Matrix::zeros(batch, h);
        let mut c = Matrix::zeros(batch, h);
        let mut tanh_c = Matrix::zeros(batch, h);
        let mut h_new = Matrix::zeros(batch, h);
        for b in 0..batch {
            let z = zs.row(b);
            let cp = c_prev.row(b);
            let (ir, fr, gr, or) = (i.row_mut(b), f.row_mut(b), g.row_mut(b), o.row_mut(b));
            for j in 0..h {
                ir[j] = sigmoid_scalar(z[j]);
                fr[j] = sigmoid_scalar(z[h + j]);
                gr[j] = z[2 * h + j].tanh();
                or[j] = sigmoid_scalar(z[3 * h + j]);
            }
            let (ir, fr, gr, or) = (i.row(b), f.row(b), g.row(b), o.row(b));
            let cr = c.row_mut(b);
            for j in 0..h {
                cr[j] = fr[j] * cp[j] + ir[j] * gr[j];
            }
            let cr = c.row(b);
            let tr = tanh_c.row_mut(b);
            for j in 0..h {
                tr[j] = cr[j].tanh();
            }
            let tr = tanh_c.row(b);
            let hr = h_new.row_mut(b);
            for j in 0..h {
                hr[j] = or[j] * tr[j];
            }
        }
        outputs[t] = h_new.clone();
        c_prev = c.clone();
        h_prev = h_new;
        steps.push(Step::Lstm {
            hx,
            i,
            f,
            g,
            o,
            c,
            tanh_c,
        });
    }
    (DirTape { reversed, steps }, outputs)
}

fn rnn_forward(p: &RnnCellParams, xs: &[Matrix]) -> (DirTape, Vec<Matrix>) {
    let h = p.hidden();
    let batch = xs[0].rows();
    let wt = p.w.transpose();
    let mut outputs = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    let mut h_prev = Matrix::zeros(batch, h);
    for x in xs {
        let hx = concat_cols(&h_prev, x);
        let mut h_new = bias_rows(&p.b, batch);
        gemm_nn(&mut h_new, &hx, &wt);
        for v in h_new.as_mut_slice() {
            *v = v.tanh();
        }
        outputs.push(h_new.clone());
        h_prev = h_new.clone();
        steps.push(Step::Rnn { hx, h: h_new });
    }
    (
        DirTape {
            reversed: false,
            steps,
        },
        outputs,
    )
}

fn check_inputs(net: &StackedNet, xs: &[Matrix]) -> Result<usize> {
    net.validate()?;
    let first = xs
        .first()
        .ok_or_else(|| Error::param("input sequence is empty"))?;
    let batch = first.rows();
    if batch == 0 {
        return Err(Error::param("batch has no samples"));
    }
    for (t, x) in xs.iter().enumerate() {
        if x.rows() != batch || x.cols() != net.input_dim {
            return Err(Error::shape(
                "forward_batch",
                format!("{batch}x{} (input_dim {})", net.input_dim, net.input_dim),
                format!("timestep {t} is {}", x.shape_str()),
            ));
        }
    }
    Ok(batch)
}

/// Forward pass over a batch of sequences. Returns `B x output_dim` predictions.
pub fn forward_batch(net: &StackedNet, xs: &[Matrix]) -> Result<(Matrix, Tape)> {
    let batch = check_inputs(net, xs)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut current: Vec<Matrix> = xs.to_vec();
    for layer in &net.layers {
        let (tape, out) = match layer {
            LayerParams::Rnn(p) => {
                let (d, out) = rnn_forward(p, &current);
                (LayerTape::Single(d), out)
            }
            LayerParams::Lstm(p) => {
                let (d, out) = lstm_forward(p, &current, false);
                (LayerTape::Single(d), out)
            }
            LayerParams::BiLstm { forward, backward } => {
                let (df, of) = lstm_forward(forward, &current, false);
                let (db, ob) = lstm_forward(backward, &current, true);
                let out = of.iter().zip(&ob).map(|(a, b)| concat_cols(a, b)).collect();
                (LayerTape::Bi(df, db), out)
            }
        };
        layers.push(tape);
        current = out;
    }
    let top_feature = current.pop().expect("nonempty sequence");
    let head_wt = net.head_w.transpose();
    let mut prediction = Matrix::zeros(batch, net.output_dim);
    for b in 0..batch {
        affine_rowmajor(prediction.row_mut(b), &net.head_b, top_feature.row(b), &head_wt);
    }
    let tape = Tape {
        kind: net.kind,
        hidden: net.hidden,
        input_dim: net.input_dim,
        output_dim: net.output_dim,
        batch,
        seq_len: xs.len(),
        layers,
        top_feature,
        prediction: prediction.clone(),
    };
    Ok((prediction, tape))
}

/// Single-sequence forward pass.
pub fn forward_sequence(net: &StackedNet, xs: &[Vector]) -> Result<(Vector, Tape)> {
    let mats = xs
        .iter()
        .map(|x| Matrix::from_vec(1, x.len(), x.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let (pred, tape) = forward_batch(net, &mats)?;
    Ok((Vector::from(pred.into_vec()), tape))
}

/// Prediction only, without keeping the tape.
pub fn predict_batch(net: &StackedNet, xs: &[Matrix]) -> Result<Matrix> {
    forward_batch(net, xs).map(|(p, _)| p)
}

fn lstm_backward(
    p: &LstmCellParams,
    grad: &mut LstmCellParams,
    tape: &DirTape,
    d_out: &[Matrix],
    col_offset: usize,
    dx: &mut [Matrix],
) {
    let h = p.hidden();
    let t_len = tape.steps.len();
    let batch = d_out[0].rows();
    let w_stack = stacked_lstm_weights(p);
    let mut dh_next = Matrix::zeros(batch, h);
    let mut dc_next = Matrix::zeros(batch, h);
    let zeros = Matrix::zeros(batch, h);
    for s in (0..t_len).rev() {
        let t = if tape.reversed { t_len - 1 - s } else { s };
        let Step::Lstm {
            hx,
            i,
            f,
            g,
            o,
            tanh_c,
            ..
        } = &tape.steps[s]
        else {
            unreachable!("LSTM direction recorded a non-LSTM step")
        };
        let c_prev = match s {
            0 => &zeros,
            _ => match &tape.steps[s - 1] {
                Step::Lstm { c, .. } => c,
                Step::Rnn { .. } => unreachable!(),
            },
        };
        let mut dzs = Matrix::zeros(batch, 4 * h);
        for b in 0..batch {
            let dout = &d_out[t].row(b)[col_offset..col_offset + h];
            let (ir, fr, gr, or, tr, cp) = (i.row(b), f.row(b), g.row(b), o.row(b), tanh_c.row(b), c_prev.row(b));
            let dhn = dh_next.row(b);
            let dcn = dc_next.row_mut(b);
            let dz = dzs.row_mut(b);
            for j in 0..h {
                let dh = dout[j] + dhn[j];
                let dc = dcn[j] + dh * or[j] * (1.0 - tr[j] * tr[j]);
                dz[j] = dc * gr[j] * ir[j] * (1.0 - ir[j]);
                dz[h + j] = dc * cp[j] * fr[j] * (1.0 - fr[j]);
                dz[2 * h + j] = dc * ir[j] * (1.0 - gr[j] * gr[j]);
                dz[3 * h + j] = dh * tr[j] * or[j] * (1.0 - or[j]);
                dcn[j] = dc * fr[j];
            }
        }
        let LstmCellParams {
            w_i,
            w_f,
            w_c,
            w_o,
            b_i,
            b_f,
            b_c,
            b_o,
        } = &mut *grad;
        for (gate, (gwm, gbv)) in [w_i, w_f, w_c, w_o].into_iter().zip([b_i, b_f, b_c, b_o]).enumerate() {
            gemm_tn(gwm, &dzs, gate * h, hx);
            for b in 0..batch {
                axpy(&mut gbv[..], 1.0, &dzs.row(b)[gate * h..(gate + 1) * h]);
            }
        }
        let mut dhx = Matrix::zeros(batch, w_stack.cols());
        gemm_nn(&mut dhx, &dzs, &w_stack);
        dh_next = split_hidden_grad(&dhx, h, &mut dx[t]);
    }
}

/// Splits `d[h, x]` into the returned `dh` and adds the input part to `dx`.
fn split_hidden_grad(dhx: &Matrix, h: usize, dx: &mut Matrix) -> Matrix {
    let batch = dhx.rows();
    let mut dh = Matrix::zeros(batch, h);
    for b in 0..batch {
        let row = dhx.row(b);
        dh.row_mut(b).copy_from_slice(&row[..h]);
        for (a, v) in dx.row_mut(b).iter_mut().zip(&row[h..]) {
            *a += v;
        }
    }
    dh
}

fn rnn_backward(
    p: &RnnCellParams,
    grad: &mut RnnCellParams,
    tape: &DirTape,
    d_out: &[Matrix],
    dx: &mut [Matrix],
) {
    let h = p.hidden();
    let batch = d_out[0].rows();
    let mut dh_next = Matrix::zeros(batch, h);
    for t in (0..tape.steps.len()).rev() {
        let Step::Rnn { hx, h: hm } = &tape.steps[t] else {
            unreachable!("RNN layer recorded a non-RNN step")
        };
        let mut dzs = Matrix::zeros(batch, h);
        for b in 0..batch {
            let (dout, dhn, hr) = (d_out[t].row(b), dh_next.row(b), hm.row(b));
            let dz = dzs.row_mut(b);
            for j in 0..h {
                dz[j] = (dout[j] + dhn[j]) * (1.0 - hr[j] * hr[j]);
            }
        }
        gemm_tn(&mut grad.w, &dzs, 0, hx);
        for b in 0..batch {
            axpy(&mut grad.b[..], 1.0, dzs.row(b));
        }
        let mut dhx = Matrix::zeros(batch, p.w.cols());
        gemm_nn(&mut dhx, &dzs, &p.w);
        dh_next = split_hidden_grad(&dhx, h, &mut dx[t]);
    }
}

/// Reverse pass: gradients of a scalar loss given `dL/dprediction`
/// (`B x output_dim`).
pub fn backward_batch(net: &StackedNet, tape: &Tape, loss_grad: &Matrix) -> Result<GradientSet> {
    if tape.kind != net.kind
        || tape.hidden != net.hidden
        || tape.input_dim != net.input_dim
        || tape.output_dim != net.output_dim
        || tape.layers.len() != net.layers.len()
    {
        return Err(Error::Consistency(format!(
            "tape recorded for {} hidden {} layers {} ({} -> {}) but network is {} hidden {} layers {} ({} -> {})",
            tape.kind,
            tape.hidden,
            tape.layers.len(),
            tape.input_dim,
            tape.output_dim,
            net.kind,
            net.hidden,
            net.layers.len(),
            net.input_dim,
            net.output_dim
        )));
    }
    if loss_grad.shape() != (tape.batch, net.output_dim) {
        return Err(Error::shape(
            "backward_batch",
            format!("{}x{}", tape.batch, net.output_dim),
            loss_grad.shape_str(),
        ));
    }
    let mut grads = GradientSet::zeros_for(net);
    let feat = net.feature_dim();
    let batch = tape.batch;

    let mut d_top = Matrix::zeros(batch, feat);
    {
        let g = grads.as_net_mut();
        for b in 0..batch {
            let dp = loss_grad.row(b);
            let fr = tape.top_feature.row(b);
            let dtop = d_top.row_mut(b);
            for (o, &d) in dp.iter().enumerate() {
                if d != 0.0 {
                    axpy(g.head_w.row_mut(o), d, fr);
                    g.head_b[o] += d;
                    axpy(dtop, d, net.head_w.row(o));
                }
            }
        }
    }

    let t_len = tape.seq_len;
    let mut d_out: Vec<Matrix> = (0..t_len).map(|_| Matrix::zeros(batch, feat)).collect();
    d_out[t_len - 1] = d_top;
    for l in (0..net.layers.len()).rev() {
        let in_dim = net.layers[l].input_dim();
        let mut dx: Vec<Matrix> = (0..t_len).map(|_| Matrix::zeros(batch, in_dim)).collect();
        let g_layer = &mut grads.as_net_mut().layers[l];
        match (&net.layers[l], g_layer, &tape.layers[l]) {
            (LayerParams::Rnn(p), LayerParams::Rnn(gp), LayerTape::Single(d)) => {
                rnn_backward(p, gp, d, &d_out, &mut dx);
            }
            (LayerParams::Lstm(p), LayerParams::Lstm(gp), LayerTape::Single(d)) => {
                lstm_backward(p, gp, d, &d_out, 0, &mut dx);
            }
            (
                LayerParams::BiLstm { forward, backward },
                LayerParams::BiLstm {
                    forward: gf,
                    backward: gb,
                },
                LayerTape::Bi(df, db),
            ) => {
                lstm_backward(forward, gf, df, &d_out, 0, &mut dx);
                lstm_backward(backward, gb, db, &d_out, net.hidden, &mut dx);
            }
            _ => {
                return Err(Error::Consistency(format!(
                    "layer {l} tape does not match the network layer"
                )))
            }
        }
        d_out = dx;
    }
    Ok(grads)
}

/// Single-sequence reverse pass; `loss_grad` has length `output_dim`.
pub fn backward_sequence(net: &StackedNet, tape: &Tape, loss_grad: &Vector) -> Result<GradientSet> {
    if tape.batch != 1 {
        return Err(Error::Consistency(format!(
            "tape holds a batch of {}, expected a single sequence",
            tape.batch
        )));
    }
    let g = Matrix::from_vec(1, loss_grad.len(), loss_grad.to_vec())?;
    backward_batch(net, tape, &g)
}
