use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ndcore::{Matrix, Rng, Vector};
use crate::nn::cell::{LstmCellParams, RnnCellParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Lstm,
    BiLstm,
    Rnn,
}

impl ModelKind {
    /// Column order of the result tables.
    pub const ALL: [ModelKind; 3] = [ModelKind::Lstm, ModelKind::BiLstm, ModelKind::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rnn => "RNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::BiLstm => "BiLSTM",
        }
    }

    /// Width of the per-timestep feature a layer of this kind emits.
    pub fn feature_dim(self, hidden: usize) -> usize {
        match self {
            ModelKind::BiLstm => 2 * hidden,
            ModelKind::Rnn | ModelKind::Lstm => hidden,
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::Rnn => 0,
            ModelKind::Lstm => 1,
            ModelKind::BiLstm => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Rnn),
            1 => Some(ModelKind::Lstm),
            2 => Some(ModelKind::BiLstm),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rnn" => Ok(ModelKind::Rnn),
            "lstm" => Ok(ModelKind::Lstm),
            "bilstm" | "bi-lstm" => Ok(ModelKind::BiLstm),
            other => Err(Error::param(format!(
                "unknown model kind `{other}` (expected rnn, lstm or bilstm)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    Rnn(RnnCellParams),
    Lstm(LstmCellParams),
    BiLstm {
        forward: LstmCellParams,
        backward: LstmCellParams,
    },
}

impl LayerParams {
    pub fn input_dim(&self) -> usize {
        match self {
            LayerParams::Rnn(p) => p.input(),
            LayerParams::Lstm(p) => p.input(),
            LayerParams::BiLstm { forward, .. } => forward.input(),
        }
    }

    fn kind(&self) -> ModelKind {
        match self {
            LayerParams::Rnn(_) => ModelKind::Rnn,
            LayerParams::Lstm(_) => ModelKind::Lstm,
            LayerParams::BiLstm { .. } => ModelKind::BiLstm,
        }
    }
}

/// Stacked recurrent layers followed by an affine head on the last
/// timestep's top-layer feature.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedNet {
    pub kind: ModelKind,
    pub layers: Vec<LayerParams>,
    /// `output_dim x feature_dim`
    pub head_w: Matrix,
    pub head_b: Vector,
    pub hidden: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

/// Borrowed view of one parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

const LSTM_TENSOR_NAMES: [&str; 8] = ["w_i", "w_f", "w_c", "w_o", "b_i", "b_f", "b_c", "b_o"];

/// Builds a randomly initialised network.
///
/// Weights (including the head) are uniform in `[-1/sqrt(hidden), 1/sqrt(hidden))`
/// and every bias starts at zero. Draws happen layer by layer, forward
/// direction before backward, head last.
pub fn init_net(
    kind: ModelKind,
    input_dim: usize,
    output_dim: usize,
    hidden: usize,
    layer_count: usize,
    rng: &mut Rng,
) -> Result<StackedNet> {
    for (name, v) in [
        ("input_dim", input_dim),
        ("output_dim", output_dim),
        ("hidden", hidden),
        ("layer_count", layer_count),
    ] {
        if v == 0 {
            return Err(Error::param(format!("{name} must be at least 1")));
        }
    }
    let bound = 1.0 / (hidden as f64).sqrt();
    let feat = kind.feature_dim(hidden);
    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let input = if l == 0 { input_dim } else { feat };
        layers.push(match kind {
            ModelKind::Rnn => LayerParams::Rnn(RnnCellParams::random(hidden, input, bound, rng)),
            ModelKind::Lstm => {
                LayerParams::Lstm(LstmCellParams::random(hidden, input, bound, rng))
            }
            ModelKind::BiLstm => LayerParams::BiLstm {
                forward: LstmCellParams::random(hidden, input, bound, rng),
                backward: LstmCellParams::random(hidden, input, bound, rng),
            },
        });
    }
    let head_w = Matrix::from_fn(output_dim, feat, |_, _| rng.uniform(-bound, bound));
    Ok(StackedNet {
        kind,
        layers,
        head_w,
        head_b: Vector::zeros(output_dim),
        hidden,
        input_dim,
        output_dim,
    })
}

impl StackedNet {
    /// Same architecture with every parameter zero.
    pub fn zeros_like(&self) -> StackedNet {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.kind.feature_dim(self.hidden)
    }

    /// Checks every invariant linking the layer shapes, the kind and the head.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::param("network has no recurrent layers"));
        }
        let feat = self.feature_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.kind() != self.kind {
                return Err(Error::Consistency(format!(
                    "layer {l} is {} inside a {} network",
                    layer.kind(),
                    self.kind
                )));
            }
            let want_in = if l == 0 { self.input_dim } else { feat };
            let (hidden, input) = match layer {
                LayerParams::Rnn(p) => {
                    p.validate()?;
                    (p.hidden(), p.input())
                }
                LayerParams::Lstm(p) => {
                    p.validate()?;
                    (p.hidden(), p.input())
                }
                LayerParams::BiLstm { forward, backward } => {
                    forward.validate()?;
                    backward.validate()?;
                    if forward.w_i.shape() != backward.w_i.shape() {
                        return Err(Error::shape(
                            "BiLstm layer",
                            forward.w_i.shape_str(),
                            backward.w_i.shape_str(),
                        ));
                    }
                    (forward.hidden(), forward.input())
                }
            };
            if hidden != self.hidden || input != want_in {
                return Err(Error::shape(
                    "StackedNet layer",
                    format!("layer {l} expected hidden {} input {want_in}", self.hidden),
                    format!("hidden {hidden} input {input}"),
                ));
            }
        }
        if self.head_w.shape() != (self.output_dim, feat) || self.head_b.len() != self.output_dim {
            return Err(Error::shape(
                "StackedNet head",
                format!("{}x{feat}", self.output_dim),
                format!("{} + bias {}", self.head_w.shape_str(), self.head_b.len()),
            ));
        }
        Ok(())
    }

    /// Every parameter tensor in canonical order, with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, TensorView<'_>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerParams::Rnn(p) => {
                    out.push((format!("layer{l}.w"), view(&p.w)));
                    out.push((format!("layer{l}.b"), view_vec(&p.b)));
                }
                LayerParams::Lstm(p) => push_lstm(&mut out, format!("layer{l}"), p),
                LayerParams::BiLstm { forward, backward } => {
                    push_lstm(&mut out, format!("layer{l}.fwd"), forward);
                    push_lstm(&mut out, format!("layer{l}.bwd"), backward);
                }
            }
        }
        out.push(("head.w".to_string(), view(&self.head_w)));
        out.push(("head.b".to_string(), view_vec(&self.head_b)));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.named_tensors().into_iter().map(|(n, _)| n).collect()
    }

    /// Flat parameter slices, same order as [`StackedNet::named_tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.named_tensors().into_iter().map(|(_, t)| t.data).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self.layers.iter_mut() {
            match layer {
                LayerParams::Rnn(p) => {
                    out.push(p.w.as_mut_slice());
                    out.push(&mut p.b);
                }
                LayerParams::Lstm(p) => out.extend(p.tensors_mut()),
                LayerParams::BiLstm { forward, backward } => {
                    out.extend(forward.tensors_mut());
                    out.extend(backward.tensors_mut());
                }
            }
        }
        out.push(self.head_w.as_mut_slice());
        out.push(&mut self.head_b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn kind_tag(&self) -> u8 {
        self.kind.tag()
    }

    pub(crate) fn kind_from_tag(tag: u8) -> Option<ModelKind> {
        ModelKind::from_tag(tag)
    }
}

fn view(m: &Matrix) -> TensorView<'_> {
    TensorView {
        rows: m.rows(),
        cols: m.cols(),
        data: m.as_slice(),
    }
}

fn view_vec(v: &Vector) -> TensorView<'_> {
    TensorView {
        rows: v.len(),
        cols: 1,
        data: v,
    }
}

fn push_lstm<'a>(out: &mut Vec<(String, TensorView<'a>)>, prefix: String, p: &'a LstmCellParams) {
    let [wi, wf, wc, wo] = p.weights();
    let [bi, bf, bc, bo] = p.biases();
    let views = [
        view(wi),
        view(wf),
        view(wc),
        view(wo),
        view_vec(bi),
        view_vec(bf),
        view_vec(bc),
        view_vec(bo),
    ];
    for (name, v) in LSTM_TENSOR_NAMES.iter().zip(views) {
        out.push((format!("{prefix}.{name}"), v));
    }
}

/// Gradient buffers mirroring a network's parameters exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet(StackedNet);

impl GradientSet {
    pub fn zeros_for(net: &StackedNet) -> Self {
        GradientSet(net.zeros_like())
    }

    /// The gradients laid out as a network, so per-gate buffers can be read
    /// by field name.
    pub fn as_net(&self) -> &StackedNet {
        &self.0
    }

    pub(crate) fn as_net_mut(&mut self) -> &mut StackedNet {
        &mut self.0
    }

    pub fn named_tensors(&self) -> Vec<(String, TensorView<'_>)> {
        self.0.named_tensors()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.0.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.0.tensors_mut()
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= k;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
