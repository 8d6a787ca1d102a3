//! Recurrent cells, stacking, the linear head and backpropagation through time.

mod bptt;
mod cell;
pub mod checkpoint;
mod net;

pub use bptt::{backward_batch, backward_sequence, forward_batch, forward_sequence, predict_batch, Tape};
pub use cell::{lstm_cell_step, rnn_cell_step, LstmCellParams, LstmState, RnnCellParams};
pub use net::{init_net, GradientSet, LayerParams, ModelKind, StackedNet, TensorView};
