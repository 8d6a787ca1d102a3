//! Recurrent-network forecasting of weekly case counts per virus variant.
//!
//! The crate covers the whole pipeline: CSV ingestion into per-variant panels
//! ([`ingest`]), robust scaling and windowing ([`prep`]), RNN/LSTM/BiLSTM
//! networks trained with hand-written backpropagation through time ([`nn`])
//! and Adam ([`optim`]), MSE/RMSE scoring ([`metrics`]), and the two-stage
//! hidden-size / layer-size sweep with its report files ([`experiments`]).

pub mod error;
pub mod experiments;
pub mod ingest;
pub mod metrics;
pub mod ndcore;
pub mod nn;
pub mod optim;
pub mod prep;

pub use error::{Error, ErrorCategory, Result};
