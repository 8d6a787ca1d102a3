//! Mean squared error and its root.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPair {
    pub mse: f64,
    pub rmse: f64,
}

impl LossPair {
    pub fn from_mse(mse: f64) -> Self {
        LossPair {
            mse,
            rmse: mse.sqrt(),
        }
    }

    pub fn nan() -> Self {
        LossPair {
            mse: f64::NAN,
            rmse: f64::NAN,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.rmse.is_finite()
    }
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::param("loss over zero observations"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::param(format!(
            "loss needs equal lengths, got {} targets and {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let sum: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    mse(y, y_hat).map(f64::sqrt)
}

pub fn loss_pair(y: &[f64], y_hat: &[f64]) -> Result<LossPair> {
    mse(y, y_hat).map(LossPair::from_mse)
}
