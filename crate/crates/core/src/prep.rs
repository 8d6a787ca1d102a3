//! Robust scaling, chronological splitting and window construction.

use crate::error::{Error, Result};
use crate::ndcore::Matrix;

/// Per-feature statistics of a fitted robust scaler.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalerParams {
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub iqr: Vec<f64>,
    /// Features whose IQR is zero. They are centred but not divided.
    pub degenerate: Vec<bool>,
}

/// Quantile by linear interpolation between closest ranks, `sorted` ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

impl ScalerParams {
    pub fn features(&self) -> usize {
        self.median.len()
    }

    /// Rebuilds parameters from stored quartiles.
    pub fn from_quartiles(median: Vec<f64>, q25: Vec<f64>, q75: Vec<f64>) -> Result<Self> {
        if median.len() != q25.len() || median.len() != q75.len() {
            return Err(Error::shape(
                "ScalerParams",
                format!("{} medians", median.len()),
                format!("{} / {} quartiles", q25.len(), q75.len()),
            ));
        }
        let iqr: Vec<f64> = q25.iter().zip(&q75).map(|(a, b)| b - a).collect();
        let degenerate = iqr.iter().map(|&d| d == 0.0).collect();
        Ok(ScalerParams {
            median,
            q25,
            q75,
            iqr,
            degenerate,
        })
    }

    fn divisor(&self, j: usize) -> f64 {
        if self.degenerate[j] {
            1.0
        } else {
            self.iqr[j]
        }
    }

    fn check(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.cols() != self.features() {
            return Err(Error::shape(
                op,
                format!("{} scaler features", self.features()),
                x.shape_str(),
            ));
        }
        Ok(())
    }
}

/// Fits per-column median and quartiles on training rows (`week x feature`).
pub fn fit_scaler(train: &Matrix) -> Result<ScalerParams> {
    if train.rows() == 0 || train.cols() == 0 {
        return Err(Error::param(format!(
            "cannot fit a scaler on an empty {} matrix",
            train.shape_str()
        )));
    }
    let mut median = Vec::with_capacity(train.cols());
    let mut q25 = Vec::with_capacity(train.cols());
    let mut q75 = Vec::with_capacity(train.cols());
    for j in 0..train.cols() {
        let mut col = train.column(j);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite training value in feature {j}")));
        }
        col.sort_by(f64::total_cmp);
        median.push(quantile_sorted(&col, 0.5));
        q25.push(quantile_sorted(&col, 0.25));
        q75.push(quantile_sorted(&col, 0.75));
    }
    ScalerParams::from_quartiles(median, q25, q75)
}

/// `(x - median) / iqr` per entry.
pub fn transform(s: &ScalerParams, x: &Matrix) -> Result<Matrix> {
    s.check(x, "transform")?;
    Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        (x.get(r, c) - s.median[c]) / s.divisor(c)
    }))
}

/// `x * iqr + median` per entry.
pub fn inverse_transform(s: &ScalerParams, x: &Matrix) -> Result<Matrix> {
    s.check(x, "inverse_transform")?;
    Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
        x.get(r, c) * s.divisor(c) + s.median[c]
    }))
}

/// Splits week-ordered rows into the first `train_weeks` and the last
/// `test_weeks`.
pub fn split_train_test(panel: &Matrix, train_weeks: usize, test_weeks: usize) -> Result<(Matrix, Matrix)> {
    if train_weeks == 0 {
        return Err(Error::param("training split cannot be empty"));
    }
    if train_weeks + test_weeks != panel.rows() {
        return Err(Error::param(format!(
            "train ({train_weeks}) + test ({test_weeks}) weeks must equal the {} weeks available",
            panel.rows()
        )));
    }
    Ok((
        panel.slice_rows(0, train_weeks),
        panel.slice_rows(train_weeks, panel.rows()),
    ))
}

/// Sliding stride-1 windows over a `week x feature` series.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    /// One `window x feature` matrix per sample.
    pub inputs: Vec<Matrix>,
    /// `samples x feature`; row `k` is the week right after window `k`.
    pub targets: Matrix,
    /// Week index of each target.
    pub origins: Vec<usize>,
    pub window: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn features(&self) -> usize {
        self.targets.cols()
    }

    /// Timestep-major batch: `window` matrices of `samples x feature`.
    pub fn batch_inputs(&self) -> Vec<Matrix> {
        (0..self.window)
            .map(|t| {
                Matrix::from_fn(self.len(), self.features(), |b, f| self.inputs[b].get(t, f))
            })
            .collect()
    }

    /// Windows whose target week satisfies `keep`.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> WindowSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&k| keep(self.origins[k])).collect();
        WindowSet {
            inputs: idx.iter().map(|&k| self.inputs[k].clone()).collect(),
            targets: Matrix::from_fn(idx.len(), self.features(), |r, c| self.targets.get(idx[r], c)),
            origins: idx.iter().map(|&k| self.origins[k]).collect(),
            window: self.window,
        }
    }
}

pub fn make_windows(series: &Matrix, window: usize) -> Result<WindowSet> {
    if window == 0 {
        return Err(Error::param("window length must be at least 1"));
    }
    if series.rows() <= window {
        return Err(Error::param(format!(
            "series of {} weeks is too short for window {window}: need at least {}",
            series.rows(),
            window + 1
        )));
    }
    let n = series.rows() - window;
    let inputs = (0..n).map(|k| series.slice_rows(k, k + window)).collect();
    Ok(WindowSet {
        inputs,
        targets: series.slice_rows(window, series.rows()),
        origins: (window..series.rows()).collect(),
        window,
    })
}
