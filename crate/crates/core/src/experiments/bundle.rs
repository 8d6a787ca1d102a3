//! Trained models plus the scaling they expect, saved as one file.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "VCBUNDL\x01"
//! mode      u8       0 = univariate, 1 = multivariate
//! variant   u16 length + UTF-8
//! window    u64
//! countries u32, then each as u16 length + UTF-8
//! models    u32, then per model:
//!   features u64, median, q25, q75 (features f64 each), network checkpoint
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{VariantPanel, YearWeek};
use crate::ndcore::Matrix;
use crate::nn::checkpoint::{io_err, read_f64s, read_net, read_str, read_usize, write_f64s, write_net, write_str, write_u64};
use crate::nn::{predict_batch, StackedNet};
use crate::prep::{inverse_transform, transform, ScalerParams};

use super::report::atomic_write;
use super::Mode;

pub const BUNDLE_MAGIC: [u8; 8] = *b"VCBUNDL\x01";

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub scaler: ScalerParams,
    pub net: StackedNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub mode: Mode,
    pub variant: String,
    pub window: usize,
    pub countries: Vec<String>,
    /// One model in multivariate mode, one per country otherwise.
    pub models: Vec<FittedModel>,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        let (want_models, want_dim) = match self.mode {
            Mode::Multivariate => (1, self.countries.len()),
            Mode::Univariate => (self.countries.len(), 1),
        };
        if self.models.len() != want_models {
            return Err(Error::Consistency(format!(
                "{} bundle over {} countries needs {want_models} models, has {}",
                self.mode,
                self.countries.len(),
                self.models.len()
            )));
        }
        for m in &self.models {
            if m.net.input_dim != want_dim || m.net.output_dim != want_dim || m.scaler.features() != want_dim {
                return Err(Error::Consistency(format!(
                    "model dims {}->{} with {} scaler features do not match {want_dim}",
                    m.net.input_dim,
                    m.net.output_dim,
                    m.scaler.features()
                )));
            }
        }
        Ok(())
    }
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::param("count too large for bundle"))?;
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn encode_bundle(w: &mut impl Write, b: &ModelBundle) -> Result<()> {
    b.validate()?;
    w.write_all(&BUNDLE_MAGIC).map_err(io_err)?;
    let mode = match b.mode {
        Mode::Univariate => 0u8,
        Mode::Multivariate => 1,
    };
    w.write_all(&[mode]).map_err(io_err)?;
    write_str(w, &b.variant)?;
    write_u64(w, b.window as u64)?;
    write_u32(w, b.countries.len())?;
    for c in &b.countries {
        write_str(w, c)?;
    }
    write_u32(w, b.models.len())?;
    for m in &b.models {
        write_u64(w, m.scaler.features() as u64)?;
        write_f64s(w, &m.scaler.median)?;
        write_f64s(w, &m.scaler.q25)?;
        write_f64s(w, &m.scaler.q75)?;
        write_net(w, &m.net)?;
    }
    Ok(())
}

pub fn decode_bundle(r: &mut impl Read) -> Result<ModelBundle> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != BUNDLE_MAGIC {
        return Err(Error::Format("not a model bundle (bad magic or version)".into()));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(io_err)?;
    let mode = match tag[0] {
        0 => Mode::Univariate,
        1 => Mode::Multivariate,
        t => return Err(Error::Format(format!("unknown mode tag {t}"))),
    };
    let variant = read_str(r)?;
    let window = read_usize(r, "window")?;
    let n = read_u32(r)?;
    let countries = (0..n).map(|_| read_str(r)).collect::<Result<Vec<_>>>()?;
    let n = read_u32(r)?;
    let mut models = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let f = read_usize(r, "feature count")?;
        let mut q = [vec![0.0; f], vec![0.0; f], vec![0.0; f]];
        for v in q.iter_mut() {
            read_f64s(r, v)?;
        }
        let [median, q25, q75] = q;
        let scaler = ScalerParams::from_quartiles(median, q25, q75)?;
        models.push(FittedModel {
            scaler,
            net: read_net(r)?,
        });
    }
    let b = ModelBundle {
        mode,
        variant,
        window,
        countries,
        models,
    };
    b.validate()?;
    Ok(b)
}

pub fn write_bundle(path: &Path, b: &ModelBundle) -> Result<()> {
    let mut buf = Vec::new();
    encode_bundle(&mut buf, b)?;
    atomic_write(path, &buf)
}

pub fn read_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&mut bytes.as_slice())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub country: String,
    pub week: YearWeek,
    /// 1 for the week right after the data.
    pub step: usize,
    pub predicted: f64,
    /// Set when the input window contained earlier predictions.
    pub extrapolated: bool,
}

/// Rolls `model` forward `steps` weeks from the last window of `series`
/// (`week x feature`, original scale). Returns `steps x feature`.
fn roll_forward(model: &FittedModel, series: &Matrix, window: usize, steps: usize) -> Result<Matrix> {
    let weeks = series.rows();
    let mut recent = transform(&model.scaler, &series.slice_rows(weeks - window, weeks))?;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let xs: Vec<Matrix> = (0..window).map(|t| recent.slice_rows(t, t + 1)).collect();
        let scaled = predict_batch(&model.net, &xs)?;
        out.push(inverse_transform(&model.scaler, &scaled)?);
        recent = recent.slice_rows(1, window).vstack(&scaled)?;
    }
    let f = series.cols();
    Ok(Matrix::from_fn(steps, f, |s, c| out[s].get(0, c)))
}

/// Forecasts `weeks_ahead` weeks past the end of `panel`. Steps beyond the
/// first feed predictions back in and are flagged as extrapolated.
pub fn predict(bundle: &ModelBundle, panel: &VariantPanel, weeks_ahead: usize) -> Result<Vec<PredictionRow>> {
    bundle.validate()?;
    if weeks_ahead == 0 {
        return Err(Error::param("weeks_ahead must be at least 1"));
    }
    if panel.countries != bundle.countries {
        return Err(Error::Consistency(format!(
            "bundle was trained on {} countries, panel has {} (or a different order)",
            bundle.countries.len(),
            panel.countries.len()
        )));
    }
    let weeks = panel.weeks.len();
    if weeks < bundle.window {
        return Err(Error::param(format!(
            "panel has {weeks} weeks, the model needs a window of {}",
            bundle.window
        )));
    }
    let forecast = match bundle.mode {
        Mode::Multivariate => roll_forward(&bundle.models[0], &panel.values, bundle.window, weeks_ahead)?,
        Mode::Univariate => {
            let cols = bundle
                .models
                .iter()
                .enumerate()
                .map(|(c, m)| {
                    let series = Matrix::from_fn(weeks, 1, |r, _| panel.values.get(r, c));
                    roll_forward(m, &series, bundle.window, weeks_ahead)
                })
                .collect::<Result<Vec<_>>>()?;
            Matrix::from_fn(weeks_ahead, cols.len(), |s, c| cols[c].get(s, 0))
        }
    };
    let mut future = Vec::with_capacity(weeks_ahead);
    let mut week = *panel.weeks.last().expect("window >= 1 so weeks >= 1");
    for _ in 0..weeks_ahead {
        week = week.succ()?;
        future.push(week);
    }
    let mut rows = Vec::with_capacity(weeks_ahead * panel.countries.len());
    for (c, country) in panel.countries.iter().enumerate() {
        for (s, w) in future.iter().enumerate() {
            rows.push(PredictionRow {
                country: country.clone(),
                week: *w,
                step: s + 1,
                predicted: forecast.get(s, c),
                extrapolated: s > 0,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Rng;
    use crate::nn::{init_net, ModelKind};
    use crate::prep::fit_scaler;

    fn panel(values: Matrix) -> VariantPanel {
        let mut weeks = vec![YearWeek::new(2022, 1).unwrap()];
        while weeks.len() < values.rows() {
            let n = weeks.last().unwrap().succ().unwrap();
            weeks.push(n);
        }
        VariantPanel {
            variant: "X".into(),
            countries: (0..values.cols()).map(|c| format!("C{c}")).collect(),
            weeks,
            values,
        }
    }

    fn bundle(mode: Mode, p: &VariantPanel, kind: ModelKind, seed: u64) -> ModelBundle {
        let mut rng = Rng::new(seed);
        let (n, dim) = match mode {
            Mode::Multivariate => (1, p.countries.len()),
            Mode::Univariate => (p.countries.len(), 1),
        };
        let models = (0..n)
            .map(|c| {
                let series = if dim == 1 {
                    Matrix::from_fn(p.weeks.len(), 1, |r, _| p.values.get(r, c))
                } else {
                    p.values.clone()
                };
                FittedModel {
                    scaler: fit_scaler(&series).unwrap(),
                    net: init_net(kind, dim, dim, 3, 2, &mut rng).unwrap(),
                }
            })
            .collect();
        ModelBundle {
            mode,
            variant: p.variant.clone(),
            window: 4,
            countries: p.countries.clone(),
            models,
        }
    }

    #[test]
    fn round_trip_predicts_identically() {
        let p = panel(Matrix::from_fn(12, 2, |r, c| (r * r + c) as f64));
        for mode in [Mode::Univariate, Mode::Multivariate] {
            for kind in ModelKind::ALL {
                let b = bundle(mode, &p, kind, 7);
                let mut buf = Vec::new();
                encode_bundle(&mut buf, &b).unwrap();
                let back = decode_bundle(&mut buf.as_slice()).unwrap();
                assert_eq!(back, b);
                assert_eq!(predict(&back, &p, 3).unwrap(), predict(&b, &p, 3).unwrap());
            }
        }
    }

    #[test]
    fn zero_net_on_zero_panel_predicts_zero() {
        let p = panel(Matrix::zeros(12, 3));
        let mut b = bundle(Mode::Multivariate, &p, ModelKind::Lstm, 1);
        b.models[0].net = b.models[0].net.zeros_like();
        let rows = predict(&b, &p, 2).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.predicted == 0.0));
        assert_eq!(rows[0].week.to_string(), "2022-13");
        assert!(!rows[0].extrapolated && rows[1].extrapolated);
    }

    #[test]
    fn constant_series_with_fixed_point_net_continues() {
        // A constant scales to zero and a zero net maps zeros to zero, so the
        // fit is exact and feeding predictions back stays on the constant.
        let p = panel(Matrix::filled(12, 1, 7.0));
        let mut b = bundle(Mode::Univariate, &p, ModelKind::Rnn, 1);
        b.models[0].net = b.models[0].net.zeros_like();
        let rows = predict(&b, &p, 5).unwrap();
        for r in rows {
            assert!((r.predicted - 7.0).abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn mismatches_are_consistency_errors() {
        let p = panel(Matrix::from_fn(12, 2, |r, _| r as f64));
        let b = bundle(Mode::Multivariate, &p, ModelKind::Lstm, 1);
        let other = panel(Matrix::from_fn(12, 3, |r, _| r as f64));
        assert!(matches!(predict(&b, &other, 1), Err(Error::Consistency(_))));
        let mut broken = b.clone();
        broken.models.push(broken.models[0].clone());
        assert!(matches!(broken.validate(), Err(Error::Consistency(_))));
        let mut bytes = Vec::new();
        encode_bundle(&mut bytes, &b).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_bundle(&mut bytes.as_slice()), Err(Error::Format(_))));
        assert!(decode_bundle(&mut &bytes[..20]).is_err());
    }
}
