use crate::error::{Error, Result};
use crate::ingest::VariantPanel;
use crate::metrics::LossPair;
use crate::ndcore::{derive_seed, Matrix, Rng};
use crate::nn::{backward_batch, forward_batch, init_net, predict_batch, ModelKind, StackedNet};
use crate::optim::{AdamConfig, AdamState};
use crate::prep::{fit_scaler, inverse_transform, make_windows, split_train_test, transform, WindowSet};

use super::bundle::FittedModel;
use super::{CellResult, CountryTrace, ExperimentConfig, Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    /// Loss before each update.
    pub curve: Vec<f64>,
    /// Loss after the last update.
    pub final_mse: f64,
    pub diverged: bool,
}

/// MSE over every entry and its gradient with respect to `pred`.
fn mse_with_grad(pred: &Matrix, target: &Matrix) -> (f64, Matrix) {
    let n = pred.as_slice().len() as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, y)| {
            let d = p - y;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    (
        sum / n,
        Matrix::from_vec(pred.rows(), pred.cols(), grad).expect("same shape as pred"),
    )
}

/// Full-batch training of `net` on `windows` for `epochs` Adam steps.
///
/// A non-finite loss or gradient stops training and marks the outcome
/// diverged instead of returning an error.
pub fn fit(net: &mut StackedNet, windows: &WindowSet, epochs: usize, adam: AdamConfig) -> Result<FitOutcome> {
    if windows.is_empty() {
        return Err(Error::param("no training windows"));
    }
    let xs = windows.batch_inputs();
    let mut state = AdamState::for_net(adam, net)?;
    let mut curve = Vec::with_capacity(epochs);
    let diverged = |curve| FitOutcome {
        curve,
        final_mse: f64::NAN,
        diverged: true,
    };
    for _ in 0..epochs {
        let (pred, tape) = forward_batch(net, &xs)?;
        let (loss, grad) = mse_with_grad(&pred, &windows.targets);
        curve.push(loss);
        if !loss.is_finite() {
            return Ok(diverged(curve));
        }
        let grads = backward_batch(net, &tape, &grad)?;
        match state.step(net, &grads) {
            Ok(()) => {}
            Err(Error::Divergence { .. }) => return Ok(diverged(curve)),
            Err(e) => return Err(e),
        }
    }
    let pred = predict_batch(net, &xs)?;
    let (final_mse, _) = mse_with_grad(&pred, &windows.targets);
    Ok(FitOutcome {
        curve,
        final_mse,
        diverged: !final_mse.is_finite(),
    })
}

/// Resolves `(train_weeks, test_weeks)` for a panel of `weeks` rows.
pub fn split_counts(cfg: &ExperimentConfig, weeks: usize) -> Result<(usize, usize)> {
    let test = cfg.test_weeks;
    let train = match cfg.train_weeks {
        Some(t) => t,
        None => weeks.checked_sub(test).ok_or_else(|| {
            Error::param(format!("panel of {weeks} weeks is shorter than the {test} test weeks"))
        })?,
    };
    if train + test != weeks {
        return Err(Error::param(format!(
            "train ({train}) + test ({test}) weeks must equal the {weeks} weeks available"
        )));
    }
    if train <= cfg.window {
        return Err(Error::param(format!(
            "panel of {weeks} weeks is too short: need at least window + test_weeks + 1 = {}",
            cfg.window + test + 1
        )));
    }
    Ok((train, test))
}

struct SeriesOutcome {
    model: FittedModel,
    fit: FitOutcome,
    /// `test x feature`, original scale.
    predicted: Matrix,
    actual: Matrix,
}

#[allow(clippy::too_many_arguments)]
fn fit_series(
    series: &Matrix,
    train: usize,
    test: usize,
    cfg: &ExperimentConfig,
    kind: ModelKind,
    hidden: usize,
    layers: usize,
    rng: &mut Rng,
) -> Result<SeriesOutcome> {
    let (train_rows, actual) = split_train_test(series, train, test)?;
    let scaler = fit_scaler(&train_rows)?;
    let windows = make_windows(&transform(&scaler, series)?, cfg.window)?;
    let train_set = windows.select(|o| o < train);
    let test_set = windows.select(|o| o >= train);
    let features = series.cols();
    let mut net = init_net(kind, features, features, hidden, layers, rng)?;
    let adam = AdamConfig {
        alpha: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let fit = fit(&mut net, &train_set, cfg.epochs, adam)?;
    let predicted = if fit.diverged {
        Matrix::filled(test, features, f64::NAN)
    } else {
        inverse_transform(&scaler, &predict_batch(&net, &test_set.batch_inputs())?)?
    };
    Ok(SeriesOutcome {
        model: FittedModel { scaler, net },
        fit,
        predicted,
        actual,
    })
}

/// Trains one configuration on one variant and scores it on the held-out
/// weeks.
pub fn train_cell(
    cfg: &ExperimentConfig,
    panel: &VariantPanel,
    kind: ModelKind,
    hidden: usize,
    layers: usize,
    seed: u64,
) -> Result<CellResult> {
    train_cell_with_models(cfg, panel, kind, hidden, layers, seed).map(|(cell, _)| cell)
}

/// As [`train_cell`], also returning the fitted networks (one per country in
/// univariate mode).
pub fn train_cell_with_models(
    cfg: &ExperimentConfig,
    panel: &VariantPanel,
    kind: ModelKind,
    hidden: usize,
    layers: usize,
    seed: u64,
) -> Result<(CellResult, Vec<FittedModel>)> {
    cfg.validate()?;
    let weeks = panel.weeks.len();
    let (train, test) = split_counts(cfg, weeks)?;
    if panel.values.shape() != (weeks, panel.countries.len()) {
        return Err(Error::Consistency(format!(
            "panel {} values are {} for {} weeks and {} countries",
            panel.variant,
            panel.values.shape_str(),
            weeks,
            panel.countries.len()
        )));
    }

    let mut outcomes = Vec::new();
    match cfg.mode {
        Mode::Multivariate => {
            let mut rng = Rng::new(seed);
            outcomes.push(fit_series(&panel.values, train, test, cfg, kind, hidden, layers, &mut rng)?);
        }
        Mode::Univariate => {
            for (c, country) in panel.countries.iter().enumerate() {
                let series = Matrix::from_fn(weeks, 1, |r, _| panel.values.get(r, c));
                let mut rng = Rng::new(derive_seed(seed, &[country]));
                outcomes.push(fit_series(&series, train, test, cfg, kind, hidden, layers, &mut rng)?);
            }
        }
    }

    let test_weeks = &panel.weeks[train..];
    let mut traces = Vec::with_capacity(panel.countries.len());
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for o in &outcomes {
        for c in 0..o.actual.cols() {
            let actual = o.actual.column(c);
            let predicted = o.predicted.column(c);
            for (a, p) in actual.iter().zip(&predicted) {
                sq_sum += (a - p) * (a - p);
                count += 1;
            }
            traces.push(CountryTrace {
                country: String::new(),
                weeks: test_weeks.to_vec(),
                actual,
                predicted,
            });
        }
    }
    for (t, country) in traces.iter_mut().zip(&panel.countries) {
        t.country = country.clone();
    }

    let diverged = outcomes.iter().any(|o| o.fit.diverged) || !sq_sum.is_finite();
    let loss = if diverged {
        LossPair::nan()
    } else {
        LossPair::from_mse(sq_sum / count as f64)
    };
    let epochs_run = outcomes.iter().map(|o| o.fit.curve.len()).min().unwrap_or(0);
    let n = outcomes.len() as f64;
    let train_loss_curve = (0..epochs_run)
        .map(|e| outcomes.iter().map(|o| o.fit.curve[e]).sum::<f64>() / n)
        .collect();
    let train_mse = outcomes.iter().map(|o| o.fit.final_mse).sum::<f64>() / n;
    let first = &outcomes[0].model.net;
    let cell = CellResult {
        variant: panel.variant.clone(),
        mode: cfg.mode,
        kind,
        hidden,
        layers,
        seed,
        loss,
        train_mse,
        train_loss_curve,
        diverged,
        input_dim: first.input_dim,
        output_dim: first.output_dim,
        models: outcomes.len(),
        param_count: first.param_count(),
        traces,
    };
    Ok((cell, outcomes.into_iter().map(|o| o.model).collect()))
}
