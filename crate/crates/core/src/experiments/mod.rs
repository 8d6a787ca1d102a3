//! The two-stage sweep: hidden sizes at one layer, then layer counts at the
//! selected hidden size, in univariate or multivariate mode.

mod bundle;
mod report;
mod sweep;
mod train;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::YearWeek;
use crate::metrics::LossPair;
use crate::nn::ModelKind;

pub use bundle::{predict, read_bundle, write_bundle, FittedModel, ModelBundle, PredictionRow};
pub use report::{
    atomic_write, ensure_fresh_output, parse_manifest, read_report, sanitize_file_name, write_cell_report, write_comparison, write_report, Check,
    CheckStatus, RunInfo, MANIFEST_FILE,
};
pub use sweep::{
    cell_seed, compare_modes, run_hidden_sweep, run_layer_sweep, run_sweep, select_candidate, tally_stage,
    Comparison, ComparisonRow, ExperimentReport, StageResults, Tally, VariantMinimum, Winner,
};
pub use train::{fit, split_counts, train_cell, train_cell_with_models, FitOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// One model per (variant, country), scalar input and output.
    Univariate,
    /// One model per variant over every country jointly.
    Multivariate,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Univariate => "univariate",
            Mode::Multivariate => "multivariate",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uni" | "univariate" => Ok(Mode::Univariate),
            "multi" | "multivariate" => Ok(Mode::Multivariate),
            other => Err(Error::param(format!("unknown mode `{other}` (expected uni or multi)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Hidden,
    Layers,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Hidden => "hidden",
            Stage::Layers => "layers",
        }
    }

    /// The swept value of a cell in this stage.
    pub fn candidate_of(self, cell: &CellResult) -> usize {
        match self {
            Stage::Hidden => cell.hidden,
            Stage::Layers => cell.layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub kinds: Vec<ModelKind>,
    pub hidden_sizes: Vec<usize>,
    pub layer_sizes: Vec<usize>,
    pub epochs: usize,
    pub window: usize,
    pub learning_rate: f64,
    /// Defaults to every week not held out for testing.
    pub train_weeks: Option<usize>,
    pub test_weeks: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Univariate,
            kinds: ModelKind::ALL.to_vec(),
            hidden_sizes: vec![25, 50, 75, 100],
            layer_sizes: vec![2, 3, 4, 5],
            epochs: 1000,
            window: 10,
            learning_rate: 0.01,
            train_weeks: None,
            test_weeks: 26,
            seed: 42,
        }
    }
}

fn check_increasing(name: &str, values: &[usize]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(format!("{name} must not be empty")));
    }
    if values[0] == 0 {
        return Err(Error::param(format!("{name} entries must be at least 1")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param(format!("{name} must be strictly increasing, got {values:?}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::param("at least one model kind is required"));
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(k) {
                return Err(Error::param(format!("model kind {k} listed twice")));
            }
        }
        check_increasing("hidden_sizes", &self.hidden_sizes)?;
        check_increasing("layer_sizes", &self.layer_sizes)?;
        if self.window == 0 {
            return Err(Error::param("window must be at least 1"));
        }
        if self.test_weeks == 0 {
            return Err(Error::param("test_weeks must be at least 1"));
        }
        if self.train_weeks == Some(0) {
            return Err(Error::param("train_weeks must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Kinds in table column order.
    pub fn ordered_kinds(&self) -> Vec<ModelKind> {
        ModelKind::ALL.into_iter().filter(|k| self.kinds.contains(k)).collect()
    }
}

/// Held-out actual and predicted values of one country, original scale.
#[derive(Clone, Debug, PartialEq)]
pub struct CountryTrace {
    pub country: String,
    pub weeks: Vec<YearWeek>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

/// Outcome of training and scoring one configuration on one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub variant: String,
    pub mode: Mode,
    pub kind: ModelKind,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
    /// Test loss on the original scale, pooled over every test cell.
    pub loss: LossPair,
    /// Training MSE in scaled space after the last epoch.
    pub train_mse: f64,
    /// Training MSE per epoch, measured before each update. Averaged over
    /// countries in univariate mode.
    pub train_loss_curve: Vec<f64>,
    pub diverged: bool,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Number of networks trained for the cell.
    pub models: usize,
    /// Parameters per network.
    pub param_count: usize,
    pub traces: Vec<CountryTrace>,
}

impl CellResult {
    pub fn sort_key(&self) -> (String, usize, usize, usize) {
        let kind_rank = ModelKind::ALL.iter().position(|k| *k == self.kind).unwrap_or(usize::MAX);
        (self.variant.clone(), kind_rank, self.hidden, self.layers)
    }

    pub fn label(&self) -> String {
        format!(
            "{} {} {} hidden={} layers={}",
            self.mode, self.variant, self.kind, self.hidden, self.layers
        )
    }
}
