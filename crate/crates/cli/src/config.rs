//! Training options: built-in defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use varcast_core::experiments::{ExperimentConfig, Mode};
use varcast_core::nn::ModelKind;
use varcast_core::Error;

/// Keys accepted in the `--config` file. All are optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub kinds: Option<Vec<String>>,
    pub hidden_sizes: Option<Vec<usize>>,
    pub layer_sizes: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub window: Option<usize>,
    pub learning_rate: Option<f64>,
    pub train_weeks: Option<usize>,
    pub test_weeks: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::param(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    /// TOML file with any of: mode, kinds, hidden_sizes, layer_sizes, epochs,
    /// window, learning_rate, train_weeks, test_weeks, seed, jobs. Flags given
    /// on the command line override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Univariate (one model per country) or multivariate (one model per
    /// variant) [default: uni]
    #[arg(long, value_name = "uni|multi")]
    pub mode: Option<String>,

    /// Comma-separated model kinds [default: LSTM,BiLSTM,RNN]
    #[arg(long, value_name = "LIST")]
    pub kinds: Option<String>,

    /// Hidden sizes for the first stage [default: 25,50,75,100]
    #[arg(long, value_name = "LIST")]
    pub hidden_sizes: Option<String>,

    /// Layer counts for the second stage [default: 2,3,4,5]
    #[arg(long, value_name = "LIST")]
    pub layer_sizes: Option<String>,

    /// Full-batch Adam steps per model [default: 1000]
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Input sequence length in weeks [default: 10]
    #[arg(long)]
    pub window: Option<usize>,

    /// Adam step size [default: 0.01]
    #[arg(long = "lr", value_name = "RATE")]
    pub learning_rate: Option<f64>,

    /// Training weeks [default: all weeks not held out]
    #[arg(long)]
    pub train_weeks: Option<usize>,

    /// Held-out weeks at the end of the series [default: 26]
    #[arg(long)]
    pub test_weeks: Option<usize>,

    /// Master seed; every cell derives its own seed from it [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads for training cells [default: available processors]
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| Error::param(format!("bad {what} entry `{p}`"))))
        .collect()
}

fn parse_kinds(items: &[String]) -> Result<Vec<ModelKind>, Error> {
    items.iter().map(|k| k.parse::<ModelKind>()).collect()
}

/// Resolved training options.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    /// 0 means one thread per available processor.
    pub jobs: usize,
}

impl TrainingArgs {
    pub fn resolve(&self) -> Result<Resolved, Error> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mut cfg = ExperimentConfig::default();
        let mut jobs = 0;

        if let Some(m) = &file.mode {
            cfg.mode = m.parse::<Mode>()?;
        }
        if let Some(k) = &file.kinds {
            cfg.kinds = parse_kinds(k)?;
        }
        if let Some(v) = &file.hidden_sizes {
            cfg.hidden_sizes = v.clone();
        }
        if let Some(v) = &file.layer_sizes {
            cfg.layer_sizes = v.clone();
        }
        cfg.epochs = file.epochs.unwrap_or(cfg.epochs);
        cfg.window = file.window.unwrap_or(cfg.window);
        cfg.learning_rate = file.learning_rate.unwrap_or(cfg.learning_rate);
        cfg.train_weeks = file.train_weeks.or(cfg.train_weeks);
        cfg.test_weeks = file.test_weeks.unwrap_or(cfg.test_weeks);
        cfg.seed = file.seed.unwrap_or(cfg.seed);
        jobs = file.jobs.unwrap_or(jobs);

        if let Some(m) = &self.mode {
            cfg.mode = m.parse::<Mode>()?;
        }
        if let Some(k) = &self.kinds {
            cfg.kinds = parse_list::<ModelKind>("kind", k)?;
        }
        if let Some(v) = &self.hidden_sizes {
            cfg.hidden_sizes = parse_list("hidden size", v)?;
        }
        if let Some(v) = &self.layer_sizes {
            cfg.layer_sizes = parse_list("layer size", v)?;
        }
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.window = self.window.unwrap_or(cfg.window);
        cfg.learning_rate = self.learning_rate.unwrap_or(cfg.learning_rate);
        cfg.train_weeks = self.train_weeks.or(cfg.train_weeks);
        cfg.test_weeks = self.test_weeks.unwrap_or(cfg.test_weeks);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        jobs = self.jobs.unwrap_or(jobs);

        cfg.validate()?;
        Ok(Resolved { config: cfg, jobs })
    }
}
