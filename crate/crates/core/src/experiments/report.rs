//! Report files.
//!
//! A run directory holds:
//!
//! - `results_hidden.csv`, `results_layers.csv`: one row per trained cell.
//! - `min_mse_{stage}.csv`, `min_rmse_{stage}.csv`: per-variant minimum over
//!   the stage's candidates, one column per model kind.
//! - `best_{stage}.csv`: the candidate(s) attaining each minimum.
//! - `tally_{stage}.csv`: minimum-loss frequency per candidate and kind.
//! - `traces/<variant>__<country>.csv`: held-out weeks of the headline
//!   configuration with columns `week,actual,predicted`.
//! - `curves.csv`: training loss per epoch of the headline configuration.
//! - `manifest.txt`: `key = value` lines with the configuration, the data
//!   checksum, the selections, the expected-direction checks and wall time.
//!   Written last, so its presence marks a completed run.
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::LossPair;
use crate::nn::ModelKind;

use super::sweep::{Comparison, ExperimentReport, StageResults};
use super::{CellResult, ExperimentConfig, Mode, Stage};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Refuses to reuse a directory that already holds a finished run.
pub fn ensure_fresh_output(dir: &Path, force: bool) -> Result<()> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() && !force {
        return Err(Error::param(format!(
            "{} already exists; pass --force to overwrite the previous run",
            manifest.display()
        )));
    }
    Ok(())
}

/// Keeps ASCII letters, digits, `.`, `-` and `_`; anything else becomes `_`.
pub fn sanitize_file_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("writing CSV: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("writing CSV: {e}")))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

const RESULT_COLUMNS: [&str; 13] = [
    "variant",
    "kind",
    "hidden",
    "layers",
    "seed",
    "mse",
    "rmse",
    "train_mse",
    "diverged",
    "input_dim",
    "output_dim",
    "models",
    "param_count",
];

fn results_csv(cells: &[CellResult]) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.variant.clone(),
                c.kind.to_string(),
                c.hidden.to_string(),
                c.layers.to_string(),
                c.seed.to_string(),
                fmt_f64(c.loss.mse),
                fmt_f64(c.loss.rmse),
                fmt_f64(c.train_mse),
                c.diverged.to_string(),
                c.input_dim.to_string(),
                c.output_dim.to_string(),
                c.models.to_string(),
                c.param_count.to_string(),
            ]
        })
        .collect();
    csv_bytes(&strings(&RESULT_COLUMNS), &rows)
}

fn parse_results(bytes: &[u8], mode: Mode, what: &Path) -> Result<Vec<CellResult>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", what.display())))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != RESULT_COLUMNS {
        return Err(Error::Format(format!("{}: unexpected columns", what.display())));
    }
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", what.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |col: &str| Error::Row {
            line,
            message: format!("{}: bad {col} value", what.display()),
        };
        let num = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(RESULT_COLUMNS[i]));
        let real = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(RESULT_COLUMNS[i]));
        cells.push(CellResult {
            variant: rec[0].to_string(),
            mode,
            kind: rec[1].parse::<ModelKind>().map_err(|_| bad("kind"))?,
            hidden: num(2)?,
            layers: num(3)?,
            seed: rec[4].parse().map_err(|_| bad("seed"))?,
            loss: LossPair {
                mse: real(5)?,
                rmse: real(6)?,
            },
            train_mse: real(7)?,
            train_loss_curve: Vec::new(),
            diverged: rec[8].parse().map_err(|_| bad("diverged"))?,
            input_dim: num(9)?,
            output_dim: num(10)?,
            models: num(11)?,
            param_count: num(12)?,
            traces: Vec::new(),
        });
    }
    Ok(cells)
}

fn stage_tables(stage: &StageResults, kinds: &[ModelKind]) -> Result<Vec<(String, Vec<u8>)>> {
    let name = stage.tally.stage.as_str();
    let mut header = vec!["Variant".to_string()];
    header.extend(kinds.iter().map(|k| k.to_string()));
    let variants = stage.variants();
    let lookup = |v: &str, k: ModelKind| stage.tally.minima.iter().find(|m| m.variant == v && m.kind == k);
    let table = |f: &dyn Fn(&str, ModelKind) -> String| -> Vec<Vec<String>> {
        variants
            .iter()
            .map(|v| {
                let mut row = vec![v.clone()];
                row.extend(kinds.iter().map(|&k| f(v, k)));
                row
            })
            .collect()
    };
    let opt = |x: Option<f64>| fmt_f64(x.unwrap_or(f64::NAN));
    let min_mse = table(&|v, k| opt(lookup(v, k).and_then(|m| m.mse)));
    let min_rmse = table(&|v, k| opt(lookup(v, k).and_then(|m| m.rmse)));
    let best = table(&|v, k| lookup(v, k).map(|m| join(&m.winners, ";")).unwrap_or_default());

    let mut tally_header = vec![name.to_string()];
    tally_header.extend(kinds.iter().map(|k| k.to_string()));
    tally_header.push("total".into());
    let t = &stage.tally;
    let tally_rows: Vec<Vec<String>> = t
        .candidates
        .iter()
        .enumerate()
        .map(|(j, cand)| {
            let mut row = vec![cand.to_string()];
            row.extend(t.counts.iter().map(|c| c[j].to_string()));
            row.push(t.pooled[j].to_string());
            row
        })
        .collect();

    Ok(vec![
        (format!("results_{name}.csv"), results_csv(&stage.cells)?),
        (format!("min_mse_{name}.csv"), csv_bytes(&header, &min_mse)?),
        (format!("min_rmse_{name}.csv"), csv_bytes(&header, &min_rmse)?),
        (format!("best_{name}.csv"), csv_bytes(&header, &best)?),
        (format!("tally_{name}.csv"), csv_bytes(&tally_header, &tally_rows)?),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Flag,
    Fail,
    NotApplicable,
}

impl CheckStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Flag => "flag",
            CheckStatus::Fail => "fail",
            CheckStatus::NotApplicable => "n/a",
        }
    }
}

/// An expected-direction check on a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

impl ExperimentReport {
    /// Compares the run against the expected qualitative outcome: hidden
    /// size 25 wins the tally, the layer stage lands on 3 (univariate) or 4
    /// (multivariate), and the headline kind is LSTM (univariate) or one of
    /// LSTM/BiLSTM (multivariate).
    ///
    /// `pass` means the outcome matches, `flag` that it matches for some kind
    /// but not overall, `fail` that it does not match at all.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let t = &self.hidden_stage.tally;
        let status = match t.pooled_count(25) {
            None => CheckStatus::NotApplicable,
            Some(_) if self.selected_hidden == 25 => CheckStatus::Pass,
            Some(_) if self.config.ordered_kinds().iter().any(|k| t.selected_for(*k) == Some(25)) => {
                CheckStatus::Flag
            }
            Some(_) => CheckStatus::Fail,
        };
        out.push(Check {
            name: "hidden_25_top_tally",
            status,
            detail: format!("pooled tally {}", join(&t.pooled, ",")),
        });

        let target = match self.config.mode {
            Mode::Univariate => 3,
            Mode::Multivariate => 4,
        };
        let t = &self.layer_stage.tally;
        let status = if !t.candidates.contains(&target) {
            CheckStatus::NotApplicable
        } else if self.selected_layers == target {
            CheckStatus::Pass
        } else if self.config.ordered_kinds().iter().any(|k| t.selected_for(*k) == Some(target)) {
            CheckStatus::Flag
        } else {
            CheckStatus::Fail
        };
        out.push(Check {
            name: "selected_layers_target",
            status,
            detail: format!("target {target}, selected {}", self.selected_layers),
        });

        let targets: &[ModelKind] = match self.config.mode {
            Mode::Univariate => &[ModelKind::Lstm],
            Mode::Multivariate => &[ModelKind::BiLstm, ModelKind::Lstm],
        };
        let status = if !targets.iter().any(|k| self.config.kinds.contains(k)) || self.config.kinds.len() < 2 {
            CheckStatus::NotApplicable
        } else if targets.contains(&self.headline_kind) {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        out.push(Check {
            name: "headline_kind_target",
            status,
            detail: format!("target {}, headline {}", join(targets, " or "), self.headline_kind),
        });
        out
    }
}

/// Facts about the run that do not come from the report itself.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunInfo {
    pub data: String,
    pub data_sha256: String,
    pub countries: usize,
    pub weeks: String,
    pub jobs: usize,
    pub wall_seconds: f64,
}

fn config_lines(cfg: &ExperimentConfig, m: &mut String) {
    let _ = writeln!(m, "mode = {}", cfg.mode);
    let _ = writeln!(m, "kinds = {}", join(&cfg.ordered_kinds(), ","));
    let _ = writeln!(m, "hidden_sizes = {}", join(&cfg.hidden_sizes, ","));
    let _ = writeln!(m, "layer_sizes = {}", join(&cfg.layer_sizes, ","));
    let _ = writeln!(m, "epochs = {}", cfg.epochs);
    let _ = writeln!(m, "window = {}", cfg.window);
    let _ = writeln!(m, "learning_rate = {}", cfg.learning_rate);
    let train = cfg.train_weeks.map_or("auto".to_string(), |t| t.to_string());
    let _ = writeln!(m, "train_weeks = {train}");
    let _ = writeln!(m, "test_weeks = {}", cfg.test_weeks);
    let _ = writeln!(m, "seed = {}", cfg.seed);
}

fn manifest_text(report: &ExperimentReport, info: &RunInfo) -> String {
    let mut m = String::from("# varcast run manifest\nformat = 1\n");
    config_lines(&report.config, &mut m);
    let _ = writeln!(m, "seed_rule = derive_seed(seed, [mode, variant, kind, hidden, layers]), then [country] per univariate model");
    let _ = writeln!(m, "data = {}", info.data);
    let _ = writeln!(m, "data_sha256 = {}", info.data_sha256);
    let _ = writeln!(m, "variants = {}", report.variants.len());
    let _ = writeln!(m, "countries = {}", info.countries);
    let _ = writeln!(m, "weeks = {}", info.weeks);
    let _ = writeln!(m, "cells = {}", report.all_cells().count());
    let _ = writeln!(m, "selected_hidden = {}", report.selected_hidden);
    for k in report.config.ordered_kinds() {
        if let Some(h) = report.hidden_stage.tally.selected_for(k) {
            let _ = writeln!(m, "selected_hidden.{k} = {h}");
        }
    }
    let _ = writeln!(m, "selected_layers = {}", report.selected_layers);
    for k in report.config.ordered_kinds() {
        if let Some(l) = report.layer_stage.tally.selected_for(k) {
            let _ = writeln!(m, "selected_layers.{k} = {l}");
        }
    }
    let _ = writeln!(m, "headline_kind = {}", report.headline_kind);
    for (k, n) in &report.kind_wins {
        let _ = writeln!(m, "kind_wins.{k} = {n}");
    }
    let _ = writeln!(
        m,
        "headline = {} hidden={} layers={}",
        report.headline_kind, report.selected_hidden, report.selected_layers
    );
    let diverged = report.diverged();
    let _ = writeln!(m, "diverged_cells = {}", diverged.len());
    for c in diverged {
        let _ = writeln!(m, "diverged = {}", c.label());
    }
    for c in report.checks() {
        let _ = writeln!(m, "check.{} = {} ({})", c.name, c.status.as_str(), c.detail);
    }
    let _ = writeln!(m, "jobs = {}", info.jobs);
    let _ = writeln!(m, "wall_seconds = {:.3}", info.wall_seconds);
    m
}

fn trace_files<'a>(cells: impl Iterator<Item = &'a CellResult>) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    let mut curve_rows = Vec::new();
    for cell in cells {
        for (e, v) in cell.train_loss_curve.iter().enumerate() {
            curve_rows.push(vec![cell.variant.clone(), (e + 1).to_string(), fmt_f64(*v)]);
        }
        for t in &cell.traces {
            let rows: Vec<Vec<String>> = t
                .weeks
                .iter()
                .zip(t.actual.iter().zip(&t.predicted))
                .map(|(w, (a, p))| vec![w.to_string(), fmt_f64(*a), fmt_f64(*p)])
                .collect();
            let name = format!(
                "traces/{}__{}.csv",
                sanitize_file_name(&cell.variant),
                sanitize_file_name(&t.country)
            );
            files.push((name, csv_bytes(&strings(&["week", "actual", "predicted"]), &rows)?));
        }
    }
    files.push((
        "curves.csv".into(),
        csv_bytes(&strings(&["variant", "epoch", "train_mse"]), &curve_rows)?,
    ));
    Ok(files)
}

fn write_files(dir: &Path, files: Vec<(String, Vec<u8>)>, manifest: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(files.len() + 1);
    for (name, bytes) in files {
        let path = dir.join(name);
        atomic_write(&path, &bytes)?;
        written.push(path);
    }
    let path = dir.join(MANIFEST_FILE);
    atomic_write(&path, manifest.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Writes `results.csv`, traces, `curves.csv` and a manifest for a single
/// trained cell.
pub fn write_cell_report(dir: &Path, cfg: &ExperimentConfig, cell: &CellResult, info: &RunInfo) -> Result<Vec<PathBuf>> {
    let mut files = vec![("results.csv".to_string(), results_csv(std::slice::from_ref(cell))?)];
    files.extend(trace_files(std::iter::once(cell))?);
    let mut m = String::from("# varcast single-cell manifest\nformat = 1\n");
    config_lines(cfg, &mut m);
    let _ = writeln!(m, "variant = {}", cell.variant);
    let _ = writeln!(m, "kind = {}", cell.kind);
    let _ = writeln!(m, "hidden = {}", cell.hidden);
    let _ = writeln!(m, "layers = {}", cell.layers);
    let _ = writeln!(m, "cell_seed = {}", cell.seed);
    let _ = writeln!(m, "data = {}", info.data);
    let _ = writeln!(m, "data_sha256 = {}", info.data_sha256);
    let _ = writeln!(m, "countries = {}", info.countries);
    let _ = writeln!(m, "weeks = {}", info.weeks);
    let _ = writeln!(m, "mse = {}", fmt_f64(cell.loss.mse));
    let _ = writeln!(m, "rmse = {}", fmt_f64(cell.loss.rmse));
    let _ = writeln!(m, "diverged = {}", cell.diverged);
    let _ = writeln!(m, "jobs = {}", info.jobs);
    let _ = writeln!(m, "wall_seconds = {:.3}", info.wall_seconds);
    write_files(dir, files, &m)
}

/// Writes every report file under `dir`, then the manifest. Returns the
/// paths written.
pub fn write_report(dir: &Path, report: &ExperimentReport, info: &RunInfo) -> Result<Vec<PathBuf>> {
    let kinds = report.config.ordered_kinds();
    let mut files = stage_tables(&report.hidden_stage, &kinds)?;
    files.extend(stage_tables(&report.layer_stage, &kinds)?);

    files.extend(trace_files(report.headline_cells())?);
    write_files(dir, files, &manifest_text(report, info))
}

/// Reads `key = value` lines; later keys win, `#` starts a comment line.
pub fn parse_manifest(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn config_from_manifest(m: &BTreeMap<String, String>, path: &Path) -> Result<ExperimentConfig> {
    let get = |k: &str| {
        m.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("{}: missing key `{k}`", path.display())))
    };
    let bad = |k: &str| Error::Format(format!("{}: bad value for `{k}`", path.display()));
    let list = |k: &str| -> Result<Vec<usize>> {
        get(k)?.split(',').map(|s| s.trim().parse().map_err(|_| bad(k))).collect()
    };
    let cfg = ExperimentConfig {
        mode: get("mode")?.parse().map_err(|_| bad("mode"))?,
        kinds: get("kinds")?
            .split(',')
            .map(|s| s.trim().parse::<ModelKind>().map_err(|_| bad("kinds")))
            .collect::<Result<_>>()?,
        hidden_sizes: list("hidden_sizes")?,
        layer_sizes: list("layer_sizes")?,
        epochs: get("epochs")?.parse().map_err(|_| bad("epochs"))?,
        window: get("window")?.parse().map_err(|_| bad("window"))?,
        learning_rate: get("learning_rate")?.parse().map_err(|_| bad("learning_rate"))?,
        train_weeks: match get("train_weeks")? {
            "auto" => None,
            s => Some(s.parse().map_err(|_| bad("train_weeks"))?),
        },
        test_weeks: get("test_weeks")?.parse().map_err(|_| bad("test_weeks"))?,
        seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reloads a finished run from its manifest and result tables. Traces and
/// loss curves are not restored.
pub fn read_report(dir: &Path) -> Result<ExperimentReport> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let cfg = config_from_manifest(&parse_manifest(&text), &mpath)?;
    let kinds = cfg.ordered_kinds();
    let load = |stage: Stage, candidates: &[usize]| -> Result<StageResults> {
        let path = dir.join(format!("results_{}.csv", stage.as_str()));
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let cells = parse_results(&bytes, cfg.mode, &path)?;
        Ok(StageResults::from_cells(cells, stage, candidates, &kinds))
    };
    let hidden = load(Stage::Hidden, &cfg.hidden_sizes)?;
    let layers = load(Stage::Layers, &cfg.layer_sizes)?;
    ExperimentReport::from_stages(cfg, hidden, layers)
}

/// Writes `comparison.csv` and a manifest describing it. The manifest
/// carries the `multivariate_majority` check: `pass` when multivariate wins
/// more than half the variants, `flag` when it wins more than univariate
/// without a majority, `fail` otherwise.
pub fn write_comparison(dir: &Path, cmp: &Comparison, sources: (&str, &str)) -> Result<Vec<PathBuf>> {
    let header = strings(&["Variant", "MSE Univariate", "MSE Multivariate", "Winner"]);
    let rows: Vec<Vec<String>> = cmp
        .rows
        .iter()
        .map(|r| {
            vec![
                r.variant.clone(),
                fmt_f64(r.univariate_mse),
                fmt_f64(r.multivariate_mse),
                r.winner.as_str().to_string(),
            ]
        })
        .collect();
    let table = dir.join(COMPARISON_FILE);
    atomic_write(&table, &csv_bytes(&header, &rows)?)?;

    let n = cmp.rows.len();
    let status = if 2 * cmp.multivariate_wins > n {
        CheckStatus::Pass
    } else if cmp.multivariate_wins > cmp.univariate_wins {
        CheckStatus::Flag
    } else {
        CheckStatus::Fail
    };
    let mut m = String::from("# varcast comparison manifest\nformat = 1\n");
    let _ = writeln!(m, "univariate_run = {}", sources.0);
    let _ = writeln!(m, "multivariate_run = {}", sources.1);
    let _ = writeln!(m, "kind = {}", cmp.kind.map_or("all".to_string(), |k| k.to_string()));
    let _ = writeln!(m, "variants = {n}");
    let _ = writeln!(m, "univariate_wins = {}", cmp.univariate_wins);
    let _ = writeln!(m, "multivariate_wins = {}", cmp.multivariate_wins);
    let _ = writeln!(m, "ties = {}", cmp.ties);
    let _ = writeln!(
        m,
        "check.multivariate_majority = {} ({} of {n})",
        status.as_str(),
        cmp.multivariate_wins
    );
    let manifest = dir.join(MANIFEST_FILE);
    atomic_write(&manifest, m.as_bytes())?;
    Ok(vec![table, manifest])
}
