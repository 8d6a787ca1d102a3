//! `varcast`: ingest checks, sweeps, single-cell training, mode comparison and
//! prediction over weekly variant case counts.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use varcast_core::error::ErrorCategory;
use varcast_core::experiments::{
    cell_seed, compare_modes, ensure_fresh_output, predict, read_bundle, read_report, train_cell_with_models,
    write_bundle, write_cell_report, write_comparison, write_report, run_sweep, atomic_write, ModelBundle, RunInfo,
};
use varcast_core::ingest::{file_sha256, read_records, summarize, Source, VariantPanel};
use varcast_core::nn::ModelKind;
use varcast_core::Error;

use config::{Resolved, TrainingArgs};

const CHECKPOINT_FILE: &str = "model.vcb";

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  I/O or numeric failure
  2  invalid configuration or flags
  3  malformed or unusable input data
  4  inconsistent inputs (dimension or variant mismatch)

Training options are resolved as built-in defaults, then the --config file,
then command-line flags.";

#[derive(Parser, Debug)]
#[command(name = "varcast", version, about = "Recurrent-network forecasts of weekly cases per virus variant", after_help = EXIT_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a data file and print what it contains
    #[command(after_help = EXIT_HELP)]
    IngestCheck(IngestArgs),
    /// Train and score one configuration on one variant
    #[command(after_help = EXIT_HELP)]
    TrainOne(TrainOneArgs),
    /// Run the hidden-size stage, then the layer stage
    #[command(after_help = EXIT_HELP)]
    Sweep(SweepArgs),
    /// Compare a univariate and a multivariate sweep per variant
    #[command(after_help = EXIT_HELP)]
    Compare(CompareArgs),
    /// Forecast past the end of the data with a saved checkpoint
    #[command(after_help = EXIT_HELP)]
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Case-count CSV, optionally gzip-compressed (.gz)
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output directory, created if absent
    #[arg(long)]
    out: PathBuf,

    /// Overwrite a directory that already holds a finished run
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Case-count CSV, optionally gzip-compressed (.gz)
    #[arg(long)]
    data: PathBuf,

    #[command(flatten)]
    output: OutputArgs,

    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args, Debug)]
struct TrainOneArgs {
    /// Case-count CSV, optionally gzip-compressed (.gz)
    #[arg(long)]
    data: PathBuf,

    #[command(flatten)]
    output: OutputArgs,

    /// Variant to train on
    #[arg(long)]
    variant: String,

    /// Model kind: rnn, lstm or bilstm
    #[arg(long, default_value = "lstm")]
    kind: String,

    /// Hidden units per layer
    #[arg(long, default_value_t = 25)]
    hidden: usize,

    /// Stacked recurrent layers
    #[arg(long, default_value_t = 1)]
    layers: usize,

    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Directory of a finished univariate sweep
    #[arg(long)]
    uni: PathBuf,

    /// Directory of a finished multivariate sweep
    #[arg(long)]
    multi: PathBuf,

    /// Restrict minima to one kind [default: LSTM when both sweeps have it,
    /// otherwise every kind]
    #[arg(long)]
    kind: Option<String>,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint written by train-one
    #[arg(long)]
    checkpoint: PathBuf,

    /// Case-count CSV, optionally gzip-compressed (.gz)
    #[arg(long)]
    data: PathBuf,

    /// Weeks to forecast; steps after the first feed predictions back in
    #[arg(long, default_value_t = 1)]
    weeks_ahead: usize,

    /// Prediction CSV to write [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Io | ErrorCategory::Numeric => 1,
        ErrorCategory::Config => 2,
        ErrorCategory::DataFormat => 3,
        ErrorCategory::Consistency => 4,
    }
}

fn load_panels(path: &Path) -> Result<BTreeMap<String, VariantPanel>, Error> {
    let records = read_records(path)?;
    let (_, panels) = summarize(&records, Source::Gisaid)?;
    Ok(panels)
}

fn init_pool(jobs: usize) -> Result<usize, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::param(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(rayon::current_num_threads())
}

fn run_info(data: &Path, panels: &BTreeMap<String, VariantPanel>, jobs: usize, started: Instant) -> Result<RunInfo, Error> {
    let any = panels.values().next().ok_or_else(|| Error::Data("no variants".into()))?;
    Ok(RunInfo {
        data: data.display().to_string(),
        data_sha256: file_sha256(data)?,
        countries: any.countries.len(),
        weeks: format!("{}..{} ({})", any.weeks[0], any.weeks[any.weeks.len() - 1], any.weeks.len()),
        jobs,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn cmd_ingest_check(args: &IngestArgs) -> Result<(), Error> {
    let records = read_records(&args.data)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", args.data.display())));
    }
    let (s, _) = summarize(&records, Source::Gisaid)?;
    let mut out = String::new();
    let _ = writeln!(out, "file: {}", args.data.display());
    let _ = writeln!(out, "sha256: {}", file_sha256(&args.data)?);
    let _ = writeln!(out, "rows: {} ({} from {})", s.records_total, s.records_kept, s.source);
    let _ = writeln!(
        out,
        "{} variants, {} countries, weeks {}..{} ({} weeks)",
        s.variant_totals.len(),
        s.countries.len(),
        s.first_week,
        s.last_week,
        s.week_count
    );
    for (v, total) in &s.variant_totals {
        let _ = writeln!(out, "  {v}\t{total}");
    }
    if !s.dropped_variants.is_empty() {
        let _ = writeln!(
            out,
            "dropped (no {} rows): {}",
            s.source,
            s.dropped_variants.join(", ")
        );
    }
    print!("{out}");
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let Resolved { config: cfg, jobs } = args.training.resolve()?;
    ensure_fresh_output(&args.output.out, args.output.force)?;
    let jobs = init_pool(jobs)?;
    let started = Instant::now();
    let panels = load_panels(&args.data)?;
    let report = run_sweep(&cfg, &panels)?;
    let info = run_info(&args.data, &panels, jobs, started)?;
    let written = write_report(&args.output.out, &report, &info)?;

    println!(
        "{} sweep over {} variants: selected {} hidden={} layers={}",
        cfg.mode,
        report.variants.len(),
        report.headline_kind,
        report.selected_hidden,
        report.selected_layers
    );
    let diverged = report.diverged();
    if !diverged.is_empty() {
        println!("{} diverged cells excluded from the tallies:", diverged.len());
        for c in diverged {
            println!("  {}", c.label());
        }
    }
    for c in report.checks() {
        println!("check {}: {} ({})", c.name, c.status.as_str(), c.detail);
    }
    println!("wrote {} files to {}", written.len(), args.output.out.display());
    Ok(())
}

fn cmd_train_one(args: &TrainOneArgs) -> Result<(), Error> {
    let Resolved { config: cfg, jobs } = args.training.resolve()?;
    let kind: ModelKind = args.kind.parse()?;
    if args.hidden == 0 || args.layers == 0 {
        return Err(Error::param("hidden and layers must be at least 1"));
    }
    ensure_fresh_output(&args.output.out, args.output.force)?;
    let jobs = init_pool(jobs)?;
    let started = Instant::now();
    let panels = load_panels(&args.data)?;
    let panel = panels
        .get(&args.variant)
        .ok_or_else(|| Error::Data(format!("variant `{}` not found in {}", args.variant, args.data.display())))?;
    let seed = cell_seed(cfg.seed, cfg.mode, &args.variant, kind, args.hidden, args.layers);
    let (cell, models) = train_cell_with_models(&cfg, panel, kind, args.hidden, args.layers, seed)?;
    let bundle = ModelBundle {
        mode: cfg.mode,
        variant: args.variant.clone(),
        window: cfg.window,
        countries: panel.countries.clone(),
        models,
    };
    std::fs::create_dir_all(&args.output.out).map_err(|e| Error::io(&args.output.out, e))?;
    write_bundle(&args.output.out.join(CHECKPOINT_FILE), &bundle)?;
    let info = run_info(&args.data, &panels, jobs, started)?;
    write_cell_report(&args.output.out, &cfg, &cell, &info)?;

    println!(
        "{}: test MSE {} RMSE {}{}",
        cell.label(),
        cell.loss.mse,
        cell.loss.rmse,
        if cell.diverged { " (diverged)" } else { "" }
    );
    println!("checkpoint: {}", args.output.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Error> {
    let kind = args.kind.as_deref().map(str::parse::<ModelKind>).transpose()?;
    ensure_fresh_output(&args.output.out, args.output.force)?;
    let uni = read_report(&args.uni)?;
    let multi = read_report(&args.multi)?;
    let cmp = compare_modes(&uni, &multi, kind)?;
    let sources = (args.uni.display().to_string(), args.multi.display().to_string());
    write_comparison(&args.output.out, &cmp, (&sources.0, &sources.1))?;

    let over = cmp.kind.map_or_else(|| "every kind".to_string(), |k| k.to_string());
    println!("minimum test MSE per variant over {over}:");
    for r in &cmp.rows {
        println!(
            "  {}\tuni {}\tmulti {}\t{}",
            r.variant,
            r.univariate_mse,
            r.multivariate_mse,
            r.winner.as_str()
        );
    }
    println!(
        "multivariate wins {}, univariate wins {}, ties {}",
        cmp.multivariate_wins, cmp.univariate_wins, cmp.ties
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), Error> {
    let bundle = read_bundle(&args.checkpoint)?;
    let panels = load_panels(&args.data)?;
    let panel = panels.get(&bundle.variant).ok_or_else(|| {
        Error::Consistency(format!(
            "checkpoint is for variant `{}`, which is not in {}",
            bundle.variant,
            args.data.display()
        ))
    })?;
    let rows = predict(&bundle, panel, args.weeks_ahead)?;
    let mut csv = String::from("variant,country,year_week,step,predicted,extrapolated\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            bundle.variant, r.country, r.week, r.step, r.predicted, r.extrapolated
        );
    }
    match &args.out {
        Some(path) => atomic_write(path, csv.as_bytes())?,
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::IngestCheck(a) => cmd_ingest_check(a),
        Command::TrainOne(a) => cmd_train_one(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Predict(a) => cmd_predict(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let _ = write!(msg, ": {s}");
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
