//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Set `VARCAST_UNI_EPOCHS` to change the epoch count of the reduced
//! univariate sweep used for the qualitative report (default 2).

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{grad_check, random_inputs, random_net};
use varcast_core::experiments::{
    compare_modes, fit, run_sweep, sanitize_file_name, train_cell, write_report, CellResult, CheckStatus,
    ExperimentConfig, ExperimentReport, Mode, RunInfo, Stage, StageResults, MANIFEST_FILE,
};
use varcast_core::ingest::{file_sha256, read_records, summarize, Source, VariantPanel, YearWeek};
use varcast_core::metrics::LossPair;
use varcast_core::ndcore::{Matrix, Rng};
use varcast_core::nn::{init_net, ModelKind};
use varcast_core::optim::{AdamConfig, AdamState};
use varcast_core::prep::{fit_scaler, inverse_transform, make_windows, transform};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn snapshot_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ecdc_variants_snapshot.csv.gz")
}

fn snapshot_panels() -> BTreeMap<String, VariantPanel> {
    let records = read_records(&snapshot_path()).expect("snapshot parses");
    summarize(&records, Source::Gisaid).expect("snapshot has GISAID rows").1
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut seed = 7000;
    let mut entries = 0;
    let mut worst: f64 = 0.0;
    for kind in ModelKind::ALL {
        for hidden in [2, 3] {
            for layers in [1, 2] {
                for seq_len in 1..=4 {
                    seed += 1;
                    let net = random_net(kind, 2, 2, hidden, layers, seed);
                    let xs = random_inputs(2, seq_len, 2, &mut Rng::new(seed ^ 0x5eed));
                    let out = grad_check(&net, &xs, 1e-5, 1e-4, 1e-7, seed);
                    ensure(out.failures.is_empty(), || {
                        format!("{kind} h={hidden} l={layers} T={seq_len}: {}", out.failures[0])
                    })?;
                    entries += out.entries;
                    worst = worst.max(out.worst_rel);
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{entries} entries, worst relative error {worst:.2e}, {secs:.2}s"))
}

fn adam_trace() -> Outcome {
    let cfg = AdamConfig::default();
    let mut st = AdamState::new(cfg, &[1]).map_err(|e| e.to_string())?;
    let names = vec!["theta".to_string()];
    let mut theta = [0.0];
    st.step_tensors(&names, &mut [&mut theta[..]], &[&[1.0][..]]).map_err(|e| e.to_string())?;
    let (m, v) = (st.first_moment()[0][0], st.second_moment()[0][0]);
    // m_hat = 1 and v_hat = 1, so the step is -alpha / sqrt(1 + eps).
    let expected = -0.01 / (1.0f64 + 1e-8).sqrt();
    ensure((m - 0.1).abs() < 1e-9, || format!("m = {m}"))?;
    ensure((v - 0.001).abs() < 1e-9, || format!("v = {v}"))?;
    ensure((theta[0] - expected).abs() < 1e-9, || format!("theta = {}", theta[0]))?;

    let mut worst: f64 = 0.0;
    for c in [1e-3f64, 1e-2, 0.5, 3.0, 1e4] {
        let mut st = AdamState::new(cfg, &[1]).map_err(|e| e.to_string())?;
        let mut theta = [0.0];
        let mut last = 0.0;
        for _ in 0..10_000 {
            let before = theta[0];
            st.step_tensors(&names, &mut [&mut theta[..]], &[&[c][..]]).map_err(|e| e.to_string())?;
            last = (theta[0] - before).abs();
        }
        // With eps under the root the limit is alpha |g| / sqrt(g^2 + eps),
        // which is alpha to within 1e-3 once g^2 >> eps.
        let limit = cfg.alpha * c.abs() / (c * c + cfg.epsilon).sqrt();
        ensure((last / limit - 1.0).abs() < 1e-3, || format!("gradient {c}: step {last}, limit {limit}"))?;
        if c * c >= 1e3 * cfg.epsilon {
            let rel = (last / cfg.alpha - 1.0).abs();
            worst = worst.max(rel);
            ensure(rel < 1e-3, || format!("gradient {c}: step {last} after 1e4 steps"))?;
        }
    }
    Ok(format!(
        "m=0.1 v=0.001 step={:.10}; constant-gradient step within {worst:.1e} of alpha",
        theta[0]
    ))
}

fn scaler() -> Outcome {
    let x = Matrix::from_vec(5, 1, vec![1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
    let s = fit_scaler(&x).map_err(|e| e.to_string())?;
    ensure(s.median[0] == 3.0 && s.q25[0] == 2.0 && s.q75[0] == 4.0 && s.iqr[0] == 2.0, || {
        format!("quartiles {:?}", s)
    })?;
    let t = transform(&s, &x).map_err(|e| e.to_string())?;
    ensure(t.as_slice() == [-1.0, -0.5, 0.0, 0.5, 48.5], || format!("transform {:?}", t.as_slice()))?;

    let mut rng = Rng::new(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = Matrix::from_fn(40, 4, |_, c| rng.uniform(-1e3, 1e3) * (c + 1) as f64);
        let s = fit_scaler(&m).map_err(|e| e.to_string())?;
        let back = inverse_transform(&s, &transform(&s, &m).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    ensure(worst <= 1e-12, || format!("round trip error {worst:e}"))?;

    let constant = Matrix::from_fn(6, 2, |r, c| if c == 0 { 5.0 } else { r as f64 });
    let s = fit_scaler(&constant).map_err(|e| e.to_string())?;
    let t = transform(&s, &Matrix::from_vec(1, 2, vec![8.0, 0.0]).unwrap()).map_err(|e| e.to_string())?;
    ensure(s.degenerate[0] && t.get(0, 0) == 3.0, || format!("degenerate feature gave {}", t.get(0, 0)))?;
    Ok(format!("quartiles 2/3/4, 100 -> 48.5, round trip error {worst:.1e}, constant feature centred"))
}

fn zero_variant() -> Outcome {
    let start = Instant::now();
    let mut weeks = vec![YearWeek::new(2020, 6).unwrap()];
    while weeks.len() < 149 {
        let next = weeks.last().unwrap().succ().unwrap();
        weeks.push(next);
    }
    let panel = VariantPanel {
        variant: "B.1.616".into(),
        countries: (0..30).map(|c| format!("country{c:02}")).collect(),
        weeks,
        values: Matrix::zeros(149, 30),
    };
    for mode in [Mode::Univariate, Mode::Multivariate] {
        let cfg = ExperimentConfig {
            mode,
            epochs: 100,
            ..Default::default()
        };
        for kind in ModelKind::ALL {
            let cell = train_cell(&cfg, &panel, kind, 25, 1, 11).map_err(|e| e.to_string())?;
            ensure(cell.loss == LossPair { mse: 0.0, rmse: 0.0 } && !cell.diverged, || {
                format!("{mode} {kind}: {:?}", cell.loss)
            })?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("MSE = RMSE = 0 for RNN, LSTM, BiLSTM in both modes, {secs:.1}s"))
}

fn overfit_oracle() -> Outcome {
    let series = Matrix::from_fn(60, 1, |t, _| t as f64 / 100.0);
    let scaler = fit_scaler(&series).map_err(|e| e.to_string())?;
    let windows = make_windows(&transform(&scaler, &series).map_err(|e| e.to_string())?, 10).map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    for kind in [ModelKind::Lstm, ModelKind::BiLstm] {
        let mut net = init_net(kind, 1, 1, 8, 1, &mut Rng::new(2024)).map_err(|e| e.to_string())?;
        let out = fit(&mut net, &windows, 2000, AdamConfig::default()).map_err(|e| e.to_string())?;
        ensure(!out.diverged, || format!("{kind} diverged"))?;
        finals.push(out.final_mse);
    }
    let (lstm, bilstm) = (finals[0], finals[1]);
    ensure(lstm < 1e-3, || format!("LSTM final training MSE {lstm:e}"))?;
    ensure(bilstm < 1e-3, || format!("BiLSTM final training MSE {bilstm:e} (LSTM {lstm:e})"))?;
    Ok(format!("final scaled training MSE: LSTM {lstm:.2e}, BiLSTM {bilstm:.2e}"))
}

fn read_dir_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn csv_rows(bytes: &[u8]) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

fn run_info(panels: &BTreeMap<String, VariantPanel>, secs: f64) -> RunInfo {
    let any = panels.values().next().unwrap();
    RunInfo {
        data: "ecdc_variants_snapshot.csv.gz".into(),
        data_sha256: file_sha256(&snapshot_path()).unwrap(),
        countries: any.countries.len(),
        weeks: format!("{}..{} ({})", any.weeks[0], any.weeks.last().unwrap(), any.weeks.len()),
        jobs: rayon::current_num_threads(),
        wall_seconds: secs,
    }
}

fn check_tables(files: &BTreeMap<String, Vec<u8>>, kinds: &[&str]) -> Result<(), String> {
    for stage in ["hidden", "layers"] {
        for table in ["min_mse", "min_rmse", "best"] {
            let name = format!("{table}_{stage}.csv");
            let rows = csv_rows(files.get(&name).ok_or(format!("missing {name}"))?);
            let mut header = vec!["Variant"];
            header.extend(kinds);
            ensure(rows[0] == header, || format!("{name} header {:?}", rows[0]))?;
            ensure(rows.len() == 22, || format!("{name} has {} variant rows", rows.len() - 1))?;
        }
    }
    let tally = csv_rows(&files["tally_hidden.csv"]);
    let cands: Vec<&str> = tally[1..].iter().map(|r| r[0].as_str()).collect();
    ensure(cands == ["25", "50", "75", "100"], || format!("hidden candidates {cands:?}"))?;
    let tally = csv_rows(&files["tally_layers.csv"]);
    let cands: Vec<&str> = tally[1..].iter().map(|r| r[0].as_str()).collect();
    ensure(cands == ["2", "3", "4", "5"], || format!("layer candidates {cands:?}"))?;
    let per_variant = 4 * kinds.len();
    for stage in ["hidden", "layers"] {
        let rows = csv_rows(&files[&format!("results_{stage}.csv")]);
        ensure(rows.len() - 1 == 21 * per_variant, || format!("results_{stage}.csv has {} cells", rows.len() - 1))?;
    }
    Ok(())
}

struct ProtocolRuns {
    desk: ExperimentReport,
    outcome: Outcome,
}

fn protocol_shape(panels: &BTreeMap<String, VariantPanel>) -> ProtocolRuns {
    let mut notes = Vec::new();
    let shape_cfg = ExperimentConfig {
        mode: Mode::Multivariate,
        epochs: 1,
        ..Default::default()
    };
    let mut dirs = Vec::new();
    let mut result: Result<(), String> = Ok(());
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let report = run_sweep(&shape_cfg, panels).expect("sweep runs");
        write_report(dir.path(), &report, &run_info(panels, start.elapsed().as_secs_f64())).unwrap();
        dirs.push(dir);
    }
    let a = read_dir_files(dirs[0].path());
    let b = read_dir_files(dirs[1].path());
    result = result.and_then(|_| check_tables(&a, &["LSTM", "BiLSTM", "RNN"]));
    let strip = |m: &[u8]| -> String {
        String::from_utf8_lossy(m)
            .lines()
            .filter(|l| !l.starts_with("wall_seconds"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    result = result.and_then(|_| {
        ensure(a.keys().eq(b.keys()), || "runs wrote different file sets".into())?;
        for (name, bytes) in &a {
            if name == MANIFEST_FILE {
                ensure(strip(bytes) == strip(&b[name]), || "manifests differ beyond wall time".into())?;
            } else {
                ensure(bytes == &b[name], || format!("{name} differs between runs"))?;
            }
        }
        Ok(())
    });
    let trace = format!("traces/{}__Austria.csv", sanitize_file_name("B.1.427/B.1.429"));
    result = result.and_then(|_| ensure(a.contains_key(&trace), || format!("missing {trace}")));
    notes.push(format!("3-kind grid: {} files byte-identical across two runs", a.len()));

    let desk_cfg = ExperimentConfig {
        mode: Mode::Multivariate,
        kinds: vec![ModelKind::Lstm],
        epochs: 100,
        ..Default::default()
    };
    let start = Instant::now();
    let desk = run_sweep(&desk_cfg, panels).expect("desk sweep runs");
    let elapsed = start.elapsed();
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &desk, &run_info(panels, elapsed.as_secs_f64())).unwrap();
    let files = read_dir_files(dir.path());
    result = result
        .and_then(|_| check_tables(&files, &["LSTM"]))
        .and_then(|_| {
            ensure(elapsed < Duration::from_secs(30 * 60), || format!("desk run took {:.0}s", elapsed.as_secs_f64()))
        });
    notes.push(format!("desk run (multivariate, LSTM, 100 epochs) {:.0}s", elapsed.as_secs_f64()));
    ProtocolRuns {
        desk,
        outcome: result.map(|_| format!("21 rows per table; {}", notes.join("; "))),
    }
}

fn qualitative(panels: &BTreeMap<String, VariantPanel>, multi: &ExperimentReport) -> String {
    let epochs = std::env::var("VARCAST_UNI_EPOCHS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let uni_cfg = ExperimentConfig {
        mode: Mode::Univariate,
        kinds: vec![ModelKind::Lstm],
        epochs,
        ..Default::default()
    };
    let uni = run_sweep(&uni_cfg, panels).expect("univariate sweep runs");
    let mut parts = Vec::new();
    for (label, r) in [("univariate", &uni), ("multivariate", multi)] {
        let checks: Vec<String> = r
            .checks()
            .iter()
            .filter(|c| c.status != CheckStatus::NotApplicable)
            .map(|c| format!("{}={}", c.name, c.status.as_str()))
            .collect();
        parts.push(format!(
            "{label} ({} epochs): hidden tally {:?}, selected hidden {} layers {}, {}",
            r.config.epochs,
            r.hidden_stage.tally.pooled,
            r.selected_hidden,
            r.selected_layers,
            checks.join(" ")
        ));
    }
    let cmp = compare_modes(&uni, multi, None).expect("same variants");
    let status = if 2 * cmp.multivariate_wins > cmp.rows.len() {
        "pass"
    } else if cmp.multivariate_wins > cmp.univariate_wins {
        "flag"
    } else {
        "fail"
    };
    parts.push(format!(
        "multivariate wins {}/{} variants, multivariate_majority={status}",
        cmp.multivariate_wins,
        cmp.rows.len()
    ));
    parts.join("; ")
}

fn synthetic_cell(variant: &str, kind: ModelKind, hidden: usize, layers: usize, mse: f64) -> CellResult {
    CellResult {
        variant: variant.into(),
        mode: Mode::Multivariate,
        kind,
        hidden,
        layers,
        seed: 0,
        loss: if mse.is_nan() { LossPair::nan() } else { LossPair::from_mse(mse) },
        train_mse: 0.0,
        train_loss_curve: Vec::new(),
        diverged: mse.is_nan(),
        input_dim: 30,
        output_dim: 30,
        models: 1,
        param_count: 0,
        traces: Vec::new(),
    }
}

/// Builds one stage where `planted` holds the minimum for a strict majority
/// of (variant, kind) groups; remaining groups get random minima, random
/// exact ties and some diverged cells.
fn planted_stage(rng: &mut Rng, stage: Stage, candidates: &[usize], planted: usize, fixed: usize) -> Vec<CellResult> {
    let kinds = ModelKind::ALL;
    let variants = 21;
    let groups = variants * kinds.len();
    let mut order: Vec<usize> = (0..groups).collect();
    for i in (1..groups).rev() {
        order.swap(i, rng.below(i as u64 + 1) as usize);
    }
    let planted_groups = groups / 2 + 1 + rng.below((groups / 2 - 1) as u64) as usize;
    let mut is_planted = vec![false; groups];
    for &g in &order[..planted_groups] {
        is_planted[g] = true;
    }
    let mut cells = Vec::new();
    for v in 0..variants {
        let name = format!("V{v:02}");
        for (k, &kind) in kinds.iter().enumerate() {
            let g = v * kinds.len() + k;
            let winner = if is_planted[g] {
                planted
            } else {
                let others: Vec<usize> = candidates.iter().copied().filter(|c| *c != planted).collect();
                others[rng.below(others.len() as u64) as usize]
            };
            let best = rng.uniform(0.1, 10.0) * 10f64.powi(rng.below(6) as i32);
            for &c in candidates {
                let mse = if c == winner || (!is_planted[g] && rng.below(5) == 0) {
                    best
                } else if rng.below(8) == 0 {
                    f64::NAN
                } else {
                    best * rng.uniform(1.0001, 5.0)
                };
                let (hidden, layers) = match stage {
                    Stage::Hidden => (c, fixed),
                    Stage::Layers => (fixed, c),
                };
                cells.push(synthetic_cell(&name, kind, hidden, layers, mse));
            }
        }
    }
    cells
}

/// Independent recount: for each (variant, kind), credit every candidate at
/// the minimum over finite losses; pick the largest count, smallest on ties.
fn brute_force_selection(cells: &[CellResult], stage: Stage, candidates: &[usize]) -> usize {
    let mut counts = vec![0usize; candidates.len()];
    let mut keys: Vec<(String, String)> = cells.iter().map(|c| (c.variant.clone(), c.kind.to_string())).collect();
    keys.sort();
    keys.dedup();
    for (v, k) in keys {
        let group: Vec<&CellResult> = cells
            .iter()
            .filter(|c| c.variant == v && c.kind.to_string() == k && c.loss.mse.is_finite())
            .collect();
        let mut best = f64::INFINITY;
        for c in &group {
            if c.loss.mse < best {
                best = c.loss.mse;
            }
        }
        for (j, cand) in candidates.iter().enumerate() {
            if group.iter().any(|c| c.loss.mse == best && stage.candidate_of(c) == *cand) {
                counts[j] += 1;
            }
        }
    }
    let mut pick = 0;
    for j in 0..candidates.len() {
        if counts[j] > counts[pick] {
            pick = j;
        }
    }
    candidates[pick]
}

fn selection_logic() -> Outcome {
    let hidden_sizes = [25, 50, 75, 100];
    let layer_sizes = [2, 3, 4, 5];
    let kinds = ModelKind::ALL.to_vec();
    let mut rng = Rng::new(0x5e1ec7);
    let mut hits = 0;
    for trial in 0..100 {
        let h = hidden_sizes[rng.below(4) as usize];
        let l = layer_sizes[rng.below(4) as usize];
        let hidden_cells = planted_stage(&mut rng, Stage::Hidden, &hidden_sizes, h, 1);
        let layer_cells = planted_stage(&mut rng, Stage::Layers, &layer_sizes, l, h);
        let brute = (
            brute_force_selection(&hidden_cells, Stage::Hidden, &hidden_sizes),
            brute_force_selection(&layer_cells, Stage::Layers, &layer_sizes),
        );
        let cfg = ExperimentConfig::default();
        let report = ExperimentReport::from_stages(
            cfg,
            StageResults::from_cells(hidden_cells, Stage::Hidden, &hidden_sizes, &kinds),
            StageResults::from_cells(layer_cells, Stage::Layers, &layer_sizes, &kinds),
        )
        .map_err(|e| e.to_string())?;
        let got = (report.selected_hidden, report.selected_layers);
        ensure(got == brute, || format!("trial {trial}: selector {got:?}, recount {brute:?}"))?;
        if got == (h, l) {
            hits += 1;
        }
    }
    ensure(hits == 100, || format!("planted configuration recovered in {hits}/100"))?;
    Ok("planted (hidden, layers) recovered in 100/100 randomized tables, matching a brute-force recount".into())
}

fn report(n: usize, name: &str, outcome: &Outcome, failures: &mut usize) {
    match outcome {
        Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
        Err(why) => {
            *failures += 1;
            println!("criterion {n} FAIL  {name}: {why}");
        }
    }
}

fn main() {
    // `cargo test -- --list` and filtered runs should not trigger the full suite.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failures = 0;
    println!("running acceptance criteria");
    report(1, "gradient correctness", &gradient_correctness(), &mut failures);
    report(2, "Adam unit trace", &adam_trace(), &mut failures);
    report(3, "robust scaler", &scaler(), &mut failures);
    report(4, "zero-variant panel", &zero_variant(), &mut failures);
    report(5, "overfit oracle", &overfit_oracle(), &mut failures);
    let panels = snapshot_panels();
    let runs = protocol_shape(&panels);
    report(6, "protocol shape and determinism", &runs.outcome, &mut failures);
    println!(
        "criterion 7 REPORTED  qualitative targets: {}",
        qualitative(&panels, &runs.desk)
    );
    report(8, "selection logic", &selection_logic(), &mut failures);
    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
