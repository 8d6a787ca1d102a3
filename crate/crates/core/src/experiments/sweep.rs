use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::VariantPanel;
use crate::ndcore::derive_seed;
use crate::nn::ModelKind;

use super::train::train_cell;
use super::{CellResult, ExperimentConfig, Mode, Stage};

/// Seed of one cell: `derive_seed(master, [mode, variant, kind, hidden, layers])`.
/// Univariate cells further derive one seed per country from it.
pub fn cell_seed(master: u64, mode: Mode, variant: &str, kind: ModelKind, hidden: usize, layers: usize) -> u64 {
    derive_seed(
        master,
        &[mode.as_str(), variant, kind.as_str(), &hidden.to_string(), &layers.to_string()],
    )
}

/// Which candidates reached a variant's minimum loss for one kind.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantMinimum {
    pub variant: String,
    pub kind: ModelKind,
    /// `None` when every cell diverged.
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    pub winners: Vec<usize>,
}

/// Minimum-loss frequency per candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Tally {
    pub stage: Stage,
    pub candidates: Vec<usize>,
    pub kinds: Vec<ModelKind>,
    /// `counts[k][j]`: variants whose minimum for `kinds[k]` sits at `candidates[j]`.
    pub counts: Vec<Vec<usize>>,
    /// Column sums of `counts`.
    pub pooled: Vec<usize>,
    pub minima: Vec<VariantMinimum>,
}

/// Candidate with the largest count; ties go to the smaller candidate.
pub fn select_candidate(candidates: &[usize], counts: &[usize]) -> usize {
    let mut best = 0;
    for j in 1..candidates.len() {
        if counts[j] > counts[best] || (counts[j] == counts[best] && candidates[j] < candidates[best]) {
            best = j;
        }
    }
    candidates[best]
}

impl Tally {
    pub fn selected(&self) -> usize {
        select_candidate(&self.candidates, &self.pooled)
    }

    pub fn selected_for(&self, kind: ModelKind) -> Option<usize> {
        let k = self.kinds.iter().position(|x| *x == kind)?;
        Some(select_candidate(&self.candidates, &self.counts[k]))
    }

    pub fn pooled_count(&self, candidate: usize) -> Option<usize> {
        let j = self.candidates.iter().position(|c| *c == candidate)?;
        Some(self.pooled[j])
    }
}

/// Tallies, per kind, which candidate attains each variant's minimum test
/// MSE. Every candidate tied at the minimum is credited; diverged cells are
/// skipped.
pub fn tally_stage(cells: &[CellResult], stage: Stage, candidates: &[usize], kinds: &[ModelKind]) -> Tally {
    let mut by_group: BTreeMap<(String, usize), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        if let Some(k) = kinds.iter().position(|x| *x == c.kind) {
            by_group.entry((c.variant.clone(), k)).or_default().push(c);
        }
    }
    let mut counts = vec![vec![0usize; candidates.len()]; kinds.len()];
    let mut minima = Vec::new();
    for ((variant, k), group) in by_group {
        let live: Vec<&&CellResult> = group.iter().filter(|c| !c.diverged).collect();
        let best = live.iter().map(|c| c.loss.mse).fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        });
        let mut winners = Vec::new();
        let mut rmse = None;
        if let Some(best) = best {
            for c in live.iter().filter(|c| c.loss.mse == best) {
                let cand = stage.candidate_of(c);
                if let Some(j) = candidates.iter().position(|x| *x == cand) {
                    if !winners.contains(&cand) {
                        counts[k][j] += 1;
                        winners.push(cand);
                    }
                }
                rmse = Some(c.loss.rmse);
            }
            winners.sort_unstable();
        }
        minima.push(VariantMinimum {
            variant,
            kind: kinds[k],
            mse: best,
            rmse,
            winners,
        });
    }
    let pooled = (0..candidates.len()).map(|j| counts.iter().map(|row| row[j]).sum()).collect();
    Tally {
        stage,
        candidates: candidates.to_vec(),
        kinds: kinds.to_vec(),
        counts,
        pooled,
        minima,
    }
}

/// Cells of one stage in canonical order, with their tally.
#[derive(Clone, Debug, PartialEq)]
pub struct StageResults {
    pub cells: Vec<CellResult>,
    pub tally: Tally,
}

impl StageResults {
    pub fn from_cells(mut cells: Vec<CellResult>, stage: Stage, candidates: &[usize], kinds: &[ModelKind]) -> Self {
        cells.sort_by_key(CellResult::sort_key);
        let tally = tally_stage(&cells, stage, candidates, kinds);
        StageResults { cells, tally }
    }

    pub fn selected(&self) -> usize {
        self.tally.selected()
    }

    pub fn diverged(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.diverged)
    }

    pub fn variants(&self) -> Vec<String> {
        let mut v: Vec<String> = self.cells.iter().map(|c| c.variant.clone()).collect();
        v.dedup();
        v
    }
}

fn run_cells(
    cfg: &ExperimentConfig,
    panels: &BTreeMap<String, VariantPanel>,
    grid: &[(ModelKind, usize, usize)],
) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    if panels.is_empty() {
        return Err(Error::Data("no variant panels to sweep".into()));
    }
    let jobs: Vec<(&VariantPanel, ModelKind, usize, usize)> = panels
        .values()
        .flat_map(|p| grid.iter().map(move |&(k, h, l)| (p, k, h, l)))
        .collect();
    jobs.par_iter()
        .map(|&(panel, kind, hidden, layers)| {
            let seed = cell_seed(cfg.seed, cfg.mode, &panel.variant, kind, hidden, layers);
            train_cell(cfg, panel, kind, hidden, layers, seed)
        })
        .collect()
}

/// Stage one: every kind and hidden size at a single layer.
pub fn run_hidden_sweep(cfg: &ExperimentConfig, panels: &BTreeMap<String, VariantPanel>) -> Result<StageResults> {
    let kinds = cfg.ordered_kinds();
    let grid: Vec<_> = kinds
        .iter()
        .flat_map(|&k| cfg.hidden_sizes.iter().map(move |&h| (k, h, 1)))
        .collect();
    let cells = run_cells(cfg, panels, &grid)?;
    Ok(StageResults::from_cells(cells, Stage::Hidden, &cfg.hidden_sizes, &kinds))
}

/// Stage two: every kind and layer count at a fixed hidden size.
pub fn run_layer_sweep(
    cfg: &ExperimentConfig,
    panels: &BTreeMap<String, VariantPanel>,
    hidden: usize,
) -> Result<StageResults> {
    if hidden == 0 {
        return Err(Error::param("hidden size must be at least 1"));
    }
    let kinds = cfg.ordered_kinds();
    let grid: Vec<_> = kinds
        .iter()
        .flat_map(|&k| cfg.layer_sizes.iter().map(move |&l| (k, hidden, l)))
        .collect();
    let cells = run_cells(cfg, panels, &grid)?;
    Ok(StageResults::from_cells(cells, Stage::Layers, &cfg.layer_sizes, &kinds))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub variants: Vec<String>,
    pub hidden_stage: StageResults,
    pub layer_stage: StageResults,
    pub selected_hidden: usize,
    pub selected_layers: usize,
    /// Kind holding the most per-variant minima in the layer stage.
    pub headline_kind: ModelKind,
    /// Per-variant minima won by each kind in the layer stage.
    pub kind_wins: Vec<(ModelKind, usize)>,
}

impl ExperimentReport {
    /// Assembles a report from two finished stages.
    pub fn from_stages(config: ExperimentConfig, hidden_stage: StageResults, layer_stage: StageResults) -> Result<Self> {
        let variants = hidden_stage.variants();
        if layer_stage.variants() != variants {
            return Err(Error::Consistency(
                "hidden and layer stages cover different variants".into(),
            ));
        }
        let selected_hidden = hidden_stage.selected();
        let selected_layers = layer_stage.selected();
        if let Some(c) = layer_stage.cells.iter().find(|c| c.hidden != selected_hidden) {
            return Err(Error::Consistency(format!(
                "layer stage cell {} does not use the selected hidden size {selected_hidden}",
                c.label()
            )));
        }
        let kinds = config.ordered_kinds();
        let mut wins = vec![0usize; kinds.len()];
        for v in &variants {
            let live = layer_stage.cells.iter().filter(|c| &c.variant == v && !c.diverged);
            let best = live.clone().map(|c| c.loss.mse).fold(f64::INFINITY, f64::min);
            for (k, kind) in kinds.iter().enumerate() {
                if live.clone().any(|c| c.kind == *kind && c.loss.mse == best) {
                    wins[k] += 1;
                }
            }
        }
        let mut headline = 0;
        for k in 1..kinds.len() {
            if wins[k] > wins[headline] {
                headline = k;
            }
        }
        Ok(ExperimentReport {
            headline_kind: kinds[headline],
            kind_wins: kinds.iter().copied().zip(wins).collect(),
            config,
            variants,
            hidden_stage,
            layer_stage,
            selected_hidden,
            selected_layers,
        })
    }

    /// Layer-stage cells of the headline configuration, one per variant.
    pub fn headline_cells(&self) -> impl Iterator<Item = &CellResult> {
        self.layer_stage
            .cells
            .iter()
            .filter(move |c| c.kind == self.headline_kind && c.layers == self.selected_layers)
    }

    pub fn all_cells(&self) -> impl Iterator<Item = &CellResult> {
        self.hidden_stage.cells.iter().chain(&self.layer_stage.cells)
    }

    pub fn diverged(&self) -> Vec<&CellResult> {
        self.all_cells().filter(|c| c.diverged).collect()
    }
}

/// Runs both stages for `cfg.mode`.
pub fn run_sweep(cfg: &ExperimentConfig, panels: &BTreeMap<String, VariantPanel>) -> Result<ExperimentReport> {
    let hidden_stage = run_hidden_sweep(cfg, panels)?;
    let layer_stage = run_layer_sweep(cfg, panels, hidden_stage.selected())?;
    ExperimentReport::from_stages(cfg.clone(), hidden_stage, layer_stage)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Winner {
    Univariate,
    Multivariate,
    Tie,
}

impl Winner {
    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Univariate => "Univariate",
            Winner::Multivariate => "Multivariate",
            Winner::Tie => "Tie",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub variant: String,
    pub univariate_mse: f64,
    pub multivariate_mse: f64,
    pub winner: Winner,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// Kind the minima were taken over; `None` means every kind.
    pub kind: Option<ModelKind>,
    pub rows: Vec<ComparisonRow>,
    pub univariate_wins: usize,
    pub multivariate_wins: usize,
    pub ties: usize,
}

fn min_mse(report: &ExperimentReport, variant: &str, kind: Option<ModelKind>) -> f64 {
    report
        .all_cells()
        .filter(|c| c.variant == variant && !c.diverged && kind.is_none_or(|k| c.kind == k))
        .map(|c| c.loss.mse)
        .fold(f64::NAN, f64::min)
}

/// Per-variant minimum MSE of each mode over both stages.
///
/// `kind` restricts the minima to one model kind. When `None`, LSTM is used
/// if both reports trained it, otherwise every kind is considered.
pub fn compare_modes(
    univariate: &ExperimentReport,
    multivariate: &ExperimentReport,
    kind: Option<ModelKind>,
) -> Result<Comparison> {
    if univariate.variants != multivariate.variants {
        return Err(Error::Consistency(format!(
            "reports cover different variants ({} vs {})",
            univariate.variants.len(),
            multivariate.variants.len()
        )));
    }
    let kind = match kind {
        Some(k) => {
            for r in [univariate, multivariate] {
                if !r.config.kinds.contains(&k) {
                    return Err(Error::Consistency(format!("{} report has no {k} cells", r.config.mode)));
                }
            }
            Some(k)
        }
        None => [univariate, multivariate]
            .iter()
            .all(|r| r.config.kinds.contains(&ModelKind::Lstm))
            .then_some(ModelKind::Lstm),
    };
    let mut rows = Vec::with_capacity(univariate.variants.len());
    let (mut uw, mut mw, mut ties) = (0, 0, 0);
    for v in &univariate.variants {
        let u = min_mse(univariate, v, kind);
        let m = min_mse(multivariate, v, kind);
        let winner = match (u.is_nan(), m.is_nan()) {
            (false, true) => Winner::Univariate,
            (true, false) => Winner::Multivariate,
            (true, true) => Winner::Tie,
            _ if u < m => Winner::Univariate,
            _ if m < u => Winner::Multivariate,
            _ => Winner::Tie,
        };
        match winner {
            Winner::Univariate => uw += 1,
            Winner::Multivariate => mw += 1,
            Winner::Tie => ties += 1,
        }
        rows.push(ComparisonRow {
            variant: v.clone(),
            univariate_mse: u,
            multivariate_mse: m,
            winner,
        });
    }
    Ok(Comparison {
        kind,
        rows,
        univariate_wins: uw,
        multivariate_wins: mw,
        ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LossPair;

    fn cell(variant: &str, kind: ModelKind, hidden: usize, layers: usize, mse: f64) -> CellResult {
        CellResult {
            variant: variant.into(),
            mode: Mode::Multivariate,
            kind,
            hidden,
            layers,
            seed: 0,
            loss: if mse.is_nan() { LossPair::nan() } else { LossPair::from_mse(mse) },
            train_mse: 0.0,
            train_loss_curve: vec![],
            diverged: mse.is_nan(),
            input_dim: 1,
            output_dim: 1,
            models: 1,
            param_count: hidden * layers,
            traces: vec![],
        }
    }

    #[test]
    fn tie_breaks_toward_smaller_candidate() {
        assert_eq!(select_candidate(&[2, 3, 4], &[1, 5, 5]), 3);
        assert_eq!(select_candidate(&[25], &[0]), 25);
        assert_eq!(select_candidate(&[25, 50], &[0, 0]), 25);
    }

    #[test]
    fn tally_counts_minima_and_ties() {
        let k = ModelKind::Lstm;
        let cells = vec![
            cell("A", k, 25, 1, 1.0),
            cell("A", k, 50, 1, 2.0),
            cell("B", k, 25, 1, 3.0),
            cell("B", k, 50, 1, 3.0),
            cell("C", k, 25, 1, f64::NAN),
            cell("C", k, 50, 1, 0.5),
            cell("D", k, 25, 1, f64::NAN),
            cell("D", k, 50, 1, f64::NAN),
        ];
        let t = tally_stage(&cells, Stage::Hidden, &[25, 50], &[k]);
        assert_eq!(t.counts, vec![vec![2, 2]]);
        assert_eq!(t.selected(), 25);
        let d = t.minima.iter().find(|m| m.variant == "D").unwrap();
        assert!(d.mse.is_none() && d.winners.is_empty());
        let b = t.minima.iter().find(|m| m.variant == "B").unwrap();
        assert_eq!(b.winners, [25, 50]);
    }

    #[test]
    fn report_picks_headline_kind() {
        let hidden = StageResults::from_cells(
            vec![
                cell("A", ModelKind::Lstm, 25, 1, 1.0),
                cell("A", ModelKind::Rnn, 25, 1, 2.0),
                cell("B", ModelKind::Lstm, 25, 1, 1.0),
                cell("B", ModelKind::Rnn, 25, 1, 2.0),
            ],
            Stage::Hidden,
            &[25],
            &[ModelKind::Lstm, ModelKind::Rnn],
        );
        let layers = StageResults::from_cells(
            vec![
                cell("A", ModelKind::Lstm, 25, 2, 5.0),
                cell("A", ModelKind::Rnn, 25, 2, 1.0),
                cell("B", ModelKind::Lstm, 25, 2, 5.0),
                cell("B", ModelKind::Rnn, 25, 2, 1.0),
            ],
            Stage::Layers,
            &[2],
            &[ModelKind::Lstm, ModelKind::Rnn],
        );
        let cfg = ExperimentConfig {
            kinds: vec![ModelKind::Rnn, ModelKind::Lstm],
            hidden_sizes: vec![25],
            layer_sizes: vec![2],
            ..Default::default()
        };
        let r = ExperimentReport::from_stages(cfg, hidden, layers).unwrap();
        assert_eq!(r.headline_kind, ModelKind::Rnn);
        assert_eq!(r.headline_cells().count(), 2);
        assert_eq!((r.selected_hidden, r.selected_layers), (25, 2));
    }

    fn one_kind_report(mode: Mode, losses: &[(&str, f64)]) -> ExperimentReport {
        let cells: Vec<_> = losses.iter().map(|(v, m)| cell(v, ModelKind::Lstm, 25, 1, *m)).collect();
        let layer_cells: Vec<_> = losses.iter().map(|(v, m)| cell(v, ModelKind::Lstm, 25, 2, m * 2.0)).collect();
        let cfg = ExperimentConfig {
            mode,
            kinds: vec![ModelKind::Lstm],
            hidden_sizes: vec![25],
            layer_sizes: vec![2],
            ..Default::default()
        };
        ExperimentReport::from_stages(
            cfg,
            StageResults::from_cells(cells, Stage::Hidden, &[25], &[ModelKind::Lstm]),
            StageResults::from_cells(layer_cells, Stage::Layers, &[2], &[ModelKind::Lstm]),
        )
        .unwrap()
    }

    #[test]
    fn compare_flags_match_construction() {
        let uni = one_kind_report(Mode::Univariate, &[("A", 1.0), ("B", 5.0), ("C", 2.0)]);
        let multi = one_kind_report(Mode::Multivariate, &[("A", 2.0), ("B", 4.0), ("C", 2.0)]);
        let cmp = compare_modes(&uni, &multi, None).unwrap();
        assert_eq!(cmp.kind, Some(ModelKind::Lstm));
        let w: Vec<_> = cmp.rows.iter().map(|r| r.winner).collect();
        assert_eq!(w, [Winner::Univariate, Winner::Multivariate, Winner::Tie]);
        assert_eq!((cmp.univariate_wins, cmp.multivariate_wins, cmp.ties), (1, 1, 1));

        let same = compare_modes(&uni, &uni, None).unwrap();
        assert!(same.rows.iter().all(|r| r.winner == Winner::Tie));

        let other = one_kind_report(Mode::Multivariate, &[("A", 2.0)]);
        assert!(matches!(compare_modes(&uni, &other, None), Err(Error::Consistency(_))));
    }

    #[test]
    fn seeds_differ_per_cell() {
        let a = cell_seed(1, Mode::Univariate, "A", ModelKind::Lstm, 25, 1);
        assert_eq!(a, cell_seed(1, Mode::Univariate, "A", ModelKind::Lstm, 25, 1));
        assert_ne!(a, cell_seed(1, Mode::Multivariate, "A", ModelKind::Lstm, 25, 1));
        assert_ne!(a, cell_seed(1, Mode::Univariate, "A", ModelKind::Lstm, 25, 2));
        assert_ne!(a, cell_seed(2, Mode::Univariate, "A", ModelKind::Lstm, 25, 1));
    }
}
