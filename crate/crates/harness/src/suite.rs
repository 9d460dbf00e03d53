//! Ablation suites: a grid of training runs over rows (configuration
//! overrides) and seeds, summarised into one results table.
//!
//! A suite file carries a complete base run configuration plus rows whose
//! `overrides` tables are deep-merged into it, so every row shares batch
//! size, step budget and dataset.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::run::{train, Limits, MetricsRecord};

pub const TABLE_SCHEMA_VERSION: u32 = 1;

/// Suites shipped with the crate, by name.
pub const BUILTIN: [(&str, &str); 5] = [
    ("loops-vs-vanilla", include_str!("../suites/loops-vs-vanilla.toml")),
    ("truncation-sweep", include_str!("../suites/truncation-sweep.toml")),
    ("conv-position", include_str!("../suites/conv-position.toml")),
    ("nonlinearity", include_str!("../suites/nonlinearity.toml")),
    ("optimizer", include_str!("../suites/optimizer.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteRow {
    pub label: String,
    #[serde(default)]
    pub overrides: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub schema_version: u32,
    pub name: String,
    pub seeds: Vec<u64>,
    /// Wall-clock budget for the whole grid; 0 means unlimited.
    #[serde(default)]
    pub budget_seconds: u64,
    /// Loss level for the steps-to-threshold column.
    #[serde(default)]
    pub threshold_loss: Option<f64>,
    /// Trailing window the threshold is checked against.
    #[serde(default = "default_window")]
    pub threshold_window: usize,
    pub base: toml::Table,
    pub rows: Vec<SuiteRow>,
}

fn default_window() -> usize {
    25
}

fn merge(into: &mut toml::Table, from: &toml::Table) {
    for (k, v) in from {
        match (into.get_mut(k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

impl SuiteFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let suite: SuiteFile = toml::from_str(text).map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
        // Resolve every cell up front so a bad row fails before any training.
        let mut problems = Vec::new();
        if suite.seeds.is_empty() || suite.rows.is_empty() {
            problems.push("a suite needs at least one seed and one row".to_string());
        }
        for row in &suite.rows {
            if let Err(e) = suite.config(row, suite.seeds.first().copied().unwrap_or(0)) {
                problems.push(format!("row `{}`: {e}", row.label));
            }
        }
        if problems.is_empty() {
            Ok(suite)
        } else {
            Err(HarnessError::Config(problems))
        }
    }

    pub fn builtin(name: &str) -> Option<Result<Self>> {
        BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, text)| Self::from_toml(text))
    }

    /// The run configuration of one cell.
    pub fn config(&self, row: &SuiteRow, seed: u64) -> Result<RunConfig> {
        let mut table = self.base.clone();
        merge(&mut table, &row.overrides);
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Completed,
    /// Stopped at the suite budget; metrics are from the last evaluation.
    Partial,
    /// Never started because the budget was already spent.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub status: CellStatus,
    pub steps: u64,
    pub pass_at: Vec<f64>,
    pub cell_accuracy: f64,
    /// Loss of the last step taken; absent when no step ran.
    pub final_loss: Option<f64>,
    pub steps_to_threshold: Option<u64>,
}

impl CellResult {
    pub fn pass1(&self) -> f64 {
        self.pass_at.first().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub label: String,
    pub layers: usize,
    pub inner_loops: usize,
    pub forward_only_loops: usize,
    pub params: usize,
    /// Layer applications per forward pass at the halting cap.
    pub layer_applications: usize,
    /// Forward multiply-adds per maximal-length sequence, summed over all
    /// layer applications.
    pub forward_flops: u64,
    pub cells: Vec<CellResult>,
}

impl RowResult {
    fn completed(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.status == CellStatus::Completed)
    }

    fn mean(&self, f: impl Fn(&CellResult) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.completed().map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean exact-match accuracy over completed seeds.
    pub fn mean_pass1(&self) -> Option<f64> {
        self.mean(CellResult::pass1)
    }

    pub fn mean_cell_accuracy(&self) -> Option<f64> {
        self.mean(|c| c.cell_accuracy)
    }

    pub fn mean_final_loss(&self) -> Option<f64> {
        self.mean(|c| c.final_loss.unwrap_or(f64::NAN))
    }

    /// Mean steps to the loss threshold; cells that never reached it count
    /// as their full step budget.
    pub fn mean_steps_to_threshold(&self) -> Option<f64> {
        self.mean(|c| c.steps_to_threshold.unwrap_or(c.steps) as f64)
    }

    pub fn all_reached_threshold(&self) -> bool {
        self.completed().count() > 0 && self.completed().all(|c| c.steps_to_threshold.is_some())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub schema_version: u32,
    pub suite: String,
    pub seeds: Vec<u64>,
    pub threshold_loss: Option<f64>,
    /// False if any cell is partial or skipped.
    pub complete: bool,
    pub rows: Vec<RowResult>,
}

impl ResultsTable {
    pub fn row(&self, label: &str) -> Option<&RowResult> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text rendering: one line per row with seed means.
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut out = format!(
            "{}\n{:<24} {:>9} {:>6} {:>9} {:>9} {:>9} {:>9}\n",
            self.suite, "row", "params", "apps", "pass@1", "cell acc", "loss", "to-thresh"
        );
        for r in &self.rows {
            out += &format!(
                "{:<24} {:>9} {:>6} {:>9} {:>9} {:>9} {:>9}\n",
                r.label,
                r.params,
                r.layer_applications,
                fmt(r.mean_pass1()),
                fmt(r.mean_cell_accuracy()),
                fmt(r.mean_final_loss()),
                r.mean_steps_to_threshold().map_or("-".into(), |x| format!("{x:.0}")),
            );
        }
        if !self.complete {
            out += "(partial: budget exceeded)\n";
        }
        out
    }
}

/// First step at which the trailing `window`-step mean loss is at or below
/// `threshold`.
pub fn steps_to_threshold(history: &[MetricsRecord], threshold: f64, window: usize) -> Option<u64> {
    let window = window.max(1);
    if history.len() < window {
        return None;
    }
    let mut sum: f64 = history[..window].iter().map(|r| r.loss).sum();
    for end in window..=history.len() {
        if end > window {
            sum += history[end - 1].loss - history[end - 1 - window].loss;
        }
        if sum / window as f64 <= threshold {
            return Some(history[end - 1].step);
        }
    }
    None
}

/// Finished cells keyed by their exact configuration, so suites that share
/// a cell (the default looped model appears in several) train it once.
#[derive(Default)]
pub struct RunCache {
    cells: HashMap<String, CellResult>,
}

impl RunCache {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// Runs every cell of `suite`. With `out`, each cell gets a run directory
/// and the table is written to `results.json`. `progress` sees each cell as
/// it finishes.
pub fn run_suite(
    suite: &SuiteFile,
    out: Option<&Path>,
    cache: &mut RunCache,
    mut progress: impl FnMut(&str, &CellResult),
) -> Result<ResultsTable> {
    let deadline = (suite.budget_seconds > 0).then(|| Instant::now() + Duration::from_secs(suite.budget_seconds));
    let mut rows = Vec::with_capacity(suite.rows.len());
    for row in &suite.rows {
        let first = suite.config(row, suite.seeds[0])?;
        let model = first.effective_model(first.data.spec.train + first.data.spec.eval);
        let t = first.data.spec.max_len();
        let mut result = RowResult {
            label: row.label.clone(),
            layers: model.layers,
            inner_loops: model.inner_loops,
            forward_only_loops: model.forward_only_loops,
            params: urm_core::Urm::<f32>::new(model.clone(), 0)?.param_count(),
            layer_applications: model.layer_applications(),
            forward_flops: (model.layer_flops_per_token(t) * t * model.layer_applications()) as u64,
            cells: Vec::with_capacity(suite.seeds.len()),
        };
        for &seed in &suite.seeds {
            let cfg = suite.config(row, seed)?;
            let key = cfg.to_toml()? + &format!("threshold={:?}/{}", suite.threshold_loss, suite.threshold_window);
            let cell = if let Some(c) = cache.cells.get(&key) {
                c.clone()
            } else if deadline.is_some_and(|d| Instant::now() >= d) {
                CellResult {
                    seed,
                    status: CellStatus::Skipped,
                    steps: 0,
                    pass_at: Vec::new(),
                    cell_accuracy: 0.0,
                    final_loss: None,
                    steps_to_threshold: None,
                }
            } else {
                let dir = out.map(|o| o.join(slug(&row.label)).join(format!("seed-{seed}")));
                let outcome = train(
                    &cfg,
                    dir.as_deref(),
                    false,
                    Limits {
                        deadline,
                        stop_after: None,
                    },
                )?;
                let s = outcome.summary;
                let cell = CellResult {
                    seed,
                    status: if s.completed { CellStatus::Completed } else { CellStatus::Partial },
                    steps: s.steps,
                    pass_at: s.eval.pass_at,
                    cell_accuracy: s.eval.cell_accuracy,
                    final_loss: s.final_loss,
                    steps_to_threshold: suite
                        .threshold_loss
                        .and_then(|th| steps_to_threshold(&outcome.history, th, suite.threshold_window)),
                };
                if cell.status == CellStatus::Completed {
                    cache.cells.insert(key, cell.clone());
                }
                cell
            };
            progress(&row.label, &cell);
            result.cells.push(cell);
        }
        rows.push(result);
    }
    let table = ResultsTable {
        schema_version: TABLE_SCHEMA_VERSION,
        suite: suite.name.clone(),
        seeds: suite.seeds.clone(),
        threshold_loss: suite.threshold_loss,
        complete: rows.iter().all(|r| r.cells.iter().all(|c| c.status == CellStatus::Completed)),
        rows,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.json"), table.to_json()?)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64, loss: f64) -> MetricsRecord {
        MetricsRecord {
            step,
            loss,
            loss_terms: vec![loss],
            lr: 0.0,
            mean_act_steps: 1.0,
            eval: None,
        }
    }

    #[test]
    fn threshold_uses_trailing_mean() {
        let h: Vec<_> = [5.0, 4.0, 3.0, 1.0, 1.0].iter().enumerate().map(|(i, &l)| record(i as u64 + 1, l)).collect();
        assert_eq!(steps_to_threshold(&h, 3.0, 1), Some(3));
        // Means of two: 4.5, 3.5, 2.0.
        assert_eq!(steps_to_threshold(&h, 2.0, 2), Some(4));
        assert_eq!(steps_to_threshold(&h, 0.5, 2), None);
    }

    #[test]
    fn builtin_suites_parse() {
        for (name, _) in BUILTIN {
            let suite = SuiteFile::builtin(name).unwrap().unwrap();
            assert_eq!(suite.name, name);
            assert_eq!(suite.seeds.len(), 3);
        }
    }

    #[test]
    fn overrides_merge_deeply() {
        let suite = SuiteFile::builtin("truncation-sweep").unwrap().unwrap();
        let row = &suite.rows[0];
        let cfg = suite.config(row, 9).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.forward_only_loops, 0);
        assert_eq!(cfg.model.layers, 2);
    }

    #[test]
    fn bad_rows_fail_before_training() {
        let text = SuiteFile::builtin("optimizer").map(|_| BUILTIN[4].1).unwrap();
        let bad = format!("{text}\n[[rows]]\nlabel = \"bad\"\n[rows.overrides]\nmodel = {{ layerz = 3 }}\n");
        assert!(matches!(SuiteFile::from_toml(&bad), Err(HarnessError::Config(_))));
    }
}
