//! Trial histories on disk and the cross-strategy comparison metrics.
//!
//! An exported run directory holds `trials.csv`, `summary.json`,
//! `visits.csv`, `visits_before_best.csv` and, for RL runs,
//! `rl_heatmap_ep{k}.tsv`. Floats in CSV/TSV files are written with 17
//! significant digits so that re-parsing reproduces them bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datasets::VisitCounter;
use crate::dpsgd::surrogate::Heatmap;
use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::objective::{baseline_reward, TrialCost, TrialRecord, TrialStatus};
use crate::optimizers::{select_best, SearchResult};
use crate::search_space::{HyperParams, SearchSpace};

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VISITS_FILE: &str = "visits.csv";
pub const VISITS_BEFORE_BEST_FILE: &str = "visits_before_best.csv";

pub const TRIALS_HEADER: [&str; 13] = [
    "trial_index",
    "strategy",
    "seed",
    "sigma",
    "eta",
    "val_loss",
    "val_accuracy",
    "epsilon",
    "reward",
    "status",
    "steps",
    "sample_visits",
    "wall_seconds",
];

pub fn heatmap_file(episode: usize) -> String {
    format!("rl_heatmap_ep{episode}.tsv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    pub run_id: String,
    pub strategy: String,
    pub seed: u64,
    pub config: Value,
    /// Accountant settings and the privacy spend of the best trial.
    pub audit: Value,
    pub records: Vec<TrialRecord>,
    /// Dataset identifier of each counter slot.
    pub sample_ids: Vec<u64>,
    /// Per-trial increments; `None` once loaded from disk or for trials that
    /// touched no data.
    pub trial_visits: Vec<Option<VisitCounter>>,
    pub visits: VisitCounter,
    /// Snapshot read back from `visits_before_best.csv`.
    pub stored_visits_before_best: Option<VisitCounter>,
    pub heatmaps: Vec<Heatmap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineCost {
    pub trials: usize,
    pub sample_visits: u64,
    pub wall_seconds: f64,
}

/// Cumulative cost up to and including the first record with
/// `reward >= baseline`; `None` when no record gets there.
pub fn budget_to_baseline(records: &[TrialRecord], baseline: f64) -> Option<BaselineCost> {
    let mut cost = BaselineCost {
        trials: 0,
        sample_visits: 0,
        wall_seconds: 0.0,
    };
    for r in records {
        cost.trials += 1;
        cost.sample_visits += r.cost.sample_visits;
        cost.wall_seconds += r.cost.wall_seconds;
        if r.is_ok() && r.reward >= baseline {
            return Some(cost);
        }
    }
    None
}

impl Ledger {
    pub fn from_result(
        run_id: impl Into<String>,
        seed: u64,
        config: Value,
        result: SearchResult,
        sample_ids: Vec<u64>,
    ) -> Result<Self> {
        let mut visits = VisitCounter::new(sample_ids.len());
        for v in result.visits.iter().flatten() {
            visits.merge(v)?;
        }
        let mut ledger = Ledger {
            run_id: run_id.into(),
            strategy: result.strategy,
            seed,
            config,
            audit: Value::Null,
            records: result.records,
            sample_ids,
            trial_visits: result.visits,
            visits,
            stored_visits_before_best: None,
            heatmaps: result.heatmaps,
        };
        ledger.validate()?;
        ledger.audit = ledger.default_audit();
        Ok(ledger)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.trial_index != i {
                return Err(Error::InvalidArgument(format!(
                    "trial indices must be dense: position {i} holds trial {}",
                    r.trial_index
                )));
            }
        }
        if self.visits.len() != self.sample_ids.len() {
            return Err(Error::Shape(format!(
                "visit counter has {} slots for {} sample ids",
                self.visits.len(),
                self.sample_ids.len()
            )));
        }
        Ok(())
    }

    pub fn best_index(&self) -> Option<usize> {
        select_best(&self.records)
    }

    pub fn best(&self) -> Option<&TrialRecord> {
        self.best_index().map(|i| &self.records[i])
    }

    pub fn budget_to_baseline(&self, baseline: f64) -> Option<BaselineCost> {
        budget_to_baseline(&self.records, baseline)
    }

    /// Elementwise visit counts over trials `0..=best`.
    pub fn visits_before_best(&self) -> Result<VisitCounter> {
        let best = self.best_index().ok_or(Error::NoOkRecords)?;
        let replayable = self.trial_visits.len() == self.records.len();
        if !replayable {
            return self
                .stored_visits_before_best
                .clone()
                .ok_or_else(|| Error::InvalidArgument("per-trial visits are not available".into()));
        }
        let mut out = VisitCounter::new(self.sample_ids.len());
        for v in self.trial_visits[..=best].iter().flatten() {
            out.merge(v)?;
        }
        Ok(out)
    }

    /// Sum of sample visits over trials `0..=best`.
    pub fn total_visits_to_best(&self) -> Option<u64> {
        let best = self.best_index()?;
        Some(self.records[..=best].iter().map(|r| r.cost.sample_visits).sum())
    }

    fn default_audit(&self) -> Value {
        let delta = self.config.pointer("/train/delta").cloned().unwrap_or(Value::Null);
        let best = self.best().map(|b| {
            json!({
                "trial_index": b.trial_index,
                "sigma": b.hyperparams.sigma,
                "steps": b.cost.steps,
                "epsilon": finite_or_null(b.epsilon),
            })
        });
        json!({
            "accountant": "rdp_subsampled_gaussian",
            "orders": [2, 64],
            "delta": delta,
            "best": best,
        })
    }

    fn summary(&self) -> Value {
        let best = self.best().map(|b| {
            json!({
                "trial_index": b.trial_index,
                "sigma": b.hyperparams.sigma,
                "eta": b.hyperparams.eta,
                "val_loss": finite_or_null(b.val_loss),
                "val_accuracy": b.val_accuracy,
                "epsilon": finite_or_null(b.epsilon),
                "reward": b.reward,
            })
        });
        json!({
            "run_id": self.run_id,
            "strategy": self.strategy,
            "seed": self.seed,
            "trials": self.records.len(),
            "failed_trials": self.records.iter().filter(|r| !r.is_ok()).count(),
            "best": best,
            "total_sample_visits": self.visits.total(),
            "total_visits_to_best": self.total_visits_to_best(),
            "heatmaps": self.heatmaps.len(),
            "config": self.config,
            "audit": self.audit,
        })
    }

    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(TRIALS_FILE), trials_csv(&self.records)?.as_bytes())?;

        let mut summary = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        summary.push('\n');
        write_file(&dir.join(SUMMARY_FILE), summary.as_bytes())?;

        write_file(&dir.join(VISITS_FILE), visits_csv(&self.sample_ids, &self.visits).as_bytes())?;
        if let Ok(before) = self.visits_before_best() {
            write_file(&dir.join(VISITS_BEFORE_BEST_FILE), visits_csv(&self.sample_ids, &before).as_bytes())?;
        }
        for (k, map) in self.heatmaps.iter().enumerate() {
            write_file(&dir.join(heatmap_file(k)), heatmap_tsv(map).as_bytes())?;
        }
        Ok(())
    }

    /// Reads an exported run. Heatmap lattice values are recovered from the
    /// config's search space when it parses, and left empty otherwise.
    pub fn load(dir: &Path) -> Result<Self> {
        let records = parse_trials_csv(&dir.join(TRIALS_FILE))?;
        let summary_path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let summary: Value = serde_json::from_str(&text).map_err(|e| Error::parse(&summary_path, e))?;
        let field = |key: &str| {
            summary
                .get(key)
                .cloned()
                .ok_or_else(|| Error::parse(&summary_path, format!("missing key `{key}`")))
        };
        let run_id = field("run_id")?.as_str().unwrap_or_default().to_string();
        let strategy = field("strategy")?.as_str().unwrap_or_default().to_string();
        let seed = field("seed")?
            .as_u64()
            .ok_or_else(|| Error::parse(&summary_path, "`seed` must be an unsigned integer"))?;
        let (sample_ids, visits) = parse_visits_csv(&dir.join(VISITS_FILE))?;
        let before_path = dir.join(VISITS_BEFORE_BEST_FILE);
        let stored_visits_before_best = if before_path.exists() {
            Some(parse_visits_csv(&before_path)?.1)
        } else {
            None
        };
        let config = field("config")?;
        let space: Option<SearchSpace> = config
            .get("search_space")
            .and_then(|v| serde_json::from_value(v.clone()).ok());
        let mut heatmaps = Vec::new();
        loop {
            let path = dir.join(heatmap_file(heatmaps.len()));
            if !path.exists() {
                break;
            }
            heatmaps.push(parse_heatmap_tsv(&path, space.as_ref())?);
        }
        let ledger = Ledger {
            run_id,
            strategy,
            seed,
            config,
            audit: field("audit")?,
            records,
            sample_ids,
            trial_visits: Vec::new(),
            visits,
            stored_visits_before_best,
            heatmaps,
        };
        ledger.validate()?;
        Ok(ledger)
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(g17(x))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

pub fn trials_csv(records: &[TrialRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let sink = Path::new(TRIALS_FILE);
    w.write_record(TRIALS_HEADER).map_err(|e| csv_error(sink, e))?;
    for r in records {
        w.write_record([
            r.trial_index.to_string(),
            r.strategy.clone(),
            r.seed.to_string(),
            g17(r.hyperparams.sigma),
            g17(r.hyperparams.eta),
            g17(r.val_loss),
            g17(r.val_accuracy),
            g17(r.epsilon),
            g17(r.reward),
            r.status.as_str().to_string(),
            r.cost.steps.to_string(),
            r.cost.sample_visits.to_string(),
            g17(r.cost.wall_seconds),
        ])
        .map_err(|e| csv_error(sink, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(sink, e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_trials_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(TRIALS_HEADER) {
        return Err(Error::parse(path, "unexpected trials.csv header"));
    }
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let at = |k: usize| -> &str { row.get(k).unwrap_or("") };
        let bad = |k: usize| Error::parse(path, format!("row {}: bad `{}` value `{}`", line + 1, TRIALS_HEADER[k], at(k)));
        let float = |k: usize| at(k).parse::<f64>().map_err(|_| bad(k));
        let int = |k: usize| at(k).parse::<u64>().map_err(|_| bad(k));
        let status = match at(9) {
            "ok" => TrialStatus::Ok,
            "failed" => TrialStatus::Failed,
            _ => return Err(bad(9)),
        };
        out.push(TrialRecord {
            trial_index: int(0)? as usize,
            strategy: at(1).to_string(),
            seed: int(2)?,
            hyperparams: HyperParams {
                sigma: float(3)?,
                eta: float(4)?,
            },
            val_loss: float(5)?,
            val_accuracy: float(6)?,
            epsilon: float(7)?,
            reward: float(8)?,
            status,
            cost: TrialCost {
                steps: int(10)?,
                sample_visits: int(11)?,
                wall_seconds: float(12)?,
            },
        });
    }
    Ok(out)
}

fn visits_csv(sample_ids: &[u64], counts: &VisitCounter) -> String {
    let mut s = String::from("sample_id,count\n");
    for (id, c) in sample_ids.iter().zip(&counts.counts) {
        s.push_str(&format!("{id},{c}\n"));
    }
    s
}

fn parse_visits_csv(path: &Path) -> Result<(Vec<u64>, VisitCounter)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut ids = Vec::new();
    let mut counts = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let parse = |k: usize| {
            row.get(k)
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::parse(path, format!("bad row {:?}", row)))
        };
        ids.push(parse(0)?);
        counts.push(parse(1)?);
    }
    Ok((ids, VisitCounter { counts }))
}

/// Rows are sigma lattice indices, columns eta lattice indices.
pub fn heatmap_tsv(map: &Heatmap) -> String {
    let mut s = String::from("sigma_index\\eta_index");
    for j in &map.eta_indices {
        s.push_str(&format!("\t{j}"));
    }
    s.push('\n');
    for (r, i) in map.sigma_indices.iter().enumerate() {
        s.push_str(&i.to_string());
        for c in 0..map.cols() {
            s.push('\t');
            s.push_str(&g17(map.get(r, c)));
        }
        s.push('\n');
    }
    s
}

pub fn parse_heatmap_tsv(path: &Path, space: Option<&SearchSpace>) -> Result<Heatmap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::parse(path, format!("malformed heatmap line {}", line + 1));
    let mut lines = text.lines();
    let eta_indices = lines
        .next()
        .ok_or_else(|| bad(0))?
        .split('\t')
        .skip(1)
        .map(|t| t.parse::<usize>().map_err(|_| bad(0)))
        .collect::<Result<Vec<_>>>()?;
    let mut sigma_indices = Vec::new();
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let mut cells = line.split('\t');
        sigma_indices.push(cells.next().and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| bad(k + 1))?);
        let row = cells
            .map(|t| t.parse::<f64>().map_err(|_| bad(k + 1)))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != eta_indices.len() {
            return Err(bad(k + 1));
        }
        values.extend(row);
    }
    let (sigma_values, eta_values) = match space {
        Some(sp) if sigma_indices.iter().all(|&i| i < sp.sigma.len()) && eta_indices.iter().all(|&j| j < sp.eta.len()) => (
            sigma_indices.iter().map(|&i| sp.sigma.value_at(i)).collect(),
            eta_indices.iter().map(|&j| sp.eta.value_at(j)).collect(),
        ),
        _ => (Vec::new(), Vec::new()),
    };
    Ok(Heatmap {
        sigma_indices,
        eta_indices,
        sigma_values,
        eta_values,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub run_id: String,
    /// `None` on per-strategy median rows.
    pub seed: Option<u64>,
    pub failed: bool,
    pub trials: usize,
    pub baseline_reward: f64,
    pub best_trial: Option<usize>,
    pub best_reward: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub best_epsilon: Option<f64>,
    /// `None` when the baseline is never reached.
    pub trials_to_baseline: Option<f64>,
    pub visits_to_baseline: Option<f64>,
    pub wall_to_baseline: Option<f64>,
    pub total_visits_to_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

fn row_for(ledger: &Ledger, baseline: f64) -> ComparisonRow {
    let best = ledger.best();
    let reached = ledger.budget_to_baseline(baseline);
    ComparisonRow {
        strategy: ledger.strategy.clone(),
        run_id: ledger.run_id.clone(),
        seed: Some(ledger.seed),
        failed: best.is_none(),
        trials: ledger.records.len(),
        baseline_reward: baseline,
        best_trial: best.map(|b| b.trial_index),
        best_reward: best.map(|b| b.reward),
        best_accuracy: best.map(|b| b.val_accuracy),
        best_epsilon: best.map(|b| b.epsilon),
        trials_to_baseline: reached.map(|c| c.trials as f64),
        visits_to_baseline: reached.map(|c| c.sample_visits as f64),
        wall_to_baseline: reached.map(|c| c.wall_seconds),
        total_visits_to_best: ledger.total_visits_to_best().map(|v| v as f64),
    }
}

/// Median with missing values ranked above every present one.
fn median_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.map(|x| x.unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

fn median_row(strategy: &str, rows: &[&ComparisonRow]) -> ComparisonRow {
    let med = |f: fn(&ComparisonRow) -> Option<f64>| median_of(rows.iter().map(|r| f(r)));
    ComparisonRow {
        strategy: strategy.to_string(),
        run_id: "median".into(),
        seed: None,
        failed: rows.iter().all(|r| r.failed),
        trials: median_of(rows.iter().map(|r| Some(r.trials as f64))).unwrap_or(0.0) as usize,
        baseline_reward: median_of(rows.iter().map(|r| Some(r.baseline_reward))).unwrap_or(f64::NAN),
        best_trial: None,
        best_reward: med(|r| r.best_reward),
        best_accuracy: med(|r| r.best_accuracy),
        best_epsilon: med(|r| r.best_epsilon),
        trials_to_baseline: med(|r| r.trials_to_baseline),
        visits_to_baseline: med(|r| r.visits_to_baseline),
        wall_to_baseline: med(|r| r.wall_to_baseline),
        total_visits_to_best: med(|r| r.total_visits_to_best),
    }
}

/// One row per ledger. Each run is measured against the best grid reward
/// of the grid ledger with the same seed (or the first grid ledger). With
/// several seeds, per-strategy median rows follow.
pub fn compare(ledgers: &[Ledger]) -> Result<ComparisonReport> {
    let grids: Vec<&Ledger> = ledgers.iter().filter(|l| l.strategy == "grid").collect();
    let first_grid = *grids.first().ok_or(Error::BaselineUnavailable)?;
    let mut rows = Vec::with_capacity(ledgers.len());
    for ledger in ledgers {
        let grid = grids.iter().find(|g| g.seed == ledger.seed).copied().unwrap_or(first_grid);
        let baseline = baseline_reward(&grid.records).map_err(|_| Error::BaselineUnavailable)?;
        rows.push(row_for(ledger, baseline));
    }
    let seeds: std::collections::BTreeSet<u64> = ledgers.iter().map(|l| l.seed).collect();
    if seeds.len() > 1 {
        let mut by_strategy: BTreeMap<&str, Vec<&ComparisonRow>> = BTreeMap::new();
        let mut order: Vec<&str> = Vec::new();
        for r in &rows {
            if !by_strategy.contains_key(r.strategy.as_str()) {
                order.push(&r.strategy);
            }
            by_strategy.entry(&r.strategy).or_default().push(r);
        }
        let medians: Vec<ComparisonRow> = order.iter().map(|s| median_row(s, &by_strategy[s])).collect();
        rows.extend(medians);
    }
    Ok(ComparisonReport { rows })
}

pub const COMPARISON_HEADER: [&str; 14] = [
    "strategy",
    "run_id",
    "seed",
    "status",
    "trials",
    "baseline_reward",
    "best_trial",
    "best_reward",
    "best_accuracy",
    "best_epsilon",
    "trials_to_baseline",
    "visits_to_baseline",
    "wall_to_baseline",
    "total_visits_to_best",
];

impl ComparisonReport {
    /// Unreached baselines are written as `unreached`, missing values empty.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(g17).unwrap_or_default();
        let reach = |x: Option<f64>| x.map(g17).unwrap_or_else(|| "unreached".into());
        let mut s = COMPARISON_HEADER.join(",");
        s.push('\n');
        for r in &self.rows {
            let fields = [
                r.strategy.clone(),
                r.run_id.clone(),
                r.seed.map(|v| v.to_string()).unwrap_or_else(|| "median".into()),
                if r.failed { "failed".into() } else { "ok".into() },
                r.trials.to_string(),
                g17(r.baseline_reward),
                r.best_trial.map(|v| v.to_string()).unwrap_or_default(),
                opt(r.best_reward),
                opt(r.best_accuracy),
                opt(r.best_epsilon),
                reach(r.trials_to_baseline),
                reach(r.visits_to_baseline),
                reach(r.wall_to_baseline),
                opt(r.total_visits_to_best),
            ];
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }

    /// Writes `comparison.csv` and `comparison.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("comparison.csv");
        let json_path = dir.join("comparison.json");
        write_file(&csv_path, self.to_csv().as_bytes())?;
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("row serializes");
                if let Some(eps) = r.best_epsilon.filter(|e| !e.is_finite()) {
                    v["best_epsilon"] = Value::String(g17(eps));
                }
                v
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&json!({ "rows": rows })).expect("report serializes");
        text.push('\n');
        write_file(&json_path, text.as_bytes())?;
        Ok((csv_path, json_path))
    }
}
