use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentConfig, ModelCache};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Members and non-members per cell; reference users are twice that.
    NUsers,
    /// Queries per audited user (`"all"` for every example).
    NQueries,
    /// Ranked tokens visible per position (`"full"` for the vocabulary).
    OutputK,
    NoiseFraction,
    HyperparamMismatch,
    CrossDomain,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::NUsers => "n_users",
            Axis::NQueries => "n_queries",
            Axis::OutputK => "output_k",
            Axis::NoiseFraction => "noise_fraction",
            Axis::HyperparamMismatch => "hyperparam_mismatch",
            Axis::CrossDomain => "cross_domain",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Bool(bool),
    Int(u64),
    Float(f64),
    Text(String),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Bool(b) => write!(f, "{b}"),
            AxisValue::Int(i) => write!(f, "{i}"),
            AxisValue::Float(x) => write!(f, "{x}"),
            AxisValue::Text(s) => f.write_str(s),
        }
    }
}

impl AxisValue {
    fn as_count(&self, unlimited: &str) -> Result<Option<usize>> {
        match self {
            AxisValue::Int(i) if *i > 0 => Ok(Some(*i as usize)),
            AxisValue::Text(s) if s == unlimited => Ok(None),
            other => Err(invalid(format!("expected a positive integer or \"{unlimited}\", got {other}"))),
        }
    }

    fn as_f64(&self) -> Result<f64> {
        match self {
            AxisValue::Int(i) => Ok(*i as f64),
            AxisValue::Float(x) => Ok(*x),
            other => Err(invalid(format!("expected a number, got {other}"))),
        }
    }

    fn as_bool(&self) -> Result<bool> {
        match self {
            AxisValue::Bool(b) => Ok(*b),
            other => Err(invalid(format!("expected true or false, got {other}"))),
        }
    }
}

/// One experiment axis swept over `values`, `repetitions` times each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<AxisValue>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Everything not set by the axis. Repetition `r` runs with seed
    /// `base.seed + r`.
    #[serde(default)]
    pub base: ExperimentConfig,
}

fn default_repetitions() -> usize {
    5
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("sweep needs at least one value"));
        }
        if self.repetitions == 0 {
            return Err(invalid("sweep needs at least one repetition"));
        }
        for v in &self.values {
            self.cell_config(v, 0)?;
        }
        Ok(())
    }

    /// The experiment run for one cell.
    pub fn cell_config(&self, value: &AxisValue, repetition: usize) -> Result<ExperimentConfig> {
        let mut cfg = self.base.clone();
        cfg.seed = self.base.seed.wrapping_add(repetition as u64);
        match self.axis {
            Axis::NUsers => {
                let n = value.as_count("")?.ok_or_else(|| invalid("n_users must be a number"))?;
                cfg.n_train_users = n;
                cfg.n_test_users = n;
                cfg.n_shadow_users = 2 * n;
            }
            Axis::NQueries => cfg.audit.m = value.as_count("all")?,
            Axis::OutputK => cfg.audit.output_k = value.as_count("full")?,
            Axis::NoiseFraction => cfg.noise_fraction = value.as_f64()?,
            Axis::HyperparamMismatch => cfg.hyperparam_mismatch = value.as_bool()?,
            Axis::CrossDomain => cfg.cross_domain = value.as_bool()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.values.len())
            .flat_map(|v| (0..self.repetitions).map(move |r| (v, r)))
            .collect()
    }
}

/// One CSV row. Metrics are absent when the cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub repetition: usize,
    pub seed: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub precision_defined: Option<bool>,
    pub error: String,
}

const HEADER: [&str; 9] = [
    "axis_value",
    "repetition",
    "seed",
    "precision",
    "recall",
    "accuracy",
    "auc",
    "precision_defined",
    "error",
];

impl SweepRow {
    fn ok(&self) -> bool {
        self.error.is_empty()
    }

    fn to_record(&self) -> Vec<String> {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        vec![
            self.axis_value.clone(),
            self.repetition.to_string(),
            self.seed.to_string(),
            f(self.precision),
            f(self.recall),
            f(self.accuracy),
            f(self.auc),
            self.precision_defined.map(|b| b.to_string()).unwrap_or_default(),
            self.error.clone(),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> Result<Self> {
        let bad = || Error::Format(format!("malformed sweep row: {r:?}"));
        if r.len() != HEADER.len() {
            return Err(bad());
        }
        let f = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        Ok(Self {
            axis_value: r[0].to_string(),
            repetition: r[1].parse().map_err(|_| bad())?,
            seed: r[2].parse().map_err(|_| bad())?,
            precision: f(&r[3])?,
            recall: f(&r[4])?,
            accuracy: f(&r[5])?,
            auc: f(&r[6])?,
            precision_defined: match &r[7] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad())?),
            },
            error: r[8].to_string(),
        })
    }
}

fn run_cell(spec: &SweepSpec, v: usize, r: usize, cache: &ModelCache) -> SweepRow {
    let value = &spec.values[v];
    let seed = spec.base.seed.wrapping_add(r as u64);
    let mut row = SweepRow {
        axis_value: value.to_string(),
        repetition: r,
        seed,
        precision: None,
        recall: None,
        accuracy: None,
        auc: None,
        precision_defined: None,
        error: String::new(),
    };
    match spec.cell_config(value, r).and_then(|cfg| run_experiment(&cfg, cache)) {
        Ok(res) => {
            row.precision = Some(res.metrics.precision);
            row.recall = Some(res.metrics.recall);
            row.accuracy = Some(res.metrics.accuracy);
            row.auc = Some(res.auc);
            row.precision_defined = Some(res.metrics.precision_defined);
        }
        Err(e) => {
            log::warn!("{} = {} repetition {r} failed: {e}", spec.axis.name(), row.axis_value);
            row.error = e.to_string();
        }
    }
    row
}

/// Runs every (value, repetition) cell. Rows come back in axis order, then
/// repetition order; failed cells carry their error.
pub fn run_sweep(spec: &SweepSpec, cache: &ModelCache) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    Ok(spec
        .cells()
        .par_iter()
        .map(|&(v, r)| run_cell(spec, v, r, cache))
        .collect())
}

fn write_csv(path: &Path, rows: &[&SweepRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(HEADER).map_err(|e| Error::Format(e.to_string()))?;
        for r in rows {
            w.write_record(r.to_record()).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads rows written by [`run_sweep_to_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let header = rd.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    rd.records()
        .map(|r| SweepRow::from_record(&r.map_err(|e| Error::Format(e.to_string()))?))
        .collect()
}

/// Path of the run manifest written next to a results CSV.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

#[derive(Serialize, Deserialize, PartialEq)]
struct Manifest {
    spec: SweepSpec,
    seeds: Vec<u64>,
    note: String,
}

/// Like [`run_sweep`], writing the CSV after every finished cell. Cells
/// already present (without error) in an existing CSV are kept, not rerun.
pub fn run_sweep_to_csv(spec: &SweepSpec, path: &Path, cache: &ModelCache) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let manifest = Manifest {
        spec: spec.clone(),
        seeds: (0..spec.repetitions).map(|r| spec.base.seed.wrapping_add(r as u64)).collect(),
        note: "repetitions and their averaging are added by this toolkit; each row is one independent run".into(),
    };
    let mpath = manifest_path(path);
    let manifest_json = serde_json::to_string_pretty(&manifest)? + "\n";
    if path.exists() && mpath.exists() && fs::read_to_string(&mpath)? != manifest_json {
        return Err(invalid(format!(
            "{} was produced by a different sweep; remove it to start over",
            path.display()
        )));
    }
    fs::write(&mpath, &manifest_json)?;

    let cells = spec.cells();
    let mut done: BTreeMap<(usize, usize), SweepRow> = BTreeMap::new();
    if path.exists() {
        for row in read_sweep_csv(path)? {
            let v = spec.values.iter().position(|x| x.to_string() == row.axis_value);
            if let Some(v) = v.filter(|_| row.ok() && row.repetition < spec.repetitions) {
                done.insert((v, row.repetition), row);
            }
        }
        log::info!("resuming {}: {} of {} cells done", path.display(), done.len(), cells.len());
    }
    let todo: Vec<(usize, usize)> = cells.iter().copied().filter(|c| !done.contains_key(c)).collect();
    let table = Mutex::new(done);
    todo.par_iter().try_for_each(|&(v, r)| -> Result<()> {
        let row = run_cell(spec, v, r, cache);
        let mut t = table.lock().map_err(|_| invalid("sweep table poisoned"))?;
        t.insert((v, r), row);
        write_csv(path, &t.values().collect::<Vec<_>>())
    })?;
    let table = table.into_inner().map_err(|_| invalid("sweep table poisoned"))?;
    let rows: Vec<SweepRow> = table.into_values().collect();
    write_csv(path, &rows.iter().collect::<Vec<_>>())?;
    Ok(rows)
}

/// Mean metrics over the successful repetitions of one axis value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis_value: String,
    pub runs: usize,
    pub failures: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub auc: f64,
}

/// Averages rows per axis value, in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.axis_value) {
            order.push(r.axis_value.clone());
        }
    }
    order
        .into_iter()
        .map(|v| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.axis_value == v).collect();
            let ok: Vec<&&SweepRow> = group.iter().filter(|r| r.ok()).collect();
            let mean = |f: fn(&SweepRow) -> Option<f64>| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter_map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            SweepSummary {
                runs: ok.len(),
                failures: group.len() - ok.len(),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                accuracy: mean(|r| r.accuracy),
                auc: mean(|r| r.auc),
                axis_value: v,
            }
        })
        .collect()
}
