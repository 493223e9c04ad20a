//! Per-run metric records and their CSV round-trip.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Metric value threshold beyond which a run is flagged as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

/// Metric records for one run, keyed by `(run_id, seed)`.
///
/// The CSV schema is `run_id,seed,step,metric,value`; divergence flags travel
/// in the JSON summary sidecar, not the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrajectory {
    pub run_id: String,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    pub diverged: bool,
}

impl RunTrajectory {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        RunTrajectory {
            run_id: run_id.into(),
            seed,
            records: Vec::new(),
            diverged: false,
        }
    }

    pub fn push(&mut self, step: u64, metric: impl Into<String>, value: f64) {
        self.records.push(MetricRecord {
            step,
            metric: metric.into(),
            value,
        });
    }

    /// All values recorded under `metric`, in step order.
    pub fn series(&self, metric: &str) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.step, r.value))
            .collect()
    }

    pub fn last_value(&self, metric: &str) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .find(|r| r.metric == metric)
            .map(|r| r.value)
    }
}

/// Writes runs as CSV. Values use the shortest round-trip decimal form.
pub fn write_csv<W: Write>(writer: W, runs: &[RunTrajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run_id", "seed", "step", "metric", "value"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for run in runs {
        for rec in &run.records {
            w.write_record([
                run.run_id.as_str(),
                &run.seed.to_string(),
                &rec.step.to_string(),
                &rec.metric,
                &format!("{}", rec.value),
            ])
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses CSV produced by [`write_csv`], grouping rows back into runs.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<RunTrajectory>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut runs: Vec<RunTrajectory> = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        if row.len() != 5 {
            return Err(Error::Parse(format!("expected 5 columns, got {}", row.len())));
        }
        let run_id = row[0].to_string();
        let seed: u64 = row[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad seed {:?}", &row[1])))?;
        let step: u64 = row[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad step {:?}", &row[2])))?;
        let value: f64 = row[4]
            .parse()
            .map_err(|_| Error::Parse(format!("bad value {:?}", &row[4])))?;
        let rec = MetricRecord {
            step,
            metric: row[3].to_string(),
            value,
        };
        match runs.last_mut() {
            Some(run) if run.run_id == run_id && run.seed == seed => run.records.push(rec),
            _ => {
                let mut run = RunTrajectory::new(run_id, seed);
                run.records.push(rec);
                runs.push(run);
            }
        }
    }
    Ok(runs)
}

/// Mean and standard error per `(step, metric)` across runs.
///
/// Emits `<metric>_mean` and `<metric>_se` records ordered by step then
/// metric name, so aggregation output is deterministic.
pub fn aggregate(runs: &[RunTrajectory], run_id: &str) -> RunTrajectory {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    for run in runs {
        for rec in &run.records {
            groups
                .entry((rec.step, rec.metric.clone()))
                .or_default()
                .push(rec.value);
        }
    }
    let mut out = RunTrajectory::new(run_id, 0);
    for ((step, metric), values) in groups {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        out.push(step, format!("{metric}_mean"), mean);
        out.push(step, format!("{metric}_se"), se);
    }
    out
}
