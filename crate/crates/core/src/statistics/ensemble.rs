//! Replica ensembles and estimate records on disk.

use super::StatsError;
use serde::{Deserialize, Serialize};

/// Per-replica scalar samples with their seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaEnsemble {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
}

impl ReplicaEnsemble {
    pub fn new(seeds: Vec<u64>, values: Vec<f64>) -> Result<Self, StatsError> {
        if seeds.len() != values.len() {
            return Err(StatsError::Length(seeds.len(), values.len()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(StatsError::DuplicateSeed(w[0]));
        }
        Ok(ReplicaEnsemble { seeds, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with columns `replica,seed,value`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["replica", "seed", "value"]).expect("in-memory write");
        for (i, (s, v)) in self.seeds.iter().zip(&self.values).enumerate() {
            w.write_record([i.to_string(), s.to_string(), format!("{v:e}")]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_csv(text: &str) -> Result<Self, StatsError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let head = r.headers().map_err(|e| StatsError::Format(e.to_string()))?;
        if head.iter().ne(["replica", "seed", "value"]) {
            return Err(StatsError::Format("expected header replica,seed,value".into()));
        }
        let mut rows: Vec<(usize, u64, f64)> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| StatsError::Format(e.to_string()))?;
            if rec.len() != 3 {
                return Err(StatsError::Format("expected 3 fields".into()));
            }
            let bad = |f: &str| StatsError::Format(format!("bad field '{f}'"));
            let i: usize = rec[0].trim().parse().map_err(|_| bad(&rec[0]))?;
            let s: u64 = rec[1].trim().parse().map_err(|_| bad(&rec[1]))?;
            let v: f64 = rec[2].trim().parse().map_err(|_| bad(&rec[2]))?;
            if !v.is_finite() {
                return Err(bad(&rec[2]));
            }
            rows.push((i, s, v));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
            return Err(StatsError::Format("replica indices must be 0..n".into()));
        }
        Self::new(rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect())
    }
}

/// One line-delimited estimate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl EstimateRecord {
    pub fn new(name: impl Into<String>, value: f64, stderr: f64, n: usize) -> Self {
        EstimateRecord { name: name.into(), value, stderr, n }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain record")
    }

    pub fn from_line(line: &str) -> Result<Self, StatsError> {
        serde_json::from_str(line).map_err(|e| StatsError::Format(e.to_string()))
    }
}
