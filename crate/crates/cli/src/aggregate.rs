//! Column summaries over result tables with a common header.

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregateError {
    #[error("no input files")]
    Empty,
    #[error("{file}: {msg}")]
    Read { file: String, msg: String },
    #[error("{file}: header {got:?} differs from {expected:?}")]
    Schema { file: String, expected: Vec<String>, got: Vec<String> },
    #[error("unsupported statistic `{0}` (use mean)")]
    Statistic(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub column: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
    /// Set when `n == 1`: the standard error is reported as 0 but undefined.
    pub single: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub columns: Vec<ColumnSummary>,
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["column", "n", "mean", "stderr", "min", "max", "single"]).expect("in-memory");
        for c in &self.columns {
            w.write_record([
                c.column.clone(),
                c.n.to_string(),
                format!("{:e}", c.mean),
                format!("{:e}", c.stderr),
                format!("{:e}", c.min),
                format!("{:e}", c.max),
                c.single.to_string(),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn get(&self, column: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.column == column)
    }
}

fn summarize(column: String, mut v: Vec<f64>) -> ColumnSummary {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt() } else { 0.0 };
    ColumnSummary { column, n, mean, stderr, min: v[0], max: v[n - 1], single: n == 1 }
}

/// Summaries of every column whose values all parse as numbers. Values are
/// sorted before reduction, so the result does not depend on file order.
pub fn aggregate_tables(tables: &[(String, String)], statistic: &str) -> Result<Summary, AggregateError> {
    if statistic != "mean" {
        return Err(AggregateError::Statistic(statistic.into()));
    }
    if tables.is_empty() {
        return Err(AggregateError::Empty);
    }
    let mut header: Option<Vec<String>> = None;
    let mut cols: Vec<Vec<String>> = Vec::new();
    for (file, text) in tables {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let h: Vec<String> = r.headers().map_err(|e| AggregateError::Read { file: file.clone(), msg: e.to_string() })?.iter().map(String::from).collect();
        match &header {
            None => {
                cols = vec![Vec::new(); h.len()];
                header = Some(h);
            }
            Some(expected) if *expected != h => return Err(AggregateError::Schema { file: file.clone(), expected: expected.clone(), got: h }),
            _ => {}
        }
        for rec in r.records() {
            let rec = rec.map_err(|e| AggregateError::Read { file: file.clone(), msg: e.to_string() })?;
            for (c, f) in cols.iter_mut().zip(rec.iter()) {
                c.push(f.to_string());
            }
        }
    }
    let header = header.expect("at least one table");
    let mut columns = Vec::new();
    for (name, vals) in header.into_iter().zip(cols) {
        let nums: Option<Vec<f64>> = vals.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
        if let Some(nums) = nums.filter(|v| !v.is_empty()) {
            columns.push(summarize(name, nums));
        }
    }
    Ok(Summary { columns })
}

pub fn aggregate(files: &[impl AsRef<Path>], statistic: &str) -> Result<Summary, AggregateError> {
    let mut tables = Vec::new();
    for f in files {
        let p = f.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| AggregateError::Read { file: p.display().to_string(), msg: e.to_string() })?;
        tables.push((p.display().to_string(), text));
    }
    aggregate_tables(&tables, statistic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(name: &str, body: &str) -> (String, String) {
        (name.into(), body.into())
    }

    #[test]
    fn single_file_and_permutation() {
        let s = aggregate_tables(&[t("a", "name,value\nx,2.5\n")], "mean").unwrap();
        let c = s.get("value").unwrap();
        assert_eq!((c.mean, c.stderr, c.single), (2.5, 0.0, true));
        assert!(s.get("name").is_none());
        let files = [t("a", "v\n0.1\n0.7\n"), t("b", "v\n0.2\n"), t("c", "v\n1e-17\n0.3\n")];
        let fwd = aggregate_tables(&files, "mean").unwrap();
        let rev = aggregate_tables(&[files[2].clone(), files[0].clone(), files[1].clone()], "mean").unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn known_mean_and_errors() {
        let rows: String = (0..100).map(|i| format!("{}\n", 3.0 + if i % 2 == 0 { 0.5 } else { -0.5 })).collect();
        let s = aggregate_tables(&[t("a", &format!("v\n{rows}"))], "mean").unwrap();
        let c = s.get("v").unwrap();
        assert!((c.mean - 3.0).abs() < 1e-14);
        assert!((c.stderr - (0.25f64 * 100.0 / 99.0 / 100.0).sqrt()).abs() < 1e-14);
        assert_eq!((c.min, c.max), (2.5, 3.5));
        assert!(matches!(aggregate_tables(&[t("a", "v\n1\n"), t("b", "w\n1\n")], "mean"), Err(AggregateError::Schema { .. })));
        assert!(matches!(aggregate_tables(&[t("a", "v\n1\n")], "median"), Err(AggregateError::Statistic(_))));
        assert!(matches!(aggregate_tables(&[], "mean"), Err(AggregateError::Empty)));
    }
}
