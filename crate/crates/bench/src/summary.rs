use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::Method;
use crate::error::{BenchError, Result};
use crate::records::{read_trials, TrialRecord};

/// Aggregates of `max(0, R_s)` at one (sweep point, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub method: Method,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub feasible_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation, zero for a single value.
    pub std: f64,
    /// Half-width of the two-sided 95% Student-t interval for the mean.
    pub ci_half_width: f64,
}

/// Statistics of a sample. The input is sorted first so the result does not
/// depend on record order.
pub fn describe(values: &[f64]) -> Stats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "empty sample");
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let (std, ci_half_width) = if n > 1 {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
        (std, t * std / (n as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    Stats { count: n, mean, median, std, ci_half_width }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    axis: String,
    value: OrdF64,
    method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Rows sorted by axis, sweep value and method.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let key = GroupKey { axis: r.sweep_axis.clone(), value: OrdF64(r.sweep_value), method: r.method };
        let entry = groups.entry(key).or_default();
        entry.0.push(r.secrecy_rate.max(0.0));
        entry.1 += r.feasible as usize;
    }
    groups
        .into_iter()
        .map(|(key, (values, feasible))| {
            let s = describe(&values);
            SummaryRow {
                sweep_axis: key.axis,
                sweep_value: key.value.0,
                method: key.method,
                count: s.count,
                mean: s.mean,
                median: s.median,
                std: s.std,
                ci_low: s.mean - s.ci_half_width,
                ci_high: s.mean + s.ci_half_width,
                feasible_fraction: feasible as f64 / s.count as f64,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_to_bytes(rows: &[SummaryRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_summary(rows, &mut buf).expect("writing to memory");
    buf
}

/// Expands a glob into a sorted file list.
pub fn expand_pattern(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in glob::glob(pattern).map_err(|e| BenchError::Pattern(e.to_string()))? {
        paths.push(entry.map_err(|e| BenchError::Pattern(e.to_string()))?);
    }
    if paths.is_empty() {
        return Err(BenchError::Pattern(format!("`{pattern}` matched no files")));
    }
    paths.sort();
    Ok(paths)
}

pub fn summarize_files(paths: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_trials(p)?);
    }
    Ok(summarize(&all))
}

pub fn write_summary_file(rows: &[SummaryRow], path: &Path) -> Result<()> {
    std::fs::write(path, summary_to_bytes(rows)).map_err(|e| BenchError::io(path, e))
}
