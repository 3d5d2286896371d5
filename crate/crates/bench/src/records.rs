use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Converged,
    MaxIter,
    InitFailed,
    /// The method returned an error or panicked.
    Error,
}

/// One row of the trial CSV: one method on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_index: usize,
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    /// bps/Hz; zero when the method produced no solution.
    pub secrecy_rate: f64,
    pub status: TrialStatus,
    pub feasible: bool,
    pub outer_iterations: usize,
    pub solves: usize,
    pub flagged_solves: usize,
}

pub const TRIAL_COLUMNS: [&str; 12] = [
    "sweep_index",
    "sweep_axis",
    "sweep_value",
    "trial",
    "seed",
    "method",
    "secrecy_rate",
    "status",
    "feasible",
    "outer_iterations",
    "solves",
    "flagged_solves",
];

pub fn write_trials<W: Write>(records: &[TrialRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(TRIAL_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trials_to_bytes(records: &[TrialRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trials(records, &mut buf).expect("writing to memory");
    buf
}

/// Compares a header against the expected column list and names the first
/// column that differs.
pub fn check_header(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(BenchError::Schema {
                    path: path.to_path_buf(),
                    column: got.to_string(),
                    detail: format!("position {i} should be `{want}`"),
                })
            }
            None => {
                return Err(BenchError::Schema {
                    path: path.to_path_buf(),
                    column: want.to_string(),
                    detail: "missing".into(),
                })
            }
        }
    }
    if let Some(extra) = header.get(expected.len()) {
        return Err(BenchError::Schema {
            path: path.to_path_buf(),
            column: extra.to_string(),
            detail: "unexpected extra column".into(),
        });
    }
    Ok(())
}

/// Index of the first cell that does not parse as its column's type.
fn bad_cell(row: &csv::StringRecord) -> Option<usize> {
    use serde::de::IntoDeserializer;
    fn enum_ok<'de, T: Deserialize<'de>>(s: &'de str) -> bool {
        T::deserialize(IntoDeserializer::<serde::de::value::Error>::into_deserializer(s)).is_ok()
    }
    TRIAL_COLUMNS.iter().enumerate().position(|(i, col)| {
        let Some(cell) = row.get(i) else { return true };
        let ok = match *col {
            "sweep_axis" => true,
            "sweep_value" | "secrecy_rate" => cell.parse::<f64>().is_ok(),
            "seed" => cell.parse::<u64>().is_ok(),
            "method" => enum_ok::<Method>(cell),
            "status" => enum_ok::<TrialStatus>(cell),
            "feasible" => cell.parse::<bool>().is_ok(),
            _ => cell.parse::<usize>().is_ok(),
        };
        !ok
    })
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| BenchError::csv(path, e))?.clone();
    check_header(path, &header, &TRIAL_COLUMNS)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| BenchError::csv(path, e))?;
        match row.deserialize::<TrialRecord>(Some(&header)) {
            Ok(r) => out.push(r),
            Err(e) => {
                return Err(match bad_cell(&row) {
                    Some(i) => BenchError::Schema {
                        path: path.to_path_buf(),
                        column: TRIAL_COLUMNS[i].to_string(),
                        detail: format!("line {}: {e}", row.position().map_or(0, |p| p.line())),
                    },
                    None => BenchError::csv(path, e),
                });
            }
        }
    }
    Ok(out)
}
