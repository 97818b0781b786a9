//! Per-round metrics and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "round,test_accuracy,scheduled_count,scheduled_data_volume,cum_energy_max,cum_energy_mean,max_queue,dpp_objective,bytes_uploaded";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    /// `NaN` in rounds without an evaluation.
    pub test_accuracy: f64,
    pub scheduled_count: usize,
    /// `Σ_{k∈S} D_k`.
    pub scheduled_data_volume: usize,
    /// Joules spent by every device up to and including this round.
    pub cumulative_energy: Vec<f64>,
    pub max_queue: f64,
    pub dpp_objective: f64,
    /// Knowledge bytes uploaded this round.
    pub bytes_uploaded: u64,
}

/// The columns of one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub test_accuracy: f64,
    pub scheduled_count: usize,
    pub scheduled_data_volume: usize,
    pub cum_energy_max: f64,
    pub cum_energy_mean: f64,
    pub max_queue: f64,
    pub dpp_objective: f64,
    pub bytes_uploaded: u64,
}

impl MetricsRecord {
    pub fn row(&self) -> MetricsRow {
        let n = self.cumulative_energy.len().max(1) as f64;
        MetricsRow {
            round: self.round,
            test_accuracy: self.test_accuracy,
            scheduled_count: self.scheduled_count,
            scheduled_data_volume: self.scheduled_data_volume,
            cum_energy_max: self.cumulative_energy.iter().copied().fold(0.0, f64::max),
            cum_energy_mean: self.cumulative_energy.iter().sum::<f64>() / n,
            max_queue: self.max_queue,
            dpp_objective: self.dpp_objective,
            bytes_uploaded: self.bytes_uploaded,
        }
    }
}

impl MetricsRow {
    /// Every float rounded to nine significant digits, as written to CSV.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| sig9(x).parse::<f64>().unwrap_or(f64::NAN);
        Self {
            test_accuracy: r(self.test_accuracy),
            cum_energy_max: r(self.cum_energy_max),
            cum_energy_mean: r(self.cum_energy_mean),
            max_queue: r(self.max_queue),
            dpp_objective: r(self.dpp_objective),
            ..self.clone()
        }
    }

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.round,
            sig9(self.test_accuracy),
            self.scheduled_count,
            self.scheduled_data_volume,
            sig9(self.cum_energy_max),
            sig9(self.cum_energy_mean),
            sig9(self.max_queue),
            sig9(self.dpp_objective),
            self.bytes_uploaded
        )
    }
}

/// Shortest decimal that reads back as `x` rounded to nine significant digits.
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    // drop the sign of negative zero so output does not depend on it
    format!("{}", rounded + 0.0)
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.row().to_csv());
        out.push('\n');
    }
    out
}

pub fn emit_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(Error::io_at(path))?;
    file.write_all(metrics_csv(records).as_bytes()).map_err(Error::io_at(path))?;
    Ok(())
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<MetricsRow>> {
    let bad = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(CSV_HEADER) => {}
        other => return Err(bad(1, format!("unexpected header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(bad(i + 2, format!("expected 9 columns, found {}", fields.len())));
            }
            let f = |j: usize| fields[j].parse::<f64>().map_err(|e| bad(i + 2, format!("column {j}: {e}")));
            let u = |j: usize| fields[j].parse::<u64>().map_err(|e| bad(i + 2, format!("column {j}: {e}")));
            Ok(MetricsRow {
                round: u(0)? as usize,
                test_accuracy: f(1)?,
                scheduled_count: u(2)? as usize,
                scheduled_data_volume: u(3)? as usize,
                cum_energy_max: f(4)?,
                cum_energy_mean: f(5)?,
                max_queue: f(6)?,
                dpp_objective: f(7)?,
                bytes_uploaded: u(8)?,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics(&fs::read_to_string(path).map_err(Error::io_at(path))?, path)
}
