//! Whitespace-separated plot data (gnuplot `index` blocks) from experiment CSVs.
//!
//! Layout:
//!
//! ```text
//! # columns: eta policy data_quality ...
//! # series: dqn fixed:1
//! 0 dqn 0.93 ...
//! 0.2 dqn 0.91 ...
//!
//!
//! 0 fixed:1 1 ...
//! ```
//!
//! Rows keep their CSV order; a new block (two blank lines) starts whenever
//! the `policy` column changes. Empty CSV fields are written as `?`.

use super::ExperimentError;

const MISSING: &str = "?";

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotData {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn parse_csv(csv: &str) -> Result<PlotData, ExperimentError> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| ExperimentError::Config("empty CSV".into()))?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != columns.len() {
            return Err(ExperimentError::Config(format!("CSV row {} has {} fields, expected {}", i + 2, row.len(), columns.len())));
        }
        if let Some(bad) = row.iter().find(|f| f.contains(char::is_whitespace) || f.as_str() == MISSING) {
            return Err(ExperimentError::Config(format!("CSV field '{bad}' cannot be written as plot data")));
        }
        rows.push(row);
    }
    Ok(PlotData { columns, rows })
}

/// Convert an experiment CSV into plot data.
pub fn emit_plotdata(csv: &str) -> Result<String, ExperimentError> {
    let data = parse_csv(csv)?;
    let key = data.columns.iter().position(|c| c == "policy");
    let label = |row: &Vec<String>| key.map_or(String::new(), |k| row[k].clone());

    let mut series: Vec<String> = Vec::new();
    let mut body = String::new();
    let mut previous: Option<String> = None;
    for row in &data.rows {
        let current = label(row);
        if previous.as_ref() != Some(&current) {
            if previous.is_some() {
                body.push_str("\n\n");
            }
            series.push(current.clone());
            previous = Some(current);
        }
        let fields: Vec<&str> = row.iter().map(|f| if f.is_empty() { MISSING } else { f.as_str() }).collect();
        body.push_str(&fields.join(" "));
        body.push('\n');
    }
    let mut out = format!("# columns: {}\n", data.columns.join(" "));
    if key.is_some() {
        out.push_str(&format!("# series: {}\n", series.join(" ")));
    }
    out.push_str(&body);
    Ok(out)
}

/// Read plot data written by [`emit_plotdata`] back into its table.
pub fn parse_plotdata(text: &str) -> Result<PlotData, ExperimentError> {
    let mut columns = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# columns:") {
            columns = Some(rest.split_whitespace().map(str::to_string).collect::<Vec<_>>());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row: Vec<String> = line.split_whitespace().map(|f| if f == MISSING { String::new() } else { f.to_string() }).collect();
        rows.push(row);
    }
    let columns = columns.ok_or_else(|| ExperimentError::Config("plot data has no column header".into()))?;
    if let Some(row) = rows.iter().find(|r| r.len() != columns.len()) {
        return Err(ExperimentError::Config(format!("plot row has {} fields, expected {}", row.len(), columns.len())));
    }
    Ok(PlotData { columns, rows })
}
