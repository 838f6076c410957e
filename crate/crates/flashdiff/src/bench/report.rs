//! Result rows, CSV emission, and the aligned text table.
//!
//! The CSV schema is fixed and documented by [`RESULT_COLUMNS`]; the file
//! round-trips through [`parse_csv`] byte-for-byte, and identical seeds
//! produce identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Column order of every emitted CSV.
pub const RESULT_COLUMNS: [&str; 11] = [
    "experiment",
    "driver",
    "variant",
    "x_name",
    "x_value",
    "ops",
    "read_us_per_op",
    "write_us_per_op",
    "gc_us_per_op",
    "overall_us_per_op",
    "erases_per_op",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub driver: String,
    /// Extra sweep dimension, e.g. `k=5` or `t_write=500`. Empty when unused.
    pub variant: String,
    pub x_name: String,
    pub x_value: f64,
    pub ops: u64,
    pub read_us_per_op: f64,
    pub write_us_per_op: f64,
    pub gc_us_per_op: f64,
    pub overall_us_per_op: f64,
    pub erases_per_op: f64,
}

impl ResultRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.driver.clone(),
            self.variant.clone(),
            self.x_name.clone(),
            format!("{:.3}", self.x_value),
            self.ops.to_string(),
            format!("{:.3}", self.read_us_per_op),
            format!("{:.3}", self.write_us_per_op),
            format!("{:.3}", self.gc_us_per_op),
            format!("{:.3}", self.overall_us_per_op),
            format!("{:.6}", self.erases_per_op),
        ]
    }

    fn from_fields(fields: &[&str]) -> Result<ResultRow, String> {
        if fields.len() != RESULT_COLUMNS.len() {
            return Err(format!("expected {} fields, found {}", RESULT_COLUMNS.len(), fields.len()));
        }
        let num = |i: usize| -> Result<f64, String> {
            fields[i].parse::<f64>().map_err(|e| format!("column {}: {e}", RESULT_COLUMNS[i]))
        };
        Ok(ResultRow {
            experiment: fields[0].to_string(),
            driver: fields[1].to_string(),
            variant: fields[2].to_string(),
            x_name: fields[3].to_string(),
            x_value: num(4)?,
            ops: fields[5].parse().map_err(|e| format!("column ops: {e}"))?,
            read_us_per_op: num(6)?,
            write_us_per_op: num(7)?,
            gc_us_per_op: num(8)?,
            overall_us_per_op: num(9)?,
            erases_per_op: num(10)?,
        })
    }
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    out.push_str(&RESULT_COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.fields().join(","));
        out.push('\n');
    }
    out
}

/// Parse a CSV produced by [`to_csv`]. No quoting: none of the emitted
/// fields may contain commas.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty csv")?;
    if header != RESULT_COLUMNS.join(",") {
        return Err(format!("unexpected header: {header}"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        rows.push(ResultRow::from_fields(&fields).map_err(|e| format!("line {}: {e}", i + 2))?);
    }
    Ok(rows)
}

/// Render rows as an aligned, human-readable table.
pub fn render_table(rows: &[ResultRow]) -> String {
    let mut cells: Vec<Vec<String>> = vec![RESULT_COLUMNS.iter().map(|s| s.to_string()).collect()];
    cells.extend(rows.iter().map(|r| r.fields()));
    let widths: Vec<usize> = (0..RESULT_COLUMNS.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:>width$}", width = widths[c]);
        }
        out.push('\n');
    }
    out
}

/// Write the CSV file (when a path is given) and return the text table.
pub fn emit_report(rows: &[ResultRow], csv_path: Option<&Path>) -> std::io::Result<String> {
    if let Some(path) = csv_path {
        fs::write(path, to_csv(rows))?;
    }
    Ok(render_table(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ResultRow> {
        vec![
            ResultRow {
                experiment: "exp1".into(),
                driver: "PDL(256B)".into(),
                variant: String::new(),
                x_name: "n_updates_till_write".into(),
                x_value: 1.0,
                ops: 1000,
                read_us_per_op: 218.3,
                write_us_per_op: 350.75,
                gc_us_per_op: 12.5,
                overall_us_per_op: 569.05,
                erases_per_op: 0.004211,
            },
            ResultRow {
                experiment: "exp1".into(),
                driver: "OPU".into(),
                variant: "k=5".into(),
                x_name: "n_updates_till_write".into(),
                x_value: 5.0,
                ops: 1000,
                read_us_per_op: 110.0,
                write_us_per_op: 2020.0,
                gc_us_per_op: 80.0,
                overall_us_per_op: 2130.0,
                erases_per_op: 0.052,
            },
        ]
    }

    #[test]
    fn csv_round_trips_through_own_parser() {
        let rows = sample();
        let csv = to_csv(&rows);
        let parsed = parse_csv(&csv).unwrap();
        assert_eq!(to_csv(&parsed), csv, "re-serialization is byte-identical");
        assert_eq!(parsed.len(), rows.len());
    }

    #[test]
    fn header_matches_documented_schema() {
        let csv = to_csv(&sample());
        assert!(csv.starts_with("experiment,driver,variant,x_name,x_value,ops,"));
    }

    #[test]
    fn table_is_aligned() {
        let table = render_table(&sample());
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].len(), lines[1].len());
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(parse_csv("nonsense\n").is_err());
        let mut csv = to_csv(&sample());
        csv.push_str("exp1,OPU\n");
        assert!(parse_csv(&csv).is_err());
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let path = std::path::Path::new("/nonexistent-dir/out.csv");
        assert!(emit_report(&sample(), Some(path)).is_err());
    }
}
