//! Task-by-condition accuracy tables with an Overall column, rendered as
//! Markdown, CSV or JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scenarios::Condition;
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(EvalError::Parse(format!("unknown report format `{other}`"))),
        }
    }
}

/// Arithmetic mean of a row's cells, rounded to 2 decimals. NaN marks a
/// cell that was not evaluated and is left out.
pub fn aggregate_overall(cells: &[f64]) -> f64 {
    let present: Vec<f64> = cells.iter().copied().filter(|v| !v.is_nan()).collect();
    if present.is_empty() {
        return 0.0;
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    (mean * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub model: String,
    /// One `[c, n, r, n+r]` accuracy quadruple per task, in table order.
    /// NaN marks a condition that was not evaluated (`null` in JSON).
    #[serde(with = "nan_as_null")]
    pub cells: Vec<[f64; 4]>,
}

impl ResultsRow {
    pub fn flat(&self) -> Vec<f64> {
        self.cells.iter().flatten().copied().collect()
    }

    pub fn overall(&self) -> f64 {
        aggregate_overall(&self.flat())
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(cells: &[[f64; 4]], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<[Option<f64>; 4]> = cells.iter().map(|q| q.map(|x| (!x.is_nan()).then_some(x))).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[f64; 4]>, D::Error> {
        let v: Vec<[Option<f64>; 4]> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|q| q.map(|x| x.unwrap_or(f64::NAN))).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub tasks: Vec<String>,
    pub rows: Vec<ResultsRow>,
}

impl ResultsTable {
    pub fn new(tasks: Vec<String>) -> Self {
        ResultsTable { tasks, rows: Vec::new() }
    }

    pub fn push(&mut self, model: impl Into<String>, cells: Vec<[f64; 4]>) -> Result<(), EvalError> {
        if cells.len() != self.tasks.len() {
            return Err(EvalError::Parse(format!("{} task cells for {} tasks", cells.len(), self.tasks.len())));
        }
        self.rows.push(ResultsRow { model: model.into(), cells });
        Ok(())
    }

    /// Column titles after the model column: task-major, conditions in
    /// c, n, r, n+r order, Overall last.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> =
            self.tasks.iter().flat_map(|t| Condition::ALL.iter().map(move |c| format!("{t} {c}"))).collect();
        cols.push("Overall".to_string());
        cols
    }
}

#[derive(Serialize)]
struct JsonRow<'a> {
    model: &'a str,
    cells: BTreeMap<String, f64>,
    overall: f64,
}

pub fn render_report(table: &ResultsTable, format: ReportFormat) -> Result<String, EvalError> {
    let cols = table.columns();
    match format {
        ReportFormat::Markdown => {
            let mut s = String::from("| Model |");
            for c in &cols {
                write!(s, " {c} |").expect("string write");
            }
            s.push_str("\n|---|");
            s.push_str(&"---:|".repeat(cols.len()));
            s.push('\n');
            for r in &table.rows {
                write!(s, "| {} |", r.model).expect("string write");
                for v in r.flat() {
                    if v.is_nan() {
                        s.push_str(" - |");
                    } else {
                        write!(s, " {v:.2} |").expect("string write");
                    }
                }
                writeln!(s, " {:.2} |", r.overall()).expect("string write");
            }
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["model".to_string()];
            header.extend(cols);
            w.write_record(&header)?;
            for r in &table.rows {
                let mut rec = vec![r.model.clone()];
                rec.extend(r.flat().iter().map(|v| v.to_string()));
                rec.push(r.overall().to_string());
                w.write_record(&rec)?;
            }
            let bytes = w.into_inner().map_err(|e| EvalError::Parse(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
        }
        ReportFormat::Json => {
            let rows: Vec<JsonRow> = table
                .rows
                .iter()
                .map(|r| JsonRow {
                    model: &r.model,
                    cells: cols.iter().zip(r.flat()).map(|(c, v)| (c.clone(), v)).collect(),
                    overall: r.overall(),
                })
                .collect();
            let doc = serde_json::json!({ "columns": table.columns(), "tasks": table.tasks, "rows": rows });
            Ok(serde_json::to_string_pretty(&doc).expect("json serializes") + "\n")
        }
    }
}

/// Parses a CSV produced by [`render_report`].
pub fn parse_csv_report(text: &str) -> Result<ResultsTable, EvalError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "model" || header.last().map(String::as_str) != Some("Overall") {
        return Err(EvalError::Parse("CSV header must start with `model` and end with `Overall`".into()));
    }
    let cells = &header[1..header.len() - 1];
    if !cells.len().is_multiple_of(4) {
        return Err(EvalError::Parse("cell columns are not a multiple of four".into()));
    }
    let mut tasks = Vec::new();
    for (i, col) in cells.iter().enumerate() {
        let (task, cond) =
            col.rsplit_once(' ').ok_or_else(|| EvalError::Parse(format!("column `{col}` is not `TASK COND`")))?;
        if cond.parse::<Condition>()?.index() != i % 4 {
            return Err(EvalError::Parse(format!("column `{col}` out of order")));
        }
        if i % 4 == 0 {
            tasks.push(task.to_string());
        } else if tasks.last().map(String::as_str) != Some(task) {
            return Err(EvalError::Parse(format!("column `{col}` breaks task grouping")));
        }
    }
    let mut table = ResultsTable::new(tasks);
    for rec in rd.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .take(cells.len())
            .map(|v| v.parse::<f64>().map_err(|e| EvalError::Parse(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        let quads = values.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        table.push(rec.get(0).unwrap_or_default(), quads)?;
    }
    Ok(table)
}

/// One-column table of a breakdown (category to accuracy).
pub fn render_breakdown(
    title: &str,
    results: &BTreeMap<String, f64>,
    format: ReportFormat,
) -> Result<String, EvalError> {
    match format {
        ReportFormat::Markdown => {
            let mut s = format!("| {title} | Accuracy |\n|---|---:|\n");
            for (k, v) in results {
                writeln!(s, "| {k} | {v:.2} |").expect("string write");
            }
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([title, "accuracy"])?;
            for (k, v) in results {
                w.write_record([k.clone(), v.to_string()])?;
            }
            let bytes = w.into_inner().map_err(|e| EvalError::Parse(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
        }
        ReportFormat::Json => Ok(serde_json::to_string_pretty(results).expect("json serializes") + "\n"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overall_of_equal_values() {
        assert_eq!(aggregate_overall(&[61.5; 12]), 61.5);
    }

    #[test]
    fn empty_table_renders_header_only() {
        let t = ResultsTable::new(vec!["KS".into()]);
        let csv = render_report(&t, ReportFormat::Csv).unwrap();
        assert_eq!(csv, "model,KS c,KS n,KS r,KS n+r,Overall\n");
        let md = render_report(&t, ReportFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 2);
        let empty = render_report(&ResultsTable::default(), ReportFormat::Csv).unwrap();
        assert_eq!(empty, "model,Overall\n");
        assert_eq!(parse_csv_report(&empty).unwrap(), ResultsTable::default());
    }
}
