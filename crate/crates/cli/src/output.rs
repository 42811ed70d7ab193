use std::io::Write;

use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Rows of one command's output. Values are JSON scalars; in CSV, `null`
/// becomes an empty field.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .map(|c| c.to_string())
                        .zip(r.iter().cloned())
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// What a command produced: a table for CSV, a document for JSON, and a
/// one-line summary for the terminal.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub table: Table,
    pub json: Value,
    pub summary: Option<String>,
}

impl Report {
    pub fn from_table(table: Table, summary: Option<String>) -> Self {
        let mut doc = Map::new();
        doc.insert("rows".into(), table.to_json());
        if let Some(s) = &summary {
            doc.insert("summary".into(), Value::String(s.clone()));
        }
        Report {
            table,
            json: Value::Object(doc),
            summary,
        }
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::new();
        match format {
            Format::Csv => self.table.write_csv(&mut buf)?,
            Format::Json => {
                serde_json::to_writer_pretty(&mut buf, &self.json).map_err(|e| CliError::runtime(e.to_string()))?;
                buf.push(b'\n');
            }
        }
        Ok(buf)
    }
}

pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}
