//! Rectangular datasets and their CSV and JSON forms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value as Json};

use crate::value::{DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("JSON: {0}")]
    Json(String),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("row {row}, column {column}: cannot read {literal:?} as {datatype}")]
    Cell {
        row: usize,
        column: String,
        literal: String,
        datatype: DataType,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub id: String,
    pub datatype: DataType,
}

impl Column {
    pub fn new(id: &str, datatype: DataType) -> Self {
        Column {
            id: id.to_string(),
            datatype,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub header: Vec<Column>,
    pub rows: Vec<Vec<Option<Value>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn from_token(token: &str) -> Option<ExportFormat> {
        match token.to_ascii_lowercase().as_str() {
            "csv" => Some(ExportFormat::Csv),
            "json" => Some(ExportFormat::Json),
            _ => None,
        }
    }
}

fn csv_field(out: &mut String, text: &str) {
    if text.is_empty() || text.contains([',', '"', '\n', '\r']) {
        out.push('"');
        out.push_str(&text.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(text);
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Real(r) => format!("{r:?}"),
        other => other.to_string(),
    }
}

/// Splits CSV text into records of fields. Quoted fields are returned as
/// `Some`, unquoted empty fields as `None`.
fn csv_records(text: &str) -> Result<Vec<Vec<Option<String>>>, TableError> {
    let mut records = Vec::new();
    let mut record: Vec<Option<String>> = Vec::new();
    let mut field = String::new();
    let mut quoted = false;
    let mut chars = text.chars().peekable();
    let mut line = 1;
    let mut at_field_start = true;
    let end_field = |record: &mut Vec<Option<String>>, field: &mut String, quoted: &mut bool| {
        let f = std::mem::take(field);
        record.push(if f.is_empty() && !*quoted { None } else { Some(f) });
        *quoted = false;
    };
    while let Some(c) = chars.next() {
        match c {
            '"' if at_field_start => {
                quoted = true;
                at_field_start = false;
                loop {
                    match chars.next() {
                        Some('"') if chars.peek() == Some(&'"') => {
                            chars.next();
                            field.push('"');
                        }
                        Some('"') => break,
                        Some(ch) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            field.push(ch);
                        }
                        None => {
                            return Err(TableError::Csv {
                                line,
                                message: "unterminated quoted field".into(),
                            })
                        }
                    }
                }
                if !matches!(chars.peek(), None | Some(',') | Some('\n') | Some('\r')) {
                    return Err(TableError::Csv {
                        line,
                        message: "text after closing quote".into(),
                    });
                }
            }
            ',' => {
                end_field(&mut record, &mut field, &mut quoted);
                at_field_start = true;
            }
            '\r' if chars.peek() == Some(&'\n') => {}
            '\n' => {
                end_field(&mut record, &mut field, &mut quoted);
                records.push(std::mem::take(&mut record));
                at_field_start = true;
                line += 1;
            }
            '"' => {
                return Err(TableError::Csv {
                    line,
                    message: "quote inside unquoted field".into(),
                })
            }
            _ => {
                field.push(c);
                at_field_start = false;
            }
        }
    }
    if !at_field_start || !record.is_empty() || quoted {
        end_field(&mut record, &mut field, &mut quoted);
        records.push(record);
    }
    Ok(records)
}

fn parse_cell(row: usize, column: &Column, literal: &str) -> Result<Value, TableError> {
    Value::parse(column.datatype, literal).map_err(|_| TableError::Cell {
        row,
        column: column.id.clone(),
        literal: literal.to_string(),
        datatype: column.datatype,
    })
}

impl Dataset {
    pub fn new(header: Vec<Column>) -> Self {
        Dataset { header, rows: Vec::new() }
    }

    pub fn column_index(&self, id: &str) -> Option<usize> {
        self.header.iter().position(|c| c.id == id)
    }

    /// Values of one column.
    pub fn column(&self, id: &str) -> Option<Vec<Option<&Value>>> {
        let i = self.column_index(id)?;
        Some(self.rows.iter().map(|r| r[i].as_ref()).collect())
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Csv => self.to_csv(),
            ExportFormat::Json => self.to_json(),
        }
    }

    /// CSV with a header row. Nulls are empty fields; empty strings are
    /// written as `""`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.header.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            csv_field(&mut out, &c.id);
        }
        out.push_str("\r\n");
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if let Some(v) = cell {
                    csv_field(&mut out, &cell_text(v));
                }
            }
            out.push_str("\r\n");
        }
        out
    }

    pub fn from_csv(text: &str, header: &[Column]) -> Result<Dataset, TableError> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let mut records = csv_records(text)?.into_iter();
        let found: Vec<String> = records
            .next()
            .unwrap_or_default()
            .into_iter()
            .map(Option::unwrap_or_default)
            .collect();
        let expected: Vec<String> = header.iter().map(|c| c.id.clone()).collect();
        if found != expected {
            return Err(TableError::Header { expected, found });
        }
        let mut dataset = Dataset::new(header.to_vec());
        for (r, record) in records.enumerate() {
            if record.len() != header.len() {
                return Err(TableError::Csv {
                    line: r + 2,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let row = record
                .iter()
                .zip(header)
                .map(|(f, c)| f.as_deref().map(|s| parse_cell(r, c, s)).transpose())
                .collect::<Result<Vec<_>, _>>()?;
            dataset.rows.push(row);
        }
        Ok(dataset)
    }

    /// JSON array of objects keyed by column id, nulls explicit.
    pub fn to_json(&self) -> String {
        let rows: Vec<Json> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (c, cell) in self.header.iter().zip(row) {
                    let v = match cell {
                        None => Json::Null,
                        Some(Value::Integer(i)) => Json::from(*i),
                        Some(Value::Real(r)) => Number::from_f64(*r).map_or(Json::Null, Json::Number),
                        Some(Value::Boolean(b)) => Json::Bool(*b),
                        Some(other) => Json::String(other.to_string()),
                    };
                    obj.insert(c.id.clone(), v);
                }
                Json::Object(obj)
            })
            .collect();
        let mut out = serde_json::to_string_pretty(&rows).expect("dataset serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str, header: &[Column]) -> Result<Dataset, TableError> {
        let rows: Vec<Map<String, Json>> = serde_json::from_str(text).map_err(|e| TableError::Json(e.to_string()))?;
        let mut dataset = Dataset::new(header.to_vec());
        for (r, obj) in rows.iter().enumerate() {
            let found: Vec<String> = obj.keys().cloned().collect();
            let expected: Vec<String> = header.iter().map(|c| c.id.clone()).collect();
            if found != expected {
                return Err(TableError::Header { expected, found });
            }
            let mut row = Vec::with_capacity(header.len());
            for c in header {
                let cell = match &obj[&c.id] {
                    Json::Null => None,
                    Json::String(s) => Some(parse_cell(r, c, s)?),
                    Json::Bool(b) if c.datatype == DataType::Boolean => Some(Value::Boolean(*b)),
                    Json::Number(n) if c.datatype == DataType::Integer && n.is_i64() => Some(Value::Integer(n.as_i64().unwrap())),
                    Json::Number(n) if c.datatype == DataType::Real => n.as_f64().map(Value::Real),
                    other => {
                        return Err(TableError::Cell {
                            row: r,
                            column: c.id.clone(),
                            literal: other.to_string(),
                            datatype: c.datatype,
                        })
                    }
                };
                row.push(cell);
            }
            dataset.rows.push(row);
        }
        Ok(dataset)
    }

    /// Plain-text rendering for terminals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.iter().map(|c| c.id.as_str()).collect::<Vec<_>>().join("\t"));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.as_ref().map(cell_text).unwrap_or_default()).collect();
            let _ = writeln!(out, "{}", cells.join("\t"));
        }
        out
    }
}
