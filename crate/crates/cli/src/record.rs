use std::fs;
use std::path::Path;

use augrkhs::csvio::fmt_f64;
use serde_json::{Map, Value as Json};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Int(i64),
    UInt(u64),
    Float(f64),
    Bool(bool),
    Empty,
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Int(i) => i.to_string(),
            Value::UInt(i) => i.to_string(),
            Value::Float(f) => fmt_f64(*f),
            Value::Bool(b) => b.to_string(),
            Value::Empty => String::new(),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Str(s) => Json::String(s.clone()),
            Value::Int(i) => Json::from(*i),
            Value::UInt(i) => Json::from(*i),
            Value::Float(f) => Json::from(*f),
            Value::Bool(b) => Json::Bool(*b),
            Value::Empty => Json::Null,
        }
    }

    fn is_finite(&self) -> bool {
        !matches!(self, Value::Float(f) if !f.is_finite())
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::UInt(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Empty, Into::into)
    }
}

/// Rows sharing one header. The first column is always `schema`, the last `error`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: &'static str,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    /// `columns` excludes `schema` and `error`.
    pub fn new(schema: &'static str, columns: &[&'static str]) -> Self {
        Self { schema, columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["schema"];
        h.extend(&self.columns);
        h.push("error");
        h
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header().iter().position(|c| *c == name)
    }

    /// Appends a successful row; a non-finite number turns it into a failure row.
    pub fn push(&mut self, values: Vec<Value>) {
        assert_eq!(values.len(), self.columns.len(), "row width for {}", self.schema);
        let mut row = vec![Value::from(self.schema)];
        match values.iter().position(|v| !v.is_finite()) {
            Some(i) => {
                let msg = format!("non-finite value in `{}`", self.columns[i]);
                row.extend(values.into_iter().map(|v| if v.is_finite() { v } else { Value::Empty }));
                row.push(Value::Str(msg));
            }
            None => {
                row.extend(values);
                row.push(Value::Empty);
            }
        }
        self.rows.push(row);
    }

    /// Failure row: the leading `key` columns are filled, the rest left blank.
    pub fn push_error(&mut self, key: Vec<Value>, message: String) {
        let mut row = vec![Value::from(self.schema)];
        let filled = key.len();
        row.extend(key);
        row.extend(std::iter::repeat_n(Value::Empty, self.columns.len() - filled));
        row.push(Value::Str(message));
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Table) {
        assert_eq!(self.columns, other.columns);
        self.rows.extend(other.rows);
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.last() != Some(&Value::Empty)).count()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Value::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// One JSON object per line; blank fields are omitted.
    pub fn to_json_lines(&self) -> String {
        let header = self.header();
        let mut out = String::new();
        for row in &self.rows {
            let obj: Map<String, Json> = header
                .iter()
                .zip(row)
                .filter(|(_, v)| **v != Value::Empty)
                .map(|(k, v)| (k.to_string(), v.to_json()))
                .collect();
            out.push_str(&Json::Object(obj).to_string());
            out.push('\n');
        }
        out
    }
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let err = |source| CliError::Write { path: path.into(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_errors() {
        let mut t = Table::new("demo/1", &["name", "x", "ok"]);
        t.push(vec!["a".into(), 0.5.into(), true.into()]);
        t.push(vec!["b".into(), f64::NAN.into(), false.into()]);
        t.push_error(vec!["c, quoted".into()], "boom".into());
        assert_eq!(t.failures(), 2);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "schema,name,x,ok,error");
        assert_eq!(lines[1], "demo/1,a,5.0000000000000000e-1,true,");
        assert_eq!(lines[2], "demo/1,b,,false,non-finite value in `x`");
        assert_eq!(lines[3], "demo/1,\"c, quoted\",,,boom");
        let json = t.to_json_lines();
        let first: Json = serde_json::from_str(json.lines().next().unwrap()).unwrap();
        assert_eq!(first["x"], 0.5);
        assert!(first.get("error").is_none());
    }
}
