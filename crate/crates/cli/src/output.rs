//! Result documents. Numbers go through [`num`], which writes `±∞` as the
//! strings `"inf"`/`"-inf"` and refuses NaN, so every document is valid JSON
//! with no silent `null`s.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

#[derive(Debug)]
pub struct NanError(pub String);

/// Accumulates the first NaN encountered while building a document.
#[derive(Default)]
pub struct Doc {
    nan: Option<String>,
}

impl Doc {
    pub fn num(&mut self, field: &str, v: f64) -> Value {
        if v.is_nan() {
            self.nan.get_or_insert_with(|| field.to_string());
            Value::Null
        } else if v == f64::INFINITY {
            Value::String("inf".into())
        } else if v == f64::NEG_INFINITY {
            Value::String("-inf".into())
        } else {
            Value::from(v)
        }
    }

    pub fn nums(&mut self, field: &str, v: &[f64]) -> Value {
        Value::Array(v.iter().map(|x| self.num(field, *x)).collect())
    }

    pub fn finish(self, value: Value) -> Result<Value, NanError> {
        match self.nan {
            Some(field) => Err(NanError(format!("NaN in output field '{field}'"))),
            None => Ok(value),
        }
    }
}

/// JSON object from `(key, value)` pairs. Keys come out sorted, which keeps
/// documents byte-stable.
pub fn object<I: IntoIterator<Item = (&'static str, Value)>>(pairs: I) -> Value {
    let mut m = Map::new();
    for (k, v) in pairs {
        m.insert(k.to_string(), v);
    }
    Value::Object(m)
}

/// CSV text: optional `# key=value` comment line, then a header and rows.
pub fn csv_text(comment: Option<String>, header: &[String], rows: &[Vec<String>]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is utf-8");
    Ok(match comment {
        Some(c) => format!("# {c}\n{body}"),
        None => body,
    })
}

/// Formats a float for CSV with the same infinity convention as JSON.
pub fn cell(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:e}")
    }
}

pub fn emit(text: &str, out: Option<&Path>) -> std::io::Result<()> {
    match out {
        Some(path) => fs::write(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()
        }
    }
}
