//! Plain-text weight checkpoints: metadata pairs followed by named tensors.
//!
//! ```text
//! ssf-checkpoint 1
//! meta depth 2
//! tensor stem.weight 8 3 1 1
//! 0.12 -0.5 ...
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const MAGIC: &str = "ssf-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Invalid(format!("checkpoint metadata `{key}` missing or malformed")))
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if dims.iter().product::<usize>() != values.len() || name.contains(char::is_whitespace) {
            return Err(Error::Invalid(format!("tensor `{name}`: {} values for dims {dims:?}", values.len())));
        }
        self.tensors.push(NamedTensor { name, dims, values });
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Invalid(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MAGIC);
        s.push('\n');
        for (k, v) in &self.meta {
            s.push_str(&format!("meta {k} {v}\n"));
        }
        for t in &self.tensors {
            s.push_str(&format!("tensor {}", t.name));
            for d in &t.dims {
                s.push_str(&format!(" {d}"));
            }
            s.push('\n');
            let vals: Vec<String> = t.values.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::Invalid(format!("checkpoint line {line}: {what}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut ck = Checkpoint::default();
        while let Some((i, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad(i + 1, "meta without key"))?;
                    ck.meta.insert(key.to_string(), parts.next().unwrap_or("").to_string());
                }
                Some("tensor") => {
                    let mut fields = line.split_whitespace().skip(1);
                    let name = fields.next().ok_or_else(|| bad(i + 1, "tensor without name"))?;
                    let dims = fields.map(|d| d.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad(i + 1, "bad dims"))?;
                    let (j, values_line) = lines.next().ok_or_else(|| bad(i + 2, "missing values"))?;
                    let values = values_line
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(j + 1, "bad value"))?;
                    ck.push(name, dims, values).map_err(|e| bad(j + 1, &e.to_string()))?;
                }
                _ => return Err(bad(i + 1, "unknown record")),
            }
        }
        Ok(ck)
    }
}
