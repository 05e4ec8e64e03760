//! Long-format result tables, CSV and JSON output with atomic writes.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::Error;

/// One emitted number with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub quantity: String,
    pub fiber: Option<i64>,
    pub level: Option<f64>,
    pub k: Option<i64>,
    pub value: f64,
    pub tolerance: f64,
    /// `None` for informational rows.
    pub pass: Option<bool>,
}

impl Row {
    pub fn info(quantity: &str, value: f64, tolerance: f64) -> Self {
        Self { quantity: quantity.into(), fiber: None, level: None, k: None, value, tolerance, pass: None }
    }

    pub fn check(quantity: &str, value: f64, tolerance: f64, pass: bool) -> Self {
        Self { pass: Some(pass), ..Self::info(quantity, value, tolerance) }
    }

    pub fn fiber(mut self, k: i64) -> Self {
        self.fiber = Some(k);
        self
    }

    pub fn level(mut self, l: f64) -> Self {
        self.level = Some(l);
        self
    }

    pub fn lag(mut self, k: i64) -> Self {
        self.k = Some(k);
        self
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Table {
    pub name: String,
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
}

impl Table {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn failures(&self) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.pass == Some(false)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn find(&self, quantity: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    fn records(&self) -> Vec<Vec<String>> {
        let opt = |o: Option<String>| o.unwrap_or_default();
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.quantity.clone(),
                    opt(r.fiber.map(|v| v.to_string())),
                    opt(r.level.map(fmt_num)),
                    opt(r.k.map(|v| v.to_string())),
                    fmt_num(r.value),
                    fmt_num(r.tolerance),
                    opt(r.pass.map(|p| p.to_string())),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        write_csv_atomic(path, &["quantity", "fiber", "level", "k", "value", "tolerance", "pass"], &self.records())
    }
}

/// Shortest round-trip representation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn persist(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Comma-separated, header row, LF line endings; written via temp file + rename.
pub fn write_csv_atomic(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    persist(path, &bytes)
}

pub fn write_text_atomic(path: &Path, text: &str) -> Result<(), Error> {
    persist(path, text.as_bytes())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    s.push('\n');
    persist(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_deterministic_and_lf() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("t");
        t.push(Row::check("theta", 0.5, 1e-2, true).fiber(3).level(100.0));
        t.push(Row::info("lambda", 1.0 / 3.0, 1e-12));
        let p = dir.path().join("a.csv");
        t.write_csv(&p).unwrap();
        let a = std::fs::read(&p).unwrap();
        t.write_csv(&p).unwrap();
        assert_eq!(a, std::fs::read(&p).unwrap());
        let s = String::from_utf8(a).unwrap();
        assert!(!s.contains('\r'));
        assert!(s.starts_with("quantity,fiber,level,k,value,tolerance,pass\ntheta,3,100.0,,0.5,0.01,true\n"));
    }
}
