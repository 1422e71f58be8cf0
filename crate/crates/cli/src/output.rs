//! CSV tables with `#`-prefixed metadata lines.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::CliError;

pub struct Table {
    meta: Vec<(String, String)>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Table {
            meta: vec![("schema".into(), schema.into())],
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn render(&self, timestamp: bool) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}: {v}").expect("write to memory");
        }
        if timestamp {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            writeln!(out, "# generated_unix: {secs}").expect("write to memory");
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(|e| CliError::io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::io(e.to_string()))?;
        }
        w.into_inner().map_err(|e| CliError::io(e.to_string()))
    }

    /// Writes to `path`, or to stdout when `path` is `None`.
    pub fn emit(&self, path: Option<&Path>, timestamp: bool) -> Result<(), CliError> {
        let bytes = self.render(timestamp)?;
        match path {
            Some(p) => write_file(p, &bytes),
            None => std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| CliError::io(format!("stdout: {e}"))),
        }
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
