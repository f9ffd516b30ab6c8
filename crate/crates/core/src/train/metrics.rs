use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One logged value.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub iteration: u64,
    pub name: String,
    pub value: f64,
}

/// Tab-separated `iter<TAB>name<TAB>value` lines, kept in memory and
/// optionally streamed to a file.
#[derive(Debug, Default)]
pub struct MetricsLog {
    records: Vec<MetricRecord>,
    sink: Option<(BufWriter<File>, std::path::PathBuf)>,
}

impl MetricsLog {
    pub fn new() -> Self {
        MetricsLog::default()
    }

    /// Appends to `path`, creating it if needed.
    pub fn to_file(path: &Path) -> Result<Self> {
        let f = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog {
            records: Vec::new(),
            sink: Some((BufWriter::new(f), path.to_path_buf())),
        })
    }

    pub fn push(&mut self, iteration: u64, name: &str, value: f64) -> Result<()> {
        if let Some((w, path)) = &mut self.sink {
            writeln!(w, "{iteration}\t{name}\t{value}").map_err(|e| Error::io(path.clone(), e))?;
        }
        self.records.push(MetricRecord {
            iteration,
            name: name.to_string(),
            value,
        });
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    /// Last value logged under `name`.
    pub fn last(&self, name: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn to_tsv(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.iteration, r.name, r.value))
            .collect()
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((w, path)) = &mut self.sink {
            w.flush().map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }
}

impl Drop for MetricsLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
