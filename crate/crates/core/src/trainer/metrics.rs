//! Per-epoch metric lines, written as JSON objects one per line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub objective: Option<f64>,
    pub l1: Option<f64>,
    pub wall_ms: Option<u64>,
}

impl EpochMetrics {
    pub fn new(epoch: usize, split: &str) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            loss: None,
            balanced_accuracy: None,
            objective: None,
            l1: None,
            wall_ms: None,
        }
    }
}

pub trait MetricsSink {
    fn record(&mut self, m: &EpochMetrics) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &EpochMetrics) -> Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<EpochMetrics> {
    fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        self.push(m.clone());
        Ok(())
    }
}

/// JSON-lines file. In canonical mode wall-clock times are written as
/// `null` so reruns are byte-identical.
pub struct JsonlSink {
    out: BufWriter<File>,
    canonical: bool,
}

impl JsonlSink {
    pub fn create(path: &Path, canonical: bool) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            canonical,
        })
    }

    pub fn append(path: &Path, canonical: bool) -> Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            canonical,
        })
    }
}

impl MetricsSink for JsonlSink {
    fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        let mut m = m.clone();
        if self.canonical {
            m.wall_ms = None;
        }
        let line = serde_json::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}
