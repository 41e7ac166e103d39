//! Append-only per-step metrics CSV.
//!
//! All value columns are written with Rust's shortest-roundtrip float
//! formatting, so two runs producing identical numbers produce identical
//! bytes. wall_ms is physical time and is the only column allowed to differ
//! between otherwise identical runs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const HEADER: &str = "step,lr,m,l_byol,l_box_pred,l_box_reg,total,pair_count,wall_ms";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("metrics line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub m: f64,
    pub l_byol: f64,
    pub l_box_pred: f64,
    pub l_box_reg: f64,
    pub total: f64,
    pub pair_count: usize,
    pub wall_ms: u64,
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, MetricsError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{HEADER}")?;
        out.flush()?;
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, r: &MetricsRow) -> Result<(), MetricsError> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.lr, r.m, r.l_byol, r.l_box_pred, r.l_box_reg, r.total, r.pair_count,
            r.wall_ms
        )?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != HEADER {
                return Err(MetricsError::Parse { line: 1, detail: format!("bad header: {line}") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(MetricsError::Parse {
                line: i + 1,
                detail: format!("expected 9 fields, got {}", f.len()),
            });
        }
        let err = |d: &str| MetricsError::Parse { line: i + 1, detail: d.to_string() };
        rows.push(MetricsRow {
            step: f[0].parse().map_err(|_| err("step"))?,
            lr: f[1].parse().map_err(|_| err("lr"))?,
            m: f[2].parse().map_err(|_| err("m"))?,
            l_byol: f[3].parse().map_err(|_| err("l_byol"))?,
            l_box_pred: f[4].parse().map_err(|_| err("l_box_pred"))?,
            l_box_reg: f[5].parse().map_err(|_| err("l_box_reg"))?,
            total: f[6].parse().map_err(|_| err("total"))?,
            pair_count: f[7].parse().map_err(|_| err("pair_count"))?,
            wall_ms: f[8].parse().map_err(|_| err("wall_ms"))?,
        });
    }
    Ok(rows)
}

/// Row equality over every semantic column; wall time excluded.
pub fn rows_equal_ignoring_wall(a: &MetricsRow, b: &MetricsRow) -> bool {
    a.step == b.step
        && a.lr.to_bits() == b.lr.to_bits()
        && a.m.to_bits() == b.m.to_bits()
        && a.l_byol.to_bits() == b.l_byol.to_bits()
        && a.l_box_pred.to_bits() == b.l_box_pred.to_bits()
        && a.l_box_reg.to_bits() == b.l_box_reg.to_bits()
        && a.total.to_bits() == b.total.to_bits()
        && a.pair_count == b.pair_count
}
