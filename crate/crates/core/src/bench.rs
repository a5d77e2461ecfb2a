//! Wall-clock comparison of network inference against multiplicative updates.

use std::io;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{NonNegMatrix, RegParams};
use crate::mu::iterate_h;
use crate::net::{infer, UnrolledModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub layers: usize,
    pub short_iters: usize,
    pub long_iters: usize,
    /// Timed repetitions per entry; the median is reported.
    pub repeats: usize,
    pub reg: RegParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            layers: 10,
            short_iters: 10,
            long_iters: 100,
            repeats: 20,
            reg: RegParams::NONE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    /// Layers for the network, update count for MU.
    pub iterations: usize,
    pub samples: Vec<f64>,
    pub median_seconds: f64,
    pub per_column_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub columns: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "iterations", "repeats", "median_seconds", "per_column_seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.iterations.to_string(),
                r.samples.len().to_string(),
                r.median_seconds.to_string(),
                r.per_column_seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 0 {
        (s[mid - 1] + s[mid]) / 2.0
    } else {
        s[mid]
    }
}

fn time_repeated(name: &str, iterations: usize, columns: usize, repeats: usize, mut run: impl FnMut() -> Result<()>) -> Result<BenchRow> {
    // one untimed warm-up pass
    run()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        run()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let median_seconds = median(&samples);
    Ok(BenchRow {
        name: name.to_string(),
        iterations,
        samples,
        median_seconds,
        per_column_seconds: median_seconds / columns as f64,
    })
}

/// Times network inference with `layers` layers built from `w`, and MU
/// inference with `short_iters` and `long_iters` updates, on the same input.
pub fn run_bench(v: &NonNegMatrix, w: &NonNegMatrix, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 || cfg.layers == 0 {
        return Err(Error::Config("bench needs repeats >= 1 and layers >= 1".into()));
    }
    let n = v.cols();
    let model = UnrolledModel::from_dictionary(w, cfg.layers, cfg.reg, 1.0)?;
    let h0 = NonNegMatrix::filled(w.cols(), n, 1.0)?;
    let rows = vec![
        time_repeated("dnmf", cfg.layers, n, cfg.repeats, || infer(&model, v).map(drop))?,
        time_repeated("mu_short", cfg.short_iters, n, cfg.repeats, || {
            iterate_h(v, w, &h0, cfg.reg, cfg.short_iters).map(drop)
        })?,
        time_repeated("mu_long", cfg.long_iters, n, cfg.repeats, || {
            iterate_h(v, w, &h0, cfg.reg, cfg.long_iters).map(drop)
        })?,
    ];
    Ok(BenchReport { columns: n, rows })
}
