//! File emission: trace and test-phase tables (CSV or JSON), run
//! summaries, and sweep aggregates. Every file is written to a temporary
//! sibling and atomically renamed into place, so a crash never leaves a
//! partial artifact under the final name.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use risk_ac_core::driver::RunTrace;
use risk_ac_core::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

/// Write bytes to `<path>.tmp`, then rename onto `path`. The rename is
/// atomic within a filesystem, so readers only ever see complete files.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Shortest round-trip decimal form; bitwise-deterministic for a given
/// value, which is what makes same-seed traces byte-identical.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Training trace as CSV. Header: n, one column per policy parameter,
/// lambda, v_x0, u_x0, var_hat.
pub fn trace_csv(trace: &RunTrace) -> String {
    let k1 = trace.records.first().map_or(0, |r| r.theta.len());
    let mut out = String::new();
    out.push('n');
    for i in 0..k1 {
        out.push_str(&format!(",theta_{i}"));
    }
    out.push_str(",lambda,v_x0,u_x0,var_hat\n");
    for r in &trace.records {
        out.push_str(&r.n.to_string());
        for t in &r.theta {
            out.push(',');
            out.push_str(&fmt_f64(*t));
        }
        for v in [r.lambda, r.v_x0, r.u_x0, r.var_hat] {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct TraceRow<'a> {
    n: usize,
    theta: &'a [f64],
    lambda: f64,
    v_x0: f64,
    u_x0: f64,
    var_hat: f64,
}

pub fn write_trace(path: &Path, trace: &RunTrace, format: Format) -> Result<()> {
    match format {
        Format::Csv => atomic_write(path, trace_csv(trace).as_bytes()),
        Format::Json => {
            let rows: Vec<TraceRow> = trace
                .records
                .iter()
                .map(|r| TraceRow {
                    n: r.n,
                    theta: &r.theta,
                    lambda: r.lambda,
                    v_x0: r.v_x0,
                    u_x0: r.u_x0,
                    var_hat: r.var_hat,
                })
                .collect();
            write_json(path, &rows)
        }
    }
}

#[derive(Serialize)]
struct TestRow {
    episode: usize,
    value: f64,
}

/// Test-phase returns, one row per episode.
pub fn write_test(path: &Path, trace: &RunTrace, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut out = String::from("episode,value\n");
            for t in &trace.test {
                out.push_str(&format!("{},{}\n", t.episode, fmt_f64(t.value)));
            }
            atomic_write(path, out.as_bytes())
        }
        Format::Json => {
            let rows: Vec<TestRow> = trace
                .test
                .iter()
                .map(|t| TestRow { episode: t.episode, value: t.value })
                .collect();
            write_json(path, &rows)
        }
    }
}

/// End-of-run facts, plus exact-solver diagnostics when the environment is
/// a small tabular model.
#[derive(Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub outer_iterations: usize,
    pub final_lambda: f64,
    pub test_episodes: usize,
    pub test_mean: f64,
    pub test_variance: f64,
    /// V(x0) (discounted) or long-run average reward (average regime) of
    /// the final policy, from the exact solver.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_value_final: Option<f64>,
    /// Return variance (discounted) or long-run reward variance (average)
    /// of the final policy, from the exact solver.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_variance_final: Option<f64>,
    pub final_theta: Vec<f64>,
}

/// One oracle evaluation along the trace.
pub struct Checkpoint {
    pub n: usize,
    pub value: f64,
    pub variance: f64,
}

/// Per-checkpoint exact diagnostics: n, oracle mean objective, oracle
/// variance.
pub fn write_checkpoints(path: &Path, rows: &[Checkpoint], format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut out = String::from("n,oracle_value,oracle_variance\n");
            for c in rows {
                out.push_str(&format!("{},{},{}\n", c.n, fmt_f64(c.value), fmt_f64(c.variance)));
            }
            atomic_write(path, out.as_bytes())
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row {
                n: usize,
                oracle_value: f64,
                oracle_variance: f64,
            }
            let rows: Vec<Row> = rows
                .iter()
                .map(|c| Row { n: c.n, oracle_value: c.value, oracle_variance: c.variance })
                .collect();
            write_json(path, &rows)
        }
    }
}

/// Per-run sweep facts, one row per (algorithm, seed).
#[derive(Serialize, Clone)]
pub struct SweepRunRow {
    pub algorithm: String,
    pub seed: u64,
    pub test_mean: f64,
    pub test_variance: f64,
    pub final_lambda: f64,
}

/// Per-algorithm aggregate over a sweep.
#[derive(Serialize, Clone)]
pub struct SweepAggRow {
    pub algorithm: String,
    pub runs: usize,
    /// Mean over all test episodes pooled across the algorithm's runs.
    pub mean_return: f64,
    /// Unbiased variance over the same pooled episodes.
    pub variance_return: f64,
    /// Median of the per-run test means.
    pub median_test_mean: f64,
    /// Median of the per-run test variances.
    pub median_test_variance: f64,
}

pub fn write_sweep_runs(path: &Path, rows: &[SweepRunRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut out = String::from("algorithm,seed,test_mean,test_variance,final_lambda\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.algorithm,
                    r.seed,
                    fmt_f64(r.test_mean),
                    fmt_f64(r.test_variance),
                    fmt_f64(r.final_lambda)
                ));
            }
            atomic_write(path, out.as_bytes())
        }
        Format::Json => write_json(path, &rows),
    }
}

pub fn write_sweep_aggregate(path: &Path, rows: &[SweepAggRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut out = String::from(
                "algorithm,runs,mean_return,variance_return,median_test_mean,median_test_variance\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.algorithm,
                    r.runs,
                    fmt_f64(r.mean_return),
                    fmt_f64(r.variance_return),
                    fmt_f64(r.median_test_mean),
                    fmt_f64(r.median_test_variance)
                ));
            }
            atomic_write(path, out.as_bytes())
        }
        Format::Json => write_json(path, &rows),
    }
}

/// Median of an unsorted slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median over NaN"));
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
