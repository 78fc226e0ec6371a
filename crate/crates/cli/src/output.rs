//! Run outputs: trace CSVs, the RunSummary JSON, PGM helpers, and hashing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use flowsteer_core::tensor::Tensor;
use flowsteer_core::trace::TrajectoryTrace;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ConfigError;

/// Top-level error with the process exit-code mapping: 2 for configuration
/// problems, 3 for numeric aborts, 1 otherwise.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] flowsteer_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Core(e) if e.is_numeric_abort() => 3,
            _ => 1,
        }
    }
}

pub type AResult<T> = Result<T, AppError>;

#[derive(Debug, Clone, Serialize)]
pub struct CounterTotals {
    pub forward_evals: u64,
    pub backward_evals: u64,
    pub stored_states_peak: u64,
}

impl CounterTotals {
    pub fn from_trace(trace: &TrajectoryTrace) -> Self {
        CounterTotals {
            forward_evals: trace.forward_evals,
            backward_evals: trace.backward_evals,
            stored_states_peak: trace.stored_states_peak,
        }
    }

    pub fn absorb(&mut self, trace: &TrajectoryTrace) {
        self.forward_evals += trace.forward_evals;
        self.backward_evals += trace.backward_evals;
        self.stored_states_peak = self.stored_states_peak.max(trace.stored_states_peak);
    }
}

impl Default for CounterTotals {
    fn default() -> Self {
        CounterTotals {
            forward_evals: 0,
            backward_evals: 0,
            stored_states_peak: 0,
        }
    }
}

/// One run's machine-readable summary. Metric values are bit-reproducible
/// for a given resolved config + seed; wall_ms is the exception.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub experiment: String,
    pub preset: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub counters: CounterTotals,
    pub wall_ms: f64,
    pub outputs: Vec<String>,
}

impl RunSummary {
    pub fn write(&self, dir: &Path) -> AResult<PathBuf> {
        let path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Short hex hash of the resolved config echo.
pub fn config_hash(echo: &str) -> String {
    let mut h = Sha256::new();
    h.update(echo.as_bytes());
    let digest = h.finalize();
    hex_prefix(&digest, 16)
}

/// Short hex hash of a tensor's little-endian bytes (used to prove the
/// compare trials share x_T across methods).
pub fn tensor_hash(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    hex_prefix(&digest, 16)
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        if s.len() >= chars {
            break;
        }
        s.push_str(&format!("{b:02x}"));
    }
    s.truncate(chars);
    s
}

/// f64 for CSV cells: shortest round-trip form, empty for missing.
pub fn csv_f64(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// Versioned per-step trace CSV.
pub fn write_trace_csv(path: &Path, trace: &TrajectoryTrace) -> AResult<()> {
    let mut out = String::from("# flowsteer-trace-v1\n");
    out.push_str("step,t,E,cost,cosine,forward_evals,backward_evals,stored_states\n");
    for s in &trace.steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.step,
            s.t,
            csv_f64(s.error_sq),
            csv_f64(s.cost),
            csv_f64(s.grad_cosine),
            s.forward_evals,
            s.backward_evals,
            s.stored_states
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Stitch same-height images into one row with 1px separators.
pub fn side_by_side(images: &[&Tensor]) -> Tensor {
    let h = images.iter().map(|i| i.shape()[0]).max().unwrap_or(1);
    let total_w: usize =
        images.iter().map(|i| i.shape()[1]).sum::<usize>() + images.len().saturating_sub(1);
    let mut out = Tensor::full(&[h, total_w], 0.25);
    let mut x0 = 0;
    for img in images {
        let (ih, iw) = (img.shape()[0], img.shape()[1]);
        for y in 0..ih {
            for x in 0..iw {
                out.data_mut()[y * total_w + (x0 + x)] = img.data()[y * iw + x];
            }
        }
        x0 += iw + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_are_stable_and_short() {
        let a = config_hash("x = 1\n");
        let b = config_hash("x = 1\n");
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        assert_ne!(a, config_hash("x = 2\n"));
    }

    #[test]
    fn csv_f64_shortest_roundtrip() {
        assert_eq!(csv_f64(Some(0.1)), "0.1");
        assert_eq!(csv_f64(None), "");
    }

    #[test]
    fn side_by_side_width() {
        let a = Tensor::zeros(&[4, 3]);
        let b = Tensor::zeros(&[4, 5]);
        let s = side_by_side(&[&a, &b]);
        assert_eq!(s.shape(), &[4, 9]);
    }
}
