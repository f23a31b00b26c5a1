//! Settings file and flag/file/default resolution.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

/// Error that should end the process with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Every key is optional; flags override anything set here.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub budget: Option<f64>,
    pub budgets: Option<Vec<f64>>,
    pub window_ratio: Option<f64>,
    pub stride: Option<usize>,
    pub smooth_radius: Option<usize>,
    pub strategy: Option<String>,
    pub provider: Option<String>,
    pub sidecar_url: Option<String>,
    pub chunk_size: Option<usize>,
    pub top_k: Option<usize>,
    pub top_ks: Option<Vec<usize>>,
    pub rag_chunk_len: Option<usize>,
    pub rag_overlap: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))
    }
}

pub const DEFAULT_SIDECAR_URL: &str = "http://127.0.0.1:8765";
pub const DEFAULT_BUDGET: f64 = 0.10;
pub const DEFAULT_BENCH_BUDGETS: [f64; 3] = [0.01, 0.05, 0.10];
pub const DEFAULT_BENCH_TOP_KS: [usize; 3] = [1, 2, 4];
