//! Run manifest: what a pipeline invocation produced and how long each stage
//! took. Written last; the run only exits cleanly once every listed file is
//! verified present.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub config_hash: String,
    /// Stage name -> elapsed milliseconds, in execution order.
    pub timings_ms: Vec<(String, u128)>,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(master_seed: u64, config_hash: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            config_hash: config_hash.to_string(),
            timings_ms: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn time_stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().with_context(|| format!("stage {name}"))?;
        self.timings_ms
            .push((name.to_string(), start.elapsed().as_millis()));
        Ok(out)
    }

    pub fn record(&mut self, rel_path: impl Into<String>) {
        self.outputs.push(rel_path.into());
    }

    /// Writes `manifest.json` and verifies every recorded output exists.
    pub fn finish(mut self, run_dir: &Path) -> Result<()> {
        self.outputs.sort();
        let json = serde_json::to_string_pretty(&self).context("serializing manifest")?;
        let path = run_dir.join("manifest.json");
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        for rel in &self.outputs {
            let p = run_dir.join(rel);
            if !p.exists() {
                bail!("declared output missing: {}", p.display());
            }
        }
        Ok(())
    }
}
