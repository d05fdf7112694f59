//! JSON summaries and CSV stamping.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub struct Output<'a> {
    pub cfg: &'a RunConfig,
    pub hash: String,
}

impl<'a> Output<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
        Ok(Output { cfg, hash: cfg.hash() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    /// Writes `<command>.json` with the config echo and `results`.
    pub fn summary(&self, command: &str, results: Value) -> Result<PathBuf> {
        let doc = json!({
            "command": command,
            "config_hash": self.hash,
            "config": self.cfg,
            "results": results,
        });
        let path = self.path(&format!("{command}.json"));
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// Prepends a `# config_hash=…` comment line to a CSV written by the library.
    pub fn stamp_csv(&self, path: &Path) -> Result<()> {
        let body = std::fs::read_to_string(path)?;
        std::fs::write(path, format!("# config_hash={}\n{body}", self.hash))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

/// `{"reference": r, "computed": c}` with `null` when no reference value applies.
pub fn pair<T: Serialize>(reference: Option<f64>, computed: T) -> Value {
    json!({ "reference": reference, "computed": computed })
}
