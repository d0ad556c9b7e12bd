//! Per-run record of settings, outputs and timings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: BTreeMap<String, PathBuf>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            outputs: BTreeMap::new(),
            timings: BTreeMap::new(),
            clock: None,
        }
    }

    /// Starts timing `stage`, closing any stage still open.
    pub fn begin(&mut self, stage: &str) {
        self.end();
        self.clock = Some((stage.into(), Instant::now()));
    }

    pub fn end(&mut self) {
        if let Some((stage, t)) = self.clock.take() {
            self.timings.insert(stage, t.elapsed().as_secs_f64());
        }
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.to_path_buf());
    }

    /// Paths listed as outputs that do not exist.
    pub fn missing_outputs(&self) -> Vec<&Path> {
        self.outputs.values().filter(|p| !p.exists()).map(PathBuf::as_path).collect()
    }

    pub fn write(&mut self, path: &Path) -> Result<(), String> {
        self.end();
        self.output("manifest", path);
        let text = serde_json::to_string_pretty(self).expect("serialisable manifest");
        std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
        match self.missing_outputs().first() {
            Some(p) => Err(format!("listed output {} was not produced", p.display())),
            None => Ok(()),
        }
    }
}
