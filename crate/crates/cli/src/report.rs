//! Run manifests and the diagnostic log stream.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

/// Human-readable lines, or one JSON object per line with `--log-json`.
#[derive(Debug, Clone, Copy)]
pub struct Log {
    pub json: bool,
}

impl Log {
    fn emit(&self, level: &str, message: &str, fields: Value) {
        if self.json {
            let mut obj = json!({ "level": level, "message": message });
            if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
                o.extend(extra);
            }
            eprintln!("{obj}");
        } else if fields.as_object().map_or(true, |o| o.is_empty()) {
            eprintln!("[{level}] {message}");
        } else {
            eprintln!("[{level}] {message} {fields}");
        }
    }

    pub fn info(&self, message: &str, fields: Value) {
        self.emit("info", message, fields);
    }

    pub fn warn(&self, message: &str, fields: Value) {
        self.emit("warn", message, fields);
    }

    pub fn error(&self, message: &str, fields: Value) {
        self.emit("error", message, fields);
    }
}

#[derive(Debug, Serialize)]
pub struct Quadrature {
    pub source_points: usize,
    pub angles: usize,
    pub velocities: usize,
}

/// Record of one run. Every file the run writes, the manifest included, is
/// listed under `outputs`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub quadrature: Option<Quadrature>,
    pub tool_version: String,
    pub wall_time_s: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.map(Path::to_path_buf),
            inputs: Vec::new(),
            outputs: Vec::new(),
            quadrature: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: 0.0,
            started: Some(Instant::now()),
        }
    }

    /// Writes `contents` to `path` and records it.
    pub fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path);
        Ok(())
    }

    /// Writes the manifest as `manifest.json` in `dir`.
    pub fn finish(mut self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join("manifest.json");
        self.outputs.push(path.clone());
        self.wall_time_s = self.started.map_or(0.0, |t| t.elapsed().as_secs_f64());
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
