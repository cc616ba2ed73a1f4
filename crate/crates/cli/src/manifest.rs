use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConfigSnapshot {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub seed: u64,
    pub template_version: String,
    pub provider: String,
    pub max_concurrency: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Counts {
    pub processed: usize,
    pub failed: usize,
}

/// Written once per invocation, next to the primary output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ConfigSnapshot,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
    pub counts: Counts,
    pub failures: Vec<Failure>,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: ConfigSnapshot) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: stamp(Utc::now()),
            finished_at: String::new(),
            counts: Counts::default(),
            failures: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn fail(&mut self, id: impl Into<String>, error: impl ToString) {
        self.failures.push(Failure { id: id.into(), error: error.to_string() });
        self.counts.failed += 1;
    }

    /// `<output>.manifest.json` for a file output, `manifest.json` inside a
    /// directory output.
    pub fn path_for(output: &Path, is_dir: bool) -> PathBuf {
        if is_dir {
            output.join("manifest.json")
        } else {
            let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".manifest.json");
            output.with_file_name(name)
        }
    }

    pub fn finish(mut self, at: &Path) -> std::io::Result<()> {
        self.finished_at = stamp(Utc::now());
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(at, text)
    }
}
