//! Run manifests: enough to reproduce a run byte for byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    /// `git describe --always --dirty` of the working tree.
    pub git: String,
    /// Content hashes of consumed checkpoints, by role.
    pub input_checkpoints: BTreeMap<String, String>,
    /// Content hashes of produced checkpoints, by role.
    pub output_checkpoints: BTreeMap<String, String>,
    /// Full config snapshot (TOML text).
    pub config: String,
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_toml: String) -> Self {
        Self {
            command: command.to_string(),
            seed,
            git: git_describe(),
            input_checkpoints: BTreeMap::new(),
            output_checkpoints: BTreeMap::new(),
            config: config_toml,
        }
    }

    pub fn input(&mut self, role: &str, hash: u64) {
        self.input_checkpoints
            .insert(role.to_string(), format!("{hash:#018x}"));
    }

    pub fn output(&mut self, role: &str, hash: u64) {
        self.output_checkpoints
            .insert(role.to_string(), format!("{hash:#018x}"));
    }

    /// Writes `manifest-<command>.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(format!("manifest-{}.toml", self.command)), text)
    }
}
