// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bookkeeping for one command invocation: input hashes, output paths and
//! the manifest written at the end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use valuelens::Error;

use crate::error::CliResult;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// Manifest fields that depend on the wall clock.
pub const WALL_CLOCK_FIELDS: &[&str] = &["duration_secs"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    config: Value,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    pub fn start(command: &'static str, out: &Path, seed: u64) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            seed,
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn set_config(&mut self, config: Value) {
        self.config = config;
    }

    /// Read an input file and record its hash.
    pub fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push((path.display().to_string(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> CliResult<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|_| crate::error::CliError::Input(format!("{} is not UTF-8", path.display())))
    }

    /// Path of a named output inside the output directory, recorded for the
    /// manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.display().to_string());
        p
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.output(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn finish(self) -> CliResult<PathBuf> {
        let inputs: Vec<Value> = self.inputs.iter().map(|(p, h)| json!({"path": p, "sha256": h})).collect();
        let manifest = json!({
            "command": self.command,
            "config": self.config,
            "inputs": inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "duration_secs": self.started.elapsed().as_secs_f64(),
        });
        let path = self.out.join(format!("{}{MANIFEST_SUFFIX}", self.command));
        let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
