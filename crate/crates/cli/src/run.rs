//! Shared plumbing: error classes, the run manifest and JSON output.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Exit 2 for bad flags, configs and unreadable inputs; exit 3 when the
/// input was read but its contents cannot be processed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) => f.write_str(m),
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn usage(self, what: &str) -> CmdResult<T>;
    fn data(self, what: &str) -> CmdResult<T>;
}

impl<T, E: Display> Classify<T> for Result<T, E> {
    fn usage(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(format!("{what}: {e}")))
    }

    fn data(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Data(format!("{what}: {e}")))
    }
}

/// Global flags, shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Run {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub args: Vec<String>,
}

impl Run {
    pub fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }

    pub fn read_config(&self) -> CmdResult<Option<String>> {
        self.config
            .as_ref()
            .map(|p| std::fs::read_to_string(p).usage(&format!("cannot read config {}", p.display())))
            .transpose()
    }

    pub fn require_out(&self, subcommand: &str) -> CmdResult<&Path> {
        let out = self
            .out
            .as_deref()
            .ok_or_else(|| Failure::Usage(format!("{subcommand} writes files and needs --out")))?;
        std::fs::create_dir_all(out).usage(&format!("cannot create {}", out.display()))?;
        Ok(out)
    }

    pub fn manifest(&self, subcommand: &str, seed: u64) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_path: self.config.clone(),
            seed,
            out_dir: self.out.clone(),
            args: self.args.clone(),
            tool_version: env!("CARGO_PKG_VERSION"),
            formats: BTreeMap::new(),
            resolved: Value::Null,
        }
    }
}

/// Everything needed to repeat a run: the exact arguments, the effective
/// seed, the fully resolved settings and the version of every file format
/// the run read or wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub args: Vec<String>,
    pub tool_version: &'static str,
    pub formats: BTreeMap<&'static str, u32>,
    pub resolved: Value,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const METRICS_VERSION: u32 = 1;
pub const CUT_HEAD_VERSION: u32 = 1;

impl RunManifest {
    pub fn format(mut self, name: &'static str, version: u32) -> Self {
        self.formats.insert(name, version);
        self
    }

    pub fn resolved(mut self, settings: impl Serialize) -> Self {
        self.resolved = serde_json::to_value(settings).expect("settings serialize");
        self
    }
}

/// Print `result` with the manifest attached, and write the manifest into
/// the output directory when there is one.
pub fn finish(run: &Run, manifest: RunManifest, mut result: Value) -> CmdResult<()> {
    let manifest = manifest.format("manifest", MANIFEST_VERSION);
    let mvalue = serde_json::to_value(&manifest).expect("manifest serializes");
    if let Some(out) = &run.out {
        std::fs::create_dir_all(out).usage(&format!("cannot create {}", out.display()))?;
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(&mvalue).expect("manifest serializes");
        std::fs::write(&path, text + "\n").usage(&format!("cannot write {}", path.display()))?;
    }
    if let Value::Object(map) = &mut result {
        map.insert("manifest".into(), mvalue);
    }
    let text = serde_json::to_string_pretty(&result).expect("result serializes");
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Usage(format!("cannot write output: {e}"))),
        _ => Ok(()),
    }
}
