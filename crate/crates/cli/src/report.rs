use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kronmark::checkpoint::sha256;
use serde::Serialize;

/// Command failure carrying its exit code class.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Incompatible(String),
    Compute(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Compute(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Incompatible(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Incompatible(m) | Failure::Compute(m) => f.write_str(m),
        }
    }
}

impl From<kronmark::Error> for Failure {
    fn from(e: kronmark::Error) -> Self {
        use kronmark::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => Failure::Usage(msg),
            E::Io { .. } | E::MissingFile(_) | E::Parse { .. } | E::Image { .. } | E::Checkpoint(_) => Failure::Io(msg),
            E::DigestMismatch { .. } => Failure::Incompatible(msg),
            _ => Failure::Compute(msg),
        }
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Fixed-precision decimal text used in every report.
pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// Provenance record written as `manifest.json` next to the outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_secs: f64,
    /// SHA-256 of each emitted file, keyed by path relative to the output
    /// directory.
    pub outputs: BTreeMap<String, String>,
}

/// Output directory of one command run and the files written into it.
pub struct Run {
    command: &'static str,
    started: Instant,
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(command: &'static str, dir: &Path) -> CmdResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self { command, started: Instant::now(), dir: dir.to_path_buf(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file written by other means.
    pub fn track(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CmdResult {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.track(name);
        Ok(())
    }

    pub fn csv<S: AsRef<str>>(&mut self, name: &str, header: &[S], rows: &[Vec<String>]) -> CmdResult {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let encode = |e: csv::Error| Failure::Compute(format!("{name}: {e}"));
        w.write_record(header.iter().map(AsRef::as_ref)).map_err(encode)?;
        for r in rows {
            w.write_record(r).map_err(encode)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Compute(format!("{name}: {e}")))?;
        self.write(name, &bytes)
    }

    pub fn finish(self, config: serde_json::Value, seed: Option<u64>) -> CmdResult {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            let path = self.dir.join(name);
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            outputs.insert(name.clone(), hex::encode(sha256(&bytes)));
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            version: concat!("kronmark ", env!("CARGO_PKG_VERSION")).to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        log::info!("{} finished in {:.1}s, outputs in {}", self.command, manifest.duration_secs, self.dir.display());
        Ok(())
    }
}
