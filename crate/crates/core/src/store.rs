//! Persistence.
//!
//! A saved model is one file: a header line carrying the format version and
//! the SHA-256 of the body, followed by the canonical JSON body. A store
//! directory holds the command log, a full-model snapshot for fast loads,
//! and content-addressed evidence:
//!
//! ```text
//! <root>/log/commands.ndjson
//! <root>/log/change_requests.ndjson
//! <root>/snapshots/model.store
//! <root>/evidence/<sha256>
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::command::{Command, Outcome};
use crate::domain::Role;
use crate::engine::{Clock, CommandLogEntry, Engine};
use crate::error::{Error, Result};
use crate::ids::IntegrationId;
use crate::kpp::EvidenceKind;
use crate::model::{sha256_hex, Model};
use crate::planning::audit_log_ndjson;

pub const STORE_MAGIC: &str = "portfolio-store";
pub const STORE_VERSION: &str = "1";
/// Environment variable naming the store directory.
pub const STORE_ENV: &str = "PORTFOLIO_STORE";

pub fn encode_store(model: &Model) -> Vec<u8> {
    let body = model.canonical_json();
    let mut out = format!("{STORE_MAGIC}/{STORE_VERSION} sha256={}\n", sha256_hex(&body)).into_bytes();
    out.extend_from_slice(&body);
    out
}

pub fn decode_store(bytes: &[u8]) -> Result<Model> {
    let corrupt = |m: &str| Error::CorruptStore(m.to_string());
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| corrupt("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header is not utf-8"))?;
    let body = &bytes[nl + 1..];
    let (tag, digest) = header.split_once(' ').ok_or_else(|| corrupt("malformed header"))?;
    let version = tag
        .strip_prefix(STORE_MAGIC)
        .and_then(|r| r.strip_prefix('/'))
        .ok_or_else(|| corrupt("unrecognized header"))?;
    if version != STORE_VERSION {
        return Err(Error::IncompatibleStore { found: version.to_string(), expected: STORE_VERSION.to_string() });
    }
    let digest = digest.strip_prefix("sha256=").ok_or_else(|| corrupt("malformed digest field"))?;
    if sha256_hex(body) != digest {
        return Err(corrupt("digest mismatch"));
    }
    serde_json::from_slice(body).map_err(|e| Error::CorruptStore(format!("body: {e}")))
}

/// Writes atomically via a sibling temp file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_store(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &encode_store(model))
}

pub fn load_store(path: &Path) -> Result<Model> {
    decode_store(&fs::read(path)?)
}

pub fn parse_log(text: &str) -> Result<Vec<CommandLogEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::CorruptStore(format!("log line {}: {e}", i + 1)))
        })
        .collect()
}

/// A store directory with a live engine.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    engine: Engine,
}

impl Store {
    /// Whether `root` already holds a store; opening creates one.
    pub fn exists(root: &Path) -> bool {
        Self::log_path(root).exists() || Self::snapshot_path(root).exists()
    }

    pub fn log_path(root: &Path) -> PathBuf {
        root.join("log").join("commands.ndjson")
    }

    pub fn audit_path(root: &Path) -> PathBuf {
        root.join("log").join("change_requests.ndjson")
    }

    pub fn snapshot_path(root: &Path) -> PathBuf {
        root.join("snapshots").join("model.store")
    }

    pub fn evidence_dir(root: &Path) -> PathBuf {
        root.join("evidence")
    }

    /// Opens (or creates) the store at `root`. A snapshot that matches the
    /// log length is trusted after its digest check; otherwise the log is replayed.
    pub fn open(root: &Path, clock: Clock) -> Result<Store> {
        fs::create_dir_all(root.join("log"))?;
        fs::create_dir_all(root.join("snapshots"))?;
        fs::create_dir_all(Self::evidence_dir(root))?;
        let log = match fs::read_to_string(Self::log_path(root)) {
            Ok(t) => parse_log(&t)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let snap_path = Self::snapshot_path(root);
        let snapshot = if snap_path.exists() { Some(load_store(&snap_path)?) } else { None };
        let evidence = Self::read_evidence(root)?;
        let engine = match snapshot {
            Some(model) if model.last_seq == log.len() as u64 => Engine::from_parts(model, log, evidence, clock),
            _ => {
                let mut e = Engine::replay(&log)?.with_evidence(evidence);
                e.set_clock(clock);
                e
            }
        };
        Ok(Store { root: root.to_path_buf(), engine })
    }

    fn read_evidence(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
        let mut out = BTreeMap::new();
        let dir = Self::evidence_dir(root);
        if !dir.exists() {
            return Ok(out);
        }
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().to_string();
            if name.ends_with(".tmp") {
                continue;
            }
            let bytes = fs::read(entry.path())?;
            if sha256_hex(&bytes) != name {
                return Err(Error::CorruptStore(format!("evidence {name} does not match its digest")));
            }
            out.insert(name, bytes);
        }
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn model(&self) -> &Model {
        self.engine.model()
    }

    /// Executes and persists. Nothing is written when the command fails.
    pub fn execute(&mut self, cmd: Command, actor: Role) -> Result<Outcome> {
        let (entry, outcome) = self.engine.submit(cmd, actor)?;
        self.persist(&entry)?;
        outcome.into_result()
    }

    pub fn attach_evidence(
        &mut self,
        integration: &IntegrationId,
        kind: EvidenceKind,
        uri_or_path: &str,
        bytes: &[u8],
        actor: Role,
        expected_revision: Option<u64>,
    ) -> Result<Outcome> {
        let out = self.execute(
            Command::AttachEvidence {
                integration: integration.clone(),
                kind,
                uri_or_path: uri_or_path.to_string(),
                content_digest: sha256_hex(bytes),
                expected_revision,
            },
            actor,
        )?;
        let digest = self.engine.store_evidence(bytes);
        let path = Self::evidence_dir(&self.root).join(&digest);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(out)
    }

    fn persist(&self, entry: &CommandLogEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry).expect("log entry serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(Self::log_path(&self.root))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        if matches!(
            entry.parameters,
            Command::DraftChange { .. }
                | Command::SubmitChange { .. }
                | Command::ReviewChange { .. }
                | Command::ApplyChange { .. }
        ) {
            write_atomic(&Self::audit_path(&self.root), audit_log_ndjson(self.model().audit_log()).as_bytes())?;
        }
        save_store(self.model(), &Self::snapshot_path(&self.root))
    }

    /// Replays the on-disk log and compares the result with the live model.
    pub fn verify_replay(&self) -> Result<()> {
        let text = fs::read_to_string(Self::log_path(&self.root)).unwrap_or_default();
        let replayed = Engine::replay(&parse_log(&text)?)?;
        if replayed.model() != self.model() {
            return Err(Error::CorruptStore("replayed model differs from snapshot".into()));
        }
        Ok(())
    }
}
