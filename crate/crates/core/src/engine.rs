//! Single-writer command execution over an append-only log.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::command::{Command, Outcome};
use crate::domain::Role;
use crate::error::{Error, Result};
use crate::ids::IntegrationId;
use crate::kpp::EvidenceKind;
use crate::model::{sha256_hex, Ctx, Model};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandLogEntry {
    pub seq: u64,
    pub operation: String,
    pub parameters: Command,
    pub actor_role: Role,
    pub timestamp: DateTime<Utc>,
    pub result_digest: String,
}

/// Timestamp source for new log entries.
#[derive(Debug, Clone)]
pub enum Clock {
    System,
    /// Deterministic: starts at `next` and advances by `step` per command.
    Stepping { next: DateTime<Utc>, step: Duration },
}

impl Clock {
    pub fn stepping_from(start: DateTime<Utc>) -> Self {
        Clock::Stepping { next: start, step: Duration::seconds(1) }
    }

    /// Stepping clock at a fixed, arbitrary epoch; handy in tests.
    pub fn deterministic() -> Self {
        Clock::stepping_from(Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).single().expect("valid date"))
    }

    /// Log timestamps never go backwards. A stepping clock resumes one step
    /// after `floor`, so a reopened store continues the same sequence.
    fn tick(&mut self, floor: Option<DateTime<Utc>>) -> DateTime<Utc> {
        match self {
            Clock::System => {
                let now = Utc::now();
                floor.filter(|f| *f > now).unwrap_or(now)
            }
            Clock::Stepping { next, step } => {
                let t = match floor {
                    Some(f) if f >= *next => f + *step,
                    _ => *next,
                };
                *next = t + *step;
                t
            }
        }
    }
}

pub fn outcome_digest(outcome: &Outcome) -> String {
    sha256_hex(&serde_json::to_vec(outcome).expect("outcome serializes"))
}

#[derive(Debug, Clone)]
pub struct Engine {
    model: Model,
    log: Vec<CommandLogEntry>,
    evidence: BTreeMap<String, Vec<u8>>,
    clock: Clock,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(Clock::System)
    }
}

impl Engine {
    pub fn new(clock: Clock) -> Self {
        Engine { model: Model::new(), log: Vec::new(), evidence: BTreeMap::new(), clock }
    }

    pub fn from_parts(model: Model, log: Vec<CommandLogEntry>, evidence: BTreeMap<String, Vec<u8>>, clock: Clock) -> Self {
        Engine { model, log, evidence, clock }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn log(&self) -> &[CommandLogEntry] {
        &self.log
    }

    pub fn evidence(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.evidence
    }

    pub fn set_clock(&mut self, clock: Clock) {
        self.clock = clock;
    }

    /// Runs a command and appends it to the log when it commits. Committed
    /// outcomes include stale change applies, which [`Engine::execute`]
    /// reports as errors.
    pub fn submit(&mut self, cmd: Command, actor: Role) -> Result<(CommandLogEntry, Outcome)> {
        let at = self.clock.tick(self.log.last().map(|e| e.timestamp));
        let ctx = Ctx { actor, at };
        let outcome = self.model.apply(&cmd, &ctx)?;
        let seq = self.log.len() as u64 + 1;
        self.model.last_seq = seq;
        self.model.last_updated = Some(at);
        let entry = CommandLogEntry {
            seq,
            operation: cmd.name().to_string(),
            parameters: cmd,
            actor_role: actor,
            timestamp: at,
            result_digest: outcome_digest(&outcome),
        };
        self.log.push(entry.clone());
        Ok((entry, outcome))
    }

    pub fn execute(&mut self, cmd: Command, actor: Role) -> Result<Outcome> {
        self.submit(cmd, actor)?.1.into_result()
    }

    /// Content-addressed evidence storage; returns the digest.
    pub fn store_evidence(&mut self, bytes: &[u8]) -> String {
        let digest = sha256_hex(bytes);
        self.evidence.entry(digest.clone()).or_insert_with(|| bytes.to_vec());
        digest
    }

    /// Stores the bytes and records the artifact against the integration.
    pub fn attach_evidence(
        &mut self,
        integration: &IntegrationId,
        kind: EvidenceKind,
        uri_or_path: &str,
        bytes: &[u8],
        actor: Role,
        expected_revision: Option<u64>,
    ) -> Result<Outcome> {
        let digest = sha256_hex(bytes);
        let out = self.execute(
            Command::AttachEvidence {
                integration: integration.clone(),
                kind,
                uri_or_path: uri_or_path.to_string(),
                content_digest: digest,
                expected_revision,
            },
            actor,
        )?;
        self.store_evidence(bytes);
        Ok(out)
    }

    /// Artifacts whose stored bytes are missing or hash differently.
    pub fn verify_evidence(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for i in self.model.integrations.values() {
            for a in &i.evidence {
                match self.evidence.get(&a.content_digest) {
                    Some(bytes) if a.verify(bytes) => {}
                    _ => bad.push(format!("{}/{}", i.id, a.id)),
                }
            }
        }
        bad
    }

    /// Rebuilds state from a log, checking every recorded result digest.
    pub fn replay(entries: &[CommandLogEntry]) -> Result<Engine> {
        let mut model = Model::new();
        for (i, e) in entries.iter().enumerate() {
            if e.seq != i as u64 + 1 {
                return Err(Error::CorruptStore(format!("log sequence gap at entry {} (seq {})", i + 1, e.seq)));
            }
            let ctx = Ctx { actor: e.actor_role, at: e.timestamp };
            let outcome = model
                .apply(&e.parameters, &ctx)
                .map_err(|err| Error::CorruptStore(format!("replay of seq {} failed: {err}", e.seq)))?;
            if outcome_digest(&outcome) != e.result_digest {
                return Err(Error::CorruptStore(format!("replay digest mismatch at seq {}", e.seq)));
            }
            model.last_seq = e.seq;
            model.last_updated = Some(e.timestamp);
        }
        Ok(Engine { model, log: entries.to_vec(), evidence: BTreeMap::new(), clock: Clock::System })
    }

    pub fn with_evidence(mut self, evidence: BTreeMap<String, Vec<u8>>) -> Self {
        self.evidence = evidence;
        self
    }
}
