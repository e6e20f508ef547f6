//! Capability integrations, their evidence and SME-review workflow, and
//! scoring of products and the portfolio against the integration goal.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::Role;
use crate::error::{Error, Result};
use crate::ids::{EvidenceId, IntegrationId, ProductId};
use crate::model::{sha256_hex, Ctx, Model};
use crate::money::Ratio;
use crate::planning::check_revision as revision_guard;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentClass {
    PreExascale,
    Exascale,
    Other,
}

impl EnvironmentClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvironmentClass::PreExascale => "pre_exascale",
            EnvironmentClass::Exascale => "exascale",
            EnvironmentClass::Other => "other",
        }
    }
}

impl std::str::FromStr for EnvironmentClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_exascale" => Ok(EnvironmentClass::PreExascale),
            "exascale" => Ok(EnvironmentClass::Exascale),
            "other" => Ok(EnvironmentClass::Other),
            _ => Err(Error::Validation(format!("unknown environment class {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationState {
    Proposed,
    EvidenceAttached,
    UnderSmeReview,
    SmeEndorsed,
    SmeRejected,
    FinallyApproved,
}

impl IntegrationState {
    pub const ALL: [IntegrationState; 6] = [
        IntegrationState::Proposed,
        IntegrationState::EvidenceAttached,
        IntegrationState::UnderSmeReview,
        IntegrationState::SmeEndorsed,
        IntegrationState::SmeRejected,
        IntegrationState::FinallyApproved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntegrationState::Proposed => "proposed",
            IntegrationState::EvidenceAttached => "evidence_attached",
            IntegrationState::UnderSmeReview => "under_sme_review",
            IntegrationState::SmeEndorsed => "sme_endorsed",
            IntegrationState::SmeRejected => "sme_rejected",
            IntegrationState::FinallyApproved => "finally_approved",
        }
    }

    pub fn can_transition(self, to: IntegrationState) -> bool {
        use IntegrationState::*;
        matches!(
            (self, to),
            (Proposed, EvidenceAttached)
                | (EvidenceAttached, UnderSmeReview)
                | (UnderSmeReview, SmeEndorsed)
                | (UnderSmeReview, SmeRejected)
                | (SmeEndorsed, FinallyApproved)
                | (SmeRejected, EvidenceAttached)
        )
    }
}

impl fmt::Display for IntegrationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Screenshot,
    ClientLetter,
    TestOutput,
    Link,
}

impl std::str::FromStr for EvidenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "screenshot" => Ok(EvidenceKind::Screenshot),
            "client_letter" => Ok(EvidenceKind::ClientLetter),
            "test_output" => Ok(EvidenceKind::TestOutput),
            "link" => Ok(EvidenceKind::Link),
            _ => Err(Error::Validation(format!("unknown evidence kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceArtifact {
    pub id: EvidenceId,
    pub kind: EvidenceKind,
    pub uri_or_path: String,
    /// Lowercase hex SHA-256 of the stored bytes.
    pub content_digest: String,
    pub attached_at: DateTime<Utc>,
}

impl EvidenceArtifact {
    pub fn verify(&self, bytes: &[u8]) -> bool {
        sha256_hex(bytes) == self.content_digest
    }
}

pub fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationTransition {
    pub from: Option<IntegrationState>,
    pub to: IntegrationState,
    pub actor_role: Role,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Integration {
    pub id: IntegrationId,
    pub product_id: ProductId,
    pub capability: String,
    pub client: String,
    pub environment_class: EnvironmentClass,
    pub state: IntegrationState,
    pub evidence: Vec<EvidenceArtifact>,
    pub sme_report: Option<String>,
    pub sustainability_note: String,
    pub history: Vec<IntegrationTransition>,
    pub approved_at: Option<DateTime<Utc>>,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KppStatus {
    pub product_id: ProductId,
    pub approved_count: u32,
    pub goal: u32,
    pub met: bool,
    pub environments_covered: BTreeSet<EnvironmentClass>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioKpp {
    pub fraction_met: Option<Ratio>,
    pub pass: bool,
    pub per_product: Vec<KppStatus>,
    pub diagnostic: Option<String>,
}

impl Model {
    pub fn integration(&self, id: &IntegrationId) -> Result<&Integration> {
        self.integrations.get(id).ok_or_else(|| Error::not_found("integration", id))
    }

    pub(crate) fn record_integration(
        &mut self,
        ctx: &Ctx,
        product: &ProductId,
        capability: &str,
        client: &str,
        environment_class: EnvironmentClass,
        sustainability_note: Option<&str>,
    ) -> Result<Integration> {
        self.product(product)?;
        if capability.trim().is_empty() || client.trim().is_empty() {
            return Err(Error::Validation("capability and client must be non-empty".into()));
        }
        if self
            .integrations
            .values()
            .any(|i| &i.product_id == product && i.capability == capability && i.client == client)
        {
            return Err(Error::DuplicateClaim {
                product: product.to_string(),
                capability: capability.to_string(),
                client: client.to_string(),
            });
        }
        let id = IntegrationId::from_seq(self.counters.bump("int"));
        let integration = Integration {
            id: id.clone(),
            product_id: product.clone(),
            capability: capability.to_string(),
            client: client.to_string(),
            environment_class,
            state: IntegrationState::Proposed,
            evidence: Vec::new(),
            sme_report: None,
            sustainability_note: sustainability_note.unwrap_or_default().to_string(),
            history: vec![IntegrationTransition {
                from: None,
                to: IntegrationState::Proposed,
                actor_role: ctx.actor,
                at: ctx.at,
            }],
            approved_at: None,
            revision: 1,
        };
        self.integrations.insert(id.clone(), integration.clone());
        self.products.get_mut(product).expect("checked").integrations.push(id);
        Ok(integration)
    }

    fn check_integration_edge(
        &self,
        id: &IntegrationId,
        to: IntegrationState,
        expected_revision: Option<u64>,
    ) -> Result<&Integration> {
        let i = self.integration(id)?;
        revision_guard(id.as_str(), expected_revision, i.revision)?;
        if !i.state.can_transition(to) {
            return Err(Error::IllegalTransition {
                entity: "integration",
                id: id.to_string(),
                from: i.state.to_string(),
                to: to.to_string(),
            });
        }
        Ok(i)
    }

    fn move_integration(&mut self, ctx: &Ctx, id: &IntegrationId, to: IntegrationState) -> &mut Integration {
        let i = self.integrations.get_mut(id).expect("caller checked");
        let from = i.state;
        i.state = to;
        i.revision += 1;
        i.history.push(IntegrationTransition { from: Some(from), to, actor_role: ctx.actor, at: ctx.at });
        i
    }

    /// Attaches an artifact. Moves proposed and sme_rejected integrations to
    /// evidence_attached; further artifacts may be added while in that state.
    pub(crate) fn attach_evidence(
        &mut self,
        ctx: &Ctx,
        id: &IntegrationId,
        kind: EvidenceKind,
        uri_or_path: &str,
        content_digest: &str,
        expected_revision: Option<u64>,
    ) -> Result<Integration> {
        let current = self.integration(id)?.state;
        if current != IntegrationState::EvidenceAttached {
            self.check_integration_edge(id, IntegrationState::EvidenceAttached, expected_revision)?;
        } else {
            revision_guard(id.as_str(), expected_revision, self.integrations[id].revision)?;
        }
        if !is_digest(content_digest) {
            return Err(Error::Validation(format!("malformed content digest {content_digest:?}")));
        }
        if uri_or_path.trim().is_empty() {
            return Err(Error::Validation("evidence uri_or_path must be non-empty".into()));
        }
        let eid = EvidenceId::from_seq(self.counters.bump("evd"));
        let artifact = EvidenceArtifact {
            id: eid,
            kind,
            uri_or_path: uri_or_path.to_string(),
            content_digest: content_digest.to_string(),
            attached_at: ctx.at,
        };
        let i = if current != IntegrationState::EvidenceAttached {
            self.move_integration(ctx, id, IntegrationState::EvidenceAttached)
        } else {
            let i = self.integrations.get_mut(id).expect("checked");
            i.revision += 1;
            i
        };
        i.evidence.push(artifact);
        Ok(i.clone())
    }

    pub(crate) fn submit_for_review(
        &mut self,
        ctx: &Ctx,
        id: &IntegrationId,
        sustainability_note: Option<&str>,
        expected_revision: Option<u64>,
    ) -> Result<Integration> {
        let i = self.integration(id)?;
        revision_guard(id.as_str(), expected_revision, i.revision)?;
        if i.evidence.is_empty() {
            return Err(Error::MissingEvidence(id.to_string()));
        }
        let i = self.check_integration_edge(id, IntegrationState::UnderSmeReview, expected_revision)?;
        let note = sustainability_note.unwrap_or(&i.sustainability_note).to_string();
        if note.trim().is_empty() {
            return Err(Error::Validation("a sustainability note is required before SME review".into()));
        }
        let i = self.move_integration(ctx, id, IntegrationState::UnderSmeReview);
        i.sustainability_note = note;
        Ok(i.clone())
    }

    pub(crate) fn sme_review(
        &mut self,
        ctx: &Ctx,
        id: &IntegrationId,
        endorse: bool,
        report: &str,
        expected_revision: Option<u64>,
    ) -> Result<Integration> {
        let to = if endorse { IntegrationState::SmeEndorsed } else { IntegrationState::SmeRejected };
        self.check_integration_edge(id, to, expected_revision)?;
        if ctx.actor != Role::Sme {
            return Err(Error::RoleMismatch { required: Role::Sme.to_string(), actual: ctx.actor.to_string() });
        }
        if report.trim().is_empty() {
            return Err(Error::Validation("SME report must be non-empty".into()));
        }
        let i = self.move_integration(ctx, id, to);
        i.sme_report = Some(report.to_string());
        Ok(i.clone())
    }

    pub(crate) fn final_approval(
        &mut self,
        ctx: &Ctx,
        id: &IntegrationId,
        expected_revision: Option<u64>,
    ) -> Result<Integration> {
        self.check_integration_edge(id, IntegrationState::FinallyApproved, expected_revision)?;
        if ctx.actor != Role::ProjectDirector {
            return Err(Error::RoleMismatch {
                required: Role::ProjectDirector.to_string(),
                actual: ctx.actor.to_string(),
            });
        }
        let i = self.move_integration(ctx, id, IntegrationState::FinallyApproved);
        i.approved_at = Some(ctx.at);
        Ok(i.clone())
    }

    pub fn product_kpp_status(&self, product: &ProductId) -> Result<KppStatus> {
        let p = self.product(product)?;
        let require_exascale = self.config()?.require_exascale_integration;
        let mut pairs = BTreeSet::new();
        let mut envs = BTreeSet::new();
        for i in self.integrations.values() {
            if &i.product_id == product && i.state == IntegrationState::FinallyApproved {
                pairs.insert((i.capability.as_str(), i.client.as_str()));
                envs.insert(i.environment_class);
            }
        }
        let approved_count = pairs.len() as u32;
        let met = approved_count >= p.kpp_goal && (!require_exascale || envs.contains(&EnvironmentClass::Exascale));
        Ok(KppStatus { product_id: product.clone(), approved_count, goal: p.kpp_goal, met, environments_covered: envs })
    }

    pub fn portfolio_kpp_score(&self) -> Result<PortfolioKpp> {
        let threshold = self.config()?.kpp_portfolio_threshold.clone();
        let per_product = self
            .products
            .keys()
            .map(|p| self.product_kpp_status(p))
            .collect::<Result<Vec<_>>>()?;
        if per_product.is_empty() {
            return Ok(PortfolioKpp {
                fraction_met: None,
                pass: false,
                per_product,
                diagnostic: Some("empty portfolio: fraction of products meeting goal is undefined".into()),
            });
        }
        let met = per_product.iter().filter(|s| s.met).count() as i64;
        let fraction = Ratio::new(met, per_product.len() as i64);
        let pass = fraction >= threshold;
        Ok(PortfolioKpp { fraction_met: Some(fraction), pass, per_product, diagnostic: None })
    }

    /// CSV ledger: product, capability, client, environment, state, approved_date.
    pub fn integration_ledger_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
        w.write_record(["product", "capability", "client", "environment", "state", "approved_date"])
            .expect("in-memory write");
        let mut rows: Vec<&Integration> = self.integrations.values().collect();
        rows.sort_by(|a, b| {
            let pa = self.products.get(&a.product_id).map(|p| p.name.as_str()).unwrap_or("");
            let pb = self.products.get(&b.product_id).map(|p| p.name.as_str()).unwrap_or("");
            pa.cmp(pb).then_with(|| a.capability.cmp(&b.capability)).then_with(|| a.client.cmp(&b.client))
        });
        for i in rows {
            let name = self.products.get(&i.product_id).map(|p| p.name.clone()).unwrap_or_default();
            w.write_record([
                name,
                i.capability.clone(),
                i.client.clone(),
                i.environment_class.as_str().to_string(),
                i.state.to_string(),
                i.approved_at.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}
