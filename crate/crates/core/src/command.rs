//! Every state-changing operation, as a serializable command.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Portfolio, PortfolioConfig, Product, SdkGroup};
use crate::error::{Error, Result};
use crate::evm::Activity;
use crate::ids::{ActivityId, ChangeRequestId, IntegrationId, PackageId, ProductId, SdkGroupId};
use crate::kpp::{EnvironmentClass, EvidenceKind, Integration};
use crate::lifecycle::{FiscalYearLifecycle, MonthlySnapshot, Phase};
use crate::model::{Ctx, Model};
use crate::money::{Money, Ratio};
use crate::period::Period;
use crate::planning::{
    ActivityEdit, ActivitySpec, BaselineSnapshot, ChangeLevel, ChangeRequest, ChangeTarget, PlanningPackage,
    RefineResult,
};
use crate::stack::{Constraint, InclusionRule, PolicyChecklist, PolicyItem, Release, StackManifest, Version};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    CreatePortfolio { name: String, start_fy: i32, years: u32, #[serde(default)] config: PortfolioConfig },
    SetConfig { config: PortfolioConfig },
    AddSdkGroup { name: String },
    AddProduct { group: SdkGroupId, name: String, kpp_goal: u32, #[serde(default)] team_name: Option<String> },
    RenameProduct { product: ProductId, name: String },
    RenameSdkGroup { group: SdkGroupId, name: String },
    CreatePackage { product: ProductId, fiscal_year: i32, narrative: String, annual_budget: Money },
    EditPackage {
        package: PackageId,
        #[serde(default)]
        narrative: Option<String>,
        #[serde(default)]
        annual_budget: Option<Money>,
    },
    RefinePackage { package: PackageId, activities: Vec<ActivitySpec> },
    EditActivity { activity: ActivityId, edit: ActivityEdit },
    FinalizeActivity { activity: ActivityId, completion_criteria: String, #[serde(default)] staffing_note: String },
    Baseline { fiscal_year: i32 },
    StartActivity { activity: ActivityId, period: Period },
    CompleteMilestone { activity: ActivityId, period: Period },
    RecordCost { activity: ActivityId, period: Period, amount: Money },
    RecordProgress { activity: ActivityId, period: Period, fraction: Ratio },
    DraftChange { level: ChangeLevel, targets: Vec<ChangeTarget>, rationale: String, effective_period: Period },
    SubmitChange { change_request: ChangeRequestId, #[serde(default)] expected_revision: Option<u64> },
    ReviewChange {
        change_request: ChangeRequestId,
        approve: bool,
        #[serde(default)]
        note: String,
        #[serde(default)]
        expected_revision: Option<u64>,
    },
    ApplyChange { change_request: ChangeRequestId, #[serde(default)] expected_revision: Option<u64> },
    RecordIntegration {
        product: ProductId,
        capability: String,
        client: String,
        environment_class: EnvironmentClass,
        #[serde(default)]
        sustainability_note: Option<String>,
    },
    AttachEvidence {
        integration: IntegrationId,
        kind: EvidenceKind,
        uri_or_path: String,
        content_digest: String,
        #[serde(default)]
        expected_revision: Option<u64>,
    },
    SubmitIntegration {
        integration: IntegrationId,
        #[serde(default)]
        sustainability_note: Option<String>,
        #[serde(default)]
        expected_revision: Option<u64>,
    },
    SmeReview {
        integration: IntegrationId,
        endorse: bool,
        report: String,
        #[serde(default)]
        expected_revision: Option<u64>,
    },
    FinalApproval { integration: IntegrationId, #[serde(default)] expected_revision: Option<u64> },
    AdvancePhase { fiscal_year: i32, phase: Phase },
    TakeSnapshot { period: Period },
    DefinePolicy { id: String, description: String },
    RegisterRelease { product: String, version: Version, #[serde(default)] constraints: Vec<Constraint> },
    RecordChecklist { product: String, items: BTreeMap<String, PolicyItem> },
    ComposeManifest {
        name: String,
        stack_version: String,
        pins: BTreeMap<String, Version>,
        inclusion_rule: InclusionRule,
        #[serde(default)]
        metadata: BTreeMap<String, String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CreatePortfolio { .. } => "create_portfolio",
            Command::SetConfig { .. } => "set_config",
            Command::AddSdkGroup { .. } => "add_sdk_group",
            Command::AddProduct { .. } => "add_product",
            Command::RenameProduct { .. } => "rename_product",
            Command::RenameSdkGroup { .. } => "rename_sdk_group",
            Command::CreatePackage { .. } => "create_package",
            Command::EditPackage { .. } => "edit_package",
            Command::RefinePackage { .. } => "refine_package",
            Command::EditActivity { .. } => "edit_activity",
            Command::FinalizeActivity { .. } => "finalize_activity",
            Command::Baseline { .. } => "baseline",
            Command::StartActivity { .. } => "start_activity",
            Command::CompleteMilestone { .. } => "complete_milestone",
            Command::RecordCost { .. } => "record_cost",
            Command::RecordProgress { .. } => "record_progress",
            Command::DraftChange { .. } => "draft_change",
            Command::SubmitChange { .. } => "submit_change",
            Command::ReviewChange { .. } => "review_change",
            Command::ApplyChange { .. } => "apply_change",
            Command::RecordIntegration { .. } => "record_integration",
            Command::AttachEvidence { .. } => "attach_evidence",
            Command::SubmitIntegration { .. } => "submit_integration",
            Command::SmeReview { .. } => "sme_review",
            Command::FinalApproval { .. } => "final_approval",
            Command::AdvancePhase { .. } => "advance_phase",
            Command::TakeSnapshot { .. } => "take_snapshot",
            Command::DefinePolicy { .. } => "define_policy",
            Command::RegisterRelease { .. } => "register_release",
            Command::RecordChecklist { .. } => "record_checklist",
            Command::ComposeManifest { .. } => "compose_manifest",
        }
    }
}

/// The value a successful command produced. Its digest is recorded in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Outcome {
    Portfolio(Portfolio),
    Config(PortfolioConfig),
    SdkGroup(SdkGroup),
    Product(Product),
    Package(PlanningPackage),
    Refined(RefineResult),
    Activity(Activity),
    Baseline(BaselineSnapshot),
    Cost { activity: ActivityId, period: Period, amount: Money },
    ChangeRequest(ChangeRequest),
    /// Apply found stale old values; the request went back to drafted.
    ChangeReverted { change_request: ChangeRequest, detail: String },
    Integration(Integration),
    Lifecycle(FiscalYearLifecycle),
    Snapshot(MonthlySnapshot),
    Policy { id: String, description: String },
    Release(Release),
    Checklist(PolicyChecklist),
    Manifest(StackManifest),
}

impl Outcome {
    /// Surfaces committed-but-failed outcomes as errors.
    pub fn into_result(self) -> Result<Outcome> {
        match self {
            Outcome::ChangeReverted { change_request, detail } => {
                Err(Error::StaleChange { cr: change_request.id.to_string(), detail })
            }
            other => Ok(other),
        }
    }
}

impl Model {
    /// Applies one command. Handlers validate fully before mutating, so an
    /// `Err` leaves the model untouched.
    pub(crate) fn apply(&mut self, cmd: &Command, ctx: &Ctx) -> Result<Outcome> {
        use Command as C;
        Ok(match cmd {
            C::CreatePortfolio { name, start_fy, years, config } => {
                Outcome::Portfolio(self.create_portfolio(ctx, name, *start_fy, *years, config.clone())?)
            }
            C::SetConfig { config } => Outcome::Config(self.set_config(config.clone())?),
            C::AddSdkGroup { name } => Outcome::SdkGroup(self.add_sdk_group(name)?),
            C::AddProduct { group, name, kpp_goal, team_name } => {
                Outcome::Product(self.add_product(group, name, *kpp_goal, team_name.as_deref())?)
            }
            C::RenameProduct { product, name } => Outcome::Product(self.rename_product(product, name)?),
            C::RenameSdkGroup { group, name } => Outcome::SdkGroup(self.rename_group(group, name)?),
            C::CreatePackage { product, fiscal_year, narrative, annual_budget } => Outcome::Package(
                self.create_planning_package(product, *fiscal_year, narrative, annual_budget.clone())?,
            ),
            C::EditPackage { package, narrative, annual_budget } => {
                Outcome::Package(self.edit_package(package, narrative.as_deref(), annual_budget.clone())?)
            }
            C::RefinePackage { package, activities } => Outcome::Refined(self.refine_package(package, activities)?),
            C::EditActivity { activity, edit } => Outcome::Activity(self.edit_activity(activity, edit)?),
            C::FinalizeActivity { activity, completion_criteria, staffing_note } => {
                Outcome::Activity(self.finalize_activity(activity, completion_criteria, staffing_note)?)
            }
            C::Baseline { fiscal_year } => Outcome::Baseline(self.baseline(ctx, *fiscal_year)?),
            C::StartActivity { activity, period } => Outcome::Activity(self.start_activity(activity, *period)?),
            C::CompleteMilestone { activity, period } => {
                Outcome::Activity(self.complete_milestone(activity, *period)?)
            }
            C::RecordCost { activity, period, amount } => {
                let amount = self.record_actual_cost(activity, *period, amount.clone())?;
                Outcome::Cost { activity: activity.clone(), period: *period, amount }
            }
            C::RecordProgress { activity, period, fraction } => {
                Outcome::Activity(self.record_progress(activity, *period, fraction.clone())?)
            }
            C::DraftChange { level, targets, rationale, effective_period } => Outcome::ChangeRequest(
                self.draft_change(ctx, *level, targets.clone(), rationale, *effective_period)?,
            ),
            C::SubmitChange { change_request, expected_revision } => {
                Outcome::ChangeRequest(self.submit_change(ctx, change_request, *expected_revision)?)
            }
            C::ReviewChange { change_request, approve, note, expected_revision } => Outcome::ChangeRequest(
                self.review_change(ctx, change_request, *approve, note, *expected_revision)?,
            ),
            C::ApplyChange { change_request, expected_revision } => {
                match self.apply_change(ctx, change_request, *expected_revision)? {
                    Ok(cr) => Outcome::ChangeRequest(cr),
                    Err((cr, detail)) => Outcome::ChangeReverted { change_request: cr, detail },
                }
            }
            C::RecordIntegration { product, capability, client, environment_class, sustainability_note } => {
                Outcome::Integration(self.record_integration(
                    ctx,
                    product,
                    capability,
                    client,
                    *environment_class,
                    sustainability_note.as_deref(),
                )?)
            }
            C::AttachEvidence { integration, kind, uri_or_path, content_digest, expected_revision } => {
                Outcome::Integration(self.attach_evidence(
                    ctx,
                    integration,
                    *kind,
                    uri_or_path,
                    content_digest,
                    *expected_revision,
                )?)
            }
            C::SubmitIntegration { integration, sustainability_note, expected_revision } => Outcome::Integration(
                self.submit_for_review(ctx, integration, sustainability_note.as_deref(), *expected_revision)?,
            ),
            C::SmeReview { integration, endorse, report, expected_revision } => {
                Outcome::Integration(self.sme_review(ctx, integration, *endorse, report, *expected_revision)?)
            }
            C::FinalApproval { integration, expected_revision } => {
                Outcome::Integration(self.final_approval(ctx, integration, *expected_revision)?)
            }
            C::AdvancePhase { fiscal_year, phase } => {
                Outcome::Lifecycle(self.advance_phase(ctx, *fiscal_year, *phase)?)
            }
            C::TakeSnapshot { period } => Outcome::Snapshot(self.take_monthly_snapshot(ctx, *period)?),
            C::DefinePolicy { id, description } => {
                self.define_policy(id, description)?;
                Outcome::Policy { id: id.clone(), description: description.clone() }
            }
            C::RegisterRelease { product, version, constraints } => {
                Outcome::Release(self.register_release(ctx, product, version.clone(), constraints.clone())?)
            }
            C::RecordChecklist { product, items } => Outcome::Checklist(self.record_checklist(product, items.clone())?),
            C::ComposeManifest { name, stack_version, pins, inclusion_rule, metadata } => Outcome::Manifest(
                self.compose_manifest(name, stack_version, pins.clone(), *inclusion_rule, metadata.clone())?,
            ),
        })
    }
}
