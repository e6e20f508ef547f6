//! Planning packages, annual refinement into activities, baselining, and the
//! two-level change-control workflow.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::Role;
use crate::error::{Error, Result};
use crate::evm::{Activity, ActivityStatus, DetailLevel, ScheduleSegment};
use crate::ids::{ActivityId, BaselineId, ChangeRequestId, PackageId, ProductId, SdkGroupId};
use crate::lifecycle::Phase;
use crate::model::{Ctx, Model};
use crate::money::{Money, Ratio};
use crate::period::Period;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackageState {
    Coarse,
    Refined,
    Baselined,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningPackage {
    pub id: PackageId,
    pub product_id: ProductId,
    pub fiscal_year: i32,
    pub narrative: String,
    pub annual_budget: Money,
    pub state: PackageState,
    pub activity_ids: Vec<ActivityId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivitySpec {
    pub title: String,
    pub scope_text: String,
    pub budget_fraction: Ratio,
    pub baseline_start: Period,
    pub baseline_end: Period,
}

/// Pre-baseline edits. Absent fields are left unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityEdit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_start: Option<Period>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_end: Option<Period>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_fraction: Option<Ratio>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineResult {
    pub activities: Vec<Activity>,
    pub warnings: Vec<String>,
    pub management_reserve: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineCurve {
    pub budget: Money,
    pub start: Period,
    pub end: Period,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSnapshot {
    pub id: BaselineId,
    pub portfolio_id: String,
    pub fiscal_year: i32,
    pub curves: BTreeMap<ActivityId, BaselineCurve>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChangeLevel {
    L1,
    L2,
}

impl ChangeLevel {
    pub fn approver_role(self) -> Role {
        match self {
            ChangeLevel::L1 => Role::AreaLead,
            ChangeLevel::L2 => Role::ProjectDirector,
        }
    }
}

impl fmt::Display for ChangeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChangeLevel::L1 => "L1",
            ChangeLevel::L2 => "L2",
        })
    }
}

/// Fields a change request may target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeField {
    ActivityTitle,
    ActivityScope,
    ActivityStart,
    ActivityEnd,
    ActivityBudget,
    ActivityStatus,
    PackageNarrative,
    PackageBudget,
    ProductGroup,
}

impl ChangeField {
    pub const ALL: [ChangeField; 9] = [
        ChangeField::ActivityTitle,
        ChangeField::ActivityScope,
        ChangeField::ActivityStart,
        ChangeField::ActivityEnd,
        ChangeField::ActivityBudget,
        ChangeField::ActivityStatus,
        ChangeField::PackageNarrative,
        ChangeField::PackageBudget,
        ChangeField::ProductGroup,
    ];

    /// Budget edits and moves between SDK groups need L2; the rest are
    /// within-product scope or schedule edits.
    pub fn default_policy() -> BTreeMap<ChangeField, ChangeLevel> {
        ChangeField::ALL
            .into_iter()
            .map(|f| {
                let lvl = match f {
                    ChangeField::ActivityBudget
                    | ChangeField::PackageBudget
                    | ChangeField::ProductGroup => ChangeLevel::L2,
                    _ => ChangeLevel::L1,
                };
                (f, lvl)
            })
            .collect()
    }

    fn entity_prefix(self) -> &'static str {
        match self {
            ChangeField::PackageNarrative | ChangeField::PackageBudget => PackageId::PREFIX,
            ChangeField::ProductGroup => ProductId::PREFIX,
            _ => ActivityId::PREFIX,
        }
    }

    fn value_matches(self, v: &FieldValue) -> bool {
        matches!(
            (self, v),
            (ChangeField::ActivityTitle | ChangeField::ActivityScope | ChangeField::PackageNarrative, FieldValue::Text(_))
                | (ChangeField::ActivityStart | ChangeField::ActivityEnd, FieldValue::Period(_))
                | (ChangeField::ActivityBudget | ChangeField::PackageBudget, FieldValue::Money(_))
                | (ChangeField::ActivityStatus, FieldValue::Status(_))
                | (ChangeField::ProductGroup, FieldValue::Group(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum FieldValue {
    Text(String),
    Period(Period),
    Money(Money),
    Status(ActivityStatus),
    Group(SdkGroupId),
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Text(s) => write!(f, "{s:?}"),
            FieldValue::Period(p) => write!(f, "{p}"),
            FieldValue::Money(m) => write!(f, "{m}"),
            FieldValue::Status(s) => f.write_str(s.as_str()),
            FieldValue::Group(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeTarget {
    pub entity_id: String,
    pub field: ChangeField,
    pub old_value: FieldValue,
    pub new_value: FieldValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrState {
    Drafted,
    UnderReview,
    Approved,
    Rejected,
    Applied,
}

impl CrState {
    pub const ALL: [CrState; 5] =
        [CrState::Drafted, CrState::UnderReview, CrState::Approved, CrState::Rejected, CrState::Applied];

    pub fn as_str(self) -> &'static str {
        match self {
            CrState::Drafted => "drafted",
            CrState::UnderReview => "under_review",
            CrState::Approved => "approved",
            CrState::Rejected => "rejected",
            CrState::Applied => "applied",
        }
    }

    /// Workflow edges. `approved -> drafted` is taken only when an apply
    /// finds stale old values.
    pub fn can_transition(self, to: CrState) -> bool {
        use CrState::*;
        matches!(
            (self, to),
            (Drafted, UnderReview) | (UnderReview, Approved) | (UnderReview, Rejected) | (Approved, Applied)
        )
    }
}

impl fmt::Display for CrState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrTransition {
    pub from: Option<CrState>,
    pub to: CrState,
    pub actor_role: Role,
    pub at: DateTime<Utc>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRequest {
    pub id: ChangeRequestId,
    pub level: ChangeLevel,
    pub targets: Vec<ChangeTarget>,
    pub rationale: String,
    pub state: CrState,
    pub proposer: Role,
    pub approver_role: Role,
    pub decision_note: String,
    pub effective_period: Period,
    pub transitions: Vec<CrTransition>,
    pub revision: u64,
}

/// One line of the change-request audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub cr_id: ChangeRequestId,
    pub edge: String,
    pub actor_role: Role,
    pub timestamp: DateTime<Utc>,
    pub decision_note: String,
}

/// Newline-delimited JSON, one record per transition.
pub fn audit_log_ndjson(records: &[AuditRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
        out.push('\n');
    }
    out
}

pub(crate) fn check_revision(id: &str, expected: Option<u64>, actual: u64) -> Result<()> {
    match expected {
        Some(e) if e != actual => Err(Error::StaleRevision { id: id.to_string(), expected: e, actual }),
        _ => Ok(()),
    }
}



impl Model {
    pub fn package(&self, id: &PackageId) -> Result<&PlanningPackage> {
        self.packages.get(id).ok_or_else(|| Error::not_found("planning package", id))
    }

    pub fn change_request(&self, id: &ChangeRequestId) -> Result<&ChangeRequest> {
        self.change_requests.get(id).ok_or_else(|| Error::not_found("change request", id))
    }

    pub fn packages_for_year(&self, fy: i32) -> impl Iterator<Item = &PlanningPackage> {
        self.packages.values().filter(move |p| p.fiscal_year == fy)
    }

    pub fn baseline_for_year(&self, fy: i32) -> Option<&BaselineSnapshot> {
        self.baselines.values().find(|b| b.fiscal_year == fy)
    }

    pub(crate) fn create_planning_package(
        &mut self,
        product: &ProductId,
        fy: i32,
        narrative: &str,
        annual_budget: Money,
    ) -> Result<PlanningPackage> {
        self.product(product)?;
        if !self.horizon()?.contains_fy(fy) {
            return Err(Error::Validation(format!("fiscal year {fy} outside the portfolio horizon")));
        }
        if annual_budget.is_negative() {
            return Err(Error::Validation("annual budget must be >= 0".into()));
        }
        if self.products[product].planning_packages.contains_key(&fy) {
            return Err(Error::Duplicate { what: "planning package", key: format!("{product}/{fy}") });
        }
        if self.phase_of(fy) == Some(Phase::Closed) {
            return Err(Error::PhaseGate {
                operation: "create_planning_package",
                fy,
                required: "any open phase".into(),
                actual: Phase::Closed.to_string(),
            });
        }
        let id = PackageId::from_seq(self.counters.bump("pkg"));
        let pkg = PlanningPackage {
            id: id.clone(),
            product_id: product.clone(),
            fiscal_year: fy,
            narrative: narrative.to_string(),
            annual_budget,
            state: PackageState::Coarse,
            activity_ids: Vec::new(),
        };
        self.packages.insert(id.clone(), pkg.clone());
        self.products.get_mut(product).expect("checked").planning_packages.insert(fy, id);
        Ok(pkg)
    }

    /// Out-year edits to coarse packages need no change request.
    pub(crate) fn edit_package(
        &mut self,
        id: &PackageId,
        narrative: Option<&str>,
        annual_budget: Option<Money>,
    ) -> Result<PlanningPackage> {
        let pkg = self.package(id)?;
        match pkg.state {
            PackageState::Coarse => {}
            PackageState::Refined if annual_budget.is_none() => {}
            PackageState::Refined => {
                return Err(Error::Validation(
                    "annual budget of a refined package is fixed; edit activity fractions instead".into(),
                ))
            }
            PackageState::Baselined | PackageState::Closed => {
                return Err(Error::ChangeRequestRequired { entity: "planning package", id: id.to_string() })
            }
        }
        if annual_budget.as_ref().is_some_and(Money::is_negative) {
            return Err(Error::Validation("annual budget must be >= 0".into()));
        }
        let pkg = self.packages.get_mut(id).expect("checked");
        if let Some(n) = narrative {
            pkg.narrative = n.to_string();
        }
        if let Some(b) = annual_budget {
            pkg.annual_budget = b;
        }
        Ok(pkg.clone())
    }

    fn check_spec_dates(fy: i32, start: Period, end: Period) -> Result<()> {
        if start > end {
            return Err(Error::Validation(format!("baseline start {start} after end {end}")));
        }
        if start.fiscal_year != fy || end.fiscal_year != fy {
            return Err(Error::Validation(format!(
                "dates outside fy: {start}..{end} not within fiscal year {fy}"
            )));
        }
        Ok(())
    }

    pub(crate) fn refine_package(&mut self, id: &PackageId, specs: &[ActivitySpec]) -> Result<RefineResult> {
        let pkg = self.package(id)?.clone();
        if pkg.state != PackageState::Coarse {
            return Err(Error::IllegalTransition {
                entity: "planning package",
                id: id.to_string(),
                from: format!("{:?}", pkg.state).to_lowercase(),
                to: "refined".into(),
            });
        }
        self.require_phase("refine_package", pkg.fiscal_year, &[Phase::Planning])?;
        let config = self.config()?.clone();
        if specs.is_empty() {
            return Err(Error::Validation("refinement needs at least one activity".into()));
        }
        let mut sum = Ratio::zero();
        for s in specs {
            if s.budget_fraction.is_negative() || s.budget_fraction > Ratio::one() {
                return Err(Error::Validation(format!(
                    "budget fraction {} outside [0, 1]",
                    s.budget_fraction
                )));
            }
            Self::check_spec_dates(pkg.fiscal_year, s.baseline_start, s.baseline_end)?;
            sum += &s.budget_fraction;
        }
        if sum > Ratio::one() {
            return Err(Error::OverAllocated(sum.to_string()));
        }
        if config.strict_budget && sum != Ratio::one() {
            return Err(Error::Validation(format!("strict budget mode: fractions sum to {sum}, not 1")));
        }
        let mut warnings = Vec::new();
        if !config.activities_per_package_range.contains(specs.len()) {
            warnings.push(format!(
                "package {id} refined into {} activities; expected {}..{}",
                specs.len(),
                config.activities_per_package_range.min,
                config.activities_per_package_range.max
            ));
        }
        let mut created = Vec::with_capacity(specs.len());
        for s in specs {
            let aid = ActivityId::from_seq(self.counters.bump("act"));
            let budget = pkg.annual_budget.scale(&s.budget_fraction);
            let activity = Activity {
                id: aid.clone(),
                product_id: pkg.product_id.clone(),
                package_id: id.clone(),
                fiscal_year: pkg.fiscal_year,
                title: s.title.clone(),
                scope_text: s.scope_text.clone(),
                budget: budget.clone(),
                budget_fraction: s.budget_fraction.clone(),
                baseline_start: s.baseline_start,
                baseline_end: s.baseline_end,
                status: ActivityStatus::Planned,
                actual_start: None,
                completion_period: None,
                cancelled_at: None,
                percent_complete_series: BTreeMap::new(),
                detail_level: DetailLevel::Refined,
                completion_criteria: None,
                staffing_note: None,
                schedule: vec![ScheduleSegment {
                    effective_from: None,
                    budget,
                    start: s.baseline_start,
                    end: s.baseline_end,
                }],
            };
            self.activities.insert(aid.clone(), activity.clone());
            created.push(activity);
        }
        let reserve = pkg.annual_budget.scale(&(Ratio::one() - sum));
        let p = self.packages.get_mut(id).expect("checked");
        p.activity_ids = created.iter().map(|a| a.id.clone()).collect();
        p.state = PackageState::Refined;
        Ok(RefineResult { activities: created, warnings, management_reserve: reserve })
    }

    /// Unallocated part of a package's annual budget.
    pub fn management_reserve(&self, id: &PackageId) -> Result<Money> {
        let pkg = self.package(id)?;
        let allocated: Money = pkg.activity_ids.iter().filter_map(|a| self.activities.get(a)).map(|a| &a.budget).sum();
        Ok(&pkg.annual_budget - &allocated)
    }

    pub(crate) fn edit_activity(&mut self, id: &ActivityId, edit: &ActivityEdit) -> Result<Activity> {
        let a = self.activity(id)?.clone();
        let pkg = self.package(&a.package_id)?.clone();
        if matches!(pkg.state, PackageState::Baselined | PackageState::Closed) {
            return Err(Error::ChangeRequestRequired { entity: "activity", id: id.to_string() });
        }
        self.require_phase("edit_activity", a.fiscal_year, &[Phase::Planning])?;
        let start = edit.baseline_start.unwrap_or(a.baseline_start);
        let end = edit.baseline_end.unwrap_or(a.baseline_end);
        Self::check_spec_dates(a.fiscal_year, start, end)?;
        let fraction = edit.budget_fraction.clone().unwrap_or_else(|| a.budget_fraction.clone());
        if fraction.is_negative() || fraction > Ratio::one() {
            return Err(Error::Validation(format!("budget fraction {fraction} outside [0, 1]")));
        }
        let others: Ratio = pkg
            .activity_ids
            .iter()
            .filter(|x| *x != id)
            .filter_map(|x| self.activities.get(x))
            .map(|x| x.budget_fraction.clone())
            .sum();
        let total = &others + &fraction;
        if total > Ratio::one() {
            return Err(Error::OverAllocated(total.to_string()));
        }
        let budget = pkg.annual_budget.scale(&fraction);
        let act = self.activities.get_mut(id).expect("checked");
        if let Some(t) = &edit.title {
            act.title = t.clone();
        }
        if let Some(s) = &edit.scope_text {
            act.scope_text = s.clone();
        }
        act.baseline_start = start;
        act.baseline_end = end;
        act.budget_fraction = fraction;
        act.budget = budget.clone();
        act.schedule = vec![ScheduleSegment { effective_from: None, budget, start, end }];
        Ok(act.clone())
    }

    pub(crate) fn finalize_activity(
        &mut self,
        id: &ActivityId,
        completion_criteria: &str,
        staffing_note: &str,
    ) -> Result<Activity> {
        let a = self.activity(id)?;
        if a.detail_level != DetailLevel::Refined {
            return Err(Error::IllegalTransition {
                entity: "activity detail level",
                id: id.to_string(),
                from: format!("{:?}", a.detail_level).to_lowercase(),
                to: "finalized".into(),
            });
        }
        self.require_phase("finalize_activity", a.fiscal_year, &[Phase::Planning, Phase::Execution])?;
        if completion_criteria.trim().is_empty() {
            return Err(Error::Validation("completion criteria must be non-empty".into()));
        }
        let act = self.activities.get_mut(id).expect("checked");
        act.detail_level = DetailLevel::Finalized;
        act.completion_criteria = Some(completion_criteria.to_string());
        act.staffing_note = Some(staffing_note.to_string());
        Ok(act.clone())
    }

    pub(crate) fn baseline(&mut self, ctx: &Ctx, fy: i32) -> Result<BaselineSnapshot> {
        self.require_phase("baseline", fy, &[Phase::Planning])?;
        if let Some(b) = self.baseline_for_year(fy) {
            return Err(Error::Duplicate {
                what: "baseline (supersede only via an L2 change request)",
                key: format!("{fy} ({})", b.id),
            });
        }
        let pkgs: Vec<&PlanningPackage> = self.packages_for_year(fy).collect();
        if pkgs.is_empty() {
            return Err(Error::Validation(format!("no planning packages for fiscal year {fy}")));
        }
        if let Some(coarse) = pkgs.iter().find(|p| p.state == PackageState::Coarse) {
            return Err(Error::Validation(format!(
                "package {} ({}) is still coarse",
                coarse.id, self.products[&coarse.product_id].name
            )));
        }
        let pkg_ids: Vec<PackageId> = pkgs.iter().map(|p| p.id.clone()).collect();
        let mut curves = BTreeMap::new();
        for pid in &pkg_ids {
            for aid in &self.packages[pid].activity_ids {
                let a = &self.activities[aid];
                curves.insert(
                    aid.clone(),
                    BaselineCurve { budget: a.budget.clone(), start: a.baseline_start, end: a.baseline_end },
                );
            }
        }
        let id = BaselineId::from_seq(self.counters.bump("bl"));
        let snap = BaselineSnapshot {
            id: id.clone(),
            portfolio_id: self.portfolio()?.id.clone(),
            fiscal_year: fy,
            curves,
            created_at: ctx.at,
        };
        for pid in &pkg_ids {
            self.packages.get_mut(pid).expect("exists").state = PackageState::Baselined;
        }
        self.baselines.insert(id, snap.clone());
        Ok(snap)
    }

    fn is_frozen(&self, t: Period) -> bool {
        self.snapshots.contains_key(&t)
    }

    fn check_in_year(a: &Activity, t: Period) -> Result<()> {
        if t.fiscal_year != a.fiscal_year {
            return Err(Error::Validation(format!(
                "period {t} outside fiscal year {} of activity {}",
                a.fiscal_year, a.id
            )));
        }
        Ok(())
    }

    pub(crate) fn start_activity(&mut self, id: &ActivityId, t: Period) -> Result<Activity> {
        let a = self.activity(id)?;
        if a.status != ActivityStatus::Planned {
            return Err(Error::IllegalTransition {
                entity: "activity",
                id: id.to_string(),
                from: a.status.as_str().into(),
                to: ActivityStatus::InProgress.as_str().into(),
            });
        }
        self.require_phase("start_activity", a.fiscal_year, &[Phase::Execution])?;
        if a.detail_level != DetailLevel::Finalized {
            return Err(Error::Validation(format!("activity {id} must be finalized before it starts")));
        }
        if self.package(&a.package_id)?.state != PackageState::Baselined {
            return Err(Error::Validation(format!("activity {id} is not baselined")));
        }
        Self::check_in_year(a, t)?;
        let act = self.activities.get_mut(id).expect("checked");
        act.status = ActivityStatus::InProgress;
        act.actual_start = Some(t);
        Ok(act.clone())
    }

    pub(crate) fn complete_milestone(&mut self, id: &ActivityId, t: Period) -> Result<Activity> {
        let a = self.activity(id)?;
        if a.status != ActivityStatus::InProgress {
            return Err(Error::IllegalTransition {
                entity: "activity",
                id: id.to_string(),
                from: a.status.as_str().into(),
                to: ActivityStatus::MilestoneComplete.as_str().into(),
            });
        }
        self.require_phase("complete_milestone", a.fiscal_year, &[Phase::Execution])?;
        Self::check_in_year(a, t)?;
        if a.actual_start.is_some_and(|s| t < s) {
            return Err(Error::Validation(format!("period {t} before start of activity {id}")));
        }
        let act = self.activities.get_mut(id).expect("checked");
        act.status = ActivityStatus::MilestoneComplete;
        act.completion_period = Some(t);
        Ok(act.clone())
    }

    pub(crate) fn record_actual_cost(&mut self, id: &ActivityId, t: Period, amount: Money) -> Result<Money> {
        let a = self.activity(id)?;
        if !matches!(a.status, ActivityStatus::InProgress | ActivityStatus::MilestoneComplete) {
            return Err(Error::Validation(format!(
                "costs require a started activity; {id} is {}",
                a.status.as_str()
            )));
        }
        self.require_phase("record_actual_cost", a.fiscal_year, &[Phase::Execution])?;
        Self::check_in_year(a, t)?;
        if a.actual_start.is_some_and(|s| t < s) {
            return Err(Error::Validation(format!("period {t} before start of activity {id}")));
        }
        if amount.is_negative() {
            return Err(Error::Validation("cost amount must be >= 0".into()));
        }
        if self.is_frozen(t) {
            return Err(Error::Validation(format!("period {t} is frozen; cost records are immutable")));
        }
        if self.costs.get(id).is_some_and(|r| r.contains_key(&t)) {
            return Err(Error::Duplicate { what: "cost record", key: format!("{id}/{t}") });
        }
        self.costs.entry(id.clone()).or_default().insert(t, amount.clone());
        Ok(amount)
    }

    pub(crate) fn record_progress(&mut self, id: &ActivityId, t: Period, fraction: Ratio) -> Result<Activity> {
        let a = self.activity(id)?;
        if a.status != ActivityStatus::InProgress {
            return Err(Error::Validation(format!(
                "progress requires an in-progress activity; {id} is {}",
                a.status.as_str()
            )));
        }
        self.require_phase("record_progress", a.fiscal_year, &[Phase::Execution])?;
        Self::check_in_year(a, t)?;
        if a.actual_start.is_some_and(|s| t < s) {
            return Err(Error::Validation(format!("period {t} before start of activity {id}")));
        }
        if fraction.is_negative() || fraction > Ratio::one() {
            return Err(Error::Validation(format!("fraction {fraction} outside [0, 1]")));
        }
        if self.is_frozen(t) {
            return Err(Error::Validation(format!("period {t} is frozen")));
        }
        let before = a.percent_complete_series.range(..t).next_back().map(|(_, f)| f);
        let after = a.percent_complete_series.range(t.succ()..).next().map(|(_, f)| f);
        if before.is_some_and(|b| *b > fraction) || after.is_some_and(|n| *n < fraction) {
            return Err(Error::Validation("percent-complete series must be non-decreasing".into()));
        }
        let act = self.activities.get_mut(id).expect("checked");
        act.percent_complete_series.insert(t, fraction);
        Ok(act.clone())
    }

    /// Activities started at or before `t` and neither completed nor cancelled by `t`.
    pub fn in_progress_set(&self, t: Period) -> Vec<&Activity> {
        self.activities.values().filter(|a| a.is_in_progress_at(t)).collect()
    }

    fn product_of_entity(&self, entity_id: &str) -> Result<ProductId> {
        let (prefix, _) = entity_id.split_once('-').unwrap_or(("", ""));
        match prefix {
            p if p == ActivityId::PREFIX => Ok(self.activity(&entity_id.into())?.product_id.clone()),
            p if p == PackageId::PREFIX => Ok(self.package(&entity_id.into())?.product_id.clone()),
            p if p == ProductId::PREFIX => Ok(self.product(&entity_id.into())?.id.clone()),
            _ => Err(Error::not_found("change target entity", entity_id)),
        }
    }

    /// Minimum level for a set of targets under the configured policy.
    pub fn required_level(&self, targets: &[ChangeTarget]) -> Result<ChangeLevel> {
        let policy = &self.config()?.change_level_policy;
        let mut level = ChangeLevel::L1;
        let mut products = BTreeSet::new();
        for t in targets {
            level = level.max(policy.get(&t.field).copied().unwrap_or(ChangeLevel::L2));
            products.insert(self.product_of_entity(&t.entity_id)?);
        }
        if products.len() > 1 {
            level = ChangeLevel::L2;
        }
        Ok(level)
    }

    fn current_value(&self, t: &ChangeTarget) -> Result<FieldValue> {
        Ok(match t.field {
            ChangeField::ActivityTitle => FieldValue::Text(self.activity(&t.entity_id.as_str().into())?.title.clone()),
            ChangeField::ActivityScope => {
                FieldValue::Text(self.activity(&t.entity_id.as_str().into())?.scope_text.clone())
            }
            ChangeField::ActivityStart => FieldValue::Period(self.activity(&t.entity_id.as_str().into())?.baseline_start),
            ChangeField::ActivityEnd => FieldValue::Period(self.activity(&t.entity_id.as_str().into())?.baseline_end),
            ChangeField::ActivityBudget => FieldValue::Money(self.activity(&t.entity_id.as_str().into())?.budget.clone()),
            ChangeField::ActivityStatus => FieldValue::Status(self.activity(&t.entity_id.as_str().into())?.status),
            ChangeField::PackageNarrative => {
                FieldValue::Text(self.package(&t.entity_id.as_str().into())?.narrative.clone())
            }
            ChangeField::PackageBudget => {
                FieldValue::Money(self.package(&t.entity_id.as_str().into())?.annual_budget.clone())
            }
            ChangeField::ProductGroup => {
                FieldValue::Group(self.product(&t.entity_id.as_str().into())?.sdk_group.clone())
            }
        })
    }

    pub(crate) fn draft_change(
        &mut self,
        ctx: &Ctx,
        level: ChangeLevel,
        targets: Vec<ChangeTarget>,
        rationale: &str,
        effective_period: Period,
    ) -> Result<ChangeRequest> {
        if targets.is_empty() {
            return Err(Error::Validation("change request needs at least one target".into()));
        }
        if !self.horizon()?.contains(effective_period) {
            return Err(Error::OutsideHorizon(effective_period));
        }
        for t in &targets {
            if !t.entity_id.starts_with(&format!("{}-", t.field.entity_prefix())) {
                return Err(Error::Validation(format!(
                    "field {:?} does not apply to entity {}",
                    t.field, t.entity_id
                )));
            }
            if !t.field.value_matches(&t.old_value) || !t.field.value_matches(&t.new_value) {
                return Err(Error::Validation(format!("value type mismatch for field {:?}", t.field)));
            }
            if t.field == ChangeField::ActivityStatus && t.new_value != FieldValue::Status(ActivityStatus::Cancelled) {
                return Err(Error::Validation("status changes may only cancel an activity".into()));
            }
            self.current_value(t)?;
        }
        let required = self.required_level(&targets)?;
        if required > level {
            return Err(Error::UnderLeveled { cr: "(draft)".into(), declared: level.to_string() });
        }
        let id = ChangeRequestId::from_seq(self.counters.bump("cr"));
        let cr = ChangeRequest {
            id: id.clone(),
            level,
            targets,
            rationale: rationale.to_string(),
            state: CrState::Drafted,
            proposer: ctx.actor,
            approver_role: level.approver_role(),
            decision_note: String::new(),
            effective_period,
            transitions: vec![CrTransition {
                from: None,
                to: CrState::Drafted,
                actor_role: ctx.actor,
                at: ctx.at,
                note: rationale.to_string(),
            }],
            revision: 1,
        };
        self.audit.push(AuditRecord {
            cr_id: id.clone(),
            edge: "new->drafted".into(),
            actor_role: ctx.actor,
            timestamp: ctx.at,
            decision_note: String::new(),
        });
        self.change_requests.insert(id, cr.clone());
        Ok(cr)
    }

    fn transition_cr(&mut self, ctx: &Ctx, id: &ChangeRequestId, to: CrState, note: &str) -> ChangeRequest {
        let cr = self.change_requests.get_mut(id).expect("caller checked");
        let from = cr.state;
        cr.state = to;
        cr.revision += 1;
        cr.transitions.push(CrTransition {
            from: Some(from),
            to,
            actor_role: ctx.actor,
            at: ctx.at,
            note: note.to_string(),
        });
        if matches!(to, CrState::Approved | CrState::Rejected) {
            cr.decision_note = note.to_string();
        }
        let out = cr.clone();
        self.audit.push(AuditRecord {
            cr_id: id.clone(),
            edge: format!("{from}->{to}"),
            actor_role: ctx.actor,
            timestamp: ctx.at,
            decision_note: note.to_string(),
        });
        out
    }

    fn check_cr_edge(&self, id: &ChangeRequestId, to: CrState, expected_revision: Option<u64>) -> Result<&ChangeRequest> {
        let cr = self.change_request(id)?;
        check_revision(id.as_str(), expected_revision, cr.revision)?;
        if !cr.state.can_transition(to) {
            return Err(Error::IllegalTransition {
                entity: "change request",
                id: id.to_string(),
                from: cr.state.to_string(),
                to: to.to_string(),
            });
        }
        Ok(cr)
    }

    pub(crate) fn submit_change(
        &mut self,
        ctx: &Ctx,
        id: &ChangeRequestId,
        expected_revision: Option<u64>,
    ) -> Result<ChangeRequest> {
        let cr = self.check_cr_edge(id, CrState::UnderReview, expected_revision)?;
        // The level may have become insufficient if the model changed since drafting.
        let required = self.required_level(&cr.targets)?;
        if required > cr.level {
            return Err(Error::UnderLeveled { cr: id.to_string(), declared: cr.level.to_string() });
        }
        Ok(self.transition_cr(ctx, id, CrState::UnderReview, ""))
    }

    pub(crate) fn review_change(
        &mut self,
        ctx: &Ctx,
        id: &ChangeRequestId,
        approve: bool,
        note: &str,
        expected_revision: Option<u64>,
    ) -> Result<ChangeRequest> {
        let to = if approve { CrState::Approved } else { CrState::Rejected };
        let cr = self.check_cr_edge(id, to, expected_revision)?;
        if ctx.actor != cr.approver_role {
            return Err(Error::RoleMismatch { required: cr.approver_role.to_string(), actual: ctx.actor.to_string() });
        }
        Ok(self.transition_cr(ctx, id, to, note))
    }

    /// Applies an approved change. Returns `Ok(Err(detail))` when old values
    /// were stale: the request has then been sent back to drafted.
    pub(crate) fn apply_change(
        &mut self,
        ctx: &Ctx,
        id: &ChangeRequestId,
        expected_revision: Option<u64>,
    ) -> Result<std::result::Result<ChangeRequest, (ChangeRequest, String)>> {
        let cr = self.check_cr_edge(id, CrState::Applied, expected_revision)?.clone();
        if ctx.actor != cr.approver_role {
            return Err(Error::RoleMismatch { required: cr.approver_role.to_string(), actual: ctx.actor.to_string() });
        }
        let mut stale = Vec::new();
        for t in &cr.targets {
            let cur = self.current_value(t)?;
            if cur != t.old_value {
                stale.push(format!("{} {:?}: expected {}, found {}", t.entity_id, t.field, t.old_value, cur));
            }
        }
        if !stale.is_empty() {
            let detail = stale.join("; ");
            let reverted = self.transition_cr(ctx, id, CrState::Drafted, &format!("stale old value: {detail}"));
            return Ok(Err((reverted, detail)));
        }
        let staged = self.stage_targets(&cr)?;
        self.commit_staged(staged);
        Ok(Ok(self.transition_cr(ctx, id, CrState::Applied, "")))
    }

    /// Applies all targets to working copies and validates the result.
    fn stage_targets(&self, cr: &ChangeRequest) -> Result<Staged> {
        let horizon = self.horizon()?;
        let eff = cr.effective_period;
        let mut acts: BTreeMap<ActivityId, Activity> = BTreeMap::new();
        let mut pkgs: BTreeMap<PackageId, PlanningPackage> = BTreeMap::new();
        let mut moves: Vec<(ProductId, SdkGroupId)> = Vec::new();
        let mut schedule_touched = BTreeSet::new();
        for t in &cr.targets {
            match (t.field, &t.new_value) {
                (ChangeField::PackageNarrative, FieldValue::Text(s)) => {
                    let pid: PackageId = t.entity_id.as_str().into();
                    let p = pkgs.entry(pid.clone()).or_insert_with(|| self.packages[&pid].clone());
                    p.narrative = s.clone();
                }
                (ChangeField::PackageBudget, FieldValue::Money(m)) => {
                    if m.is_negative() {
                        return Err(Error::Validation("annual budget must be >= 0".into()));
                    }
                    let pid: PackageId = t.entity_id.as_str().into();
                    let p = pkgs.entry(pid.clone()).or_insert_with(|| self.packages[&pid].clone());
                    p.annual_budget = m.clone();
                }
                (ChangeField::ProductGroup, FieldValue::Group(g)) => {
                    self.group(g)?;
                    moves.push((t.entity_id.as_str().into(), g.clone()));
                }
                (field, value) => {
                    let aid: ActivityId = t.entity_id.as_str().into();
                    let a = acts.entry(aid.clone()).or_insert_with(|| self.activities[&aid].clone());
                    match (field, value) {
                        (ChangeField::ActivityTitle, FieldValue::Text(s)) => a.title = s.clone(),
                        (ChangeField::ActivityScope, FieldValue::Text(s)) => a.scope_text = s.clone(),
                        (ChangeField::ActivityStart, FieldValue::Period(p)) => {
                            a.baseline_start = *p;
                            schedule_touched.insert(aid);
                        }
                        (ChangeField::ActivityEnd, FieldValue::Period(p)) => {
                            a.baseline_end = *p;
                            schedule_touched.insert(aid);
                        }
                        (ChangeField::ActivityBudget, FieldValue::Money(m)) => {
                            if m.is_negative() {
                                return Err(Error::Validation("activity budget must be >= 0".into()));
                            }
                            a.budget = m.clone();
                            schedule_touched.insert(aid);
                        }
                        (ChangeField::ActivityStatus, FieldValue::Status(ActivityStatus::Cancelled)) => {
                            if !matches!(a.status, ActivityStatus::Planned | ActivityStatus::InProgress) {
                                return Err(Error::IllegalTransition {
                                    entity: "activity",
                                    id: a.id.to_string(),
                                    from: a.status.as_str().into(),
                                    to: ActivityStatus::Cancelled.as_str().into(),
                                });
                            }
                            a.status = ActivityStatus::Cancelled;
                            a.cancelled_at = Some(eff);
                        }
                        _ => return Err(Error::Validation(format!("value type mismatch for field {field:?}"))),
                    }
                }
            }
        }
        for aid in &schedule_touched {
            let a = acts.get_mut(aid).expect("touched activities are staged");
            if a.baseline_start > a.baseline_end {
                return Err(Error::Validation(format!(
                    "baseline start {} after end {} for {}",
                    a.baseline_start, a.baseline_end, a.id
                )));
            }
            if !horizon.contains(a.baseline_start) || !horizon.contains(a.baseline_end) {
                return Err(Error::Validation(format!("activity {} dates leave the horizon", a.id)));
            }
            let seg = ScheduleSegment {
                effective_from: Some(eff),
                budget: a.budget.clone(),
                start: a.baseline_start,
                end: a.baseline_end,
            };
            if a.schedule.last().is_some_and(|s| s.effective_from == Some(eff)) {
                *a.schedule.last_mut().expect("non-empty") = seg;
            } else {
                a.schedule.push(seg);
            }
        }
        // Budget integrity for every package touched directly or via its activities.
        let touched_pkgs: BTreeSet<PackageId> =
            pkgs.keys().cloned().chain(acts.values().map(|a| a.package_id.clone())).collect();
        for pid in touched_pkgs {
            let p = pkgs.entry(pid.clone()).or_insert_with(|| self.packages[&pid].clone());
            let allocated: Money = p
                .activity_ids
                .iter()
                .map(|aid| acts.get(aid).unwrap_or(&self.activities[aid]).budget.clone())
                .sum();
            if allocated > p.annual_budget {
                return Err(Error::OverAllocated(format!("{allocated} of {} in {}", p.annual_budget, p.id)));
            }
            for aid in p.activity_ids.clone() {
                let a = acts.entry(aid.clone()).or_insert_with(|| self.activities[&aid].clone());
                a.budget_fraction =
                    a.budget.ratio_to(&p.annual_budget).unwrap_or_else(|| a.budget_fraction.clone());
            }
        }
        Ok(Staged { acts, pkgs, moves })
    }

    fn commit_staged(&mut self, staged: Staged) {
        self.activities.extend(staged.acts);
        self.packages.extend(staged.pkgs);
        for (p, g) in staged.moves {
            self.move_product(&p, &g);
        }
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }
}

struct Staged {
    acts: BTreeMap<ActivityId, Activity>,
    pkgs: BTreeMap<PackageId, PlanningPackage>,
    moves: Vec<(ProductId, SdkGroupId)>,
}
