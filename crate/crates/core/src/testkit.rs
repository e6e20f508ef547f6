//! Builders shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::command::{Command, Outcome};
use crate::domain::{EvTechnique, PortfolioConfig, Role};
use crate::engine::{Clock, Engine};
use crate::error::Result;
use crate::evm::ActivityStatus;
use crate::ids::{ActivityId, ChangeRequestId, PackageId, ProductId, SdkGroupId};
use crate::lifecycle::Phase;
use crate::model::Model;
use crate::money::{Money, Ratio};
use crate::period::Period;
use crate::planning::{ActivitySpec, ChangeField, ChangeLevel, ChangeTarget, FieldValue};

pub fn p(fy: i32, month: u8) -> Period {
    Period::new(fy, month).unwrap()
}

pub fn spec(title: &str, fraction: Ratio, start: Period, end: Period) -> ActivitySpec {
    ActivitySpec { title: title.into(), scope_text: format!("{title} scope"), budget_fraction: fraction, baseline_start: start, baseline_end: end }
}

pub struct Kit {
    pub engine: Engine,
}

impl Kit {
    pub fn new(start_fy: i32, years: u32) -> Kit {
        Kit::with_config(start_fy, years, PortfolioConfig::default())
    }

    pub fn with_config(start_fy: i32, years: u32, config: PortfolioConfig) -> Kit {
        let mut kit = Kit { engine: Engine::new(Clock::deterministic()) };
        kit.run(Command::CreatePortfolio { name: "test".into(), start_fy, years, config }, Role::ProjectDirector);
        kit
    }

    pub fn model(&self) -> &Model {
        self.engine.model()
    }

    pub fn try_run(&mut self, cmd: Command, role: Role) -> Result<Outcome> {
        self.engine.execute(cmd, role)
    }

    pub fn run(&mut self, cmd: Command, role: Role) -> Outcome {
        let name = cmd.name();
        self.try_run(cmd, role).unwrap_or_else(|e| panic!("{name} failed: {e}"))
    }

    pub fn group(&mut self, name: &str) -> SdkGroupId {
        match self.run(Command::AddSdkGroup { name: name.into() }, Role::ProjectDirector) {
            Outcome::SdkGroup(g) => g.id,
            o => panic!("unexpected {o:?}"),
        }
    }

    pub fn product(&mut self, group: &SdkGroupId, name: &str, goal: u32) -> ProductId {
        match self.run(
            Command::AddProduct { group: group.clone(), name: name.into(), kpp_goal: goal, team_name: None },
            Role::AreaLead,
        ) {
            Outcome::Product(p) => p.id,
            o => panic!("unexpected {o:?}"),
        }
    }

    pub fn package(&mut self, product: &ProductId, fy: i32, budget: i64) -> PackageId {
        match self.run(
            Command::CreatePackage {
                product: product.clone(),
                fiscal_year: fy,
                narrative: format!("{product} plan for {fy}"),
                annual_budget: Money::from_units(budget),
            },
            Role::Team,
        ) {
            Outcome::Package(p) => p.id,
            o => panic!("unexpected {o:?}"),
        }
    }

    pub fn refine(&mut self, package: &PackageId, specs: Vec<ActivitySpec>) -> Vec<ActivityId> {
        match self.run(Command::RefinePackage { package: package.clone(), activities: specs }, Role::Team) {
            Outcome::Refined(r) => r.activities.into_iter().map(|a| a.id).collect(),
            o => panic!("unexpected {o:?}"),
        }
    }

    /// A product with one package holding a single activity of the given budget.
    pub fn single_activity(&mut self, group: &SdkGroupId, name: &str, fy: i32, budget: i64, start: Period, end: Period) -> (ProductId, ActivityId) {
        let product = self.product(group, name, 4);
        let pkg = self.package(&product, fy, budget);
        let ids = self.refine(&pkg, vec![spec("work", Ratio::one(), start, end)]);
        (product, ids[0].clone())
    }

    pub fn baseline_and_execute(&mut self, fy: i32) {
        self.run(Command::Baseline { fiscal_year: fy }, Role::ProjectDirector);
        self.run(Command::AdvancePhase { fiscal_year: fy, phase: Phase::Execution }, Role::ProjectDirector);
    }

    pub fn advance(&mut self, fy: i32, phase: Phase) {
        self.run(Command::AdvancePhase { fiscal_year: fy, phase }, Role::ProjectDirector);
    }

    pub fn finalize(&mut self, a: &ActivityId) {
        self.run(
            Command::FinalizeActivity { activity: a.clone(), completion_criteria: "accepted".into(), staffing_note: String::new() },
            Role::Team,
        );
    }

    pub fn start(&mut self, a: &ActivityId, t: Period) {
        if self.model().activities[a].completion_criteria.is_none() {
            self.finalize(a);
        }
        self.run(Command::StartActivity { activity: a.clone(), period: t }, Role::Team);
    }

    pub fn complete(&mut self, a: &ActivityId, t: Period) {
        self.run(Command::CompleteMilestone { activity: a.clone(), period: t }, Role::Team);
    }

    pub fn cost(&mut self, a: &ActivityId, t: Period, amount: i64) {
        self.run(Command::RecordCost { activity: a.clone(), period: t, amount: Money::from_units(amount) }, Role::Team);
    }

    pub fn progress(&mut self, a: &ActivityId, t: Period, fraction: Ratio) {
        self.run(Command::RecordProgress { activity: a.clone(), period: t, fraction }, Role::Team);
    }
}

/// A random one- or two-year portfolio in execution, with random starts,
/// completions, costs and (under percent-complete) progress.
pub fn random_portfolio(seed: u64) -> Kit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tech = if rng.gen_bool(0.5) { EvTechnique::Milestone0100 } else { EvTechnique::PercentComplete };
    let fy = 2021;
    let mut kit = Kit::with_config(fy, 1, PortfolioConfig { ev_technique: tech, ..PortfolioConfig::default() });
    let groups: Vec<SdkGroupId> = (0..rng.gen_range(1..=3)).map(|g| kit.group(&format!("g{g}"))).collect();
    let mut acts = Vec::new();
    for i in 0..rng.gen_range(1..=5) {
        let product = kit.product(&groups[rng.gen_range(0..groups.len())], &format!("p{i}"), 4);
        let pkg = kit.package(&product, fy, rng.gen_range(1..=40) * 100);
        let specs = (0..rng.gen_range(1..=5))
            .map(|k| {
                let s = rng.gen_range(1..=12u8);
                spec(&format!("a{k}"), Ratio::new(rng.gen_range(1..=20), 100), p(fy, s), p(fy, rng.gen_range(s..=12)))
            })
            .collect();
        acts.extend(kit.refine(&pkg, specs));
    }
    kit.baseline_and_execute(fy);
    let mut pct = std::collections::BTreeMap::new();
    for month in 1..=12u8 {
        let t = p(fy, month);
        for a in &acts {
            let status = kit.model().activities[a].status;
            if status == ActivityStatus::Planned && kit.model().activities[a].baseline_start <= t && rng.gen_bool(0.6) {
                kit.start(a, t);
            }
            if kit.model().activities[a].status == ActivityStatus::InProgress {
                if rng.gen_bool(0.7) {
                    kit.cost(a, t, rng.gen_range(0..=500));
                }
                if tech == EvTechnique::PercentComplete && rng.gen_bool(0.5) {
                    let cur: &mut i64 = pct.entry(a.clone()).or_default();
                    *cur = (*cur + rng.gen_range(0..=40)).min(100);
                    let f = Ratio::new(*cur, 100);
                    kit.progress(a, t, f);
                }
                if rng.gen_bool(0.2) {
                    kit.complete(a, t);
                }
            }
        }
    }
    kit
}

impl Kit {
    /// Drafts and submits a change request, returning its id.
    pub fn propose(&mut self, level: ChangeLevel, targets: Vec<ChangeTarget>, effective: Period) -> ChangeRequestId {
        let draft = Command::DraftChange { level, targets, rationale: "replan".into(), effective_period: effective };
        let Outcome::ChangeRequest(cr) = self.run(draft, Role::Team) else { panic!("draft returned no change request") };
        self.run(Command::SubmitChange { change_request: cr.id.clone(), expected_revision: None }, Role::Team);
        cr.id
    }

    pub fn review(&mut self, cr: &ChangeRequestId, approve: bool, role: Role) -> Result<Outcome> {
        self.try_run(
            Command::ReviewChange { change_request: cr.clone(), approve, note: "reviewed".into(), expected_revision: None },
            role,
        )
    }

    pub fn apply(&mut self, cr: &ChangeRequestId, role: Role) -> Result<Outcome> {
        self.try_run(Command::ApplyChange { change_request: cr.clone(), expected_revision: None }, role)
    }
}

pub fn target(entity: impl ToString, field: ChangeField, old: FieldValue, new: FieldValue) -> ChangeTarget {
    ChangeTarget { entity_id: entity.to_string(), field, old_value: old, new_value: new }
}
