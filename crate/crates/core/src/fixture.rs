//! Seeded synthetic portfolios driven entirely through commands.
//!
//! [`build_ecp_fixture`] produces a six-year, 70-product portfolio at the
//! scale of a large exascale software effort: ~300 activities per year,
//! 1,700 completed milestones, ~300 approved integrations, with change
//! requests, rework loops and monthly snapshots along the way.
//! [`struggling_fixture`] plants one product with SPI 0.7 for three months.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::command::{Command, Outcome};
use crate::domain::{EvTechnique, PortfolioConfig, Role};
use crate::engine::{Clock, Engine};
use crate::error::{Error, Result};
use crate::evm::ActivityStatus;
use crate::ids::{ActivityId, ChangeRequestId, IntegrationId, PackageId, ProductId, SdkGroupId};
use crate::kpp::{EnvironmentClass, EvidenceKind};
use crate::lifecycle::Phase;
use crate::money::{Money, Ratio};
use crate::period::Period;
use crate::planning::{ActivitySpec, ChangeField, ChangeLevel, ChangeTarget, FieldValue};

#[derive(Debug, Clone)]
pub struct EcpFixtureSpec {
    pub seed: u64,
    pub start_fy: i32,
    pub years: u32,
    pub sdk_groups: usize,
    pub teams: usize,
    pub products: usize,
    /// Products refined into five activities each year; the rest get four.
    pub five_activity_products: usize,
    pub cancellations: usize,
    pub schedule_slips: usize,
    pub approved_integrations: usize,
    pub open_integrations: usize,
    pub goal_eight_products: usize,
}

impl Default for EcpFixtureSpec {
    fn default() -> Self {
        EcpFixtureSpec {
            seed: 2017,
            start_fy: 2017,
            years: 6,
            sdk_groups: 10,
            teams: 35,
            products: 70,
            five_activity_products: 20,
            cancellations: 100,
            schedule_slips: 30,
            approved_integrations: 297,
            open_integrations: 25,
            goal_eight_products: 10,
        }
    }
}

/// What the generator did, for cross-checking against the model.
#[derive(Debug, Clone, Default)]
pub struct FixtureReport {
    pub activities: usize,
    pub completed: usize,
    pub cancelled: usize,
    pub approved_integrations: usize,
    pub rework_loops: usize,
    pub change_requests_applied: usize,
    pub stale_applies: usize,
}

struct Driver {
    engine: Engine,
}

impl Driver {
    fn run(&mut self, cmd: Command, role: Role) -> Result<Outcome> {
        self.engine.execute(cmd, role)
    }

    fn cr(&mut self, level: ChangeLevel, targets: Vec<ChangeTarget>, why: &str, eff: Period) -> Result<ChangeRequestId> {
        let approver = level.approver_role();
        let Outcome::ChangeRequest(cr) =
            self.run(Command::DraftChange { level, targets, rationale: why.into(), effective_period: eff }, Role::Team)?
        else {
            unreachable!("draft returns a change request")
        };
        let id = cr.id;
        self.run(Command::SubmitChange { change_request: id.clone(), expected_revision: None }, Role::Team)?;
        self.run(
            Command::ReviewChange { change_request: id.clone(), approve: true, note: "approved".into(), expected_revision: None },
            approver,
        )?;
        Ok(id)
    }

    fn apply(&mut self, id: &ChangeRequestId, level: ChangeLevel) -> Result<Outcome> {
        self.run(Command::ApplyChange { change_request: id.clone(), expected_revision: None }, level.approver_role())
    }
}

struct PlannedActivity {
    spec: ActivitySpec,
}

enum IntegrationPlan {
    Approve { rework: bool },
    StopAt(u8),
}

struct IntegrationEvent {
    product: ProductId,
    capability: String,
    client: String,
    env: EnvironmentClass,
    plan: IntegrationPlan,
}

fn period(fy: i32, month: u8) -> Period {
    Period::new(fy, month).expect("month in 1..=12")
}

fn year_schedule(rng: &mut ChaCha8Rng, fy: i32, n: usize) -> Vec<PlannedActivity> {
    let mut spans = Vec::with_capacity(n);
    for _ in 0..2 {
        let first = rng.gen_range(1..=2u8);
        let split = rng.gen_range(4..=8u8);
        let last = rng.gen_range(11..=12u8);
        spans.push((first, split));
        spans.push((split, last));
    }
    for _ in 4..n {
        let s = rng.gen_range(2..=4u8);
        let e = rng.gen_range(s + 4..=(s + 7).min(11));
        spans.push((s, e));
    }
    let pct_range = if n >= 5 { 15..=20 } else { 18..=25 };
    spans
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| PlannedActivity {
            spec: ActivitySpec {
                title: format!("FY{fy} activity {}", i + 1),
                scope_text: format!("deliverable {} for FY{fy}", i + 1),
                budget_fraction: Ratio::new(rng.gen_range(pct_range.clone()), 100),
                baseline_start: period(fy, s),
                baseline_end: period(fy, e),
            },
        })
        .collect()
}

const CLIENTS: [&str; 12] = [
    "ExaSky", "WarpX", "E3SM", "EXAALT", "GAMESS", "NWChemEx", "ExaWind", "Pele", "LatticeQCD", "MFIX-Exa",
    "ALCF facility", "OLCF facility",
];

/// Builds the full-scale portfolio. Every step is a logged command.
pub fn build_ecp_fixture(spec: &EcpFixtureSpec) -> Result<(Engine, FixtureReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut d = Driver { engine: Engine::new(Clock::deterministic()) };
    let mut report = FixtureReport::default();
    let fys: Vec<i32> = (0..spec.years as i32).map(|y| spec.start_fy + y).collect();

    d.run(
        Command::CreatePortfolio {
            name: "ECP-ST".into(),
            start_fy: spec.start_fy,
            years: spec.years,
            config: PortfolioConfig::default(),
        },
        Role::ProjectDirector,
    )?;
    let mut groups = Vec::new();
    for g in 0..spec.sdk_groups {
        let Outcome::SdkGroup(grp) = d.run(Command::AddSdkGroup { name: format!("SDK-{:02}", g + 1) }, Role::ProjectDirector)?
        else {
            unreachable!()
        };
        groups.push(grp.id);
    }
    let mut goal8: Vec<usize> = (0..spec.products).collect();
    goal8.shuffle(&mut rng);
    let goal8: BTreeSet<usize> = goal8.into_iter().take(spec.goal_eight_products).collect();
    let mut products: Vec<(ProductId, u32)> = Vec::new();
    for i in 0..spec.products {
        let goal = if goal8.contains(&i) { 8 } else { 4 };
        let Outcome::Product(p) = d.run(
            Command::AddProduct {
                group: groups[i % groups.len()].clone(),
                name: format!("product-{:02}", i + 1),
                kpp_goal: goal,
                team_name: Some(format!("team-{:02}", i % spec.teams + 1)),
            },
            Role::AreaLead,
        )?
        else {
            unreachable!()
        };
        products.push((p.id, goal));
    }

    // Multi-year coarse plan: one package per product per year.
    let mut packages: BTreeMap<(ProductId, i32), PackageId> = BTreeMap::new();
    for (pid, _) in &products {
        for &fy in &fys {
            let budget = Money::from_units(rng.gen_range(300..=1200) * 1000);
            let Outcome::Package(pkg) = d.run(
                Command::CreatePackage {
                    product: pid.clone(),
                    fiscal_year: fy,
                    narrative: format!("{pid} capabilities planned for FY{fy}"),
                    annual_budget: budget,
                },
                Role::Team,
            )?
            else {
                unreachable!()
            };
            packages.insert((pid.clone(), fy), pkg.id);
        }
    }

    let integration_events = plan_integrations(&mut rng, spec, &products);
    let mut cancel_quota: Vec<usize> = (0..fys.len())
        .map(|y| spec.cancellations / fys.len() + usize::from(y < spec.cancellations % fys.len()))
        .collect();
    let mut slip_quota: Vec<usize> = (0..fys.len())
        .map(|y| spec.schedule_slips / fys.len() + usize::from(y < spec.schedule_slips % fys.len()))
        .collect();

    for (yi, &fy) in fys.iter().enumerate() {
        if yi > 0 {
            d.run(Command::AdvancePhase { fiscal_year: fy, phase: Phase::Planning }, Role::ProjectDirector)?;
        }
        let mut five: Vec<usize> = (0..products.len()).collect();
        five.shuffle(&mut rng);
        let five: BTreeSet<usize> = five.into_iter().take(spec.five_activity_products).collect();
        let mut year_acts: Vec<ActivityId> = Vec::new();
        for (i, (pid, _)) in products.iter().enumerate() {
            let n = if five.contains(&i) { 5 } else { 4 };
            let specs: Vec<ActivitySpec> = year_schedule(&mut rng, fy, n).into_iter().map(|p| p.spec).collect();
            let Outcome::Refined(r) = d.run(
                Command::RefinePackage { package: packages[&(pid.clone(), fy)].clone(), activities: specs },
                Role::Team,
            )?
            else {
                unreachable!()
            };
            year_acts.extend(r.activities.into_iter().map(|a| a.id));
        }
        report.activities += year_acts.len();
        d.run(Command::Baseline { fiscal_year: fy }, Role::ProjectDirector)?;
        d.run(Command::AdvancePhase { fiscal_year: fy, phase: Phase::Execution }, Role::ProjectDirector)?;

        // Change requests planned for this year.
        let model = d.engine.model();
        let mut late_starters: Vec<ActivityId> =
            year_acts.iter().filter(|a| model.activities[*a].baseline_start.month >= 3).cloned().collect();
        late_starters.shuffle(&mut rng);
        let cancels: BTreeSet<ActivityId> = late_starters.iter().take(cancel_quota[yi]).cloned().collect();
        let mut slippable: Vec<ActivityId> = year_acts
            .iter()
            .filter(|a| !cancels.contains(*a) && model.activities[*a].baseline_end.month <= 10)
            .cloned()
            .collect();
        slippable.shuffle(&mut rng);
        let slips: Vec<ActivityId> = slippable.into_iter().take(slip_quota[yi]).collect();
        cancel_quota[yi] = 0;
        slip_quota[yi] = 0;
        let mut cancel_at: BTreeMap<u8, Vec<ActivityId>> = BTreeMap::new();
        for a in &cancels {
            cancel_at.entry(model.activities[a].baseline_start.month - 1).or_default().push(a.clone());
        }
        let mut slip_at: BTreeMap<u8, Vec<ActivityId>> = BTreeMap::new();
        for a in &slips {
            slip_at.entry(model.activities[a].baseline_end.month - 1).or_default().push(a.clone());
        }
        // One stale apply per year: two drafts against the same title.
        let stale_target = year_acts[rng.gen_range(0..year_acts.len())].clone();

        for month in 1..=12u8 {
            let t = period(fy, month);
            if let Some(list) = cancel_at.get(&month) {
                for a in list {
                    let targets = vec![ChangeTarget {
                        entity_id: a.to_string(),
                        field: ChangeField::ActivityStatus,
                        old_value: FieldValue::Status(ActivityStatus::Planned),
                        new_value: FieldValue::Status(ActivityStatus::Cancelled),
                    }];
                    let eff = t.succ();
                    let id = d.cr(ChangeLevel::L1, targets, "descoped after annual review", eff)?;
                    d.apply(&id, ChangeLevel::L1)?;
                    report.change_requests_applied += 1;
                }
            }
            if let Some(list) = slip_at.get(&month) {
                for a in list {
                    let end = d.engine.model().activities[a].baseline_end;
                    let targets = vec![ChangeTarget {
                        entity_id: a.to_string(),
                        field: ChangeField::ActivityEnd,
                        old_value: FieldValue::Period(end),
                        new_value: FieldValue::Period(end.succ()),
                    }];
                    let id = d.cr(ChangeLevel::L1, targets, "dependency slipped one month", t)?;
                    d.apply(&id, ChangeLevel::L1)?;
                    report.change_requests_applied += 1;
                }
            }
            if month == 6 {
                let title = d.engine.model().activities[&stale_target].title.clone();
                let target = |new: &str| ChangeTarget {
                    entity_id: stale_target.to_string(),
                    field: ChangeField::ActivityTitle,
                    old_value: FieldValue::Text(title.clone()),
                    new_value: FieldValue::Text(new.to_string()),
                };
                let first = d.cr(ChangeLevel::L1, vec![target(&format!("{title} (revised)"))], "clarify title", t)?;
                let second = d.cr(ChangeLevel::L1, vec![target(&format!("{title} (alt)"))], "competing edit", t)?;
                d.apply(&first, ChangeLevel::L1)?;
                report.change_requests_applied += 1;
                match d.apply(&second, ChangeLevel::L1) {
                    Err(Error::StaleChange { .. }) => report.stale_applies += 1,
                    other => return Err(Error::Validation(format!("expected stale apply, got {other:?}"))),
                }
            }

            // Starts, costs, completions.
            let model = d.engine.model();
            let mut starting = Vec::new();
            let mut running = Vec::new();
            for a in &year_acts {
                let act = &model.activities[a];
                if act.status == ActivityStatus::Planned && act.cancelled_at.is_none() && act.baseline_start == t {
                    starting.push(a.clone());
                }
                if act.baseline_start <= t && t <= act.baseline_end && act.cancelled_at.is_none() {
                    let d_months = act.baseline_start.months_through(act.baseline_end);
                    let base = num_per_month(&act.budget, d_months);
                    running.push((a.clone(), base, act.baseline_end == t));
                }
            }
            for a in starting {
                d.run(
                    Command::FinalizeActivity {
                        activity: a.clone(),
                        completion_criteria: "milestone report accepted".into(),
                        staffing_note: "existing staff".into(),
                    },
                    Role::Team,
                )?;
                d.run(Command::StartActivity { activity: a, period: t }, Role::Team)?;
            }
            for (a, base, finishing) in running {
                let jitter = rng.gen_range(95..=105);
                let amount = Money::from_units(base * jitter / 100);
                d.run(Command::RecordCost { activity: a.clone(), period: t, amount }, Role::Team)?;
                if finishing {
                    d.run(Command::CompleteMilestone { activity: a, period: t }, Role::Team)?;
                    report.completed += 1;
                }
            }

            let index = (yi as u32) * 12 + u32::from(month);
            for ev in integration_events.get(&index).into_iter().flatten() {
                run_integration(&mut d, &mut rng, ev, &mut report)?;
            }

            d.run(Command::TakeSnapshot { period: t }, Role::ProjectDirector)?;
        }
        for phase in [Phase::Reporting, Phase::Assessing, Phase::Adapting] {
            d.run(Command::AdvancePhase { fiscal_year: fy, phase }, Role::ProjectDirector)?;
        }
    }
    if let Some(&last) = fys.last() {
        d.run(Command::AdvancePhase { fiscal_year: last, phase: Phase::Closed }, Role::ProjectDirector)?;
    }
    report.cancelled = d.engine.model().activities.values().filter(|a| a.status == ActivityStatus::Cancelled).count();
    Ok((d.engine, report))
}

fn num_per_month(budget: &Money, months: i64) -> i64 {
    use num_traits::ToPrimitive;
    let r = budget.as_ratio().as_big();
    (r.numer() / r.denom()).to_i64().unwrap_or(0) / months.max(1)
}

fn plan_integrations(
    rng: &mut ChaCha8Rng,
    spec: &EcpFixtureSpec,
    products: &[(ProductId, u32)],
) -> BTreeMap<u32, Vec<IntegrationEvent>> {
    let mut targets: Vec<u32> = products.iter().map(|(_, g)| *g).collect();
    let mut total: usize = targets.iter().map(|t| *t as usize).sum();
    while total > spec.approved_integrations {
        let i = rng.gen_range(0..targets.len());
        if targets[i] > 0 {
            targets[i] -= 1;
            total -= 1;
        }
    }
    while total < spec.approved_integrations {
        let i = rng.gen_range(0..targets.len());
        targets[i] += 1;
        total += 1;
    }
    let horizon = spec.years * 12;
    let mut events: BTreeMap<u32, Vec<IntegrationEvent>> = BTreeMap::new();
    let mut counter = 0usize;
    let mut push = |rng: &mut ChaCha8Rng, pid: &ProductId, plan: IntegrationPlan| {
        counter += 1;
        let month = rng.gen_range(13..=horizon);
        let env = if rng.gen_ratio(1, 10) {
            EnvironmentClass::Other
        } else if month > horizon * 2 / 3 {
            EnvironmentClass::Exascale
        } else {
            EnvironmentClass::PreExascale
        };
        let client = if env == EnvironmentClass::Other {
            "C++ Language standard".to_string()
        } else {
            CLIENTS[rng.gen_range(0..CLIENTS.len())].to_string()
        };
        events.entry(month).or_default().push(IntegrationEvent {
            product: pid.clone(),
            capability: format!("capability {counter}"),
            client,
            env,
            plan,
        });
    };
    for ((pid, _), n) in products.iter().zip(&targets) {
        for _ in 0..*n {
            let rework = rng.gen_ratio(1, 10);
            push(rng, pid, IntegrationPlan::Approve { rework });
        }
    }
    for _ in 0..spec.open_integrations {
        let (pid, _) = &products[rng.gen_range(0..products.len())];
        let stop = rng.gen_range(0..4u8);
        push(rng, pid, IntegrationPlan::StopAt(stop));
    }
    events
}

fn run_integration(d: &mut Driver, rng: &mut ChaCha8Rng, ev: &IntegrationEvent, report: &mut FixtureReport) -> Result<()> {
    let Outcome::Integration(i) = d.run(
        Command::RecordIntegration {
            product: ev.product.clone(),
            capability: ev.capability.clone(),
            client: ev.client.clone(),
            environment_class: ev.env,
            sustainability_note: Some(format!("{} maintains the capability in its release process", ev.client)),
        },
        Role::Team,
    )?
    else {
        unreachable!()
    };
    let id: IntegrationId = i.id;
    let stop = match ev.plan {
        IntegrationPlan::StopAt(s) => s,
        IntegrationPlan::Approve { .. } => u8::MAX,
    };
    if stop == 0 {
        return Ok(());
    }
    let evidence = format!("output screenshot for {} in {}", ev.capability, ev.client);
    d.engine.attach_evidence(&id, EvidenceKind::Screenshot, &format!("evidence/{id}.png"), evidence.as_bytes(), Role::Team, None)?;
    if stop == 1 {
        return Ok(());
    }
    d.run(Command::SubmitIntegration { integration: id.clone(), sustainability_note: None, expected_revision: None }, Role::Team)?;
    if stop == 2 {
        return Ok(());
    }
    if let IntegrationPlan::Approve { rework: true } = ev.plan {
        d.run(
            Command::SmeReview {
                integration: id.clone(),
                endorse: false,
                report: "evidence does not show sustained use".into(),
                expected_revision: None,
            },
            Role::Sme,
        )?;
        let letter = format!("client letter from {} confirming adoption ({})", ev.client, rng.gen::<u32>());
        d.engine.attach_evidence(&id, EvidenceKind::ClientLetter, &format!("evidence/{id}-letter.pdf"), letter.as_bytes(), Role::Team, None)?;
        d.run(Command::SubmitIntegration { integration: id.clone(), sustainability_note: None, expected_revision: None }, Role::Team)?;
        report.rework_loops += 1;
    }
    d.run(
        Command::SmeReview { integration: id.clone(), endorse: true, report: "integration is sustainable".into(), expected_revision: None },
        Role::Sme,
    )?;
    if stop == 3 {
        return Ok(());
    }
    d.run(Command::FinalApproval { integration: id, expected_revision: None }, Role::ProjectDirector)?;
    report.approved_integrations += 1;
    Ok(())
}

/// One-year, 70-product portfolio under percent-complete EV. Every product
/// tracks its plan exactly except `product-planted`, whose SPI is 0.7 in
/// months 5, 6 and 7 and recovers in month 8. Returns the planted id.
pub fn struggling_fixture(fy: i32) -> Result<(Engine, ProductId)> {
    let mut d = Driver { engine: Engine::new(Clock::deterministic()) };
    let config = PortfolioConfig { ev_technique: EvTechnique::PercentComplete, ..PortfolioConfig::default() };
    d.run(Command::CreatePortfolio { name: "planted".into(), start_fy: fy, years: 1, config }, Role::ProjectDirector)?;
    let mut groups: Vec<SdkGroupId> = Vec::new();
    for g in 0..10 {
        let Outcome::SdkGroup(grp) = d.run(Command::AddSdkGroup { name: format!("SDK-{g}") }, Role::ProjectDirector)? else {
            unreachable!()
        };
        groups.push(grp.id);
    }
    let mut planted = None;
    let mut plans: Vec<(ActivityId, bool)> = Vec::new();
    for i in 0..70 {
        let is_planted = i == 41;
        let name = if is_planted { "product-planted".to_string() } else { format!("healthy-{i:02}") };
        let Outcome::Product(p) =
            d.run(Command::AddProduct { group: groups[i % 10].clone(), name, kpp_goal: 4, team_name: None }, Role::AreaLead)?
        else {
            unreachable!()
        };
        let budget = if is_planted { 800 } else { 1200 };
        let Outcome::Package(pkg) = d.run(
            Command::CreatePackage {
                product: p.id.clone(),
                fiscal_year: fy,
                narrative: "single-activity plan".into(),
                annual_budget: Money::from_units(budget),
            },
            Role::Team,
        )?
        else {
            unreachable!()
        };
        let start = if is_planted { 5 } else { 1 };
        let Outcome::Refined(r) = d.run(
            Command::RefinePackage {
                package: pkg.id,
                activities: vec![ActivitySpec {
                    title: "year deliverable".into(),
                    scope_text: "full-year scope".into(),
                    budget_fraction: Ratio::one(),
                    baseline_start: period(fy, start),
                    baseline_end: period(fy, 12),
                }],
            },
            Role::Team,
        )?
        else {
            unreachable!()
        };
        if is_planted {
            planted = Some(p.id);
        }
        plans.push((r.activities[0].id.clone(), is_planted));
    }
    d.run(Command::Baseline { fiscal_year: fy }, Role::ProjectDirector)?;
    d.run(Command::AdvancePhase { fiscal_year: fy, phase: Phase::Execution }, Role::ProjectDirector)?;
    for month in 1..=12u8 {
        let t = period(fy, month);
        for (a, is_planted) in &plans {
            let start = if *is_planted { 5 } else { 1 };
            if month < start {
                continue;
            }
            let span = i64::from(13 - start);
            let elapsed = i64::from(month - start + 1);
            let planned = Ratio::new(elapsed, span);
            let (fraction, prev) = if *is_planted && (5..=7).contains(&month) {
                (&Ratio::new(7, 10) * &planned, &Ratio::new(7, 10) * &Ratio::new(elapsed - 1, span))
            } else if *is_planted && month == 8 {
                (planned.clone(), &Ratio::new(7, 10) * &Ratio::new(elapsed - 1, span))
            } else {
                (planned.clone(), Ratio::new(elapsed - 1, span))
            };
            if month == start {
                d.run(
                    Command::FinalizeActivity {
                        activity: a.clone(),
                        completion_criteria: "delivered".into(),
                        staffing_note: String::new(),
                    },
                    Role::Team,
                )?;
                d.run(Command::StartActivity { activity: a.clone(), period: t }, Role::Team)?;
            }
            // Actual cost tracks earned value, so CPI stays at 1.
            let budget = Ratio::from_integer(if *is_planted { 800 } else { 1200 });
            let amount = Money::from_ratio(&budget * &(fraction.clone() - prev));
            d.run(Command::RecordCost { activity: a.clone(), period: t, amount }, Role::Team)?;
            if month == 12 {
                d.run(Command::CompleteMilestone { activity: a.clone(), period: t }, Role::Team)?;
            } else {
                d.run(Command::RecordProgress { activity: a.clone(), period: t, fraction }, Role::Team)?;
            }
        }
    }
    Ok((d.engine, planted.expect("planted product created")))
}
