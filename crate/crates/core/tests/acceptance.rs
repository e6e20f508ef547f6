//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use portfolio_core::evm::{Activity, ActivityStatus, EvmSnapshot, IndexKind};
use portfolio_core::fixture::{build_ecp_fixture, struggling_fixture, EcpFixtureSpec, FixtureReport};
use portfolio_core::ids::{ActivityId, ChangeRequestId, IntegrationId, PackageId, ProductId, SdkGroupId};
use portfolio_core::kpp::{EnvironmentClass, EvidenceKind, IntegrationState};
use portfolio_core::lifecycle::{render_car_text, Phase};
use portfolio_core::planning::{ActivitySpec, ChangeField, ChangeLevel, ChangeTarget, CrState, FieldValue};
use portfolio_core::stack::{
    check_compatibility, manifest_from_text, manifest_to_text, Constraint, InclusionRule, PolicyItem, PolicyStatus,
    Version, VersionRange,
};
use portfolio_core::store::{decode_store, encode_store, load_store, save_store, Store};
use portfolio_core::{
    Clock, Command, Engine, EvTechnique, Model, Money, NodeId, Outcome, Period, PortfolioConfig, Ratio, Role,
};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn p(fy: i32, m: u8) -> Period {
    Period::new(fy, m).unwrap()
}

fn within_pct(value: usize, target: usize, pct: usize) -> bool {
    let v = value as i64 * 100;
    let t = target as i64 * 100;
    (v - t).abs() <= target as i64 * pct as i64
}

fn ecp() -> &'static (Engine, FixtureReport) {
    static CELL: OnceLock<(Engine, FixtureReport)> = OnceLock::new();
    CELL.get_or_init(|| build_ecp_fixture(&EcpFixtureSpec::default()).expect("fixture builds"))
}

// ---------------------------------------------------------------- oracles

fn ordinal(t: Period) -> i64 {
    i64::from(t.fiscal_year) * 12 + i64::from(t.month)
}

fn big(m: &Money) -> BigRational {
    m.as_ratio().as_big().clone()
}

/// Linear-spread PV from the raw schedule, written without the engine's helpers.
fn oracle_pv(a: &Activity, t: Period) -> BigRational {
    let at = match a.cancelled_at {
        Some(c) if t >= c => c.pred(),
        _ => t,
    };
    let seg = a
        .schedule
        .iter()
        .filter(|s| s.effective_from.map_or(true, |e| e <= at))
        .last()
        .unwrap_or(&a.schedule[0]);
    let d = (ordinal(seg.end) - ordinal(seg.start) + 1).max(1);
    let elapsed = (ordinal(at) - ordinal(seg.start) + 1).clamp(0, d);
    big(&seg.budget) * BigRational::new(BigInt::from(elapsed), BigInt::from(d))
}

fn oracle_budget(a: &Activity, t: Period) -> BigRational {
    let at = match a.cancelled_at {
        Some(c) if t >= c => c.pred(),
        _ => t,
    };
    let seg = a.schedule.iter().filter(|s| s.effective_from.map_or(true, |e| e <= at)).last().unwrap_or(&a.schedule[0]);
    big(&seg.budget)
}

fn oracle_ev(a: &Activity, t: Period, tech: EvTechnique) -> BigRational {
    if a.completion_period.is_some_and(|c| c <= t) {
        return oracle_budget(a, t);
    }
    match tech {
        EvTechnique::Milestone0100 => BigRational::zero(),
        EvTechnique::PercentComplete => a
            .percent_complete_series
            .iter()
            .filter(|(k, _)| **k <= t)
            .last()
            .map(|(_, f)| oracle_budget(a, t) * f.as_big().clone())
            .unwrap_or_else(BigRational::zero),
    }
}

fn oracle_ac(m: &Model, a: &ActivityId, t: Period) -> BigRational {
    m.costs
        .get(a)
        .map(|r| r.iter().filter(|(k, _)| **k <= t).map(|(_, v)| big(v)).sum())
        .unwrap_or_else(BigRational::zero)
}

type Triple = (BigRational, BigRational, BigRational);

fn oracle_flat(m: &Model, t: Period, filter: impl Fn(&Activity) -> bool) -> Triple {
    let tech = m.config().unwrap().ev_technique;
    let mut out = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    for a in m.activities.values().filter(|a| filter(a)) {
        out.0 += oracle_pv(a, t);
        out.1 += oracle_ev(a, t, tech);
        out.2 += oracle_ac(m, &a.id, t);
    }
    out
}

fn snap_matches(s: &EvmSnapshot, o: &Triple) -> bool {
    big(&s.pv) == o.0 && big(&s.ev) == o.1 && big(&s.ac) == o.2
}

// ---------------------------------------------------------------- criteria

fn ecp_scale_fixture() -> Check {
    let t0 = Instant::now();
    let (engine, report) = ecp();
    let build = t0.elapsed();
    let m = engine.model();
    let horizon = m.horizon().map_err(|e| e.to_string())?;
    let teams: BTreeSet<&str> = m.products.values().map(|p| p.team_name.as_str()).collect();
    ensure!(teams.len() == 35, "teams {}", teams.len());
    ensure!(m.products.len() == 70, "products {}", m.products.len());
    ensure!(m.groups.len() == 10, "sdk groups {}", m.groups.len());
    ensure!(horizon.years == 6 && horizon.len() == 72, "horizon {horizon:?}");
    ensure!(m.validate_hierarchy().is_empty(), "hierarchy violations");
    for fy in horizon.fiscal_years() {
        let n = m.activities.values().filter(|a| a.fiscal_year == fy).count();
        ensure!(within_pct(n, 300, 2), "FY{fy} has {n} activities");
    }
    let total = m.activities.len();
    ensure!(within_pct(total, 1800, 2), "total activities {total}");
    let completed = m.activities.values().filter(|a| a.status == ActivityStatus::MilestoneComplete).count();
    ensure!(within_pct(completed, 1700, 2), "completed milestones {completed}");
    let approved =
        m.integrations.values().filter(|i| i.state == IntegrationState::FinallyApproved).count();
    ensure!(within_pct(approved, 300, 2) && approved <= 300, "approved integrations {approved}");
    ensure!(report.completed == completed && report.approved_integrations == approved, "report disagrees with model");

    let periods: Vec<Period> = horizon.periods().collect();
    let t1 = Instant::now();
    let rollups: Vec<Vec<EvmSnapshot>> =
        periods.iter().map(|t| m.all_node_snapshots(*t)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let elapsed = t1.elapsed();
    ensure!(elapsed.as_secs_f64() < 5.0, "72 rollups took {elapsed:?}");

    for (t, nodes) in periods.iter().zip(&rollups) {
        let portfolio = oracle_flat(m, *t, |_| true);
        ensure!(snap_matches(&nodes[0], &portfolio), "portfolio rollup at {t} differs from flat sum");
        let direct = m.rollup(&NodeId::Portfolio, *t).map_err(|e| e.to_string())?;
        ensure!(snap_matches(&direct, &portfolio), "direct portfolio rollup at {t} differs");
        for s in &nodes[1..] {
            let o = match &s.node_id {
                NodeId::SdkGroup(g) => {
                    let members: BTreeSet<&ProductId> = m.groups[g].product_ids.iter().collect();
                    oracle_flat(m, *t, |a| members.contains(&a.product_id))
                }
                NodeId::Product(pid) => oracle_flat(m, *t, |a| &a.product_id == pid),
                other => return Err(format!("unexpected node {other}")),
            };
            ensure!(snap_matches(s, &o), "{} at {t} differs from flat sum", s.node_id);
        }
    }
    Ok(format!(
        "{} teams, {} products, {total} activities, {completed} completed, {approved} approved integrations; \
         72 rollups in {:.2}s (fixture built in {:.1}s), all {} node values exact",
        teams.len(),
        m.products.len(),
        elapsed.as_secs_f64(),
        build.as_secs_f64(),
        rollups.iter().map(Vec::len).sum::<usize>()
    ))
}

fn wavefront() -> Check {
    let m = ecp().0.model();
    let horizon = m.horizon().map_err(|e| e.to_string())?;
    let mut checked = 0;
    let mut above = 0;
    let mut min = usize::MAX;
    for fy in horizon.fiscal_years() {
        for month in 2..=11 {
            let t = p(fy, month);
            let n = m.in_progress_set(t).len();
            let oracle = m
                .activities
                .values()
                .filter(|a| {
                    a.actual_start.is_some_and(|s| s <= t)
                        && !a.completion_period.is_some_and(|c| c <= t)
                        && !a.cancelled_at.is_some_and(|c| c <= t)
                })
                .count();
            ensure!(n == oracle, "in-progress set at {t}: {n} vs oracle {oracle}");
            ensure!(m.snapshot(t).map(|s| s.in_progress_count as usize) == Ok(n), "snapshot count at {t}");
            checked += 1;
            if n > 100 {
                above += 1;
            }
            min = min.min(n);
        }
    }
    ensure!(above * 5 >= checked * 4, "only {above}/{checked} periods above 100");
    Ok(format!("{above}/{checked} non-boundary periods have more than 100 in progress (min {min})"))
}

fn random_small_portfolio(seed: u64) -> Engine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Engine::new(Clock::deterministic());
    let tech = if rng.gen_bool(0.5) { EvTechnique::Milestone0100 } else { EvTechnique::PercentComplete };
    let fy = 2020;
    let run = |e: &mut Engine, c: Command, r: Role| e.execute(c, r).unwrap();
    run(
        &mut e,
        Command::CreatePortfolio {
            name: format!("small-{seed}"),
            start_fy: fy,
            years: 1,
            config: PortfolioConfig { ev_technique: tech, ..PortfolioConfig::default() },
        },
        Role::ProjectDirector,
    );
    let mut groups = Vec::new();
    for g in 0..rng.gen_range(1..=3) {
        let Outcome::SdkGroup(grp) = run(&mut e, Command::AddSdkGroup { name: format!("g{g}") }, Role::ProjectDirector)
        else {
            unreachable!()
        };
        groups.push(grp.id);
    }
    let mut acts: Vec<ActivityId> = Vec::new();
    for i in 0..rng.gen_range(1..=4) {
        let group = groups[rng.gen_range(0..groups.len())].clone();
        let Outcome::Product(prod) = run(
            &mut e,
            Command::AddProduct { group, name: format!("p{i}"), kpp_goal: 4, team_name: None },
            Role::AreaLead,
        ) else {
            unreachable!()
        };
        let Outcome::Package(pkg) = run(
            &mut e,
            Command::CreatePackage {
                product: prod.id,
                fiscal_year: fy,
                narrative: "n".into(),
                annual_budget: Money::from_units(rng.gen_range(1..=50) * 100),
            },
            Role::Team,
        ) else {
            unreachable!()
        };
        let specs: Vec<ActivitySpec> = (0..rng.gen_range(1..=5))
            .map(|k| {
                let s = rng.gen_range(1..=12u8);
                let end = rng.gen_range(s..=12u8);
                ActivitySpec {
                    title: format!("a{k}"),
                    scope_text: String::new(),
                    budget_fraction: Ratio::new(rng.gen_range(1..=20), 100),
                    baseline_start: p(fy, s),
                    baseline_end: p(fy, end),
                }
            })
            .collect();
        let Outcome::Refined(r) = run(&mut e, Command::RefinePackage { package: pkg.id, activities: specs }, Role::Team)
        else {
            unreachable!()
        };
        acts.extend(r.activities.into_iter().map(|a| a.id));
    }
    run(&mut e, Command::Baseline { fiscal_year: fy }, Role::ProjectDirector);
    run(&mut e, Command::AdvancePhase { fiscal_year: fy, phase: Phase::Execution }, Role::ProjectDirector);
    let mut progress: BTreeMap<ActivityId, i64> = BTreeMap::new();
    for month in 1..=12u8 {
        let t = p(fy, month);
        for a in &acts {
            let act = e.model().activity(a).unwrap().clone();
            if act.status == ActivityStatus::Planned && act.baseline_start <= t && rng.gen_bool(0.7) {
                run(&mut e, Command::FinalizeActivity { activity: a.clone(), completion_criteria: "c".into(), staffing_note: String::new() }, Role::Team);
                run(&mut e, Command::StartActivity { activity: a.clone(), period: t }, Role::Team);
            }
            let act = e.model().activity(a).unwrap().clone();
            if act.status == ActivityStatus::InProgress {
                if rng.gen_bool(0.7) {
                    let amount = Money::from_units(rng.gen_range(0..=2000));
                    run(&mut e, Command::RecordCost { activity: a.clone(), period: t, amount }, Role::Team);
                }
                if tech == EvTechnique::PercentComplete && rng.gen_bool(0.6) {
                    let cur = progress.entry(a.clone()).or_default();
                    *cur = (*cur + rng.gen_range(0..=30)).min(100);
                    run(&mut e, Command::RecordProgress { activity: a.clone(), period: t, fraction: Ratio::new(*cur, 100) }, Role::Team);
                }
                if rng.gen_bool(0.25) {
                    run(&mut e, Command::CompleteMilestone { activity: a.clone(), period: t }, Role::Team);
                }
            }
        }
    }
    e
}

fn index_violations(s: &EvmSnapshot) -> Vec<String> {
    let mut v = Vec::new();
    let one = Ratio::one();
    if s.cpi.is_some() != !s.ac.is_zero() {
        v.push(format!("{} {}: cpi presence with ac={}", s.node_id, s.period, s.ac));
    }
    if s.spi.is_some() != !s.pv.is_zero() {
        v.push(format!("{} {}: spi presence with pv={}", s.node_id, s.period, s.pv));
    }
    if let Some(cpi) = &s.cpi {
        if (*cpi > one) != (s.ac < s.ev) || (*cpi < one) != (s.ac > s.ev) {
            v.push(format!("{} {}: cpi {cpi} vs ac {} ev {}", s.node_id, s.period, s.ac, s.ev));
        }
    }
    if let Some(spi) = &s.spi {
        if (*spi > one) != (s.pv < s.ev) || (*spi < one) != (s.pv > s.ev) {
            v.push(format!("{} {}: spi {spi} vs pv {} ev {}", s.node_id, s.period, s.pv, s.ev));
        }
    }
    v
}

fn index_semantics() -> Check {
    let mut violations = Vec::new();
    let mut snapshots = 0usize;
    let mut absent = (0usize, 0usize);
    let mut above = (0usize, 0usize);
    for seed in 0..1000u64 {
        let e = random_small_portfolio(seed);
        let m = e.model();
        for t in m.horizon().unwrap().periods() {
            let mut all = m.all_node_snapshots(t).unwrap();
            for a in m.activities.keys() {
                all.push(m.rollup(&NodeId::Activity(a.clone()), t).unwrap());
            }
            for s in &all {
                snapshots += 1;
                absent.0 += usize::from(s.cpi.is_none());
                absent.1 += usize::from(s.spi.is_none());
                above.0 += usize::from(s.cpi.as_ref().is_some_and(|c| *c > Ratio::one()));
                above.1 += usize::from(s.spi.as_ref().is_some_and(|c| *c > Ratio::one()));
                violations.extend(index_violations(s));
            }
        }
    }
    ensure!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    ensure!(absent.0 > 0 && absent.1 > 0 && above.0 > 0 && above.1 > 0, "generator did not cover every case");
    Ok(format!(
        "1000 portfolios, {snapshots} node-periods, 0 violations (cpi absent {}, spi absent {}, cpi>1 {}, spi>1 {})",
        absent.0, absent.1, above.0, above.1
    ))
}

fn struggling() -> Check {
    let (engine, planted) = struggling_fixture(2024).map_err(|e| e.to_string())?;
    let m = engine.model();
    ensure!(m.products.len() == 70, "products {}", m.products.len());
    let config = m.config().unwrap().clone();
    ensure!(config.spi_alert_threshold == Ratio::new(9, 10) && config.consecutive_periods_for_alert == 2, "defaults");
    // Hand-walked SPI series for the planted product.
    let node = NodeId::Product(planted.clone());
    let series = m.index_series(&node, p(2024, 5), p(2024, 8)).unwrap();
    let spis: Vec<Option<Ratio>> = series.iter().map(|s| s.spi.clone()).collect();
    let seven = Some(Ratio::new(7, 10));
    ensure!(spis == vec![seven.clone(), seven.clone(), seven, Some(Ratio::one())], "planted SPI series {spis:?}");
    ensure!(series.iter().all(|s| s.cpi == Some(Ratio::one())), "planted CPI should stay 1");
    let mut flagged_months = Vec::new();
    for month in 1..=12u8 {
        let t = p(2024, month);
        let flags = m.detect_struggling(t, &config).unwrap();
        for f in &flags {
            ensure!(f.product_id == planted, "false positive {} at {t}", f.product_id);
            ensure!(f.reasons == vec![IndexKind::Spi], "reasons {:?}", f.reasons);
            ensure!(f.first_flagged_period == p(2024, 6), "first flagged {} at {t}", f.first_flagged_period);
        }
        if !flags.is_empty() {
            flagged_months.push(month);
        }
    }
    ensure!(flagged_months == vec![6, 7], "flagged in months {flagged_months:?}");
    Ok(format!("only {planted} flagged, first at 2024-06, in months {flagged_months:?}; 69 healthy never flagged"))
}

#[derive(Clone)]
struct LedgerRow {
    product: ProductId,
    capability: String,
    client: String,
    env: EnvironmentClass,
    state: IntegrationState,
    rejected_once: bool,
}

fn kpp_oracle(goals: &BTreeMap<ProductId, u32>, ledger: &BTreeMap<IntegrationId, LedgerRow>, exascale: bool)
    -> (BTreeMap<ProductId, (u32, bool)>, usize) {
    let mut out = BTreeMap::new();
    for (pid, goal) in goals {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut has_exa = false;
        for row in ledger.values() {
            if &row.product == pid && row.state == IntegrationState::FinallyApproved {
                if !pairs.iter().any(|(c, k)| *c == row.capability && *k == row.client) {
                    pairs.push((row.capability.clone(), row.client.clone()));
                }
                has_exa |= row.env == EnvironmentClass::Exascale;
            }
        }
        let count = pairs.len() as u32;
        out.insert(pid.clone(), (count, count >= *goal && (!exascale || has_exa)));
    }
    let met = out.values().filter(|(_, m)| *m).count();
    (out, met)
}

fn kpp_scoring() -> Check {
    let mut checks = 0usize;
    let mut reworked_approved = 0usize;
    let mut duplicate_claims = 0usize;
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let mut e = Engine::new(Clock::deterministic());
        let exascale = rng.gen_bool(0.3);
        e.execute(
            Command::CreatePortfolio {
                name: "kpp".into(),
                start_fy: 2020,
                years: 4,
                config: PortfolioConfig { require_exascale_integration: exascale, ..PortfolioConfig::default() },
            },
            Role::ProjectDirector,
        )
        .unwrap();
        let Ok(Outcome::SdkGroup(g)) = e.execute(Command::AddSdkGroup { name: "g".into() }, Role::ProjectDirector) else {
            unreachable!()
        };
        let mut goals = BTreeMap::new();
        for i in 0..rng.gen_range(1..=8) {
            let goal = if rng.gen_bool(0.5) { 4 } else { 8 };
            let Ok(Outcome::Product(prod)) = e.execute(
                Command::AddProduct { group: g.id.clone(), name: format!("p{i}"), kpp_goal: goal, team_name: None },
                Role::AreaLead,
            ) else {
                unreachable!()
            };
            goals.insert(prod.id, goal);
        }
        let pids: Vec<ProductId> = goals.keys().cloned().collect();
        let mut ledger: BTreeMap<IntegrationId, LedgerRow> = BTreeMap::new();
        let mut prev_met: BTreeMap<ProductId, bool> = BTreeMap::new();
        let mut prev_fraction = Ratio::zero();
        for step in 0..rng.gen_range(40..=160) {
            let ids: Vec<IntegrationId> = ledger.keys().cloned().collect();
            let action = rng.gen_range(0..6);
            let target = ids.choose(&mut rng).cloned();
            let outcome = match (action, target) {
                (0, _) | (_, None) => {
                    let pid = pids.choose(&mut rng).unwrap().clone();
                    let cap = format!("cap{}", rng.gen_range(0..6));
                    let client = format!("client{}", rng.gen_range(0..4));
                    let env = [EnvironmentClass::PreExascale, EnvironmentClass::Exascale, EnvironmentClass::Other]
                        [rng.gen_range(0..3)];
                    let dup = ledger.values().any(|r| r.product == pid && r.capability == cap && r.client == client);
                    let res = e.execute(
                        Command::RecordIntegration {
                            product: pid.clone(),
                            capability: cap.clone(),
                            client: client.clone(),
                            environment_class: env,
                            sustainability_note: Some("kept in CI".into()),
                        },
                        Role::Team,
                    );
                    ensure!(res.is_err() == dup, "duplicate claim handling for {pid} {cap}/{client}");
                    duplicate_claims += usize::from(dup);
                    if let Ok(Outcome::Integration(i)) = &res {
                        ledger.insert(
                            i.id.clone(),
                            LedgerRow { product: pid, capability: cap, client, env, state: i.state, rejected_once: false },
                        );
                    }
                    res
                }
                (1, Some(id)) => {
                    e.attach_evidence(&id, EvidenceKind::Screenshot, "shot.png", format!("{seed}-{step}").as_bytes(), Role::Team, None)
                }
                (2, Some(id)) => e.execute(Command::SubmitIntegration { integration: id, sustainability_note: None, expected_revision: None }, Role::Team),
                (3, Some(id)) => e.execute(Command::SmeReview { integration: id, endorse: true, report: "ok".into(), expected_revision: None }, Role::Sme),
                (4, Some(id)) => e.execute(Command::SmeReview { integration: id, endorse: false, report: "rework".into(), expected_revision: None }, Role::Sme),
                (_, Some(id)) => e.execute(Command::FinalApproval { integration: id, expected_revision: None }, Role::ProjectDirector),
            };
            if let Ok(Outcome::Integration(i)) = outcome {
                let row = ledger.get_mut(&i.id).unwrap();
                row.state = i.state;
                row.rejected_once |= i.state == IntegrationState::SmeRejected;
            }
            let (oracle, met) = kpp_oracle(&goals, &ledger, exascale);
            let score = e.model().portfolio_kpp_score().unwrap();
            for s in &score.per_product {
                let (count, ok) = oracle[&s.product_id];
                ensure!(s.approved_count == count && s.met == ok, "seed {seed}: {} status mismatch", s.product_id);
                ensure!(e.model().product_kpp_status(&s.product_id).unwrap() == *s, "per-product query differs");
                ensure!(!(prev_met.get(&s.product_id) == Some(&true) && !s.met), "met status regressed");
                prev_met.insert(s.product_id.clone(), s.met);
            }
            let fraction = Ratio::new(met as i64, goals.len() as i64);
            ensure!(score.fraction_met.as_ref() == Some(&fraction), "seed {seed}: fraction {:?}", score.fraction_met);
            ensure!(score.pass == (2 * met >= goals.len()), "seed {seed}: pass flag");
            ensure!(fraction >= prev_fraction, "fraction decreased");
            prev_fraction = fraction;
            checks += 1;
        }
        reworked_approved += ledger
            .values()
            .filter(|r| r.rejected_once && r.state == IntegrationState::FinallyApproved)
            .count();
    }
    ensure!(reworked_approved > 0 && duplicate_claims > 0, "generator never exercised rework or duplicates");
    Ok(format!(
        "300 ledgers, {checks} scored states match the oracle ({reworked_approved} reworked approvals counted once, \
         {duplicate_claims} duplicate claims rejected)"
    ))
}

// ------------------------------------------------------- state machines

fn dir_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.clone(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

trait Machine {
    type S: Copy + Eq + Ord + std::fmt::Debug;
    type O: Copy + std::fmt::Debug;
    const NAME: &'static str;
    fn states() -> Vec<Self::S>;
    fn ops() -> Vec<Self::O>;
    fn initial() -> Self::S;
    fn terminal(s: Self::S) -> bool;
    /// The independent edge table.
    fn legal(s: Self::S, o: Self::O) -> Option<Self::S>;
    fn setup(store: &mut Store) -> String;
    /// Steps that are not themselves the transition under test.
    fn prepare(_store: &mut Store, _id: &str, _o: Self::O) {}
    fn perform(store: &mut Store, id: &str, o: Self::O) -> portfolio_core::Result<()>;
    fn observe(store: &Store, id: &str) -> Self::S;
}

fn path_to<M: Machine>(target: M::S) -> Vec<M::O> {
    let mut frontier = vec![(M::initial(), Vec::new())];
    let mut seen = BTreeSet::new();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (s, path) in frontier {
            if s == target {
                return path;
            }
            if !seen.insert(s) {
                continue;
            }
            for o in M::ops() {
                if let Some(t) = M::legal(s, o) {
                    let mut p = path.clone();
                    p.push(o);
                    next.push((t, p));
                }
            }
        }
        frontier = next;
    }
    panic!("{:?} unreachable in {}", target, M::NAME)
}

fn terminal_paths<M: Machine>() -> Vec<Vec<M::O>> {
    fn walk<M: Machine>(s: M::S, path: &mut Vec<M::O>, visits: &mut BTreeMap<M::S, u32>, out: &mut Vec<Vec<M::O>>) {
        if M::terminal(s) {
            out.push(path.clone());
            return;
        }
        for o in M::ops() {
            if let Some(t) = M::legal(s, o) {
                let v = visits.entry(t).or_default();
                if *v >= 2 {
                    continue;
                }
                *v += 1;
                path.push(o);
                walk::<M>(t, path, visits, out);
                path.pop();
                *visits.get_mut(&t).unwrap() -= 1;
            }
        }
    }
    let mut out = Vec::new();
    walk::<M>(M::initial(), &mut Vec::new(), &mut BTreeMap::new(), &mut out);
    out
}

fn fresh_store<M: Machine>() -> (tempfile::TempDir, Store, String) {
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::open(dir.path(), Clock::deterministic()).unwrap();
    let id = M::setup(&mut store);
    (dir, store, id)
}

fn exercise<M: Machine>() -> Check {
    let mut illegal = 0;
    let mut legal = 0;
    for s in M::states() {
        for o in M::ops() {
            let (dir, mut store, id) = fresh_store::<M>();
            for step in path_to::<M>(s) {
                M::prepare(&mut store, &id, step);
                M::perform(&mut store, &id, step).map_err(|e| format!("{} reaching {s:?} via {step:?}: {e}", M::NAME))?;
            }
            ensure!(M::observe(&store, &id) == s, "{} did not reach {s:?}", M::NAME);
            M::prepare(&mut store, &id, o);
            let before = dir_bytes(dir.path());
            let result = M::perform(&mut store, &id, o);
            match M::legal(s, o) {
                None => {
                    ensure!(result.is_err(), "{}: illegal {o:?} from {s:?} succeeded", M::NAME);
                    ensure!(dir_bytes(dir.path()) == before, "{}: store changed after failed {o:?} from {s:?}", M::NAME);
                    let reopened = Store::open(dir.path(), Clock::deterministic()).unwrap();
                    ensure!(reopened.model() == store.model(), "{}: reopened store differs", M::NAME);
                    ensure!(M::observe(&store, &id) == s, "{}: state moved after failed {o:?}", M::NAME);
                    illegal += 1;
                }
                Some(t) => {
                    result.map_err(|e| format!("{}: legal {o:?} from {s:?} failed: {e}", M::NAME))?;
                    ensure!(M::observe(&store, &id) == t, "{}: {o:?} from {s:?} did not reach {t:?}", M::NAME);
                    legal += 1;
                }
            }
        }
    }
    let paths = terminal_paths::<M>();
    for path in &paths {
        let (_dir, mut store, id) = fresh_store::<M>();
        let mut s = M::initial();
        for o in path {
            M::prepare(&mut store, &id, *o);
            M::perform(&mut store, &id, *o).map_err(|e| format!("{} path {path:?}: {e}", M::NAME))?;
            s = M::legal(s, *o).unwrap();
        }
        ensure!(M::terminal(M::observe(&store, &id)) && M::observe(&store, &id) == s, "{} path {path:?}", M::NAME);
        store.verify_replay().map_err(|e| e.to_string())?;
    }
    Ok(format!("{}: {legal} legal edges, {illegal} illegal edges rejected, {} terminal paths", M::NAME, paths.len()))
}

fn base_store(store: &mut Store, years: u32) -> ProductId {
    store
        .execute(
            Command::CreatePortfolio { name: "sm".into(), start_fy: 2020, years, config: PortfolioConfig::default() },
            Role::ProjectDirector,
        )
        .unwrap();
    let Ok(Outcome::SdkGroup(g)) = store.execute(Command::AddSdkGroup { name: "g".into() }, Role::ProjectDirector) else {
        unreachable!()
    };
    let Ok(Outcome::Product(prod)) = store.execute(
        Command::AddProduct { group: g.id, name: "lib".into(), kpp_goal: 4, team_name: None },
        Role::AreaLead,
    ) else {
        unreachable!()
    };
    prod.id
}

/// Product with one refined activity in FY2020; returns (package, activity).
fn refined_activity(store: &mut Store, product: &ProductId) -> (PackageId, ActivityId) {
    let Ok(Outcome::Package(pkg)) = store.execute(
        Command::CreatePackage {
            product: product.clone(),
            fiscal_year: 2020,
            narrative: "plan".into(),
            annual_budget: Money::from_units(1200),
        },
        Role::Team,
    ) else {
        unreachable!()
    };
    let Ok(Outcome::Refined(r)) = store.execute(
        Command::RefinePackage {
            package: pkg.id.clone(),
            activities: vec![ActivitySpec {
                title: "deliver".into(),
                scope_text: "scope".into(),
                budget_fraction: Ratio::new(1, 2),
                baseline_start: p(2020, 1),
                baseline_end: p(2020, 6),
            }],
        },
        Role::Team,
    ) else {
        unreachable!()
    };
    (pkg.id, r.activities[0].id.clone())
}

struct ActivityMachine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ActOp {
    Start,
    Complete,
    Cancel,
}

impl Machine for ActivityMachine {
    type S = ActivityStatus;
    type O = ActOp;
    const NAME: &'static str = "activity";
    fn states() -> Vec<ActivityStatus> {
        vec![ActivityStatus::Planned, ActivityStatus::InProgress, ActivityStatus::MilestoneComplete, ActivityStatus::Cancelled]
    }
    fn ops() -> Vec<ActOp> {
        vec![ActOp::Start, ActOp::Complete, ActOp::Cancel]
    }
    fn initial() -> ActivityStatus {
        ActivityStatus::Planned
    }
    fn terminal(s: ActivityStatus) -> bool {
        matches!(s, ActivityStatus::MilestoneComplete | ActivityStatus::Cancelled)
    }
    fn legal(s: ActivityStatus, o: ActOp) -> Option<ActivityStatus> {
        use ActivityStatus::*;
        match (s, o) {
            (Planned, ActOp::Start) => Some(InProgress),
            (InProgress, ActOp::Complete) => Some(MilestoneComplete),
            (Planned | InProgress, ActOp::Cancel) => Some(Cancelled),
            _ => None,
        }
    }
    fn setup(store: &mut Store) -> String {
        let product = base_store(store, 1);
        let (_, act) = refined_activity(store, &product);
        store
            .execute(Command::FinalizeActivity { activity: act.clone(), completion_criteria: "done".into(), staffing_note: String::new() }, Role::Team)
            .unwrap();
        store.execute(Command::Baseline { fiscal_year: 2020 }, Role::ProjectDirector).unwrap();
        store.execute(Command::AdvancePhase { fiscal_year: 2020, phase: Phase::Execution }, Role::ProjectDirector).unwrap();
        act.to_string()
    }
    fn prepare(store: &mut Store, id: &str, o: ActOp) {
        if let ActOp::Cancel = o {
            let status = store.model().activity(&id.into()).unwrap().status;
            let Ok(Outcome::ChangeRequest(cr)) = store.execute(
                Command::DraftChange {
                    level: ChangeLevel::L1,
                    targets: vec![ChangeTarget {
                        entity_id: id.to_string(),
                        field: ChangeField::ActivityStatus,
                        old_value: FieldValue::Status(status),
                        new_value: FieldValue::Status(ActivityStatus::Cancelled),
                    }],
                    rationale: "descope".into(),
                    effective_period: p(2020, 4),
                },
                Role::Team,
            ) else {
                panic!("draft failed")
            };
            store.execute(Command::SubmitChange { change_request: cr.id.clone(), expected_revision: None }, Role::Team).unwrap();
            store
                .execute(Command::ReviewChange { change_request: cr.id, approve: true, note: "ok".into(), expected_revision: None }, Role::AreaLead)
                .unwrap();
        }
    }
    fn perform(store: &mut Store, id: &str, o: ActOp) -> portfolio_core::Result<()> {
        let activity: ActivityId = id.into();
        match o {
            ActOp::Start => store.execute(Command::StartActivity { activity, period: p(2020, 2) }, Role::Team),
            ActOp::Complete => store.execute(Command::CompleteMilestone { activity, period: p(2020, 3) }, Role::Team),
            ActOp::Cancel => {
                let cr = store.model().change_requests.keys().last().unwrap().clone();
                store.execute(Command::ApplyChange { change_request: cr, expected_revision: None }, Role::AreaLead)
            }
        }
        .map(|_| ())
    }
    fn observe(store: &Store, id: &str) -> ActivityStatus {
        store.model().activity(&id.into()).unwrap().status
    }
}

struct CrMachine;

#[derive(Debug, Clone, Copy)]
enum CrOp {
    Submit,
    Approve,
    Reject,
    Apply,
}

impl Machine for CrMachine {
    type S = CrState;
    type O = CrOp;
    const NAME: &'static str = "change request";
    fn states() -> Vec<CrState> {
        vec![CrState::Drafted, CrState::UnderReview, CrState::Approved, CrState::Rejected, CrState::Applied]
    }
    fn ops() -> Vec<CrOp> {
        vec![CrOp::Submit, CrOp::Approve, CrOp::Reject, CrOp::Apply]
    }
    fn initial() -> CrState {
        CrState::Drafted
    }
    fn terminal(s: CrState) -> bool {
        matches!(s, CrState::Rejected | CrState::Applied)
    }
    fn legal(s: CrState, o: CrOp) -> Option<CrState> {
        match (s, o) {
            (CrState::Drafted, CrOp::Submit) => Some(CrState::UnderReview),
            (CrState::UnderReview, CrOp::Approve) => Some(CrState::Approved),
            (CrState::UnderReview, CrOp::Reject) => Some(CrState::Rejected),
            (CrState::Approved, CrOp::Apply) => Some(CrState::Applied),
            _ => None,
        }
    }
    fn setup(store: &mut Store) -> String {
        let product = base_store(store, 1);
        let (_, act) = refined_activity(store, &product);
        let Ok(Outcome::ChangeRequest(cr)) = store.execute(
            Command::DraftChange {
                level: ChangeLevel::L1,
                targets: vec![ChangeTarget {
                    entity_id: act.to_string(),
                    field: ChangeField::ActivityTitle,
                    old_value: FieldValue::Text("deliver".into()),
                    new_value: FieldValue::Text("deliver v2".into()),
                }],
                rationale: "rename".into(),
                effective_period: p(2020, 1),
            },
            Role::Team,
        ) else {
            unreachable!()
        };
        cr.id.to_string()
    }
    fn perform(store: &mut Store, id: &str, o: CrOp) -> portfolio_core::Result<()> {
        let change_request: ChangeRequestId = id.into();
        match o {
            CrOp::Submit => store.execute(Command::SubmitChange { change_request, expected_revision: None }, Role::Team),
            CrOp::Approve | CrOp::Reject => store.execute(
                Command::ReviewChange {
                    change_request,
                    approve: matches!(o, CrOp::Approve),
                    note: "decided".into(),
                    expected_revision: None,
                },
                Role::AreaLead,
            ),
            CrOp::Apply => store.execute(Command::ApplyChange { change_request, expected_revision: None }, Role::AreaLead),
        }
        .map(|_| ())
    }
    fn observe(store: &Store, id: &str) -> CrState {
        store.model().change_request(&id.into()).unwrap().state
    }
}

struct IntegrationMachine;

#[derive(Debug, Clone, Copy)]
enum IntOp {
    Attach,
    Submit,
    Endorse,
    Reject,
    Approve,
}

impl Machine for IntegrationMachine {
    type S = IntegrationState;
    type O = IntOp;
    const NAME: &'static str = "integration";
    fn states() -> Vec<IntegrationState> {
        IntegrationState::ALL.to_vec()
    }
    fn ops() -> Vec<IntOp> {
        vec![IntOp::Attach, IntOp::Submit, IntOp::Endorse, IntOp::Reject, IntOp::Approve]
    }
    fn initial() -> IntegrationState {
        IntegrationState::Proposed
    }
    fn terminal(s: IntegrationState) -> bool {
        s == IntegrationState::FinallyApproved
    }
    fn legal(s: IntegrationState, o: IntOp) -> Option<IntegrationState> {
        use IntegrationState::*;
        match (s, o) {
            (Proposed | EvidenceAttached | SmeRejected, IntOp::Attach) => Some(EvidenceAttached),
            (EvidenceAttached, IntOp::Submit) => Some(UnderSmeReview),
            (UnderSmeReview, IntOp::Endorse) => Some(SmeEndorsed),
            (UnderSmeReview, IntOp::Reject) => Some(SmeRejected),
            (SmeEndorsed, IntOp::Approve) => Some(FinallyApproved),
            _ => None,
        }
    }
    fn setup(store: &mut Store) -> String {
        let product = base_store(store, 1);
        let Ok(Outcome::Integration(i)) = store.execute(
            Command::RecordIntegration {
                product,
                capability: "solver".into(),
                client: "climate app".into(),
                environment_class: EnvironmentClass::PreExascale,
                sustainability_note: Some("in the app's CI".into()),
            },
            Role::Team,
        ) else {
            unreachable!()
        };
        i.id.to_string()
    }
    fn perform(store: &mut Store, id: &str, o: IntOp) -> portfolio_core::Result<()> {
        let integration: IntegrationId = id.into();
        let n = store.model().integration(&integration).unwrap().evidence.len();
        match o {
            IntOp::Attach => store.attach_evidence(
                &integration,
                EvidenceKind::Screenshot,
                "run.png",
                format!("screenshot {n}").as_bytes(),
                Role::Team,
                None,
            ),
            IntOp::Submit => store.execute(
                Command::SubmitIntegration { integration, sustainability_note: None, expected_revision: None },
                Role::Team,
            ),
            IntOp::Endorse | IntOp::Reject => store.execute(
                Command::SmeReview {
                    integration,
                    endorse: matches!(o, IntOp::Endorse),
                    report: "reviewed".into(),
                    expected_revision: None,
                },
                Role::Sme,
            ),
            IntOp::Approve => {
                store.execute(Command::FinalApproval { integration, expected_revision: None }, Role::ProjectDirector)
            }
        }
        .map(|_| ())
    }
    fn observe(store: &Store, id: &str) -> IntegrationState {
        store.model().integration(&id.into()).unwrap().state
    }
}

struct LifecycleMachine;

#[derive(Debug, Clone, Copy)]
enum LcOp {
    To(Phase),
    OpenNextYear,
}

impl Machine for LifecycleMachine {
    type S = Phase;
    type O = LcOp;
    const NAME: &'static str = "fiscal-year lifecycle";
    fn states() -> Vec<Phase> {
        Phase::ALL.to_vec()
    }
    fn ops() -> Vec<LcOp> {
        Phase::ALL.iter().map(|p| LcOp::To(*p)).chain([LcOp::OpenNextYear]).collect()
    }
    fn initial() -> Phase {
        Phase::Planning
    }
    fn terminal(s: Phase) -> bool {
        s == Phase::Closed
    }
    fn legal(s: Phase, o: LcOp) -> Option<Phase> {
        use Phase::*;
        match (s, o) {
            (Planning, LcOp::To(Execution))
            | (Execution, LcOp::To(Reporting))
            | (Reporting, LcOp::To(Assessing))
            | (Assessing, LcOp::To(Adapting))
            | (Adapting, LcOp::To(Closed)) => match o {
                LcOp::To(t) => Some(t),
                LcOp::OpenNextYear => None,
            },
            (Adapting | Closed, LcOp::OpenNextYear) => Some(Closed),
            _ => None,
        }
    }
    fn setup(store: &mut Store) -> String {
        let product = base_store(store, 2);
        refined_activity(store, &product);
        store.execute(Command::Baseline { fiscal_year: 2020 }, Role::ProjectDirector).unwrap();
        "2020".into()
    }
    fn perform(store: &mut Store, _id: &str, o: LcOp) -> portfolio_core::Result<()> {
        let cmd = match o {
            LcOp::To(phase) => Command::AdvancePhase { fiscal_year: 2020, phase },
            LcOp::OpenNextYear => Command::AdvancePhase { fiscal_year: 2021, phase: Phase::Planning },
        };
        store.execute(cmd, Role::ProjectDirector).map(|_| ())
    }
    fn observe(store: &Store, _id: &str) -> Phase {
        store.model().phase_of(2020).unwrap()
    }
}

fn stale_apply_and_gates() -> Check {
    // Extra edge: a stale apply sends an approved request back to drafted.
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::open(dir.path(), Clock::deterministic()).unwrap();
    let id: ChangeRequestId = CrMachine::setup(&mut store).as_str().into();
    let act = store.model().activities.keys().next().unwrap().clone();
    for op in [CrOp::Submit, CrOp::Approve] {
        CrMachine::perform(&mut store, id.as_str(), op).unwrap();
    }
    store
        .execute(Command::EditActivity { activity: act, edit: serde_json::from_str(r#"{"title":"renamed"}"#).unwrap() }, Role::Team)
        .unwrap();
    let err = CrMachine::perform(&mut store, id.as_str(), CrOp::Apply).unwrap_err();
    ensure!(matches!(err, portfolio_core::Error::StaleChange { .. }), "expected a stale change, got {err}");
    ensure!(store.model().change_request(&id).unwrap().state == CrState::Drafted, "stale apply did not revert");
    let reopened = Store::open(dir.path(), Clock::deterministic()).unwrap();
    ensure!(reopened.model() == store.model(), "stale revert not persisted");
    // Entering execution without a baseline is refused and writes nothing.
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::open(dir.path(), Clock::deterministic()).unwrap();
    base_store(&mut store, 1);
    let before = dir_bytes(dir.path());
    ensure!(
        store.execute(Command::AdvancePhase { fiscal_year: 2020, phase: Phase::Execution }, Role::ProjectDirector).is_err(),
        "execution without baseline"
    );
    ensure!(dir_bytes(dir.path()) == before, "store changed");
    Ok("stale apply reverts to drafted and persists; execution without baseline refused".into())
}

fn workflow_safety() -> Check {
    let lines = [
        exercise::<ActivityMachine>()?,
        exercise::<CrMachine>()?,
        exercise::<IntegrationMachine>()?,
        exercise::<LifecycleMachine>()?,
        stale_apply_and_gates()?,
    ];
    Ok(lines.join("; "))
}

// ------------------------------------------------------------- replay

struct Session {
    rng: ChaCha8Rng,
    engine: Engine,
    attempts: usize,
    errors: usize,
}

impl Session {
    fn try_run(&mut self, cmd: Command, role: Role) -> Result<(), String> {
        self.attempts += 1;
        let before = self.engine.model().clone();
        let log_len = self.engine.log().len();
        match self.engine.execute(cmd.clone(), role) {
            Ok(_) => {}
            Err(portfolio_core::Error::StaleChange { .. }) => {}
            Err(e) => {
                self.errors += 1;
                if self.engine.model() != &before || self.engine.log().len() != log_len {
                    return Err(format!("{} failed with {e} but changed the model", cmd.name()));
                }
            }
        }
        Ok(())
    }

    fn pick<T: Clone>(&mut self, items: &[T]) -> Option<T> {
        items.choose(&mut self.rng).cloned()
    }

    fn random_role(&mut self) -> Role {
        Role::ALL[self.rng.gen_range(0..Role::ALL.len())]
    }

    fn step(&mut self, fys: &[i32]) -> Result<(), String> {
        let m = self.engine.model().clone();
        let acts: Vec<ActivityId> = m.activities.keys().cloned().collect();
        let pkgs: Vec<PackageId> = m.packages.keys().cloned().collect();
        let prods: Vec<ProductId> = m.products.keys().cloned().collect();
        let groups: Vec<SdkGroupId> = m.groups.keys().cloned().collect();
        let crs: Vec<ChangeRequestId> = m.change_requests.keys().cloned().collect();
        let ints: Vec<IntegrationId> = m.integrations.keys().cloned().collect();
        let current_fy = fys.iter().copied().find(|fy| m.phase_of(*fy) != Some(Phase::Closed)).unwrap_or(fys[0]);
        let phase = m.phase_of(current_fy);
        let fy = *fys.choose(&mut self.rng).unwrap();
        let period = p(if self.rng.gen_bool(0.8) { current_fy } else { fy }, self.rng.gen_range(1..=12));
        let kind = self.rng.gen_range(0..100);
        match kind {
            0..=5 => {
                let next = match phase {
                    Some(ph) => ph.successor().unwrap_or(Phase::Closed),
                    None => Phase::Planning,
                };
                let (target_fy, next) = if matches!(phase, Some(Phase::Adapting)) && self.rng.gen_bool(0.5) {
                    (current_fy + 1, Phase::Planning)
                } else {
                    (current_fy, next)
                };
                self.try_run(Command::AdvancePhase { fiscal_year: target_fy, phase: next }, Role::ProjectDirector)
            }
            6..=9 => {
                let product = self.pick(&prods).unwrap();
                let budget = Money::from_units(self.rng.gen_range(10..=100) * 100);
                self.try_run(Command::CreatePackage { product, fiscal_year: fy, narrative: "plan".into(), annual_budget: budget }, Role::Team)
            }
            10..=15 => {
                let Some(package) = self.pick(&pkgs) else { return Ok(()) };
                let pfy = m.packages[&package].fiscal_year;
                let n = self.rng.gen_range(1..=5);
                let specs = (0..n)
                    .map(|k| {
                        let s = self.rng.gen_range(1..=12u8);
                        ActivitySpec {
                            title: format!("task {k}"),
                            scope_text: "scope".into(),
                            budget_fraction: Ratio::new(self.rng.gen_range(5..=20), 100),
                            baseline_start: p(pfy, s),
                            baseline_end: p(pfy, self.rng.gen_range(s..=12)),
                        }
                    })
                    .collect();
                self.try_run(Command::RefinePackage { package, activities: specs }, Role::Team)
            }
            16..=20 => {
                let Some(activity) = self.pick(&acts) else { return Ok(()) };
                self.try_run(Command::FinalizeActivity { activity, completion_criteria: "review".into(), staffing_note: "2 FTE".into() }, Role::Team)
            }
            21..=24 => self.try_run(Command::Baseline { fiscal_year: current_fy }, Role::ProjectDirector),
            25..=32 => {
                let Some(activity) = self.pick(&acts) else { return Ok(()) };
                self.try_run(Command::StartActivity { activity, period }, Role::Team)
            }
            33..=39 => {
                let Some(activity) = self.pick(&acts) else { return Ok(()) };
                self.try_run(Command::CompleteMilestone { activity, period }, Role::Team)
            }
            40..=52 => {
                let Some(activity) = self.pick(&acts) else { return Ok(()) };
                let amount = Money::from_units(self.rng.gen_range(0..=900));
                self.try_run(Command::RecordCost { activity, period, amount }, Role::Team)
            }
            53..=57 => {
                let Some(activity) = self.pick(&acts) else { return Ok(()) };
                let fraction = Ratio::new(self.rng.gen_range(0..=10), 10);
                self.try_run(Command::RecordProgress { activity, period, fraction }, Role::Team)
            }
            58..=63 => self.try_run(Command::TakeSnapshot { period }, Role::ProjectDirector),
            64..=69 => {
                let Some(activity) = self.pick(&acts) else { return Ok(()) };
                let a = m.activities[&activity].clone();
                let (field, old, new) = match self.rng.gen_range(0..4) {
                    0 => (ChangeField::ActivityTitle, FieldValue::Text(a.title.clone()), FieldValue::Text(format!("{} *", a.title))),
                    1 => (ChangeField::ActivityEnd, FieldValue::Period(a.baseline_end), FieldValue::Period(a.baseline_end.succ())),
                    2 => (ChangeField::ActivityStatus, FieldValue::Status(a.status), FieldValue::Status(ActivityStatus::Cancelled)),
                    _ => (ChangeField::ActivityBudget, FieldValue::Money(a.budget.clone()), FieldValue::Money(a.budget.scale(&Ratio::new(9, 10)))),
                };
                let level = if field == ChangeField::ActivityBudget || self.rng.gen_bool(0.2) { ChangeLevel::L2 } else { ChangeLevel::L1 };
                let targets = vec![ChangeTarget { entity_id: activity.to_string(), field, old_value: old, new_value: new }];
                self.try_run(Command::DraftChange { level, targets, rationale: "adjust".into(), effective_period: period }, Role::Team)
            }
            70..=79 => {
                let Some(change_request) = self.pick(&crs) else { return Ok(()) };
                let approver = m.change_requests[&change_request].approver_role;
                let role = if self.rng.gen_bool(0.85) { approver } else { self.random_role() };
                let cmd = match self.rng.gen_range(0..4) {
                    0 => Command::SubmitChange { change_request, expected_revision: None },
                    1 => Command::ReviewChange { change_request, approve: true, note: "fine".into(), expected_revision: None },
                    2 => Command::ReviewChange { change_request, approve: false, note: "no".into(), expected_revision: None },
                    _ => Command::ApplyChange { change_request, expected_revision: None },
                };
                self.try_run(cmd, role)
            }
            80..=83 => {
                let product = self.pick(&prods).unwrap();
                let capability = format!("cap{}", self.rng.gen_range(0..5));
                let client = format!("app{}", self.rng.gen_range(0..3));
                self.try_run(
                    Command::RecordIntegration {
                        product,
                        capability,
                        client,
                        environment_class: EnvironmentClass::Exascale,
                        sustainability_note: Some("maintained".into()),
                    },
                    Role::Team,
                )
            }
            84..=93 => {
                let Some(integration) = self.pick(&ints) else { return Ok(()) };
                let (cmd, role) = match self.rng.gen_range(0..5) {
                    0 => {
                        let digest = self.engine.store_evidence(format!("evidence {}", self.attempts).as_bytes());
                        (Command::AttachEvidence { integration, kind: EvidenceKind::TestOutput, uri_or_path: "ci.log".into(), content_digest: digest, expected_revision: None }, Role::Team)
                    }
                    1 => (Command::SubmitIntegration { integration, sustainability_note: None, expected_revision: None }, Role::Team),
                    2 => (Command::SmeReview { integration, endorse: true, report: "good".into(), expected_revision: None }, Role::Sme),
                    3 => (Command::SmeReview { integration, endorse: false, report: "redo".into(), expected_revision: None }, Role::Sme),
                    _ => (Command::FinalApproval { integration, expected_revision: None }, Role::ProjectDirector),
                };
                let role = if self.rng.gen_bool(0.9) { role } else { self.random_role() };
                self.try_run(cmd, role)
            }
            94..=96 => {
                let group = self.pick(&groups).unwrap();
                self.try_run(Command::AddProduct { group, name: format!("extra-{}", self.attempts), kpp_goal: 4, team_name: None }, Role::AreaLead)
            }
            _ => {
                let product = self.pick(&prods).unwrap();
                self.try_run(Command::RenameProduct { product, name: format!("renamed-{}", self.attempts) }, Role::AreaLead)
            }
        }
    }
}

fn run_session(seed: u64, ops: usize) -> Result<Engine, String> {
    let mut s = Session { rng: ChaCha8Rng::seed_from_u64(seed), engine: Engine::new(Clock::deterministic()), attempts: 0, errors: 0 };
    let tech = if seed % 2 == 0 { EvTechnique::Milestone0100 } else { EvTechnique::PercentComplete };
    s.try_run(
        Command::CreatePortfolio {
            name: format!("session {seed}"),
            start_fy: 2020,
            years: 3,
            config: PortfolioConfig { ev_technique: tech, ..PortfolioConfig::default() },
        },
        Role::ProjectDirector,
    )?;
    for g in 0..2 {
        s.try_run(Command::AddSdkGroup { name: format!("grp{g}") }, Role::ProjectDirector)?;
    }
    let groups: Vec<SdkGroupId> = s.engine.model().groups.keys().cloned().collect();
    for i in 0..4 {
        s.try_run(Command::AddProduct { group: groups[i % 2].clone(), name: format!("prod{i}"), kpp_goal: 4, team_name: None }, Role::AreaLead)?;
    }
    let fys = [2020, 2021, 2022];
    while s.engine.log().len() < ops {
        ensure!(s.attempts < ops * 50, "session {seed} stalled at {} commits", s.engine.log().len());
        s.step(&fys)?;
    }
    Ok(s.engine)
}

fn replay_determinism() -> Check {
    let mut snapshots = 0;
    let mut cars = 0;
    let mut ops_by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..6u64 {
        let engine = run_session(seed, 500)?;
        for e in engine.log() {
            *ops_by_kind.entry(e.operation.clone()).or_default() += 1;
        }
        let replayed = Engine::replay(engine.log()).map_err(|e| format!("seed {seed}: {e}"))?;
        let (a, b) = (engine.model(), replayed.model());
        ensure!(a == b, "seed {seed}: replayed model differs");
        ensure!(a.canonical_json() == b.canonical_json(), "seed {seed}: canonical bytes differ");
        for (period, snap) in &a.snapshots {
            let other = b.snapshot(*period).map_err(|e| e.to_string())?;
            ensure!(serde_json::to_vec(snap).unwrap() == serde_json::to_vec(other).unwrap(), "seed {seed}: snapshot {period}");
            for fmt in ["csv", "json"] {
                ensure!(a.export_status(*period, fmt).unwrap() == b.export_status(*period, fmt).unwrap(), "seed {seed}: export {period}");
            }
            snapshots += 1;
        }
        for fy in [2020, 2021, 2022] {
            match (a.generate_car(fy), b.generate_car(fy)) {
                (Ok(x), Ok(y)) => {
                    ensure!(serde_json::to_vec(&x).unwrap() == serde_json::to_vec(&y).unwrap(), "seed {seed}: CAR {fy} json");
                    ensure!(render_car_text(&x) == render_car_text(&y), "seed {seed}: CAR {fy} text");
                    cars += 1;
                }
                (Err(x), Err(y)) => ensure!(x == y, "seed {seed}: CAR {fy} errors differ"),
                _ => return Err(format!("seed {seed}: CAR {fy} availability differs")),
            }
        }
    }
    let kinds = ops_by_kind.len();
    ensure!(snapshots > 0 && cars > 0, "sessions produced no snapshots ({snapshots}) or CARs ({cars})");
    Ok(format!("6 sessions x 500 ops ({kinds} operation kinds): {snapshots} snapshots and {cars} CARs byte-identical after replay; failed ops left the model untouched"))
}

fn persistence() -> Check {
    let engine = &ecp().0;
    let model = engine.model();
    let bytes = encode_store(model);
    let decoded = decode_store(&bytes).map_err(|e| e.to_string())?;
    ensure!(&decoded == model, "decode(encode(model)) differs");
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.store");
    save_store(model, &file).map_err(|e| e.to_string())?;
    ensure!(&load_store(&file).map_err(|e| e.to_string())? == model, "save/load differs");

    // A full store directory: snapshot path and replay path both reproduce the model.
    let root = dir.path().join("store");
    std::fs::create_dir_all(root.join("log")).unwrap();
    std::fs::create_dir_all(root.join("evidence")).unwrap();
    let log: String = engine.log().iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    std::fs::write(Store::log_path(&root), log).unwrap();
    for (digest, content) in engine.evidence() {
        std::fs::write(Store::evidence_dir(&root).join(digest), content).unwrap();
    }
    save_store(model, &Store::snapshot_path(&root)).unwrap();
    let opened = Store::open(&root, Clock::deterministic()).map_err(|e| e.to_string())?;
    ensure!(opened.model() == model, "store open (snapshot) differs");
    ensure!(opened.engine().verify_evidence().is_empty(), "evidence digests");
    std::fs::remove_file(Store::snapshot_path(&root)).unwrap();
    let replayed = Store::open(&root, Clock::deterministic()).map_err(|e| e.to_string())?;
    ensure!(replayed.model() == model, "store open (replay) differs");

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut detected, mut equal) = (0, 0);
    for _ in 0..100 {
        let mut mutated = bytes.clone();
        let i = rng.gen_range(0..mutated.len());
        let old = mutated[i];
        mutated[i] = loop {
            let b: u8 = rng.gen();
            if b != old {
                break b;
            }
        };
        match decode_store(&mutated) {
            Ok(m) if &m == model => equal += 1,
            Ok(_) => return Err(format!("mutation at byte {i} loaded a different model")),
            Err(_) => detected += 1,
        }
    }
    Ok(format!(
        "{} byte store round-trips (file, snapshot, replay); 100 mutations: {detected} detected, {equal} loaded equal, 0 silent",
        bytes.len()
    ))
}

fn random_version(rng: &mut ChaCha8Rng) -> Version {
    Version::new(rng.gen_range(0..3), rng.gen_range(0..4), rng.gen_range(0..3))
}

fn key(v: &Version) -> (u64, u64, u64) {
    (v.major, v.minor, v.patch)
}

fn stack_compatibility() -> Check {
    let mut total_conflicts = 0;
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let mut e = Engine::new(Clock::deterministic());
        let names: Vec<String> = (0..20).map(|i| format!("lib{i:02}")).collect();
        // Oracle's own view of each release's constraints.
        let mut declared: BTreeMap<(String, (u64, u64, u64)), Vec<(String, (u64, u64, u64), (u64, u64, u64))>> =
            BTreeMap::new();
        let mut pins = BTreeMap::new();
        let policies: Vec<String> = e.model().stack.policies.keys().cloned().collect();
        for name in &names {
            let mut versions: Vec<Version> = (0..rng.gen_range(1..=3)).map(|_| random_version(&mut rng)).collect();
            versions.sort();
            versions.dedup();
            for v in &versions {
                let mut constraints = Vec::new();
                let others: Vec<&String> = names.iter().filter(|n| *n != name).collect();
                let k = rng.gen_range(0..=4);
                for other in others.choose_multiple(&mut rng, k) {
                    let (a, b) = (random_version(&mut rng), random_version(&mut rng));
                    let (min, max) = if a <= b { (a, b) } else { (b, a) };
                    declared.entry((name.clone(), key(v))).or_default().push(((*other).clone(), key(&min), key(&max)));
                    constraints.push(Constraint { product: (*other).clone(), range: VersionRange::new(min, max).unwrap() });
                }
                e.execute(Command::RegisterRelease { product: name.clone(), version: v.clone(), constraints }, Role::Team)
                    .map_err(|err| err.to_string())?;
            }
            let items = policies
                .iter()
                .map(|p| (p.clone(), PolicyItem { status: PolicyStatus::Met, note: String::new() }))
                .collect();
            e.execute(Command::RecordChecklist { product: name.clone(), items }, Role::Team).map_err(|err| err.to_string())?;
            pins.insert(name.clone(), versions.choose(&mut rng).unwrap().clone());
        }
        let Ok(Outcome::Manifest(manifest)) = e.execute(
            Command::ComposeManifest {
                name: "stack".into(),
                stack_version: format!("{trial}.0"),
                pins: pins.clone(),
                inclusion_rule: InclusionRule::AllPoliciesMet,
                metadata: [("container".to_string(), "ubuntu".to_string())].into(),
            },
            Role::ProjectDirector,
        ) else {
            return Err("compose failed".into());
        };
        let mut oracle = Vec::new();
        for a in &names {
            for b in &names {
                if a == b {
                    continue;
                }
                let va = key(&pins[a]);
                let vb = key(&pins[b]);
                for (target, min, max) in declared.get(&(a.clone(), va)).into_iter().flatten() {
                    if target == b && !(*min <= vb && vb < *max) {
                        oracle.push((a.clone(), va, b.clone(), vb, *min, *max));
                    }
                }
            }
        }
        oracle.sort();
        let mut got: Vec<_> = e
            .model()
            .check_compatibility(&manifest.stack_version)
            .map_err(|err| err.to_string())?
            .into_iter()
            .map(|c| (c.from, key(&c.from_version), c.to, key(&c.pinned_version), key(&c.allowed_range.min), key(&c.allowed_range.max)))
            .collect();
        got.sort();
        ensure!(got == oracle, "trial {trial}: {} conflicts vs oracle {}", got.len(), oracle.len());
        ensure!(check_compatibility(&manifest, &e.model().stack.releases).len() == oracle.len(), "free function");
        total_conflicts += oracle.len();

        let text = manifest_to_text(&manifest);
        let parsed = manifest_from_text(&text).map_err(|err| err.to_string())?;
        ensure!(parsed == manifest, "trial {trial}: parse(serialize) differs");
        ensure!(manifest_to_text(&parsed) == text, "trial {trial}: serialization not idempotent");
    }
    Ok(format!("200 random 20-product manifests, {total_conflicts} conflicts all equal to the all-pairs oracle; serialization idempotent"))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("ecp-scale fixture and exact rollups", ecp_scale_fixture),
        ("in-progress wavefront", wavefront),
        ("cpi/spi semantics", index_semantics),
        ("struggling detection", struggling),
        ("kpp scoring", kpp_scoring),
        ("workflow safety", workflow_safety),
        ("audit/replay determinism", replay_determinism),
        ("persistence round-trip", persistence),
        ("stack compatibility", stack_compatibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
