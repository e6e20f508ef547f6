//! Annual lifecycle phases, frozen monthly snapshots, and the Capability
//! Assessment Report.

use std::fmt;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evm::{snapshots_to_csv, EvmSnapshot, IndexKind, StruggleFlag};
use crate::ids::{ActivityId, NodeId, ProductId};
use crate::kpp::IntegrationState;
use crate::model::{Ctx, Model};
use crate::money::Ratio;
use crate::period::Period;
use crate::planning::PackageState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Execution,
    Reporting,
    Assessing,
    Adapting,
    Closed,
}

impl Phase {
    pub const ALL: [Phase; 6] =
        [Phase::Planning, Phase::Execution, Phase::Reporting, Phase::Assessing, Phase::Adapting, Phase::Closed];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Planning => "planning",
            Phase::Execution => "execution",
            Phase::Reporting => "reporting",
            Phase::Assessing => "assessing",
            Phase::Adapting => "adapting",
            Phase::Closed => "closed",
        }
    }

    pub fn successor(self) -> Option<Phase> {
        match self {
            Phase::Planning => Some(Phase::Execution),
            Phase::Execution => Some(Phase::Reporting),
            Phase::Reporting => Some(Phase::Assessing),
            Phase::Assessing => Some(Phase::Adapting),
            Phase::Adapting => Some(Phase::Closed),
            Phase::Closed => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown phase {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiscalYearLifecycle {
    pub fiscal_year: i32,
    pub phase: Phase,
    pub phase_history: Vec<(Phase, DateTime<Utc>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthlySnapshot {
    pub period: Period,
    /// Portfolio, then SDK groups, then products.
    pub nodes: Vec<EvmSnapshot>,
    pub struggling: Vec<StruggleFlag>,
    pub in_progress_count: u32,
    pub taken_at: DateTime<Utc>,
}

impl MonthlySnapshot {
    pub fn node(&self, node: &NodeId) -> Option<&EvmSnapshot> {
        self.nodes.iter().find(|s| &s.node_id == node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletedMilestone {
    pub activity_id: ActivityId,
    pub title: String,
    pub completion_period: Period,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub period: Period,
    pub cpi: Option<Ratio>,
    pub spi: Option<Ratio>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationSummary {
    pub approved: u32,
    pub goal: u32,
    pub met: bool,
    pub in_review: u32,
    pub other_open: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarSection {
    pub product_id: ProductId,
    pub product_name: String,
    pub sdk_group: String,
    pub narrative: String,
    pub activities_planned: u32,
    pub activities_cancelled: u32,
    pub milestones_completed: Vec<CompletedMilestone>,
    pub cpi_spi_trend: Vec<TrendPoint>,
    pub integrations: IntegrationSummary,
    pub plans: Option<String>,
    pub gaps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarSummary {
    pub products: u32,
    pub milestones_completed: u32,
    pub integrations_approved: u32,
    pub kpp_fraction_met: Option<Ratio>,
    pub kpp_pass: bool,
    pub latest_period: Option<Period>,
    pub latest_rollup: Option<EvmSnapshot>,
    pub products_with_gaps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarDocument {
    pub fiscal_year: i32,
    pub sections: Vec<CarSection>,
    pub portfolio_summary: CarSummary,
    pub generated_at: Option<DateTime<Utc>>,
}

/// Supported `export_status` formats.
pub const STATUS_FORMATS: [&str; 2] = ["csv", "json"];

impl Model {
    pub(crate) fn open_first_lifecycle(&mut self, ctx: &Ctx, fy: i32) {
        self.lifecycles.insert(
            fy,
            FiscalYearLifecycle { fiscal_year: fy, phase: Phase::Planning, phase_history: vec![(Phase::Planning, ctx.at)] },
        );
    }

    pub fn phase_of(&self, fy: i32) -> Option<Phase> {
        self.lifecycles.get(&fy).map(|l| l.phase)
    }

    pub(crate) fn require_phase(&self, operation: &'static str, fy: i32, allowed: &[Phase]) -> Result<()> {
        match self.phase_of(fy) {
            Some(p) if allowed.contains(&p) => Ok(()),
            other => Err(Error::PhaseGate {
                operation,
                fy,
                required: allowed.iter().map(|p| p.as_str()).collect::<Vec<_>>().join("|"),
                actual: other.map(|p| p.to_string()).unwrap_or_else(|| "not started".into()),
            }),
        }
    }

    fn close_year(&mut self, ctx: &Ctx, fy: i32) {
        if let Some(l) = self.lifecycles.get_mut(&fy) {
            l.phase = Phase::Closed;
            l.phase_history.push((Phase::Closed, ctx.at));
        }
        for p in self.packages.values_mut().filter(|p| p.fiscal_year == fy) {
            if p.state == PackageState::Baselined {
                p.state = PackageState::Closed;
            }
        }
    }

    pub(crate) fn advance_phase(&mut self, ctx: &Ctx, fy: i32, next: Phase) -> Result<FiscalYearLifecycle> {
        let horizon = self.horizon()?;
        let illegal = |from: String| Error::IllegalTransition {
            entity: "lifecycle",
            id: fy.to_string(),
            from,
            to: next.to_string(),
        };
        match self.lifecycles.get(&fy) {
            Some(l) => {
                if l.phase.successor() != Some(next) {
                    return Err(illegal(l.phase.to_string()));
                }
                if next == Phase::Execution && self.baseline_for_year(fy).is_none() {
                    return Err(Error::Validation(format!("entering execution requires a baseline for {fy}")));
                }
                if next == Phase::Closed {
                    self.close_year(ctx, fy);
                } else {
                    let l = self.lifecycles.get_mut(&fy).expect("present");
                    l.phase = next;
                    l.phase_history.push((next, ctx.at));
                }
            }
            None => {
                let prev = self.phase_of(fy - 1);
                if next != Phase::Planning
                    || !horizon.contains_fy(fy)
                    || !matches!(prev, Some(Phase::Adapting | Phase::Closed))
                {
                    return Err(illegal(format!(
                        "not started (previous year {})",
                        prev.map(|p| p.to_string()).unwrap_or_else(|| "not started".into())
                    )));
                }
                if prev == Some(Phase::Adapting) {
                    self.close_year(ctx, fy - 1);
                }
                self.lifecycles.insert(
                    fy,
                    FiscalYearLifecycle { fiscal_year: fy, phase: Phase::Planning, phase_history: vec![(Phase::Planning, ctx.at)] },
                );
            }
        }
        Ok(self.lifecycles[&fy].clone())
    }

    pub(crate) fn take_monthly_snapshot(&mut self, ctx: &Ctx, period: Period) -> Result<MonthlySnapshot> {
        if !self.horizon()?.contains(period) {
            return Err(Error::OutsideHorizon(period));
        }
        if self.snapshots.contains_key(&period) {
            return Err(Error::DuplicateSnapshot(period));
        }
        self.require_phase(
            "take_monthly_snapshot",
            period.fiscal_year,
            &[Phase::Execution, Phase::Reporting, Phase::Assessing, Phase::Adapting],
        )?;
        let snap = self.compute_snapshot(period, ctx.at)?;
        self.snapshots.insert(period, snap.clone());
        Ok(snap)
    }

    /// What a snapshot of `period` would contain right now.
    pub fn compute_snapshot(&self, period: Period, taken_at: DateTime<Utc>) -> Result<MonthlySnapshot> {
        let config = self.config()?.clone();
        Ok(MonthlySnapshot {
            period,
            nodes: self.all_node_snapshots(period)?,
            struggling: self.detect_struggling(period, &config)?,
            in_progress_count: self.in_progress_set(period).len() as u32,
            taken_at,
        })
    }

    pub fn snapshot(&self, period: Period) -> Result<&MonthlySnapshot> {
        self.snapshots.get(&period).ok_or(Error::MissingSnapshot(period))
    }

    pub fn generate_car(&self, fy: i32) -> Result<CarDocument> {
        let horizon = self.horizon()?;
        self.require_phase(
            "generate_car",
            fy,
            &[Phase::Reporting, Phase::Assessing, Phase::Adapting, Phase::Closed],
        )?;
        let year_snaps: Vec<&MonthlySnapshot> =
            self.snapshots.range(Period::first_of_year(fy)..=Period::last_of_year(fy)).map(|(_, s)| s).collect();
        let latest = year_snaps.last().copied();
        let past_midpoint = horizon.year_number(fy).is_some_and(|n| 2 * n > horizon.years);
        let kpp = self.portfolio_kpp_score()?;

        let mut sections = Vec::new();
        for product in self.products_by_name() {
            let pid = &product.id;
            let narrative = product
                .planning_packages
                .get(&fy)
                .and_then(|k| self.packages.get(k))
                .map(|p| p.narrative.clone())
                .unwrap_or_default();
            let plans = product
                .planning_packages
                .get(&(fy + 1))
                .and_then(|k| self.packages.get(k))
                .map(|p| p.narrative.clone());
            let year_acts: Vec<_> =
                self.activities.values().filter(|a| &a.product_id == pid && a.fiscal_year == fy).collect();
            let mut milestones: Vec<CompletedMilestone> = self
                .activities
                .values()
                .filter(|a| &a.product_id == pid)
                .filter_map(|a| {
                    a.completion_period.filter(|c| c.fiscal_year == fy).map(|c| CompletedMilestone {
                        activity_id: a.id.clone(),
                        title: a.title.clone(),
                        completion_period: c,
                    })
                })
                .collect();
            milestones.sort_by(|a, b| {
                a.completion_period.cmp(&b.completion_period).then_with(|| a.activity_id.cmp(&b.activity_id))
            });
            let node = NodeId::Product(pid.clone());
            let trend = year_snaps
                .iter()
                .filter_map(|s| s.node(&node))
                .map(|s| TrendPoint { period: s.period, cpi: s.cpi.clone(), spi: s.spi.clone() })
                .collect();
            let status = self.product_kpp_status(pid)?;
            let mine = self.integrations.values().filter(|i| &i.product_id == pid);
            let (mut in_review, mut other_open) = (0, 0);
            for i in mine {
                match i.state {
                    IntegrationState::UnderSmeReview | IntegrationState::SmeEndorsed => in_review += 1,
                    IntegrationState::FinallyApproved => {}
                    _ => other_open += 1,
                }
            }
            let mut gaps = Vec::new();
            if let Some(flag) = latest.and_then(|s| s.struggling.iter().find(|f| &f.product_id == pid)) {
                let which: Vec<&str> = flag
                    .reasons
                    .iter()
                    .map(|r| match r {
                        IndexKind::Cpi => "CPI",
                        IndexKind::Spi => "SPI",
                    })
                    .collect();
                gaps.push(format!(
                    "struggling: {} below threshold since {}",
                    which.join("+"),
                    flag.first_flagged_period
                ));
            }
            if past_midpoint && status.approved_count == 0 {
                gaps.push("no approved integrations past the horizon midpoint".into());
            }
            sections.push(CarSection {
                product_id: pid.clone(),
                product_name: product.name.clone(),
                sdk_group: self.groups.get(&product.sdk_group).map(|g| g.name.clone()).unwrap_or_default(),
                narrative,
                activities_planned: year_acts.len() as u32,
                activities_cancelled: year_acts.iter().filter(|a| a.cancelled_at.is_some()).count() as u32,
                milestones_completed: milestones,
                cpi_spi_trend: trend,
                integrations: IntegrationSummary {
                    approved: status.approved_count,
                    goal: status.goal,
                    met: status.met,
                    in_review,
                    other_open,
                },
                plans,
                gaps,
            });
        }
        let summary = CarSummary {
            products: sections.len() as u32,
            milestones_completed: sections.iter().map(|s| s.milestones_completed.len() as u32).sum(),
            integrations_approved: sections.iter().map(|s| s.integrations.approved).sum(),
            kpp_fraction_met: kpp.fraction_met,
            kpp_pass: kpp.pass,
            latest_period: latest.map(|s| s.period),
            latest_rollup: latest.and_then(|s| s.node(&NodeId::Portfolio).cloned()),
            products_with_gaps: sections.iter().filter(|s| !s.gaps.is_empty()).map(|s| s.product_name.clone()).collect(),
        };
        Ok(CarDocument { fiscal_year: fy, sections, portfolio_summary: summary, generated_at: self.last_updated })
    }

    pub fn export_status(&self, period: Period, format: &str) -> Result<String> {
        if !STATUS_FORMATS.contains(&format) {
            return Err(Error::UnknownFormat { token: format.to_string(), supported: STATUS_FORMATS.join(", ") });
        }
        let snap = self.snapshot(period)?;
        Ok(match format {
            "csv" => snapshots_to_csv(&snap.nodes),
            _ => serde_json::to_string_pretty(snap).expect("snapshot serializes") + "\n",
        })
    }
}

/// Reads back a `json` status export.
pub fn import_status_json(text: &str) -> Result<MonthlySnapshot> {
    serde_json::from_str(text).map_err(|e| Error::Validation(format!("status json: {e}")))
}

fn opt4(r: &Option<Ratio>) -> String {
    r.as_ref().map(|v| v.to_decimal(4)).unwrap_or_else(|| "n/a".into())
}

/// Human-readable CAR. Sections are ordered by product name.
pub fn render_car_text(car: &CarDocument) -> String {
    let mut out = String::new();
    let s = &car.portfolio_summary;
    let _ = writeln!(out, "CAPABILITY ASSESSMENT REPORT FY{}", car.fiscal_year);
    if let Some(at) = car.generated_at {
        let _ = writeln!(out, "Generated: {}", at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "PORTFOLIO SUMMARY");
    let _ = writeln!(out, "  Products: {}", s.products);
    let _ = writeln!(out, "  Milestones completed this year: {}", s.milestones_completed);
    let _ = writeln!(out, "  Approved integrations (to date): {}", s.integrations_approved);
    let _ = writeln!(
        out,
        "  Products meeting integration goal: {} (pass: {})",
        s.kpp_fraction_met.as_ref().map(|f| f.to_decimal(4)).unwrap_or_else(|| "n/a".into()),
        if s.kpp_pass { "yes" } else { "no" }
    );
    if let Some(r) = &s.latest_rollup {
        let _ = writeln!(
            out,
            "  Latest rollup {}: PV {} EV {} AC {} CPI {} SPI {}",
            r.period,
            r.pv.to_decimal(),
            r.ev.to_decimal(),
            r.ac.to_decimal(),
            opt4(&r.cpi),
            opt4(&r.spi)
        );
    }
    if s.products_with_gaps.is_empty() {
        let _ = writeln!(out, "  Gaps: none");
    } else {
        let _ = writeln!(out, "  Gaps: {}", s.products_with_gaps.join(", "));
    }
    for sec in &car.sections {
        let _ = writeln!(out);
        let _ = writeln!(out, "== {} [{}] ({}) ==", sec.product_name, sec.product_id, sec.sdk_group);
        let _ = writeln!(out, "Activities: {}", if sec.narrative.is_empty() { "(no narrative)" } else { &sec.narrative });
        let _ = writeln!(
            out,
            "Progress: {} planned, {} milestones completed, {} cancelled",
            sec.activities_planned,
            sec.milestones_completed.len(),
            sec.activities_cancelled
        );
        for m in &sec.milestones_completed {
            let _ = writeln!(out, "  - {} {} ({})", m.completion_period, m.title, m.activity_id);
        }
        if !sec.cpi_spi_trend.is_empty() {
            let _ = writeln!(out, "CPI/SPI trend:");
            for t in &sec.cpi_spi_trend {
                let _ = writeln!(out, "  {} CPI {} SPI {}", t.period, opt4(&t.cpi), opt4(&t.spi));
            }
        }
        let i = &sec.integrations;
        let _ = writeln!(
            out,
            "Integrations: {} approved of goal {} ({}); {} in review; {} other open",
            i.approved,
            i.goal,
            if i.met { "met" } else { "not met" },
            i.in_review,
            i.other_open
        );
        let _ = writeln!(out, "Plans: {}", sec.plans.as_deref().unwrap_or("(none recorded)"));
        if sec.gaps.is_empty() {
            let _ = writeln!(out, "Gaps: none");
        } else {
            for g in &sec.gaps {
                let _ = writeln!(out, "Gap: {g}");
            }
        }
    }
    out
}
