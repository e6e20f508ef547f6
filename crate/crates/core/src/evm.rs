//! Earned-value computations: time-phased PV, EV and AC with exact rollups,
//! cumulative CPI/SPI, and struggling-product detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{EvTechnique, PortfolioConfig};
use crate::error::{Error, Result};
use crate::ids::{ActivityId, NodeId, PackageId, ProductId};
use crate::model::Model;
use crate::money::{Money, Ratio};
use crate::period::Period;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityStatus {
    Planned,
    InProgress,
    MilestoneComplete,
    Cancelled,
}

impl ActivityStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ActivityStatus::Planned => "planned",
            ActivityStatus::InProgress => "in_progress",
            ActivityStatus::MilestoneComplete => "milestone_complete",
            ActivityStatus::Cancelled => "cancelled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetailLevel {
    PackageStub,
    Refined,
    Finalized,
}

/// One planned-value curve. Later segments replace earlier ones from
/// `effective_from` onward; the first segment has no effective period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub effective_from: Option<Period>,
    pub budget: Money,
    pub start: Period,
    pub end: Period,
}

impl ScheduleSegment {
    /// Cumulative PV under a linear spread across `[start, end]`.
    pub fn cumulative_pv(&self, t: Period) -> Money {
        let d = self.start.months_through(self.end).max(1);
        let elapsed = self.start.months_through(t).min(d);
        if elapsed == 0 {
            return Money::zero();
        }
        if elapsed == d {
            return self.budget.clone();
        }
        self.budget.scale(&Ratio::new(elapsed, d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub id: ActivityId,
    pub product_id: ProductId,
    pub package_id: PackageId,
    pub fiscal_year: i32,
    pub title: String,
    pub scope_text: String,
    pub budget: Money,
    pub budget_fraction: Ratio,
    pub baseline_start: Period,
    pub baseline_end: Period,
    pub status: ActivityStatus,
    pub actual_start: Option<Period>,
    pub completion_period: Option<Period>,
    pub cancelled_at: Option<Period>,
    pub percent_complete_series: BTreeMap<Period, Ratio>,
    pub detail_level: DetailLevel,
    pub completion_criteria: Option<String>,
    pub staffing_note: Option<String>,
    pub schedule: Vec<ScheduleSegment>,
}

impl Activity {
    fn segment_at(&self, t: Period) -> &ScheduleSegment {
        self.schedule
            .iter()
            .rev()
            .find(|s| s.effective_from.is_none_or(|e| e <= t))
            .unwrap_or(&self.schedule[0])
    }

    /// Cumulative planned value at `t`. Cancellation freezes PV at the
    /// value it had just before the cancellation took effect.
    pub fn planned_value(&self, t: Period) -> Money {
        match self.cancelled_at {
            Some(c) if t >= c => {
                let before = c.pred();
                self.segment_at(before).cumulative_pv(before)
            }
            _ => self.segment_at(t).cumulative_pv(t),
        }
    }

    fn budget_at(&self, t: Period) -> &Money {
        match self.cancelled_at {
            Some(c) if t >= c => &self.segment_at(c.pred()).budget,
            _ => &self.segment_at(t).budget,
        }
    }

    pub fn earned_value(&self, t: Period, technique: EvTechnique) -> Money {
        if self.completion_period.is_some_and(|c| c <= t) {
            return self.budget_at(t).clone();
        }
        match technique {
            EvTechnique::Milestone0100 => Money::zero(),
            EvTechnique::PercentComplete => self
                .percent_complete_series
                .range(..=t)
                .next_back()
                .map(|(_, f)| self.budget_at(t).scale(f))
                .unwrap_or_else(Money::zero),
        }
    }

    /// Warning emitted when percent-complete EV is requested without any recorded series.
    pub fn earned_value_diagnostic(&self, technique: EvTechnique) -> Option<String> {
        (technique == EvTechnique::PercentComplete
            && self.percent_complete_series.is_empty()
            && self.completion_period.is_none())
        .then(|| format!("activity {} has no percent-complete series; EV taken as 0", self.id))
    }

    pub fn is_in_progress_at(&self, t: Period) -> bool {
        self.actual_start.is_some_and(|s| s <= t)
            && !self.completion_period.is_some_and(|c| c <= t)
            && !self.cancelled_at.is_some_and(|c| c <= t)
    }
}

/// Cumulative actual cost from a per-period record map.
pub fn actual_cost_of(records: Option<&BTreeMap<Period, Money>>, t: Period) -> Money {
    records
        .map(|r| r.range(..=t).map(|(_, m)| m).sum())
        .unwrap_or_else(Money::zero)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Totals {
    pub pv: Money,
    pub ev: Money,
    pub ac: Money,
}

impl Totals {
    fn add(&mut self, other: &Totals) {
        self.pv += &other.pv;
        self.ev += &other.ev;
        self.ac += &other.ac;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvmSnapshot {
    pub node_id: NodeId,
    pub period: Period,
    pub pv: Money,
    pub ev: Money,
    pub ac: Money,
    pub cpi: Option<Ratio>,
    pub spi: Option<Ratio>,
    pub cv: Money,
    pub sv: Money,
}

impl EvmSnapshot {
    pub fn from_totals(node_id: NodeId, period: Period, t: Totals) -> Self {
        let cpi = t.ev.ratio_to(&t.ac);
        let spi = t.ev.ratio_to(&t.pv);
        let cv = &t.ev - &t.ac;
        let sv = &t.ev - &t.pv;
        EvmSnapshot { node_id, period, pv: t.pv, ev: t.ev, ac: t.ac, cpi, spi, cv, sv }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Cpi,
    Spi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StruggleFlag {
    pub product_id: ProductId,
    pub reasons: Vec<IndexKind>,
    pub first_flagged_period: Period,
}

impl Model {
    pub fn activity(&self, id: &ActivityId) -> Result<&Activity> {
        self.activities.get(id).ok_or_else(|| Error::not_found("activity", id))
    }

    fn check_period(&self, t: Period) -> Result<()> {
        if self.horizon()?.contains(t) {
            Ok(())
        } else {
            Err(Error::OutsideHorizon(t))
        }
    }

    pub fn planned_value(&self, id: &ActivityId, t: Period) -> Result<Money> {
        self.check_period(t)?;
        Ok(self.activity(id)?.planned_value(t))
    }

    pub fn earned_value(&self, id: &ActivityId, t: Period) -> Result<Money> {
        self.check_period(t)?;
        Ok(self.activity(id)?.earned_value(t, self.config()?.ev_technique))
    }

    pub fn actual_cost(&self, id: &ActivityId, t: Period) -> Result<Money> {
        self.activity(id)?;
        Ok(actual_cost_of(self.costs.get(id), t))
    }

    fn activity_totals(&self, a: &Activity, t: Period, tech: EvTechnique) -> Totals {
        Totals {
            pv: a.planned_value(t),
            ev: a.earned_value(t, tech),
            ac: actual_cost_of(self.costs.get(&a.id), t),
        }
    }

    /// Activities beneath `node`, validating that the node exists.
    pub fn activities_under(&self, node: &NodeId) -> Result<Vec<&Activity>> {
        Ok(match node {
            NodeId::Portfolio => {
                self.portfolio()?;
                self.activities.values().collect()
            }
            NodeId::SdkGroup(g) => {
                let group = self.group(g)?;
                self.activities
                    .values()
                    .filter(|a| group.product_ids.contains(&a.product_id))
                    .collect()
            }
            NodeId::Product(p) => {
                self.product(p)?;
                self.activities.values().filter(|a| &a.product_id == p).collect()
            }
            NodeId::Activity(a) => vec![self.activity(a)?],
        })
    }

    pub fn rollup(&self, node: &NodeId, t: Period) -> Result<EvmSnapshot> {
        self.check_period(t)?;
        let tech = self.config()?.ev_technique;
        let mut totals = Totals::default();
        for a in self.activities_under(node)? {
            totals.add(&self.activity_totals(a, t, tech));
        }
        Ok(EvmSnapshot::from_totals(node.clone(), t, totals))
    }

    pub fn index_series(&self, node: &NodeId, from: Period, to: Period) -> Result<Vec<EvmSnapshot>> {
        if to < from {
            return Err(Error::EmptyRange);
        }
        self.check_period(from)?;
        self.check_period(to)?;
        let tech = self.config()?.ev_technique;
        let acts = self.activities_under(node)?;
        let mut out = Vec::with_capacity(from.months_through(to) as usize);
        let mut t = from;
        while t <= to {
            let mut totals = Totals::default();
            for a in &acts {
                totals.add(&self.activity_totals(a, t, tech));
            }
            out.push(EvmSnapshot::from_totals(node.clone(), t, totals));
            t = t.succ();
        }
        Ok(out)
    }

    /// Rollups for every product, SDK group and the portfolio at `t`,
    /// ordered portfolio, groups, products. Group and portfolio totals are
    /// built from product totals.
    pub fn all_node_snapshots(&self, t: Period) -> Result<Vec<EvmSnapshot>> {
        self.check_period(t)?;
        let tech = self.config()?.ev_technique;
        let mut by_product: BTreeMap<&ProductId, Totals> =
            self.products.keys().map(|p| (p, Totals::default())).collect();
        for a in self.activities.values() {
            if let Some(tot) = by_product.get_mut(&a.product_id) {
                tot.add(&self.activity_totals(a, t, tech));
            }
        }
        let mut portfolio = Totals::default();
        let mut groups = Vec::new();
        for g in self.groups.values() {
            let mut gt = Totals::default();
            for p in &g.product_ids {
                if let Some(pt) = by_product.get(p) {
                    gt.add(pt);
                }
            }
            portfolio.add(&gt);
            groups.push(EvmSnapshot::from_totals(NodeId::SdkGroup(g.id.clone()), t, gt));
        }
        let mut out = vec![EvmSnapshot::from_totals(NodeId::Portfolio, t, portfolio)];
        out.extend(groups);
        out.extend(
            by_product
                .into_iter()
                .map(|(p, tot)| EvmSnapshot::from_totals(NodeId::Product(p.clone()), t, tot)),
        );
        Ok(out)
    }

    /// Products whose cumulative CPI or SPI stayed below threshold for at
    /// least `consecutive_periods_for_alert` periods ending at `t`.
    pub fn detect_struggling(&self, t: Period, config: &PortfolioConfig) -> Result<Vec<StruggleFlag>> {
        self.check_period(t)?;
        let horizon = self.horizon()?;
        let k = i64::from(config.consecutive_periods_for_alert);
        let tech = config.ev_technique;
        let mut per_product: BTreeMap<&ProductId, Vec<&Activity>> = BTreeMap::new();
        for a in self.activities.values() {
            per_product.entry(&a.product_id).or_default().push(a);
        }
        let mut flags = Vec::new();
        for product in self.products.keys() {
            let acts = per_product.get(product).map(Vec::as_slice).unwrap_or(&[]);
            let (mut cpi_run, mut spi_run) = (0i64, 0i64);
            let (mut cpi_open, mut spi_open) = (true, true);
            let mut cursor = t;
            while (cpi_open || spi_open) && cursor >= horizon.first() {
                let mut totals = Totals::default();
                for a in acts {
                    totals.add(&self.activity_totals(a, cursor, tech));
                }
                let snap = EvmSnapshot::from_totals(NodeId::Product(product.clone()), cursor, totals);
                if cpi_open {
                    if snap.cpi.as_ref().is_some_and(|c| *c < config.cpi_alert_threshold) {
                        cpi_run += 1;
                    } else {
                        cpi_open = false;
                    }
                }
                if spi_open {
                    if snap.spi.as_ref().is_some_and(|s| *s < config.spi_alert_threshold) {
                        spi_run += 1;
                    } else {
                        spi_open = false;
                    }
                }
                cursor = cursor.pred();
            }
            let mut reasons = Vec::new();
            let mut longest = 0;
            if cpi_run >= k {
                reasons.push(IndexKind::Cpi);
                longest = longest.max(cpi_run);
            }
            if spi_run >= k {
                reasons.push(IndexKind::Spi);
                longest = longest.max(spi_run);
            }
            if !reasons.is_empty() {
                flags.push(StruggleFlag {
                    product_id: product.clone(),
                    reasons,
                    first_flagged_period: Period::from_ordinal(t.ordinal() - (longest - k)),
                });
            }
        }
        Ok(flags)
    }
}

/// Header of the status CSV export.
pub const CSV_HEADER: [&str; 10] = ["node_id", "fy", "month", "pv", "ev", "ac", "cpi", "spi", "cv", "sv"];

/// One parsed CSV status row, at the export's printed precision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvRow {
    pub node_id: String,
    pub period: Period,
    pub pv: Ratio,
    pub ev: Ratio,
    pub ac: Ratio,
    pub cpi: Option<Ratio>,
    pub spi: Option<Ratio>,
    pub cv: Ratio,
    pub sv: Ratio,
}

fn opt_index(r: &Option<Ratio>) -> String {
    r.as_ref().map(|v| v.to_decimal(4)).unwrap_or_default()
}

pub fn snapshots_to_csv(rows: &[EvmSnapshot]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    w.write_record(CSV_HEADER).expect("in-memory write");
    for s in rows {
        w.write_record([
            s.node_id.to_string(),
            s.period.fiscal_year.to_string(),
            s.period.month.to_string(),
            s.pv.to_decimal(),
            s.ev.to_decimal(),
            s.ac.to_decimal(),
            opt_index(&s.cpi),
            opt_index(&s.spi),
            s.cv.to_decimal(),
            s.sv.to_decimal(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn parse_status_csv(text: &str) -> Result<Vec<CsvRow>> {
    let bad = |m: String| Error::Validation(format!("status csv: {m}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let num = |s: &str| s.parse::<Ratio>().map_err(|e| bad(e.to_string()));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let fy: i32 = rec[1].parse().map_err(|_| bad(format!("bad fy {:?}", &rec[1])))?;
        let month: u8 = rec[2].parse().map_err(|_| bad(format!("bad month {:?}", &rec[2])))?;
        out.push(CsvRow {
            node_id: rec[0].to_string(),
            period: Period::new(fy, month).ok_or_else(|| bad(format!("bad month {month}")))?,
            pv: num(&rec[3])?,
            ev: num(&rec[4])?,
            ac: num(&rec[5])?,
            cpi: opt(&rec[6])?,
            spi: opt(&rec[7])?,
            cv: num(&rec[8])?,
            sv: num(&rec[9])?,
        });
    }
    Ok(out)
}

pub fn csv_rows_to_csv(rows: &[CsvRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    w.write_record(CSV_HEADER).expect("in-memory write");
    for s in rows {
        w.write_record([
            s.node_id.clone(),
            s.period.fiscal_year.to_string(),
            s.period.month.to_string(),
            s.pv.to_decimal(2),
            s.ev.to_decimal(2),
            s.ac.to_decimal(2),
            opt_index(&s.cpi),
            opt_index(&s.spi),
            s.cv.to_decimal(2),
            s.sv.to_decimal(2),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
