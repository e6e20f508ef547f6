//! Three-tier work-breakdown hierarchy: portfolio, SDK groups, products.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{IntegrationId, PackageId, ProductId, SdkGroupId};
use crate::model::{Ctx, Model};
use crate::money::Ratio;
use crate::period::Horizon;
use crate::planning::{ChangeField, ChangeLevel};

/// Actor roles. The engine models roles, not identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Team,
    AreaLead,
    Sme,
    ProjectDirector,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Team, Role::AreaLead, Role::Sme, Role::ProjectDirector];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Team => "team",
            Role::AreaLead => "area_lead",
            Role::Sme => "sme",
            Role::ProjectDirector => "project_director",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown role {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvTechnique {
    Milestone0100,
    PercentComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub fn contains(&self, n: usize) -> bool {
        n >= self.min as usize && n <= self.max as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortfolioConfig {
    pub cpi_alert_threshold: Ratio,
    pub spi_alert_threshold: Ratio,
    pub consecutive_periods_for_alert: u32,
    pub kpp_portfolio_threshold: Ratio,
    pub activities_per_package_range: CountRange,
    pub ev_technique: EvTechnique,
    /// Require refined packages to allocate exactly the annual budget.
    pub strict_budget: bool,
    /// A product meets its goal only with at least one exascale-class integration.
    pub require_exascale_integration: bool,
    /// Minimum change level per field; cross-product changes are always L2.
    pub change_level_policy: BTreeMap<ChangeField, ChangeLevel>,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            cpi_alert_threshold: Ratio::new(9, 10),
            spi_alert_threshold: Ratio::new(9, 10),
            consecutive_periods_for_alert: 2,
            kpp_portfolio_threshold: Ratio::new(1, 2),
            activities_per_package_range: CountRange { min: 4, max: 6 },
            ev_technique: EvTechnique::Milestone0100,
            strict_budget: false,
            require_exascale_integration: false,
            change_level_policy: ChangeField::default_policy(),
        }
    }
}

impl PortfolioConfig {
    pub fn validate(&self) -> Result<()> {
        let two = Ratio::from_integer(2);
        for (name, t) in [
            ("cpi_alert_threshold", &self.cpi_alert_threshold),
            ("spi_alert_threshold", &self.spi_alert_threshold),
            ("kpp_portfolio_threshold", &self.kpp_portfolio_threshold),
        ] {
            if !t.is_positive() || *t > two {
                return Err(Error::Validation(format!("{name} must lie in (0, 2], got {t}")));
            }
        }
        if self.consecutive_periods_for_alert == 0 {
            return Err(Error::Validation("consecutive_periods_for_alert must be >= 1".into()));
        }
        let r = self.activities_per_package_range;
        if r.min < 1 || r.min > r.max {
            return Err(Error::Validation(format!(
                "activities_per_package_range {}..{} is malformed",
                r.min, r.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    pub id: String,
    pub name: String,
    pub horizon: Horizon,
    pub sdk_groups: Vec<SdkGroupId>,
    pub config: PortfolioConfig,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdkGroup {
    pub id: SdkGroupId,
    pub name: String,
    pub product_ids: Vec<ProductId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: ProductId,
    pub name: String,
    pub team_name: String,
    pub kpp_goal: u32,
    pub sdk_group: SdkGroupId,
    pub planning_packages: BTreeMap<i32, PackageId>,
    pub integrations: Vec<IntegrationId>,
    pub releases: Vec<String>,
}

/// A structural defect found by [`Model::validate_hierarchy`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HierarchyViolation {
    ProductInMultipleGroups { product: ProductId, groups: Vec<SdkGroupId> },
    OrphanProduct { product: ProductId },
    ParentMismatch { product: ProductId, recorded: SdkGroupId, listed_in: SdkGroupId },
    EmptyGroup { group: SdkGroupId },
    GroupNotInPortfolio { group: SdkGroupId },
    UnknownGroupReference { group: SdkGroupId },
    UnknownProductReference { group: SdkGroupId, product: ProductId },
    DuplicateId { id: String },
    DuplicateName { parent: String, name: String },
    InvalidKppGoal { product: ProductId, goal: u32 },
}

impl Model {
    pub fn portfolio(&self) -> Result<&Portfolio> {
        self.portfolio.as_ref().ok_or(Error::NoPortfolio)
    }

    pub fn config(&self) -> Result<&PortfolioConfig> {
        Ok(&self.portfolio()?.config)
    }

    pub fn horizon(&self) -> Result<Horizon> {
        Ok(self.portfolio()?.horizon)
    }

    pub fn group(&self, id: &SdkGroupId) -> Result<&SdkGroup> {
        self.groups.get(id).ok_or_else(|| Error::not_found("sdk group", id))
    }

    pub fn product(&self, id: &ProductId) -> Result<&Product> {
        self.products.get(id).ok_or_else(|| Error::not_found("product", id))
    }

    pub fn product_by_name(&self, name: &str) -> Option<&Product> {
        self.products.values().find(|p| p.name == name)
    }

    /// Products ordered by name, then id.
    pub fn products_by_name(&self) -> Vec<&Product> {
        let mut v: Vec<&Product> = self.products.values().collect();
        v.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.id.cmp(&b.id)));
        v
    }

    pub(crate) fn create_portfolio(
        &mut self,
        ctx: &Ctx,
        name: &str,
        start_fy: i32,
        years: u32,
        config: PortfolioConfig,
    ) -> Result<Portfolio> {
        if self.portfolio.is_some() {
            return Err(Error::Duplicate { what: "portfolio", key: name.to_string() });
        }
        if years < 1 {
            return Err(Error::InvalidHorizon(years));
        }
        if name.trim().is_empty() {
            return Err(Error::Validation("portfolio name must be non-empty".into()));
        }
        config.validate()?;
        let portfolio = Portfolio {
            id: "portfolio".into(),
            name: name.to_string(),
            horizon: Horizon { start_fy, years },
            sdk_groups: Vec::new(),
            config,
            created_at: ctx.at,
        };
        self.portfolio = Some(portfolio.clone());
        self.open_first_lifecycle(ctx, start_fy);
        Ok(portfolio)
    }

    pub(crate) fn set_config(&mut self, config: PortfolioConfig) -> Result<PortfolioConfig> {
        config.validate()?;
        let p = self.portfolio.as_mut().ok_or(Error::NoPortfolio)?;
        p.config = config.clone();
        Ok(config)
    }

    pub(crate) fn add_sdk_group(&mut self, name: &str) -> Result<SdkGroup> {
        self.portfolio()?;
        check_name(name)?;
        if self.groups.values().any(|g| g.name == name) {
            return Err(Error::Duplicate { what: "sdk group name", key: name.to_string() });
        }
        let id = SdkGroupId::from_seq(self.counters.bump("grp"));
        let group = SdkGroup { id: id.clone(), name: name.to_string(), product_ids: Vec::new() };
        self.groups.insert(id.clone(), group.clone());
        if let Some(p) = self.portfolio.as_mut() {
            p.sdk_groups.push(id);
        }
        Ok(group)
    }

    pub(crate) fn add_product(
        &mut self,
        group: &SdkGroupId,
        name: &str,
        kpp_goal: u32,
        team_name: Option<&str>,
    ) -> Result<Product> {
        self.group(group)?;
        check_name(name)?;
        if kpp_goal != 4 && kpp_goal != 8 {
            return Err(Error::InvalidKppGoal(kpp_goal));
        }
        // Product names are unique portfolio-wide so that CAR sections are unambiguous.
        if self.products.values().any(|p| p.name == name) {
            return Err(Error::Duplicate { what: "product name", key: name.to_string() });
        }
        let id = ProductId::from_seq(self.counters.bump("prd"));
        let product = Product {
            id: id.clone(),
            name: name.to_string(),
            team_name: team_name.unwrap_or(name).to_string(),
            kpp_goal,
            sdk_group: group.clone(),
            planning_packages: BTreeMap::new(),
            integrations: Vec::new(),
            releases: Vec::new(),
        };
        self.products.insert(id.clone(), product.clone());
        self.groups.get_mut(group).expect("checked above").product_ids.push(id);
        Ok(product)
    }

    pub(crate) fn rename_product(&mut self, id: &ProductId, name: &str) -> Result<Product> {
        self.product(id)?;
        check_name(name)?;
        if self.products.values().any(|p| p.name == name && &p.id != id) {
            return Err(Error::Duplicate { what: "product name", key: name.to_string() });
        }
        let p = self.products.get_mut(id).expect("checked above");
        p.name = name.to_string();
        Ok(p.clone())
    }

    pub(crate) fn rename_group(&mut self, id: &SdkGroupId, name: &str) -> Result<SdkGroup> {
        self.group(id)?;
        check_name(name)?;
        if self.groups.values().any(|g| g.name == name && &g.id != id) {
            return Err(Error::Duplicate { what: "sdk group name", key: name.to_string() });
        }
        let g = self.groups.get_mut(id).expect("checked above");
        g.name = name.to_string();
        Ok(g.clone())
    }

    /// Moves a product between groups. Only reachable through an applied L2 change.
    pub(crate) fn move_product(&mut self, id: &ProductId, to: &SdkGroupId) {
        let from = self.products[id].sdk_group.clone();
        if let Some(g) = self.groups.get_mut(&from) {
            g.product_ids.retain(|p| p != id);
        }
        if let Some(g) = self.groups.get_mut(to) {
            g.product_ids.push(id.clone());
        }
        if let Some(p) = self.products.get_mut(id) {
            p.sdk_group = to.clone();
        }
    }

    /// Every structural invariant violation; empty means the hierarchy is a tree.
    pub fn validate_hierarchy(&self) -> Vec<HierarchyViolation> {
        let mut out = Vec::new();
        let listed: Vec<SdkGroupId> =
            self.portfolio.as_ref().map(|p| p.sdk_groups.clone()).unwrap_or_default();

        let mut seen_groups = BTreeSet::new();
        for g in &listed {
            if !seen_groups.insert(g.clone()) {
                out.push(HierarchyViolation::DuplicateId { id: g.to_string() });
            }
            if !self.groups.contains_key(g) {
                out.push(HierarchyViolation::UnknownGroupReference { group: g.clone() });
            }
        }
        for (id, g) in &self.groups {
            if &g.id != id {
                out.push(HierarchyViolation::DuplicateId { id: g.id.to_string() });
            }
            if !seen_groups.contains(id) {
                out.push(HierarchyViolation::GroupNotInPortfolio { group: id.clone() });
            }
            if g.product_ids.is_empty() {
                out.push(HierarchyViolation::EmptyGroup { group: id.clone() });
            }
            let mut in_group = BTreeSet::new();
            for p in &g.product_ids {
                if !in_group.insert(p) {
                    out.push(HierarchyViolation::DuplicateId { id: p.to_string() });
                }
                if !self.products.contains_key(p) {
                    out.push(HierarchyViolation::UnknownProductReference {
                        group: id.clone(),
                        product: p.clone(),
                    });
                }
            }
        }
        let mut names: BTreeMap<&str, usize> = BTreeMap::new();
        for g in self.groups.values() {
            *names.entry(g.name.as_str()).or_default() += 1;
        }
        for (name, n) in names {
            if n > 1 {
                out.push(HierarchyViolation::DuplicateName {
                    parent: "portfolio".into(),
                    name: name.to_string(),
                });
            }
        }

        let mut product_names: BTreeMap<&str, usize> = BTreeMap::new();
        for (id, p) in &self.products {
            if &p.id != id {
                out.push(HierarchyViolation::DuplicateId { id: p.id.to_string() });
            }
            *product_names.entry(p.name.as_str()).or_default() += 1;
            if p.kpp_goal != 4 && p.kpp_goal != 8 {
                out.push(HierarchyViolation::InvalidKppGoal { product: id.clone(), goal: p.kpp_goal });
            }
            let containing: Vec<SdkGroupId> = self
                .groups
                .values()
                .filter(|g| g.product_ids.contains(id))
                .map(|g| g.id.clone())
                .collect();
            match containing.len() {
                0 => out.push(HierarchyViolation::OrphanProduct { product: id.clone() }),
                1 => {
                    if containing[0] != p.sdk_group {
                        out.push(HierarchyViolation::ParentMismatch {
                            product: id.clone(),
                            recorded: p.sdk_group.clone(),
                            listed_in: containing[0].clone(),
                        });
                    }
                }
                _ => out.push(HierarchyViolation::ProductInMultipleGroups {
                    product: id.clone(),
                    groups: containing,
                }),
            }
        }
        for (name, n) in product_names {
            if n > 1 {
                out.push(HierarchyViolation::DuplicateName {
                    parent: "portfolio".into(),
                    name: name.to_string(),
                });
            }
        }
        out
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        Err(Error::Validation("name must be non-empty".into()))
    } else {
        Ok(())
    }
}
