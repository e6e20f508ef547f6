//! Curated software-stack manifests: releases, community-policy checklists,
//! version pins and pairwise compatibility checking.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{Ctx, Model};

/// `major.minor.patch` with an optional pre-release tag. Tagged versions
/// sort before the untagged release of the same triple.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
    pub tag: Option<String>,
}

impl Version {
    pub fn new(major: u64, minor: u64, patch: u64) -> Self {
        Version { major, minor, patch, tag: None }
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.major, self.minor, self.patch)
            .cmp(&(other.major, other.minor, other.patch))
            .then_with(|| match (&self.tag, &other.tag) {
                (None, None) => Ordering::Equal,
                (None, Some(_)) => Ordering::Greater,
                (Some(_), None) => Ordering::Less,
                (Some(a), Some(b)) => a.cmp(b),
            })
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)?;
        if let Some(t) = &self.tag {
            write!(f, "-{t}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Version {
    type Err = Error;
    /// Accepts `1`, `1.2`, `1.2.3` and `1.2.3-tag`; missing parts are zero.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed version {s:?}"));
        let s = s.trim();
        let (core, tag) = match s.split_once('-') {
            Some((c, t)) if !t.is_empty() && t.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'.') => {
                (c, Some(t.to_string()))
            }
            Some(_) => return Err(bad()),
            None => (s, None),
        };
        let parts: Vec<&str> = core.split('.').collect();
        if parts.is_empty() || parts.len() > 3 {
            return Err(bad());
        }
        let mut nums = [0u64; 3];
        for (i, p) in parts.iter().enumerate() {
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            nums[i] = p.parse().map_err(|_| bad())?;
        }
        Ok(Version { major: nums[0], minor: nums[1], patch: nums[2], tag })
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open range `[min, max)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VersionRange {
    pub min: Version,
    pub max: Version,
}

impl VersionRange {
    pub fn new(min: Version, max: Version) -> Result<Self> {
        if min > max {
            return Err(Error::Validation(format!("malformed range: min {min} > max {max}")));
        }
        Ok(VersionRange { min, max })
    }

    pub fn contains(&self, v: &Version) -> bool {
        *v >= self.min && *v < self.max
    }
}

impl fmt::Display for VersionRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.min, self.max)
    }
}

impl fmt::Debug for VersionRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for VersionRange {
    type Err = Error;
    /// Parses `[min,max)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("malformed range {s:?}; expected [min,max)"));
        let inner = s.trim().strip_prefix('[').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        VersionRange::new(a.parse()?, b.parse()?)
    }
}

impl Serialize for VersionRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VersionRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub product: String,
    pub range: VersionRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Release {
    pub product_id: String,
    pub version: Version,
    pub released_at: DateTime<Utc>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyStatus {
    Met,
    Unmet,
    Waived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyItem {
    pub status: PolicyStatus,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyChecklist {
    pub product_id: String,
    pub items: BTreeMap<String, PolicyItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InclusionRule {
    AllPoliciesMet,
    AllowWaivers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub compliant: bool,
    pub unmet: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackManifest {
    pub name: String,
    pub stack_version: String,
    pub pins: BTreeMap<String, Version>,
    pub inclusion_rule: InclusionRule,
    /// Build, cache and container descriptors. Recorded, never executed.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conflict {
    pub from: String,
    pub from_version: Version,
    pub to: String,
    pub pinned_version: Version,
    pub allowed_range: VersionRange,
}

impl PartialOrd for VersionRange {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VersionRange {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.min, &self.max).cmp(&(&other.min, &other.max))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackState {
    /// Policy id to description.
    pub policies: BTreeMap<String, String>,
    pub releases: BTreeMap<String, BTreeMap<Version, Release>>,
    pub checklists: BTreeMap<String, PolicyChecklist>,
    pub manifests: BTreeMap<String, StackManifest>,
}

impl Default for StackState {
    fn default() -> Self {
        StackState {
            policies: default_policies(),
            releases: BTreeMap::new(),
            checklists: BTreeMap::new(),
            manifests: BTreeMap::new(),
        }
    }
}

/// Seed policy set covering the usual community themes.
pub fn default_policies() -> BTreeMap<String, String> {
    [
        ("build-from-source", "Product builds from source with the stack's package manager"),
        ("test-suite", "Product provides an automated test suite runnable after installation"),
        ("documentation", "Product ships user documentation and a support contact"),
        ("open-license", "Product is distributed under an approved open-source license"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Evaluates a checklist against a policy set.
pub fn evaluate_checklist(
    checklist: &PolicyChecklist,
    policies: &BTreeMap<String, String>,
    rule: InclusionRule,
) -> Result<PolicyResult> {
    let missing: Vec<&String> = policies.keys().filter(|p| !checklist.items.contains_key(*p)).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "checklist for {} missing items: {}",
            checklist.product_id,
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    let unmet: Vec<String> = policies
        .keys()
        .filter(|p| match checklist.items[*p].status {
            PolicyStatus::Met => false,
            PolicyStatus::Waived => rule == InclusionRule::AllPoliciesMet,
            PolicyStatus::Unmet => true,
        })
        .cloned()
        .collect();
    Ok(PolicyResult { compliant: unmet.is_empty(), unmet })
}

/// Every pinned release's constraints against every other pin.
pub fn check_compatibility(
    manifest: &StackManifest,
    releases: &BTreeMap<String, BTreeMap<Version, Release>>,
) -> Vec<Conflict> {
    let mut out = Vec::new();
    for (product, version) in &manifest.pins {
        let Some(release) = releases.get(product).and_then(|r| r.get(version)) else {
            continue;
        };
        for c in &release.constraints {
            if let Some(pinned) = manifest.pins.get(&c.product) {
                if !c.range.contains(pinned) {
                    out.push(Conflict {
                        from: product.clone(),
                        from_version: version.clone(),
                        to: c.product.clone(),
                        pinned_version: pinned.clone(),
                        allowed_range: c.range.clone(),
                    });
                }
            }
        }
    }
    out.sort();
    out
}

pub const MANIFEST_FORMAT: &str = "stack-manifest/1";

/// Canonical text: pretty JSON with every object's keys sorted and a
/// format/tool-version header.
pub fn manifest_to_text(m: &StackManifest) -> String {
    let mut v = serde_json::to_value(m).expect("manifest serializes");
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("format".into(), MANIFEST_FORMAT.into());
        map.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    }
    // serde_json's default map is ordered, so keys come out sorted.
    serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
}

pub fn manifest_from_text(text: &str) -> Result<StackManifest> {
    let bad = |m: String| Error::Validation(format!("manifest: {m}"));
    let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let map = v.as_object_mut().ok_or_else(|| bad("not an object".into()))?;
    match map.remove("format") {
        Some(serde_json::Value::String(f)) if f == MANIFEST_FORMAT => {}
        other => return Err(bad(format!("unsupported format {other:?}"))),
    }
    map.remove("tool_version");
    serde_json::from_value(v).map_err(|e| bad(e.to_string()))
}

impl Model {
    pub(crate) fn define_policy(&mut self, id: &str, description: &str) -> Result<()> {
        if id.trim().is_empty() {
            return Err(Error::Validation("policy id must be non-empty".into()));
        }
        self.stack.policies.insert(id.to_string(), description.to_string());
        Ok(())
    }

    pub(crate) fn register_release(
        &mut self,
        ctx: &Ctx,
        product: &str,
        version: Version,
        constraints: Vec<Constraint>,
    ) -> Result<Release> {
        if product.trim().is_empty() {
            return Err(Error::Validation("product must be non-empty".into()));
        }
        if self.stack.releases.get(product).is_some_and(|r| r.contains_key(&version)) {
            return Err(Error::Duplicate { what: "release", key: format!("{product}@{version}") });
        }
        for c in &constraints {
            if c.range.min > c.range.max {
                return Err(Error::Validation(format!("malformed range {}", c.range)));
            }
            if c.product == product {
                return Err(Error::Validation("a release cannot constrain its own product".into()));
            }
        }
        let release = Release { product_id: product.to_string(), version: version.clone(), released_at: ctx.at, constraints };
        self.stack.releases.entry(product.to_string()).or_default().insert(version.clone(), release.clone());
        if let Some(p) = self.products.values_mut().find(|p| p.name == product) {
            p.releases.push(version.to_string());
        }
        Ok(release)
    }

    pub(crate) fn record_checklist(&mut self, product: &str, items: BTreeMap<String, PolicyItem>) -> Result<PolicyChecklist> {
        let unknown: Vec<&String> = items.keys().filter(|k| !self.stack.policies.contains_key(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Validation(format!(
                "unknown policies: {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        let checklist = PolicyChecklist { product_id: product.to_string(), items };
        evaluate_checklist(&checklist, &self.stack.policies, InclusionRule::AllPoliciesMet)?;
        self.stack.checklists.insert(product.to_string(), checklist.clone());
        Ok(checklist)
    }

    pub fn check_policies(&self, product: &str, rule: InclusionRule) -> Result<PolicyResult> {
        let checklist = self
            .stack
            .checklists
            .get(product)
            .ok_or_else(|| Error::not_found("policy checklist", product))?;
        evaluate_checklist(checklist, &self.stack.policies, rule)
    }

    pub(crate) fn compose_manifest(
        &mut self,
        name: &str,
        stack_version: &str,
        pins: BTreeMap<String, Version>,
        inclusion_rule: InclusionRule,
        metadata: BTreeMap<String, String>,
    ) -> Result<StackManifest> {
        if stack_version.trim().is_empty() || name.trim().is_empty() {
            return Err(Error::Validation("manifest name and stack_version must be non-empty".into()));
        }
        if self.stack.manifests.contains_key(stack_version) {
            return Err(Error::Duplicate { what: "manifest stack_version", key: stack_version.to_string() });
        }
        for (product, version) in &pins {
            if !self.stack.releases.get(product).is_some_and(|r| r.contains_key(version)) {
                return Err(Error::not_found("release", format!("{product}@{version}")));
            }
        }
        for product in pins.keys() {
            let result = match self.check_policies(product, inclusion_rule) {
                Ok(r) => r,
                Err(Error::NotFound { .. }) => PolicyResult {
                    compliant: false,
                    unmet: self.stack.policies.keys().cloned().collect(),
                },
                Err(e) => return Err(e),
            };
            if !result.compliant {
                return Err(Error::NonCompliant { product: product.clone(), unmet: result.unmet.join(", ") });
            }
        }
        let manifest = StackManifest {
            name: name.to_string(),
            stack_version: stack_version.to_string(),
            pins,
            inclusion_rule,
            metadata,
        };
        self.stack.manifests.insert(stack_version.to_string(), manifest.clone());
        Ok(manifest)
    }

    pub fn manifest(&self, stack_version: &str) -> Result<&StackManifest> {
        self.stack.manifests.get(stack_version).ok_or_else(|| Error::not_found("manifest", stack_version))
    }

    pub fn check_compatibility(&self, stack_version: &str) -> Result<Vec<Conflict>> {
        Ok(check_compatibility(self.manifest(stack_version)?, &self.stack.releases))
    }
}
