//! The aggregate state every command mutates.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Portfolio, Product, Role, SdkGroup};
use crate::evm::Activity;
use crate::ids::{
    ActivityId, BaselineId, ChangeRequestId, IntegrationId, PackageId, ProductId, SdkGroupId,
};
use crate::kpp::Integration;
use crate::lifecycle::{FiscalYearLifecycle, MonthlySnapshot};
use crate::money::Money;
use crate::period::Period;
use crate::planning::{AuditRecord, BaselineSnapshot, ChangeRequest, PlanningPackage};
use crate::stack::StackState;

/// Execution context for one command.
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub actor: Role,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters(BTreeMap<String, u64>);

impl Counters {
    pub(crate) fn bump(&mut self, kind: &str) -> u64 {
        let n = self.0.entry(kind.to_string()).or_insert(0);
        *n += 1;
        *n
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub portfolio: Option<Portfolio>,
    pub groups: BTreeMap<SdkGroupId, SdkGroup>,
    pub products: BTreeMap<ProductId, Product>,
    pub packages: BTreeMap<PackageId, PlanningPackage>,
    pub activities: BTreeMap<ActivityId, Activity>,
    /// Actual-cost records, one per (activity, period).
    pub costs: BTreeMap<ActivityId, BTreeMap<Period, Money>>,
    pub baselines: BTreeMap<BaselineId, BaselineSnapshot>,
    pub change_requests: BTreeMap<ChangeRequestId, ChangeRequest>,
    pub audit: Vec<AuditRecord>,
    pub integrations: BTreeMap<IntegrationId, Integration>,
    pub lifecycles: BTreeMap<i32, FiscalYearLifecycle>,
    pub snapshots: BTreeMap<Period, MonthlySnapshot>,
    pub stack: StackState,
    pub counters: Counters,
    /// Sequence number of the last applied command.
    pub last_seq: u64,
    pub last_updated: Option<DateTime<Utc>>,
}

impl Model {
    pub fn new() -> Self {
        Model::default()
    }

    /// Canonical JSON encoding; identical models encode to identical bytes.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.canonical_json())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
