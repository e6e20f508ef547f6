//! Typed identifiers. Ids are assigned from per-kind counters and never change.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($($(#[$doc:meta])* $name:ident => $prefix:literal;)*) => {$(
        $(#[$doc])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn from_seq(n: u64) -> Self {
                $name(format!("{}-{}", $prefix, n))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    )*};
}

id_type! {
    SdkGroupId => "grp";
    ProductId => "prd";
    PackageId => "pkg";
    ActivityId => "act";
    ChangeRequestId => "cr";
    BaselineId => "bl";
    IntegrationId => "int";
    EvidenceId => "evd";
}

/// Node selector for EVM rollups.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum NodeId {
    Portfolio,
    SdkGroup(SdkGroupId),
    Product(ProductId),
    Activity(ActivityId),
}

impl NodeId {
    /// Parses `portfolio` or any prefixed id.
    pub fn parse(s: &str) -> Option<NodeId> {
        let s = s.trim();
        if s == "portfolio" {
            return Some(NodeId::Portfolio);
        }
        let (prefix, rest) = s.split_once('-')?;
        if rest.is_empty() {
            return None;
        }
        match prefix {
            "grp" => Some(NodeId::SdkGroup(s.into())),
            "prd" => Some(NodeId::Product(s.into())),
            "act" => Some(NodeId::Activity(s.into())),
            _ => None,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Portfolio => f.write_str("portfolio"),
            NodeId::SdkGroup(id) => id.fmt(f),
            NodeId::Product(id) => id.fmt(f),
            NodeId::Activity(id) => id.fmt(f),
        }
    }
}
