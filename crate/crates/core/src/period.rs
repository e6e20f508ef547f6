//! Monthly project calendar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A fiscal month. Ordering is chronological.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    pub fiscal_year: i32,
    pub month: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed period {0:?}; expected YYYY-MM with month 1..12")]
pub struct ParsePeriodError(pub String);

impl Period {
    pub fn new(fiscal_year: i32, month: u8) -> Option<Self> {
        (1..=12).contains(&month).then_some(Period { fiscal_year, month })
    }

    /// Months since fiscal year 0, month 1.
    pub fn ordinal(self) -> i64 {
        i64::from(self.fiscal_year) * 12 + i64::from(self.month) - 1
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Period {
            fiscal_year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn succ(self) -> Self {
        Period::from_ordinal(self.ordinal() + 1)
    }

    pub fn pred(self) -> Self {
        Period::from_ordinal(self.ordinal() - 1)
    }

    /// Inclusive count of months from `self` to `end`; zero when `end < self`.
    pub fn months_through(self, end: Period) -> i64 {
        (end.ordinal() - self.ordinal() + 1).max(0)
    }

    pub fn first_of_year(fiscal_year: i32) -> Self {
        Period { fiscal_year, month: 1 }
    }

    pub fn last_of_year(fiscal_year: i32) -> Self {
        Period { fiscal_year, month: 12 }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.fiscal_year, self.month)
    }
}

impl fmt::Debug for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Period {
    type Err = ParsePeriodError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePeriodError(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(err)?;
        let fy: i32 = y.parse().map_err(|_| err())?;
        let month: u8 = m.parse().map_err(|_| err())?;
        Period::new(fy, month).ok_or_else(err)
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// The project's calendar window: `years × 12` periods indexed `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub start_fy: i32,
    pub years: u32,
}

impl Horizon {
    pub fn len(&self) -> u32 {
        self.years * 12
    }

    pub fn is_empty(&self) -> bool {
        self.years == 0
    }

    pub fn first(&self) -> Period {
        Period::first_of_year(self.start_fy)
    }

    pub fn last(&self) -> Period {
        Period::last_of_year(self.end_fy())
    }

    pub fn end_fy(&self) -> i32 {
        self.start_fy + self.years as i32 - 1
    }

    pub fn contains(&self, p: Period) -> bool {
        p >= self.first() && p <= self.last()
    }

    pub fn contains_fy(&self, fy: i32) -> bool {
        fy >= self.start_fy && fy <= self.end_fy()
    }

    /// 1-based index of `p`, or `None` outside the horizon.
    pub fn index_of(&self, p: Period) -> Option<u32> {
        self.contains(p)
            .then(|| (p.ordinal() - self.first().ordinal() + 1) as u32)
    }

    pub fn period_from_index(&self, index: u32) -> Option<Period> {
        (1..=self.len())
            .contains(&index)
            .then(|| Period::from_ordinal(self.first().ordinal() + i64::from(index) - 1))
    }

    pub fn periods(&self) -> impl Iterator<Item = Period> + '_ {
        (1..=self.len()).filter_map(|i| self.period_from_index(i))
    }

    pub fn fiscal_years(&self) -> impl Iterator<Item = i32> {
        self.start_fy..=self.end_fy()
    }

    /// 1-based position of `fy` within the horizon.
    pub fn year_number(&self, fy: i32) -> Option<u32> {
        self.contains_fy(fy).then(|| (fy - self.start_fy + 1) as u32)
    }
}
