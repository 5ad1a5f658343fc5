//! The fixed fifteen-epoch building chronology.
//!
//! Epochs are ordered oldest first. Closed epochs labelled `A-B` are treated
//! as the half-open year interval `[A, B + 1)`, which gives whole-year
//! mid-years spaced by exact decades. The two open-ended epochs have their
//! mid-years pinned to 1700 and 2020.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of epochs in the chronology.
pub const EPOCH_COUNT: usize = 15;

/// Mid-year used for the open-past epoch `<1700`.
pub const OPEN_PAST_MID_YEAR: f64 = 1700.0;
/// Mid-year used for the open-future epoch `>2020`.
pub const OPEN_FUTURE_MID_YEAR: f64 = 2020.0;

/// One end of an epoch's year span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum YearBound {
    OpenPast,
    Year(u16),
    OpenFuture,
}

struct EpochDef {
    label: &'static str,
    start: YearBound,
    end: YearBound,
}

const fn closed(label: &'static str, start: u16, end: u16) -> EpochDef {
    EpochDef {
        label,
        start: YearBound::Year(start),
        end: YearBound::Year(end),
    }
}

static EPOCHS: [EpochDef; EPOCH_COUNT] = [
    EpochDef {
        label: "<1700",
        start: YearBound::OpenPast,
        end: YearBound::Year(1699),
    },
    closed("1700-1749", 1700, 1749),
    closed("1750-1799", 1750, 1799),
    closed("1800-1819", 1800, 1819),
    closed("1820-1839", 1820, 1839),
    closed("1840-1859", 1840, 1859),
    closed("1860-1879", 1860, 1879),
    closed("1880-1899", 1880, 1899),
    closed("1900-1919", 1900, 1919),
    closed("1920-1939", 1920, 1939),
    closed("1940-1959", 1940, 1959),
    closed("1960-1979", 1960, 1979),
    closed("1980-1999", 1980, 1999),
    closed("2000-2019", 2000, 2019),
    EpochDef {
        label: ">2020",
        start: YearBound::Year(2020),
        end: YearBound::OpenFuture,
    },
];

/// A canonical construction-age epoch.
///
/// Ordering follows chronology, so `AgeEpoch::ALL` is sorted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeEpoch(u8);

impl AgeEpoch {
    pub const ALL: [AgeEpoch; EPOCH_COUNT] = {
        let mut all = [AgeEpoch(0); EPOCH_COUNT];
        let mut i = 0;
        while i < EPOCH_COUNT {
            all[i] = AgeEpoch(i as u8);
            i += 1;
        }
        all
    };

    pub const OLDEST: AgeEpoch = AgeEpoch(0);
    pub const NEWEST: AgeEpoch = AgeEpoch(EPOCH_COUNT as u8 - 1);

    /// Returns the epoch at chronological position `index`, if any.
    pub fn from_index(index: usize) -> Option<Self> {
        (index < EPOCH_COUNT).then_some(AgeEpoch(index as u8))
    }

    /// Looks up an exact canonical label. No trimming is applied.
    pub fn from_label(label: &str) -> Option<Self> {
        EPOCHS
            .iter()
            .position(|def| def.label == label)
            .map(|i| AgeEpoch(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> &'static str {
        self.def().label
    }

    pub fn start_year(self) -> YearBound {
        self.def().start
    }

    pub fn end_year(self) -> YearBound {
        self.def().end
    }

    /// Whether either end of the epoch is open.
    pub fn is_open_ended(self) -> bool {
        self.0 == 0 || self.0 as usize == EPOCH_COUNT - 1
    }

    /// Representative year used for decade error.
    pub fn mid_year(self) -> f64 {
        match (self.start_year(), self.end_year()) {
            (YearBound::OpenPast, _) => OPEN_PAST_MID_YEAR,
            (_, YearBound::OpenFuture) => OPEN_FUTURE_MID_YEAR,
            (YearBound::Year(start), YearBound::Year(end)) => half_open_mid(start, end),
            _ => unreachable!("epoch table only has closed or singly-open epochs"),
        }
    }

    /// Step and decade distance between two epochs.
    pub fn distance(self, other: AgeEpoch) -> EpochDistance {
        EpochDistance {
            index_delta: self.index().abs_diff(other.index()),
            decade_delta: (self.mid_year() - other.mid_year()).abs() / 10.0,
        }
    }

    fn def(self) -> &'static EpochDef {
        &EPOCHS[self.0 as usize]
    }
}

fn half_open_mid(start: u16, end: u16) -> f64 {
    (f64::from(start) + f64::from(end) + 1.0) / 2.0
}

impl fmt::Display for AgeEpoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not a canonical age epoch")]
pub struct UnknownEpoch(pub String);

impl FromStr for AgeEpoch {
    type Err = UnknownEpoch;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgeEpoch::from_label(s.trim()).ok_or_else(|| UnknownEpoch(s.to_string()))
    }
}

impl Serialize for AgeEpoch {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for AgeEpoch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = String::deserialize(deserializer)?;
        label.parse().map_err(serde::de::Error::custom)
    }
}

/// All fifteen epochs, oldest first.
pub fn canonical_epochs() -> &'static [AgeEpoch; EPOCH_COUNT] {
    &AgeEpoch::ALL
}

/// A well-formed `YEAR-YEAR` span that is not one of the canonical epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParsedRange {
    pub start: u16,
    pub end: u16,
}

impl ParsedRange {
    pub fn mid_year(&self) -> f64 {
        half_open_mid(self.start, self.end)
    }
}

impl fmt::Display for ParsedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// Result of reading an epoch label out of free text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochMatch {
    Canonical(AgeEpoch),
    Range(ParsedRange),
    NoMatch,
}

impl EpochMatch {
    pub fn mid_year(&self) -> Option<f64> {
        match self {
            EpochMatch::Canonical(epoch) => Some(epoch.mid_year()),
            EpochMatch::Range(range) => Some(range.mid_year()),
            EpochMatch::NoMatch => None,
        }
    }
}

/// Classifies a label as canonical, a non-canonical year range, or neither.
///
/// Only surrounding whitespace is forgiven; matching is otherwise exact.
pub fn parse_epoch(label: &str) -> EpochMatch {
    let label = label.trim();
    if let Some(epoch) = AgeEpoch::from_label(label) {
        return EpochMatch::Canonical(epoch);
    }
    match parse_year_range(label) {
        Some(range) => EpochMatch::Range(range),
        None => EpochMatch::NoMatch,
    }
}

fn parse_year_range(s: &str) -> Option<ParsedRange> {
    let (start, end) = s.split_once('-')?;
    let start = parse_year(start)?;
    let end = parse_year(end)?;
    (start <= end).then_some(ParsedRange { start, end })
}

fn parse_year(s: &str) -> Option<u16> {
    if s.is_empty() || s.len() > 4 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Distance between two canonical epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochDistance {
    /// Number of chronological steps between the epochs.
    pub index_delta: usize,
    /// Absolute mid-year difference in decades.
    pub decade_delta: f64,
}

pub fn epoch_distance(a: AgeEpoch, b: AgeEpoch) -> EpochDistance {
    a.distance(b)
}
