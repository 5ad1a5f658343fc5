//! Reference assets shipped with the crate: the golden London prompt, three
//! published model replies (correct, incorrect, out-of-list), and a 131-pair
//! aggregate run.

use serde::Deserialize;
use serde_json::Value;

use crate::parsing::{parse_reply_text, Prediction};
use crate::taxonomy::AgeEpoch;

pub const PROMPT_LONDON: &str = include_str!("../fixtures/prompt_london.txt");
pub const REPLY_CORRECT: &str = include_str!("../fixtures/reply_correct.txt");
pub const REPLY_INCORRECT: &str = include_str!("../fixtures/reply_incorrect.txt");
pub const REPLY_HALLUCINATION: &str = include_str!("../fixtures/reply_hallucination.txt");
pub const AGGREGATE_RUN: &str = include_str!("../fixtures/aggregate_run.json");

#[derive(Debug, Clone, PartialEq)]
pub enum FixturePayload {
    Text(&'static str),
    Record(Value),
}

impl FixturePayload {
    pub fn as_text(&self) -> Option<&'static str> {
        match self {
            FixturePayload::Text(t) => Some(t),
            FixturePayload::Record(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFixture {
    pub name: &'static str,
    pub payload: FixturePayload,
    /// Where the asset comes from and what it shows.
    pub provenance: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no fixture named {0:?}")]
pub struct UnknownFixture(pub String);

struct Entry {
    name: &'static str,
    text: &'static str,
    structured: bool,
    provenance: &'static str,
}

const REGISTRY: &[Entry] = &[
    Entry {
        name: "prompt_london",
        text: PROMPT_LONDON,
        structured: false,
        provenance: "published instruction prompt, transcribed with the location set to London",
    },
    Entry {
        name: "reply_correct",
        text: REPLY_CORRECT,
        structured: false,
        provenance: "published reply sample, correct case: ID 55, predicted 1940-1959, ground truth 1940-1959",
    },
    Entry {
        name: "reply_incorrect",
        text: REPLY_INCORRECT,
        structured: false,
        provenance: "published reply sample, incorrect case: ID 26, predicted <1700, ground truth 1840-1859",
    },
    Entry {
        name: "reply_hallucination",
        text: REPLY_HALLUCINATION,
        structured: false,
        provenance: "published reply sample, out-of-list case: ID 39, claimed 1973-1997, ground truth 1960-1979",
    },
    Entry {
        name: "aggregate_run",
        text: AGGREGATE_RUN,
        structured: true,
        provenance: "constructed 131-pair run: 52 exact matches, one out-of-list reply; ten epoch rows \
                     reproduce the published precision and recall",
    },
];

pub fn fixture_names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|e| e.name)
}

pub fn load_fixture(name: &str) -> Result<ReferenceFixture, UnknownFixture> {
    let entry = REGISTRY
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| UnknownFixture(name.to_string()))?;
    let payload = if entry.structured {
        FixturePayload::Record(serde_json::from_str(entry.text).expect("bundled fixture is valid JSON"))
    } else {
        FixturePayload::Text(entry.text)
    };
    Ok(ReferenceFixture {
        name: entry.name,
        payload,
        provenance: entry.provenance,
    })
}

/// One line of the aggregate run: an item, its truth, and the raw reply.
#[derive(Debug, Clone, Deserialize)]
pub struct AggregateRecord {
    pub id: u64,
    pub truth: AgeEpoch,
    pub reply: String,
}

impl AggregateRecord {
    pub fn parse(&self) -> Prediction {
        parse_reply_text(self.id, &self.reply)
    }
}

pub fn aggregate_records() -> Vec<AggregateRecord> {
    serde_json::from_str(AGGREGATE_RUN).expect("bundled aggregate fixture is well formed")
}
