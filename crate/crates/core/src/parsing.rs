//! Turns raw model replies into validated predictions.
//!
//! Replies are free text. The first balanced `{...}` block carrying an
//! `"age"` key is taken as the answer; strict JSON is tried first, then a
//! relaxed pass that drops `#`/`//` line comments and trailing commas.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::gateway::RawReply;
use crate::prompting::{AGE_KEY, REASON_KEY};
use crate::taxonomy::{parse_epoch, AgeEpoch, EpochMatch, ParsedRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    /// A canonical epoch was returned.
    Valid,
    /// A well-formed year range outside the canonical list.
    Hallucination,
    /// No usable answer could be read.
    Malformed,
    /// The backend withheld or filtered the reply.
    Refused,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Valid,
        Outcome::Hallucination,
        Outcome::Malformed,
        Outcome::Refused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Valid => "VALID",
            Outcome::Hallucination => "HALLUCINATION",
            Outcome::Malformed => "MALFORMED",
            Outcome::Refused => "REFUSED",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed reply. Constructed only through the outcome-specific constructors,
/// which keep `age`/`claimed_range` consistent with `outcome`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PredictionRecord")]
pub struct Prediction {
    pub item_id: u64,
    outcome: Outcome,
    age: Option<AgeEpoch>,
    claimed_range: Option<ParsedRange>,
    pub reason: String,
    pub raw_text: String,
}

#[derive(Deserialize)]
struct PredictionRecord {
    item_id: u64,
    outcome: Outcome,
    age: Option<AgeEpoch>,
    claimed_range: Option<ParsedRange>,
    #[serde(default)]
    reason: String,
    raw_text: String,
}

impl TryFrom<PredictionRecord> for Prediction {
    type Error = String;

    fn try_from(r: PredictionRecord) -> Result<Self, Self::Error> {
        let consistent = match r.outcome {
            Outcome::Valid => r.age.is_some() && r.claimed_range.is_none(),
            Outcome::Hallucination => r.age.is_none() && r.claimed_range.is_some(),
            Outcome::Malformed | Outcome::Refused => r.age.is_none() && r.claimed_range.is_none(),
        };
        if !consistent {
            return Err(format!(
                "item {}: outcome {} inconsistent with age/claimed_range fields",
                r.item_id, r.outcome
            ));
        }
        Ok(Prediction {
            item_id: r.item_id,
            outcome: r.outcome,
            age: r.age,
            claimed_range: r.claimed_range,
            reason: r.reason,
            raw_text: r.raw_text,
        })
    }
}

impl Prediction {
    pub fn valid(item_id: u64, epoch: AgeEpoch, reason: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self::new(
            item_id,
            Outcome::Valid,
            Some(epoch),
            None,
            reason.into(),
            raw_text.into(),
        )
    }

    pub fn hallucination(
        item_id: u64,
        range: ParsedRange,
        reason: impl Into<String>,
        raw_text: impl Into<String>,
    ) -> Self {
        Self::new(
            item_id,
            Outcome::Hallucination,
            None,
            Some(range),
            reason.into(),
            raw_text.into(),
        )
    }

    pub fn malformed(item_id: u64, reason: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self::new(item_id, Outcome::Malformed, None, None, reason.into(), raw_text.into())
    }

    pub fn refused(item_id: u64, raw_text: impl Into<String>) -> Self {
        Self::new(item_id, Outcome::Refused, None, None, String::new(), raw_text.into())
    }

    fn new(
        item_id: u64,
        outcome: Outcome,
        age: Option<AgeEpoch>,
        claimed_range: Option<ParsedRange>,
        reason: String,
        raw_text: String,
    ) -> Self {
        Self {
            item_id,
            outcome,
            age,
            claimed_range,
            reason,
            raw_text,
        }
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    /// The canonical epoch, for `Valid` predictions only.
    pub fn epoch(&self) -> Option<AgeEpoch> {
        self.age
    }

    /// The out-of-list range, for `Hallucination` predictions only.
    pub fn claimed_range(&self) -> Option<ParsedRange> {
        self.claimed_range
    }

    /// Mid-year of whatever the model claimed, if it claimed a year span at all.
    pub fn mid_year(&self) -> Option<f64> {
        self.age
            .map(AgeEpoch::mid_year)
            .or_else(|| self.claimed_range.as_ref().map(ParsedRange::mid_year))
    }
}

/// Counts of predictions per outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseSummary {
    pub valid: usize,
    pub hallucination: usize,
    pub malformed: usize,
    pub refused: usize,
}

impl ParseSummary {
    pub fn record(&mut self, outcome: Outcome) {
        *self.slot(outcome) += 1;
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        match outcome {
            Outcome::Valid => self.valid,
            Outcome::Hallucination => self.hallucination,
            Outcome::Malformed => self.malformed,
            Outcome::Refused => self.refused,
        }
    }

    pub fn total(&self) -> usize {
        self.valid + self.hallucination + self.malformed + self.refused
    }

    fn slot(&mut self, outcome: Outcome) -> &mut usize {
        match outcome {
            Outcome::Valid => &mut self.valid,
            Outcome::Hallucination => &mut self.hallucination,
            Outcome::Malformed => &mut self.malformed,
            Outcome::Refused => &mut self.refused,
        }
    }
}

impl<'a> FromIterator<&'a Prediction> for ParseSummary {
    fn from_iter<I: IntoIterator<Item = &'a Prediction>>(iter: I) -> Self {
        let mut summary = ParseSummary::default();
        for p in iter {
            summary.record(p.outcome());
        }
        summary
    }
}

/// Parses one reply. Never fails: problems are encoded in the outcome.
pub fn parse_reply(reply: &RawReply) -> Prediction {
    if reply.refused {
        return Prediction::refused(reply.item_id, reply.text.clone());
    }
    parse_reply_text(reply.item_id, &reply.text)
}

pub fn parse_reply_text(item_id: u64, text: &str) -> Prediction {
    let Some(object) = extract_answer_object(text) else {
        return Prediction::malformed(item_id, "", text);
    };
    let reason = match object.get(REASON_KEY) {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    let Some(Value::String(age)) = object.get(AGE_KEY) else {
        return Prediction::malformed(item_id, reason, text);
    };
    match parse_epoch(age) {
        EpochMatch::Canonical(epoch) => Prediction::valid(item_id, epoch, reason, text),
        EpochMatch::Range(range) => Prediction::hallucination(item_id, range, reason, text),
        EpochMatch::NoMatch => Prediction::malformed(item_id, reason, text),
    }
}

/// Parses a batch, preserving order.
pub fn classify_batch(replies: &[RawReply]) -> (Vec<Prediction>, ParseSummary) {
    let predictions: Vec<Prediction> = replies.iter().map(parse_reply).collect();
    let summary = predictions.iter().collect();
    (predictions, summary)
}

/// Finds the first JSON object in `text` that carries an `"age"` key.
pub fn extract_answer_object(text: &str) -> Option<Map<String, Value>> {
    json_object_candidates(text)
        .filter_map(parse_lenient)
        .find(|object| object.contains_key(AGE_KEY))
}

/// Every balanced `{...}` span, in order of its opening brace.
fn json_object_candidates(text: &str) -> impl Iterator<Item = &str> {
    text.match_indices('{')
        .filter_map(move |(start, _)| balanced_end(&text[start..]).map(|len| &text[start..start + len]))
}

/// Length of the balanced object starting at `s[0] == '{'`, if it closes.
fn balanced_end(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
        } else {
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i + 1);
                    }
                }
                b'#' => i = skip_line(bytes, i),
                b'/' if bytes.get(i + 1) == Some(&b'/') => i = skip_line(bytes, i),
                _ => {}
            }
        }
        i += 1;
    }
    None
}

/// Index of the last byte before the next newline (or end of input).
fn skip_line(bytes: &[u8], from: usize) -> usize {
    bytes[from..]
        .iter()
        .position(|&b| b == b'\n')
        .map_or(bytes.len() - 1, |p| from + p - 1)
}

fn parse_lenient(candidate: &str) -> Option<Map<String, Value>> {
    let value = serde_json::from_str::<Value>(candidate)
        .or_else(|_| serde_json::from_str::<Value>(&relax(candidate)))
        .ok()?;
    match value {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

/// Drops line comments and trailing commas outside string literals.
fn relax(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            out.push(b);
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        match b {
            b'"' => {
                in_string = true;
                out.push(b);
            }
            b'#' => {
                i = skip_line(bytes, i);
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                i = skip_line(bytes, i);
            }
            b',' if next_significant(bytes, i + 1).is_some_and(|c| c == b'}' || c == b']') => {}
            _ => out.push(b),
        }
        i += 1;
    }
    // Only ASCII bytes were removed, so the result is still UTF-8.
    String::from_utf8(out).expect("relaxed JSON stays valid UTF-8")
}

/// Next byte that is neither whitespace nor inside a line comment.
fn next_significant(bytes: &[u8], mut i: usize) -> Option<u8> {
    while i < bytes.len() {
        match bytes[i] {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'#' => i = skip_line(bytes, i) + 1,
            b'/' if bytes.get(i + 1) == Some(&b'/') => i = skip_line(bytes, i) + 1,
            b => return Some(b),
        }
    }
    None
}
