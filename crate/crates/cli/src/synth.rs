//! Seeded synthetic runs for testing metrics without a model.
//!
//! Ground truth is uniform over the fifteen epochs. Each reply is VALID with
//! probability 0.94, HALLUCINATION 0.03, MALFORMED 0.02 and REFUSED 0.01.
//! A VALID reply lands `d` epochs from the truth in a random direction,
//! clamped to the ends of the taxonomy, where `d` is geometric with
//! P(d = n) = 2^-(n+1).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agescope_core::parsing::parse_reply_text;
use agescope_core::taxonomy::EPOCH_COUNT;
use agescope_core::{parse_epoch, AgeEpoch, EpochMatch, Prediction};

pub const P_HALLUCINATION: f64 = 0.03;
pub const P_MALFORMED: f64 = 0.02;
pub const P_REFUSED: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticItem {
    pub id: u64,
    pub truth: AgeEpoch,
    pub prediction: Prediction,
}

/// `count` items with ids `1..=count`; identical for identical seeds.
pub fn synthetic_run(seed: u64, count: usize) -> Vec<SyntheticItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=count as u64)
        .map(|id| {
            let truth = AgeEpoch::from_index(rng.random_range(0..EPOCH_COUNT)).expect("index in range");
            let prediction = synthetic_prediction(&mut rng, id, truth);
            SyntheticItem { id, truth, prediction }
        })
        .collect()
}

fn synthetic_prediction(rng: &mut impl Rng, id: u64, truth: AgeEpoch) -> Prediction {
    let roll: f64 = rng.random();
    if roll < P_REFUSED {
        return Prediction::refused(id, "I'm sorry, I can't help with that.");
    }
    if roll < P_REFUSED + P_MALFORMED {
        return parse_reply_text(id, "The facade suggests a construction date in the late period.");
    }
    let label = if roll < P_REFUSED + P_MALFORMED + P_HALLUCINATION {
        hallucinated_label(rng)
    } else {
        let mut d = 0usize;
        while rng.random_bool(0.5) {
            d += 1;
        }
        let index = if rng.random_bool(0.5) {
            (truth.index() + d).min(EPOCH_COUNT - 1)
        } else {
            truth.index().saturating_sub(d)
        };
        AgeEpoch::from_index(index).expect("clamped index").label().to_string()
    };
    let text = serde_json::json!({ "age": label, "reason": "synthetic reply" }).to_string();
    parse_reply_text(id, &text)
}

fn hallucinated_label(rng: &mut impl Rng) -> String {
    loop {
        let start: u16 = rng.random_range(1650..2020);
        let end = start + rng.random_range(4..40);
        let label = format!("{start}-{end}");
        if matches!(parse_epoch(&label), EpochMatch::Range(_)) {
            return label;
        }
    }
}
