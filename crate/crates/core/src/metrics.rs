//! Evaluation of predictions against ground truth.
//!
//! Scoring policy:
//! - accuracy, precision and recall count only `Valid` predictions that hit
//!   the true epoch as correct; every other outcome is a wrong prediction and
//!   stays in the denominator;
//! - decade MAE scores `Valid` and `Hallucination` pairs (the latter via the
//!   claimed range's mid-year) and reports `Malformed`/`Refused` as excluded;
//! - confusion matrices place `Valid` predictions only; the rest are counted
//!   in `excluded`.
//!
//! Values are full precision. Rounding for display is [`round_half_away`].

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::corpus::CorpusItem;
use crate::parsing::{Outcome, ParseSummary, Prediction};
use crate::taxonomy::{AgeEpoch, EPOCH_COUNT};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("evaluation run has no pairs")]
    EmptyRun,
    #[error("no pair has a scoreable prediction for MAE")]
    NoScoreablePairs,
    #[error("tolerance must be 0, 1 or 2, got {0}")]
    InvalidTolerance(u8),
    #[error("prediction and manifest ids differ (missing predictions: {missing:?}, unknown ids: {extra:?})")]
    IdMismatch { missing: Vec<u64>, extra: Vec<u64> },
    #[error("item {0} has more than one prediction")]
    DuplicatePrediction(u64),
}

/// Which outcomes enter which metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoringPolicy {
    /// Outcomes that may count as correct when the epoch matches.
    pub correct_outcomes: Vec<Outcome>,
    /// Outcomes counted in the accuracy denominator.
    pub accuracy_denominator: Vec<Outcome>,
    pub mae_outcomes: Vec<Outcome>,
    pub matrix_outcomes: Vec<Outcome>,
}

impl Default for ScoringPolicy {
    fn default() -> Self {
        Self {
            correct_outcomes: vec![Outcome::Valid],
            accuracy_denominator: Outcome::ALL.to_vec(),
            mae_outcomes: vec![Outcome::Valid, Outcome::Hallucination],
            matrix_outcomes: vec![Outcome::Valid],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub prediction: Prediction,
    pub truth: AgeEpoch,
}

impl ScoredPair {
    pub fn new(prediction: Prediction, truth: AgeEpoch) -> Self {
        Self { prediction, truth }
    }

    pub fn item_id(&self) -> u64 {
        self.prediction.item_id
    }

    pub fn is_exact(&self) -> bool {
        self.prediction.epoch() == Some(self.truth)
    }

    /// Absolute mid-year gap in decades, when the prediction names a span.
    pub fn decade_error(&self) -> Option<f64> {
        self.prediction
            .mid_year()
            .map(|mid| (mid - self.truth.mid_year()).abs() / 10.0)
    }
}

/// Paired predictions and truths over one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRun {
    pairs: Vec<ScoredPair>,
    policy: ScoringPolicy,
}

impl EvaluationRun {
    pub fn new(pairs: Vec<ScoredPair>) -> Self {
        Self {
            pairs,
            policy: ScoringPolicy::default(),
        }
    }

    /// Joins predictions to corpus ground truth by item id, in corpus order.
    /// Every corpus item must have exactly one prediction and vice versa.
    pub fn from_predictions(predictions: Vec<Prediction>, corpus: &[CorpusItem]) -> Result<Self, MetricsError> {
        let mut by_id: HashMap<u64, Prediction> = HashMap::with_capacity(predictions.len());
        for p in predictions {
            let id = p.item_id;
            if by_id.insert(id, p).is_some() {
                return Err(MetricsError::DuplicatePrediction(id));
            }
        }
        let corpus_ids: BTreeSet<u64> = corpus.iter().map(|item| item.id).collect();
        let missing: Vec<u64> = corpus_ids
            .iter()
            .copied()
            .filter(|id| !by_id.contains_key(id))
            .collect();
        let mut extra: Vec<u64> = by_id.keys().copied().filter(|id| !corpus_ids.contains(id)).collect();
        extra.sort_unstable();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(MetricsError::IdMismatch { missing, extra });
        }
        let pairs = corpus
            .iter()
            .map(|item| {
                let prediction = by_id.remove(&item.id).expect("ids checked above");
                ScoredPair::new(prediction, item.ground_truth)
            })
            .collect();
        Ok(Self::new(pairs))
    }

    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn policy(&self) -> &ScoringPolicy {
        &self.policy
    }

    pub fn summary(&self) -> ParseSummary {
        self.pairs.iter().map(|p| &p.prediction).collect()
    }

    fn non_empty(&self) -> Result<&[ScoredPair], MetricsError> {
        if self.pairs.is_empty() {
            Err(MetricsError::EmptyRun)
        } else {
            Ok(&self.pairs)
        }
    }
}

/// How many epoch steps away from the truth still count as a hit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Tolerance(u8);

impl Tolerance {
    pub const EXACT: Tolerance = Tolerance(0);
    pub const ONE: Tolerance = Tolerance(1);
    pub const TWO: Tolerance = Tolerance(2);
    pub const ALL: [Tolerance; 3] = [Self::EXACT, Self::ONE, Self::TWO];

    pub fn new(k: u8) -> Result<Self, MetricsError> {
        if k <= 2 {
            Ok(Tolerance(k))
        } else {
            Err(MetricsError::InvalidTolerance(k))
        }
    }

    pub fn steps(self) -> usize {
        self.0 as usize
    }
}

/// A 15×15 count grid; rows are true epochs, columns predicted epochs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; EPOCH_COUNT]; EPOCH_COUNT],
    tolerance: Tolerance,
    excluded: u64,
}

impl ConfusionMatrix {
    fn standard(pairs: &[ScoredPair]) -> Self {
        let mut counts = [[0u64; EPOCH_COUNT]; EPOCH_COUNT];
        let mut excluded = 0;
        for pair in pairs {
            match pair.prediction.epoch() {
                Some(predicted) => counts[pair.truth.index()][predicted.index()] += 1,
                None => excluded += 1,
            }
        }
        Self {
            counts,
            tolerance: Tolerance::EXACT,
            excluded,
        }
    }

    /// Moves every count within `k` steps of the diagonal onto the diagonal
    /// of its row. Folding an already folded matrix uses the larger tolerance.
    pub fn folded(&self, k: Tolerance) -> Self {
        let mut counts = self.counts;
        let reach = k.steps();
        for (row, cells) in counts.iter_mut().enumerate() {
            let lo = row.saturating_sub(reach);
            let hi = (row + reach).min(EPOCH_COUNT - 1);
            let mut moved = 0;
            for (col, cell) in cells.iter_mut().enumerate().take(hi + 1).skip(lo) {
                if col != row {
                    moved += std::mem::take(cell);
                }
            }
            cells[row] += moved;
        }
        Self {
            counts,
            tolerance: self.tolerance.max(k),
            excluded: self.excluded,
        }
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tolerance
    }

    pub fn count(&self, truth: AgeEpoch, predicted: AgeEpoch) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn row(&self, truth: AgeEpoch) -> &[u64; EPOCH_COUNT] {
        &self.counts[truth.index()]
    }

    pub fn rows(&self) -> &[[u64; EPOCH_COUNT]; EPOCH_COUNT] {
        &self.counts
    }

    pub fn row_sum(&self, truth: AgeEpoch) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn column_sum(&self, predicted: AgeEpoch) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..EPOCH_COUNT).map(|i| self.counts[i][i]).sum()
    }

    /// Pairs placed in the grid.
    pub fn placed(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Pairs whose prediction had no canonical epoch.
    pub fn excluded(&self) -> u64 {
        self.excluded
    }

    pub fn total(&self) -> u64 {
        self.placed() + self.excluded
    }
}

pub fn confusion_matrix(run: &EvaluationRun, k: Tolerance) -> Result<ConfusionMatrix, MetricsError> {
    let standard = ConfusionMatrix::standard(run.non_empty()?);
    Ok(if k == Tolerance::EXACT {
        standard
    } else {
        standard.folded(k)
    })
}

/// One per-epoch line of the report. Percentages are in `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReportRow {
    pub epoch: AgeEpoch,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean decade error over this epoch's scoreable ground-truth pairs.
    pub mae: Option<f64>,
    /// Ground-truth pairs of this epoch.
    pub support: usize,
    /// Times this epoch was predicted.
    pub predicted_count: usize,
    /// Pairs behind `mae`.
    pub mae_count: usize,
}

fn percent(numerator: u64, denominator: u64) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        100.0 * numerator as f64 / denominator as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn per_epoch_report(run: &EvaluationRun) -> Result<Vec<EpochReportRow>, MetricsError> {
    let pairs = run.non_empty()?;
    let matrix = ConfusionMatrix::standard(pairs);

    let mut support = [0usize; EPOCH_COUNT];
    let mut error_sum = [0f64; EPOCH_COUNT];
    let mut error_count = [0usize; EPOCH_COUNT];
    for pair in pairs {
        let c = pair.truth.index();
        support[c] += 1;
        if let Some(err) = pair.decade_error() {
            error_sum[c] += err;
            error_count[c] += 1;
        }
    }

    Ok(AgeEpoch::ALL
        .iter()
        .map(|&epoch| {
            let c = epoch.index();
            let tp = matrix.count(epoch, epoch);
            let predicted = matrix.column_sum(epoch);
            let precision = percent(tp, predicted);
            let recall = percent(tp, support[c] as u64);
            EpochReportRow {
                epoch,
                precision,
                recall,
                f1: f1_score(precision, recall),
                mae: (error_count[c] > 0).then(|| error_sum[c] / error_count[c] as f64),
                support: support[c],
                predicted_count: predicted as usize,
                mae_count: error_count[c],
            }
        })
        .collect())
}

/// Micro-averaged F1 in percent, which equals accuracy for single-label data.
pub fn micro_f1(run: &EvaluationRun) -> Result<f64, MetricsError> {
    let pairs = run.non_empty()?;
    let exact = pairs.iter().filter(|p| p.is_exact()).count();
    Ok(percent(exact as u64, pairs.len() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaeSummary {
    /// Mean absolute mid-year error in decades.
    pub decades: f64,
    pub scored: usize,
    /// Pairs left out because the prediction named no year span.
    pub excluded: usize,
}

pub fn mean_absolute_error(run: &EvaluationRun) -> Result<MaeSummary, MetricsError> {
    let pairs = run.non_empty()?;
    let (sum, scored) = pairs
        .iter()
        .filter_map(ScoredPair::decade_error)
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    if scored == 0 {
        return Err(MetricsError::NoScoreablePairs);
    }
    Ok(MaeSummary {
        decades: sum / scored as f64,
        scored,
        excluded: pairs.len() - scored,
    })
}

/// Everything the report needs, computed in one go.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<EpochReportRow>,
    pub accuracy: f64,
    /// `None` when no pair was scoreable.
    pub mae: Option<MaeSummary>,
    pub matrices: Vec<ConfusionMatrix>,
    pub summary: ParseSummary,
    pub instances: usize,
    pub policy: ScoringPolicy,
}

pub fn evaluate(run: &EvaluationRun, tolerances: &[Tolerance]) -> Result<Evaluation, MetricsError> {
    let mae = match mean_absolute_error(run) {
        Ok(m) => Some(m),
        Err(MetricsError::NoScoreablePairs) => None,
        Err(e) => return Err(e),
    };
    let standard = confusion_matrix(run, Tolerance::EXACT)?;
    Ok(Evaluation {
        rows: per_epoch_report(run)?,
        accuracy: micro_f1(run)?,
        mae,
        matrices: tolerances.iter().map(|&k| standard.folded(k)).collect(),
        summary: run.summary(),
        instances: run.len(),
        policy: run.policy().clone(),
    })
}

/// Rounds half away from zero to `decimals` places.
pub fn round_half_away(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (value * scale).round() / scale
}

/// Two-decimal display form.
pub fn display2(value: f64) -> String {
    format!("{:.2}", round_half_away(value, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::ParsedRange;

    fn epoch(label: &str) -> AgeEpoch {
        AgeEpoch::from_label(label).unwrap()
    }

    fn valid(id: u64, truth: &str, predicted: &str) -> ScoredPair {
        ScoredPair::new(Prediction::valid(id, epoch(predicted), "", ""), epoch(truth))
    }

    fn run(pairs: Vec<ScoredPair>) -> EvaluationRun {
        EvaluationRun::new(pairs)
    }

    #[test]
    fn empty_run_errors() {
        let empty = run(vec![]);
        assert_eq!(micro_f1(&empty), Err(MetricsError::EmptyRun));
        assert_eq!(mean_absolute_error(&empty).unwrap_err(), MetricsError::EmptyRun);
        assert_eq!(per_epoch_report(&empty).unwrap_err(), MetricsError::EmptyRun);
        assert_eq!(
            confusion_matrix(&empty, Tolerance::ONE).unwrap_err(),
            MetricsError::EmptyRun
        );
    }

    #[test]
    fn tolerance_bounds() {
        assert_eq!(Tolerance::new(2), Ok(Tolerance::TWO));
        assert_eq!(Tolerance::new(3), Err(MetricsError::InvalidTolerance(3)));
    }

    #[test]
    fn perfect_predictions() {
        let r = run(AgeEpoch::ALL
            .iter()
            .map(|e| valid(e.index() as u64, e.label(), e.label()))
            .collect());
        let m = confusion_matrix(&r, Tolerance::EXACT).unwrap();
        assert_eq!(m.trace(), 15);
        assert_eq!(micro_f1(&r).unwrap(), 100.0);
        assert_eq!(mean_absolute_error(&r).unwrap().decades, 0.0);
        for row in per_epoch_report(&r).unwrap() {
            assert_eq!((row.precision, row.recall, row.f1), (100.0, 100.0, 100.0));
        }
    }

    #[test]
    fn adjacent_miss_folds_at_k1() {
        let r = run(vec![valid(1, "1900-1919", "1880-1899")]);
        let k0 = confusion_matrix(&r, Tolerance::EXACT).unwrap();
        assert_eq!(k0.trace(), 0);
        let k1 = confusion_matrix(&r, Tolerance::ONE).unwrap();
        assert_eq!(k1.count(epoch("1900-1919"), epoch("1900-1919")), 1);
        assert_eq!(k1.tolerance(), Tolerance::ONE);
    }

    #[test]
    fn folding_composes_to_max() {
        let r = run(vec![
            valid(1, "1900-1919", "1860-1879"),
            valid(2, "1900-1919", "1880-1899"),
            valid(3, "<1700", ">2020"),
        ]);
        let k0 = confusion_matrix(&r, Tolerance::EXACT).unwrap();
        assert_eq!(
            k0.folded(Tolerance::ONE).folded(Tolerance::TWO),
            k0.folded(Tolerance::TWO)
        );
        assert_eq!(
            k0.folded(Tolerance::TWO).folded(Tolerance::ONE),
            k0.folded(Tolerance::TWO)
        );
        assert_eq!(k0.folded(Tolerance::TWO).trace(), 2);
    }

    #[test]
    fn non_valid_outcomes_are_excluded_from_grid() {
        let truth = epoch("1960-1979");
        let r = run(vec![
            ScoredPair::new(
                Prediction::hallucination(1, ParsedRange { start: 1973, end: 1997 }, "", ""),
                truth,
            ),
            ScoredPair::new(Prediction::malformed(2, "", "??"), truth),
            ScoredPair::new(Prediction::refused(3, ""), truth),
            valid(4, "1960-1979", "1960-1979"),
        ]);
        let m = confusion_matrix(&r, Tolerance::TWO).unwrap();
        assert_eq!(m.excluded(), 3);
        assert_eq!(m.total(), 4);
        assert_eq!(m.trace(), 1);
        assert_eq!(micro_f1(&r).unwrap(), 25.0);
        let mae = mean_absolute_error(&r).unwrap();
        assert_eq!((mae.scored, mae.excluded), (2, 2));
        assert!((mae.decades - 1.55 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(
            mean_absolute_error(&run(vec![valid(1, "1960-1979", "1960-1979")]))
                .unwrap()
                .decades,
            0.0
        );
        assert_eq!(
            mean_absolute_error(&run(vec![valid(1, "1960-1979", "1980-1999")]))
                .unwrap()
                .decades,
            2.0
        );
        assert_eq!(
            mean_absolute_error(&run(vec![valid(1, "<1700", "1840-1859")]))
                .unwrap()
                .decades,
            15.0
        );
        let h = ScoredPair::new(
            Prediction::hallucination(1, ParsedRange { start: 1973, end: 1997 }, "", ""),
            epoch("1960-1979"),
        );
        let got = mean_absolute_error(&run(vec![h])).unwrap().decades;
        assert!((got - 1.55).abs() < 1e-12, "{got}");
    }

    #[test]
    fn mae_needs_scoreable_pairs() {
        let r = run(vec![ScoredPair::new(Prediction::malformed(1, "", ""), epoch("<1700"))]);
        assert_eq!(mean_absolute_error(&r).unwrap_err(), MetricsError::NoScoreablePairs);
        let e = evaluate(&r, &Tolerance::ALL).unwrap();
        assert!(e.mae.is_none());
        assert_eq!(e.accuracy, 0.0);
    }

    #[test]
    fn precision_recall_zero_division() {
        let r = run(vec![valid(1, "1800-1819", "1820-1839")]);
        let rows = per_epoch_report(&r).unwrap();
        assert_eq!(rows.len(), 15);
        let oldest = &rows[0];
        assert_eq!((oldest.precision, oldest.recall, oldest.f1), (0.0, 0.0, 0.0));
        assert_eq!(oldest.mae, None);
        assert_eq!((oldest.support, oldest.predicted_count), (0, 0));
        let predicted = &rows[epoch("1820-1839").index()];
        assert_eq!((predicted.support, predicted.predicted_count), (0, 1));
    }

    #[test]
    fn high_precision_low_recall_row() {
        let mut pairs: Vec<ScoredPair> = (0..3).map(|i| valid(i, "1940-1959", "1940-1959")).collect();
        pairs.extend((3..14).map(|i| valid(i, "1940-1959", "1960-1979")));
        let rows = per_epoch_report(&run(pairs)).unwrap();
        let row = &rows[epoch("1940-1959").index()];
        assert_eq!(display2(row.precision), "100.00");
        assert_eq!(display2(row.recall), "21.43");
    }

    #[test]
    fn micro_f1_rounding() {
        let mut pairs: Vec<ScoredPair> = (0..52).map(|i| valid(i, "1920-1939", "1920-1939")).collect();
        pairs.extend((52..131).map(|i| valid(i, "1920-1939", "1900-1919")));
        assert_eq!(display2(micro_f1(&run(pairs)).unwrap()), "39.69");
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(display2(0.125), "0.13");
        assert_eq!(display2(2.675_000_000_1), "2.68");
        assert_eq!(display2(0.0), "0.00");
        assert_eq!(round_half_away(-0.125, 2), -0.13);
    }

    #[test]
    fn joins_by_id_in_corpus_order() {
        use std::path::PathBuf;
        let corpus: Vec<CorpusItem> = [(2, "<1700"), (1, ">2020")]
            .iter()
            .map(|&(id, age)| CorpusItem {
                id,
                image_path: PathBuf::new(),
                ground_truth: epoch(age),
                location_hint: "London".into(),
            })
            .collect();
        let preds = vec![
            Prediction::valid(1, epoch(">2020"), "", ""),
            Prediction::valid(2, epoch("<1700"), "", ""),
        ];
        let r = EvaluationRun::from_predictions(preds.clone(), &corpus).unwrap();
        assert_eq!(r.pairs().iter().map(ScoredPair::item_id).collect::<Vec<_>>(), [2, 1]);
        assert_eq!(micro_f1(&r).unwrap(), 100.0);

        let err = EvaluationRun::from_predictions(vec![preds[0].clone(), Prediction::malformed(7, "", "")], &corpus)
            .unwrap_err();
        assert_eq!(
            err,
            MetricsError::IdMismatch {
                missing: vec![2],
                extra: vec![7]
            }
        );

        let err = EvaluationRun::from_predictions(vec![preds[0].clone(), preds[0].clone()], &corpus).unwrap_err();
        assert_eq!(err, MetricsError::DuplicatePrediction(1));
    }
}
