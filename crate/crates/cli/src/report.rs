//! Report bundle rendering: CSV and JSON tables plus confusion matrices.
//!
//! All numbers are rounded half away from zero to two decimals here and
//! nowhere else.

use std::fmt::Write as _;

use serde::Serialize;

use agescope_core::metrics::{display2, round_half_away, ScoringPolicy};
use agescope_core::{canonical_epochs, ConfusionMatrix, Evaluation, MaeSummary, ParseSummary, Tolerance};

pub const CSV_HEADER: &str = "epoch,precision,recall,f1,mae,support,predicted_count";
pub const TOTAL_LABEL: &str = "Total";

/// One table row as serialized; values already rounded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub epoch: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mae: Option<f64>,
    pub support: usize,
    pub predicted_count: usize,
}

impl ReportRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            display2(self.precision),
            display2(self.recall),
            display2(self.f1),
            self.mae.map(display2).unwrap_or_default(),
            self.support,
            self.predicted_count
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixRecord {
    pub tolerance: Tolerance,
    pub excluded: u64,
    pub trace: u64,
    /// Rows are ground truth, columns predicted, both oldest first.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub labels: Vec<&'static str>,
    pub rows: Vec<ReportRow>,
    pub total: ReportRow,
    pub instances: usize,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub mae: Option<MaeSummary>,
    pub outcomes: ParseSummary,
    pub scoring_policy: ScoringPolicy,
    pub confusion: Vec<MatrixRecord>,
}

fn r2(x: f64) -> f64 {
    round_half_away(x, 2)
}

impl ReportBundle {
    pub fn from_evaluation(eval: &Evaluation) -> Self {
        let rows = eval
            .rows
            .iter()
            .map(|row| ReportRow {
                epoch: row.epoch.label().to_string(),
                precision: r2(row.precision),
                recall: r2(row.recall),
                f1: r2(row.f1),
                mae: row.mae.map(r2),
                support: row.support,
                predicted_count: row.predicted_count,
            })
            .collect();
        let accuracy = r2(eval.accuracy);
        let total = ReportRow {
            epoch: TOTAL_LABEL.to_string(),
            precision: accuracy,
            recall: accuracy,
            f1: accuracy,
            mae: eval.mae.map(|m| r2(m.decades)),
            support: eval.instances,
            predicted_count: eval.summary.valid,
        };
        let mae = eval.mae.map(|m| MaeSummary {
            decades: r2(m.decades),
            ..m
        });
        Self {
            labels: canonical_epochs().iter().map(|e| e.label()).collect(),
            rows,
            total,
            instances: eval.instances,
            accuracy,
            micro_f1: accuracy,
            mae,
            outcomes: eval.summary,
            scoring_policy: eval.policy.clone(),
            confusion: eval.matrices.iter().map(matrix_record).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn matrix_record(m: &ConfusionMatrix) -> MatrixRecord {
    MatrixRecord {
        tolerance: m.tolerance(),
        excluded: m.excluded(),
        trace: m.trace(),
        counts: m.rows().iter().map(|r| r.to_vec()).collect(),
    }
}

/// CSV with a header of predicted labels; first column is the true label.
pub fn matrix_csv(m: &ConfusionMatrix) -> String {
    let mut out = String::from("truth\\predicted");
    for e in canonical_epochs() {
        out.push(',');
        out.push_str(e.label());
    }
    out.push('\n');
    for (e, row) in canonical_epochs().iter().zip(m.rows()) {
        out.push_str(e.label());
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Fixed-width text grid of raw counts.
pub fn matrix_text(m: &ConfusionMatrix) -> String {
    let width = canonical_epochs().iter().map(|e| e.label().len()).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "confusion matrix, tolerance k={} (rows: ground truth, columns: predicted)",
        m.tolerance().steps()
    );
    let _ = writeln!(
        out,
        "placed {} of {} pairs; excluded (no canonical epoch) {}; trace {}",
        m.placed(),
        m.total(),
        m.excluded(),
        m.trace()
    );
    let _ = write!(out, "{:>width$}", "");
    for e in canonical_epochs() {
        let _ = write!(out, " {:>width$}", e.label());
    }
    out.push('\n');
    for (e, row) in canonical_epochs().iter().zip(m.rows()) {
        let _ = write!(out, "{:>width$}", e.label());
        for c in row {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use agescope_core::{evaluate, AgeEpoch, EvaluationRun, Prediction, ScoredPair};

    fn bundle(pairs: &[(&str, &str)]) -> ReportBundle {
        let pairs = pairs
            .iter()
            .enumerate()
            .map(|(i, (truth, predicted))| {
                let truth: AgeEpoch = truth.parse().unwrap();
                ScoredPair::new(Prediction::valid(i as u64, predicted.parse().unwrap(), "", ""), truth)
            })
            .collect();
        ReportBundle::from_evaluation(&evaluate(&EvaluationRun::new(pairs), &Tolerance::ALL).unwrap())
    }

    #[test]
    fn perfect_run_total_row() {
        let b = bundle(&[("<1700", "<1700"), ("1900-1919", "1900-1919"), (">2020", ">2020")]);
        let csv = b.to_csv();
        assert_eq!(csv.lines().last(), Some("Total,100.00,100.00,100.00,0.00,3,3"));
        assert_eq!(csv.lines().nth(1), Some("<1700,100.00,100.00,100.00,0.00,1,1"));
        assert_eq!(csv.lines().count(), 17);
    }

    #[test]
    fn rounding_happens_at_display() {
        let b = bundle(&[
            ("1900-1919", "1900-1919"),
            ("1900-1919", "1920-1939"),
            ("1900-1919", "1920-1939"),
        ]);
        let row = &b.rows[8];
        assert_eq!(row.recall, 33.33);
        assert_eq!(b.accuracy, 33.33);
        assert!(b.to_csv().contains("\n1900-1919,100.00,33.33,50.00,1.33,3,1\n"));
    }

    #[test]
    fn matrix_renderings_are_labelled() {
        let pairs = vec![ScoredPair::new(
            Prediction::valid(1, "1820-1839".parse().unwrap(), "", ""),
            "1800-1819".parse().unwrap(),
        )];
        let eval = evaluate(&EvaluationRun::new(pairs), &[Tolerance::EXACT]).unwrap();
        let csv = matrix_csv(&eval.matrices[0]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 16);
        assert!(lines[0].starts_with("truth\\predicted,<1700,1700-1749"));
        assert_eq!(lines[4], "1800-1819,0,0,0,0,1,0,0,0,0,0,0,0,0,0,0");
        let text = matrix_text(&eval.matrices[0]);
        let widths: Vec<usize> = text.lines().skip(2).map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
    }
}
