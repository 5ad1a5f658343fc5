//! `evaluate`: predictions plus manifest in, report bundle out.

use std::fs;
use std::path::{Path, PathBuf};

use agescope_core::{evaluate, load_manifest, Evaluation, EvaluationRun, Prediction, Tolerance};

use crate::error::CliError;
use crate::io::{read_jsonl, write_atomic};
use crate::report::{matrix_csv, matrix_text, ReportBundle};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub predictions: PathBuf,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub tolerances: Vec<Tolerance>,
}

pub fn matrix_file_stem(k: Tolerance) -> String {
    format!("confusion_k{}", k.steps())
}

pub fn run_evaluate(options: &EvaluateOptions) -> Result<Evaluation, CliError> {
    let corpus = load_manifest(&options.manifest)?;
    let predictions: Vec<Prediction> = read_jsonl(&options.predictions)?;
    let run = EvaluationRun::from_predictions(predictions, &corpus)?;
    let evaluation = evaluate(&run, &options.tolerances)?;
    write_report(&options.output_dir, &evaluation)?;
    Ok(evaluation)
}

pub fn write_report(dir: &Path, evaluation: &Evaluation) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let bundle = ReportBundle::from_evaluation(evaluation);
    write_atomic(&dir.join(REPORT_CSV), bundle.to_csv().as_bytes())?;
    write_atomic(&dir.join(REPORT_JSON), bundle.to_json().as_bytes())?;
    for matrix in &evaluation.matrices {
        let stem = matrix_file_stem(matrix.tolerance());
        write_atomic(&dir.join(format!("{stem}.csv")), matrix_csv(matrix).as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.txt")), matrix_text(matrix).as_bytes())?;
    }
    Ok(())
}
