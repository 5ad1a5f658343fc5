//! `classify`: corpus in, predictions and run metadata out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use log::{info, warn};
use serde::Serialize;

use agescope_core::prompting::prompt_hash;
use agescope_core::{
    build_request, encode_image, load_manifest, parse_reply, Backend, BackendConfig, ClassificationRequest,
    CorpusError, CorpusItem, EncodedImage, Gateway, GatewayError, ItemFailure, MockBackend, MockFixture, OpenAiBackend,
    Outcome, ParseSummary, Prediction, PromptTemplate, ResponseCache, TokenUsage,
};

use crate::error::CliError;
use crate::io::{write_atomic, write_jsonl};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const RUN_META_FILE: &str = "run_meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Live,
    Mock,
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub backend: BackendKind,
    pub mock_fixture: Option<PathBuf>,
    pub config: BackendConfig,
    /// `None` sends images at their original size.
    pub max_dimension: Option<u32>,
    pub cache_dir: Option<PathBuf>,
    /// Re-dispatch once, bypassing the cache, when a reply is MALFORMED.
    pub retry_malformed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureRecord {
    pub item_id: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub backend_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_dimension: Option<u32>,
    /// Hash of the unrendered template.
    pub prompt_template_hash: String,
    /// Hash of each distinct rendered prompt, by location hint.
    pub prompt_hashes: BTreeMap<String, String>,
    pub items: usize,
    pub predictions: usize,
    pub outcomes: ParseSummary,
    pub backend_calls: usize,
    pub cached_replies: usize,
    pub malformed_retries: usize,
    pub total_latency_seconds: f64,
    pub token_usage: TokenUsage,
    /// Spend incurred by this run, cached replies excluded.
    pub total_cost: f64,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug)]
pub struct ClassifyReport {
    pub predictions: Vec<Prediction>,
    pub meta: RunMeta,
    pub failures: Vec<ItemFailure>,
}

pub fn build_backend(options: &ClassifyOptions) -> Result<Arc<dyn Backend>, CliError> {
    match options.backend {
        BackendKind::Live => Ok(Arc::new(OpenAiBackend::from_env(&options.config)?)),
        BackendKind::Mock => {
            let fixture = match &options.mock_fixture {
                Some(path) => MockFixture::load(path)?,
                None => return Err(CliError::Input("--backend mock requires --fixture".into())),
            };
            Ok(Arc::new(MockBackend::new(fixture)))
        }
    }
}

/// Encodes every item; workers split the corpus into contiguous chunks.
pub fn encode_corpus(items: &[CorpusItem], max_dimension: Option<u32>) -> Result<Vec<EncodedImage>, CorpusError> {
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len())
        .max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<EncodedImage>, CorpusError>> = thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|item| encode_image(item, max_dimension)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("encoder thread panicked"))
            .collect()
    });
    let mut images = Vec::with_capacity(items.len());
    for part in results {
        images.extend(part?);
    }
    Ok(images)
}

pub fn build_requests(
    items: &[CorpusItem],
    images: Vec<EncodedImage>,
    template: &PromptTemplate,
) -> Result<Vec<ClassificationRequest>, CliError> {
    items
        .iter()
        .zip(images)
        .map(|(item, image)| build_request(item, image, template).map_err(|e| CliError::Input(e.to_string())))
        .collect()
}

/// Runs the whole batch against an already-built gateway.
pub fn classify_requests(
    gateway: &Gateway,
    requests: &[ClassificationRequest],
    retry_malformed: bool,
) -> ClassifyReport {
    let mut predictions = Vec::with_capacity(requests.len());
    let mut failures = Vec::new();
    let mut cached = 0;
    let mut retries = 0;
    let mut latency = 0.0;
    let mut usage = TokenUsage::default();
    let mut cost = 0.0;
    let mut account = |reply: &agescope_core::RawReply| {
        latency += reply.latency_seconds;
        cost += reply.new_cost();
        if reply.from_cache {
            cached += 1;
        } else if let Some(u) = reply.token_usage {
            usage.input += u.input;
            usage.output += u.output;
        }
    };

    for (request, entry) in requests.iter().zip(gateway.run_batch(requests)) {
        let reply = match entry {
            Ok(reply) => reply,
            Err(ItemFailure {
                error: GatewayError::BackendRefusal(reply),
                ..
            }) => *reply,
            Err(failure) => {
                warn!("{failure}");
                failures.push(failure);
                continue;
            }
        };
        account(&reply);
        let mut prediction = parse_reply(&reply);
        if retry_malformed && prediction.outcome() == Outcome::Malformed {
            retries += 1;
            info!("item {}: malformed reply, retrying once", request.item_id);
            let second = match gateway.classify_fresh(request) {
                Ok(second) => Some(second),
                Err(GatewayError::BackendRefusal(second)) => Some(*second),
                Err(error) => {
                    warn!("item {}: retry failed: {error}", request.item_id);
                    None
                }
            };
            if let Some(second) = second {
                account(&second);
                prediction = parse_reply(&second);
            }
        }
        predictions.push(prediction);
    }

    let config = gateway.config();
    let prompt_hashes = requests
        .iter()
        .map(|r| (r.location_hint.clone(), prompt_hash(&r.instruction_text)))
        .collect();
    let meta = RunMeta {
        backend_id: gateway.backend_id().to_string(),
        model_name: config.model_name.clone(),
        temperature: config.effective_temperature(),
        max_output_tokens: config.max_output_tokens,
        max_dimension: None,
        prompt_template_hash: String::new(),
        prompt_hashes,
        items: requests.len(),
        predictions: predictions.len(),
        outcomes: predictions.iter().collect(),
        backend_calls: gateway.dispatch_count(),
        cached_replies: cached,
        malformed_retries: retries,
        total_latency_seconds: latency,
        token_usage: usage,
        total_cost: cost,
        failures: failures
            .iter()
            .map(|f| FailureRecord {
                item_id: f.item_id,
                error: f.error.to_string(),
            })
            .collect(),
    };
    ClassifyReport {
        predictions,
        meta,
        failures,
    }
}

/// Loads, encodes, classifies, and writes `predictions.jsonl` and
/// `run_meta.json`. Predictions gathered before a backend failure are still
/// written; the failure is then returned.
pub fn run_classify(options: &ClassifyOptions) -> Result<ClassifyReport, CliError> {
    let items = load_manifest(&options.manifest)?;
    options.config.validate()?;
    let backend = build_backend(options)?;
    let images = encode_corpus(&items, options.max_dimension)?;
    let template = PromptTemplate::default();
    let requests = build_requests(&items, images, &template)?;

    let mut gateway = Gateway::new(backend, options.config.clone())?;
    if let Some(dir) = &options.cache_dir {
        gateway = gateway.with_cache(ResponseCache::new(dir));
    }
    info!("classifying {} items with {}", requests.len(), gateway.backend_id());
    let mut report = classify_requests(&gateway, &requests, options.retry_malformed);
    report.meta.max_dimension = options.max_dimension;
    report.meta.prompt_template_hash = prompt_hash(template.body());

    write_outputs(&options.output_dir, &report)?;
    if report.failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::ItemFailures(report.failures))
    }
}

pub fn write_outputs(dir: &Path, report: &ClassifyReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    write_jsonl(&dir.join(PREDICTIONS_FILE), &report.predictions)?;
    let mut meta = serde_json::to_string_pretty(&report.meta).expect("run metadata serializes");
    meta.push('\n');
    write_atomic(&dir.join(RUN_META_FILE), meta.as_bytes())
}
