//! Zero-shot building age epoch classification with vision-language models.
//!
//! The pipeline runs corpus → prompting → gateway → parsing → metrics:
//! facade images listed in a manifest are base64 encoded, paired with the
//! instruction prompt, sent to a backend, and the replies are parsed into
//! predictions that are scored against ground truth.

pub mod corpus;
pub mod fixtures;
pub mod gateway;
pub mod metrics;
pub mod parsing;
pub mod prompting;
pub mod taxonomy;

pub use corpus::{encode_image, load_manifest, CorpusError, CorpusItem, EncodedImage, MediaType, SourceDigest};
pub use gateway::{
    Backend, BackendConfig, BatchEntry, Gateway, GatewayError, ItemFailure, MockBackend, MockFixture, OpenAiBackend,
    Pricing, RawReply, ResponseCache, TokenUsage,
};
pub use metrics::{
    confusion_matrix, evaluate, mean_absolute_error, micro_f1, per_epoch_report, ConfusionMatrix, EpochReportRow,
    Evaluation, EvaluationRun, MaeSummary, MetricsError, ScoredPair, Tolerance,
};
pub use parsing::{classify_batch, parse_reply, Outcome, ParseSummary, Prediction};
pub use prompting::{build_request, render_prompt, ClassificationRequest, PromptError, PromptTemplate};
pub use taxonomy::{canonical_epochs, epoch_distance, parse_epoch, AgeEpoch, EpochDistance, EpochMatch, ParsedRange};
