//! Instruction prompt rendering and per-image request assembly.

use sha2::{Digest, Sha256};

use crate::corpus::{CorpusItem, EncodedImage};
use crate::taxonomy::canonical_epochs;

const LOCATION_SLOT: &str = "{{location}}";
const EPOCH_LIST_SLOT: &str = "{{epoch_list}}";

/// Version 1 of the instruction text. Kept as an asset so revisions diff cleanly.
pub const PROMPT_TEMPLATE_V1: &str = include_str!("../assets/age_epoch_prompt.v1.txt");

/// Keys the model is asked to return.
pub const AGE_KEY: &str = "age";
pub const REASON_KEY: &str = "reason";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("location hint must not be empty")]
    EmptyLocation,
    #[error("image belongs to item {image_item} but request is for item {item}")]
    ItemImageMismatch { item: u64, image_item: u64 },
}

/// The epoch list as it appears in the prompt: newest first, quoted, comma separated.
pub fn epoch_list_literal() -> String {
    canonical_epochs()
        .iter()
        .rev()
        .map(|e| format!("\"{}\"", e.label()))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
    epoch_list: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::from_body(PROMPT_TEMPLATE_V1)
    }
}

impl PromptTemplate {
    /// Builds a template from raw text. CRLF line endings are normalized to LF.
    pub fn from_body(body: &str) -> Self {
        let body = body.replace("\r\n", "\n");
        let epoch_list = epoch_list_literal();
        let body = body.replace(EPOCH_LIST_SLOT, &epoch_list);
        Self { body, epoch_list }
    }

    /// Template text with the epoch list filled in and the location slot intact.
    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn epoch_list(&self) -> &str {
        &self.epoch_list
    }

    pub fn format_contract(&self) -> [&'static str; 2] {
        [AGE_KEY, REASON_KEY]
    }

    pub fn render(&self, location_hint: &str) -> Result<String, PromptError> {
        let location = location_hint.trim();
        if location.is_empty() {
            return Err(PromptError::EmptyLocation);
        }
        Ok(self.body.replace(LOCATION_SLOT, location))
    }
}

/// Renders the default template for a location.
pub fn render_prompt(location_hint: &str) -> Result<String, PromptError> {
    PromptTemplate::default().render(location_hint)
}

/// Hex SHA-256 of a rendered prompt, recorded alongside runs.
pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.replace("\r\n", "\n").as_bytes()))
}

/// One image plus its instruction, ready for a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationRequest {
    pub item_id: u64,
    pub instruction_text: String,
    pub image: EncodedImage,
    pub location_hint: String,
}

pub fn build_request(
    item: &CorpusItem,
    image: EncodedImage,
    template: &PromptTemplate,
) -> Result<ClassificationRequest, PromptError> {
    if image.item_id != item.id {
        return Err(PromptError::ItemImageMismatch {
            item: item.id,
            image_item: image.item_id,
        });
    }
    Ok(ClassificationRequest {
        item_id: item.id,
        instruction_text: template.render(&item.location_hint)?,
        image,
        location_hint: item.location_hint.clone(),
    })
}
