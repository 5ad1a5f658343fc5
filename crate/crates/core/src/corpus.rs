//! Facade image corpus: manifest loading and image encoding for transmission.
//!
//! A manifest is a JSON array of `{"id", "image", "age"}` objects, with an
//! optional `"location"` hint per entry. Image paths are resolved against the
//! manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taxonomy::AgeEpoch;

pub const DEFAULT_LOCATION: &str = "London";
pub const DEFAULT_MAX_DIMENSION: u32 = 2048;
pub const JPEG_QUALITY: u8 = 90;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest {path} could not be read: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path} at {locus}: {message}")]
    MalformedManifest {
        path: PathBuf,
        locus: String,
        message: String,
    },
    #[error("entry {id} has unknown age epoch label {label:?}")]
    UnknownEpochLabel { id: u64, label: String },
    #[error("duplicate item id {0}")]
    DuplicateId(u64),
    #[error("image for item {id} is not readable at {path}: {source}")]
    MissingImage {
        id: u64,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image for item {id} could not be decoded: {message}")]
    UndecodableImage { id: u64, message: String },
    #[error("image for item {id} is not JPEG or PNG")]
    UnsupportedFormat { id: u64 },
}

/// One facade image with its ground-truth epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusItem {
    pub id: u64,
    pub image_path: PathBuf,
    pub ground_truth: AgeEpoch,
    pub location_hint: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: u64,
    image: PathBuf,
    age: String,
    #[serde(default)]
    location: Option<String>,
}

/// Row written by tooling that produces manifests.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestRecord<'a> {
    pub id: u64,
    pub image: &'a Path,
    pub age: AgeEpoch,
}

/// Loads and validates a manifest, preserving entry order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusItem>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |locus: String, message: String| CorpusError::MalformedManifest {
        path: path.to_path_buf(),
        locus,
        message,
    };

    let raw: Vec<serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| malformed(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));

    let mut seen = HashSet::with_capacity(raw.len());
    let mut items = Vec::with_capacity(raw.len());
    for (position, value) in raw.into_iter().enumerate() {
        let entry: ManifestEntry =
            serde_json::from_value(value).map_err(|e| malformed(format!("entry {position}"), e.to_string()))?;
        let ground_truth: AgeEpoch = entry.age.parse().map_err(|_| CorpusError::UnknownEpochLabel {
            id: entry.id,
            label: entry.age.clone(),
        })?;
        if !seen.insert(entry.id) {
            return Err(CorpusError::DuplicateId(entry.id));
        }
        let image_path = base.join(&entry.image);
        fs::File::open(&image_path).map_err(|source| CorpusError::MissingImage {
            id: entry.id,
            path: image_path.clone(),
            source,
        })?;
        let location_hint = entry
            .location
            .filter(|l| !l.trim().is_empty())
            .unwrap_or_else(|| DEFAULT_LOCATION.to_string());
        items.push(CorpusItem {
            id: entry.id,
            image_path,
            ground_truth,
            location_hint,
        });
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Jpeg,
    Png,
}

impl MediaType {
    pub fn subtype(self) -> &'static str {
        match self {
            MediaType::Jpeg => "jpeg",
            MediaType::Png => "png",
        }
    }
}

impl fmt::Display for MediaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "image/{}", self.subtype())
    }
}

/// SHA-256 of the original image file, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceDigest(String);

impl SourceDigest {
    pub fn of(bytes: &[u8]) -> Self {
        SourceDigest(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An image ready to embed in a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub item_id: u64,
    pub media_type: MediaType,
    /// Standard base64 of the bytes that will be sent.
    pub payload: String,
    /// Digest of the file as stored on disk, before any resizing.
    pub source_digest: SourceDigest,
    pub width: u32,
    pub height: u32,
}

impl EncodedImage {
    pub fn data_url(&self) -> String {
        format!("data:image/{};base64,{}", self.media_type.subtype(), self.payload)
    }
}

/// Target size for downscaling so the longer side is `max_dimension`.
///
/// The derived side is floored and never below one pixel.
pub fn fit_within(width: u32, height: u32, max_dimension: u32) -> (u32, u32) {
    let max_dimension = max_dimension.max(1);
    if width <= max_dimension && height <= max_dimension {
        return (width, height);
    }
    let scale =
        |side: u32, longer: u32| ((u64::from(side) * u64::from(max_dimension)) / u64::from(longer)).max(1) as u32;
    if width >= height {
        (max_dimension, scale(height, width))
    } else {
        (scale(width, height), max_dimension)
    }
}

/// Reads an item's image and base64-encodes it, downscaling to `max_dimension`
/// when either side exceeds it. Resized images are re-encoded as JPEG.
pub fn encode_image(item: &CorpusItem, max_dimension: Option<u32>) -> Result<EncodedImage, CorpusError> {
    let id = item.id;
    let bytes = fs::read(&item.image_path).map_err(|source| CorpusError::MissingImage {
        id,
        path: item.image_path.clone(),
        source,
    })?;
    let source_digest = SourceDigest::of(&bytes);

    let format = image::guess_format(&bytes).map_err(|_| CorpusError::UnsupportedFormat { id })?;
    let media_type = match format {
        ImageFormat::Jpeg => MediaType::Jpeg,
        ImageFormat::Png => MediaType::Png,
        _ => return Err(CorpusError::UnsupportedFormat { id }),
    };
    let undecodable = |e: image::ImageError| CorpusError::UndecodableImage {
        id,
        message: e.to_string(),
    };

    let reader = || ImageReader::with_format(Cursor::new(&bytes), format);
    let (width, height) = reader().into_dimensions().map_err(undecodable)?;

    let target = max_dimension.map(|m| fit_within(width, height, m));
    match target {
        Some(dims) if dims != (width, height) => {
            let decoded = reader().decode().map_err(undecodable)?;
            let resized = decoded.thumbnail_exact(dims.0, dims.1).into_rgb8();
            let mut out = Vec::new();
            image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
                .encode_image(&resized)
                .map_err(undecodable)?;
            Ok(EncodedImage {
                item_id: id,
                media_type: MediaType::Jpeg,
                payload: BASE64.encode(&out),
                source_digest,
                width: dims.0,
                height: dims.1,
            })
        }
        _ => {
            // Make sure the pixel data is intact, not just the header.
            reader().decode().map_err(undecodable)?;
            Ok(EncodedImage {
                item_id: id,
                media_type,
                payload: BASE64.encode(&bytes),
                source_digest,
                width,
                height,
            })
        }
    }
}
