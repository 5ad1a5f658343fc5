//! On-disk reply cache: one JSON record per key under
//! `<root>/<first two hex chars>/<key>.json`, written via atomic rename.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{digest_fields, BackendConfig, RawReply, TokenUsage};
use crate::prompting::ClassificationRequest;

const KEY_DOMAIN: &[u8] = b"agescope-reply-cache-v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    /// Keyed on the source image digest, instruction text, model and temperature.
    pub fn for_request(request: &ClassificationRequest, config: &BackendConfig) -> Self {
        let temperature = format!("{:?}", config.effective_temperature());
        CacheKey(digest_fields(&[
            KEY_DOMAIN,
            request.image.source_digest.as_str().as_bytes(),
            request.instruction_text.as_bytes(),
            config.model_name.as_bytes(),
            temperature.as_bytes(),
        ]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What gets stored for a key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedReply {
    pub key: String,
    pub item_id: u64,
    pub text: String,
    pub latency_seconds: f64,
    pub token_usage: Option<TokenUsage>,
    pub cost_estimate: f64,
    pub backend_id: String,
}

impl CachedReply {
    /// Rebuilds the reply for `item_id`, keeping the recorded latency and cost.
    pub fn into_reply(self, item_id: u64) -> RawReply {
        RawReply {
            item_id,
            text: self.text,
            latency_seconds: self.latency_seconds,
            token_usage: self.token_usage,
            cost_estimate: self.cost_estimate,
            from_cache: true,
            backend_id: self.backend_id,
            refused: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    /// Looks up a key. Unreadable or corrupt records count as misses.
    pub fn get(&self, key: &CacheKey) -> Option<CachedReply> {
        let path = self.path_for(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CachedReply>(&bytes) {
            Ok(record) if record.key == key.0 => Some(record),
            Ok(_) => {
                log::warn!("cache record {} does not match its key, ignoring", path.display());
                None
            }
            Err(e) => {
                log::warn!("corrupt cache record {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &CacheKey, reply: &RawReply) -> io::Result<()> {
        let record = CachedReply {
            key: key.0.clone(),
            item_id: reply.item_id,
            text: reply.text.clone(),
            latency_seconds: reply.latency_seconds,
            token_usage: reply.token_usage,
            cost_estimate: reply.cost_estimate,
            backend_id: reply.backend_id.clone(),
        };
        let path = self.path_for(key);
        let dir = path.parent().expect("cache path has a shard directory");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, &record)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EncodedImage, MediaType, SourceDigest};
    use tempfile::TempDir;

    fn request(instruction: &str, digest: &[u8]) -> ClassificationRequest {
        ClassificationRequest {
            item_id: 1,
            instruction_text: instruction.into(),
            image: EncodedImage {
                item_id: 1,
                media_type: MediaType::Jpeg,
                payload: String::new(),
                source_digest: SourceDigest::of(digest),
                width: 1,
                height: 1,
            },
            location_hint: "London".into(),
        }
    }

    #[test]
    fn key_depends_on_each_component() {
        let config = BackendConfig::default();
        let base = CacheKey::for_request(&request("a", b"x"), &config);
        assert_eq!(base, CacheKey::for_request(&request("a", b"x"), &config));
        assert_ne!(base, CacheKey::for_request(&request("b", b"x"), &config));
        assert_ne!(base, CacheKey::for_request(&request("a", b"y"), &config));
        let other_model = BackendConfig {
            model_name: "other".into(),
            ..config.clone()
        };
        assert_ne!(base, CacheKey::for_request(&request("a", b"x"), &other_model));
        let warm = BackendConfig {
            temperature: Some(0.7),
            ..config.clone()
        };
        assert_ne!(base, CacheKey::for_request(&request("a", b"x"), &warm));
        let explicit_zero = BackendConfig {
            temperature: Some(0.0),
            ..config.clone()
        };
        assert_eq!(base, CacheKey::for_request(&request("a", b"x"), &explicit_zero));
    }

    #[test]
    fn layout_and_round_trip() {
        let dir = TempDir::new().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = CacheKey::for_request(&request("a", b"x"), &BackendConfig::default());
        assert!(cache.get(&key).is_none());

        let reply = RawReply {
            latency_seconds: 9.5,
            cost_estimate: 0.016,
            ..RawReply::synthetic(1, "{\"age\": \"<1700\"}")
        };
        cache.put(&key, &reply).unwrap();
        let path = cache.path_for(&key);
        assert_eq!(path, dir.path().join(&key.as_str()[..2]).join(format!("{key}.json")));
        assert!(path.exists());

        let back = cache.get(&key).unwrap().into_reply(1);
        assert!(back.from_cache);
        assert_eq!(back.text, reply.text);
        assert_eq!(back.latency_seconds, 9.5);
        assert_eq!(back.cost_estimate, 0.016);
    }

    #[test]
    fn corrupt_record_is_a_miss() {
        let dir = TempDir::new().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = CacheKey::for_request(&request("a", b"x"), &BackendConfig::default());
        let path = cache.path_for(&key);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, "{not json").unwrap();
        assert!(cache.get(&key).is_none());
    }

    #[test]
    fn concurrent_writers_same_key() {
        let dir = TempDir::new().unwrap();
        let cache = ResponseCache::new(dir.path());
        let key = CacheKey::for_request(&request("a", b"x"), &BackendConfig::default());
        let reply = RawReply::synthetic(1, "same");
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..10 {
                        cache.put(&key, &reply).unwrap();
                        if let Some(hit) = cache.get(&key) {
                            assert_eq!(hit.text, "same");
                        }
                    }
                });
            }
        });
        assert_eq!(cache.get(&key).unwrap().text, "same");
    }
}
