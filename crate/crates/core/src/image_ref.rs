use std::fmt;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

/// A benchmark or demonstration image, referenced by path or URL and never
/// embedded in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef {
    pub locator: String,
    pub media_type: String,
}

impl ImageRef {
    pub fn new(locator: impl Into<String>, media_type: impl Into<String>) -> Self {
        Self { locator: locator.into(), media_type: media_type.into() }
    }

    /// Media type guessed from the locator's extension.
    pub fn from_locator(locator: impl Into<String>) -> Self {
        let locator = locator.into();
        let media_type = media_type_for(&locator).to_string();
        Self { locator, media_type }
    }

    pub fn is_remote(&self) -> bool {
        let l = self.locator.as_str();
        l.starts_with("http://") || l.starts_with("https://") || l.starts_with("data:")
    }

    pub fn path(&self) -> Option<&Path> {
        (!self.is_remote()).then(|| Path::new(&self.locator))
    }

    /// Remote locators only need a well-formed scheme; local ones must be an
    /// existing file.
    pub fn resolves(&self) -> bool {
        if self.locator.is_empty() {
            return false;
        }
        match self.path() {
            Some(p) => p.is_file(),
            None => self.locator.len() > "https://".len() || self.locator.starts_with("data:"),
        }
    }

    pub fn read_bytes(&self) -> std::io::Result<Vec<u8>> {
        match self.path() {
            Some(p) => std::fs::read(p),
            None => Err(std::io::Error::new(
                std::io::ErrorKind::Unsupported,
                format!("{} is not a local file", self.locator),
            )),
        }
    }

    /// A URL a chat endpoint can fetch: remote locators pass through, local
    /// files become base64 data URIs.
    pub fn to_url(&self) -> std::io::Result<String> {
        if self.is_remote() {
            return Ok(self.locator.clone());
        }
        let bytes = self.read_bytes()?;
        let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{};base64,{}", self.media_type, encoded))
    }

    /// Resolves a relative local locator against `base`.
    pub fn rebased(mut self, base: &Path) -> Self {
        if !self.is_remote() && Path::new(&self.locator).is_relative() {
            let joined: PathBuf = base.join(&self.locator);
            self.locator = joined.to_string_lossy().into_owned();
        }
        self
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.locator)
    }
}

pub fn media_type_for(locator: &str) -> &'static str {
    let ext = locator.rsplit('.').next().unwrap_or_default().to_ascii_lowercase();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        _ => "application/octet-stream",
    }
}
