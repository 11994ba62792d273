use super::record::TileKey;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store not found: {0}")]
    StoreNotFound(String),
    #[error("slide not found: {0}")]
    SlideNotFound(String),
    #[error("malformed metadata in {what}: {message}")]
    Metadata { what: String, message: String },
    #[error("integrity error in slide {slide_id}: {detail}")]
    Integrity { slide_id: String, detail: String },
    #[error("integrity error in slide {slide_id}: missing chunk for {key}")]
    MissingChunk { slide_id: String, key: TileKey },
    #[error("transport failure reading {what} after {attempts} attempt(s): {message}")]
    Transport { what: String, attempts: u32, message: String },
    #[error("cannot decode chunk {key} of slide {slide_id}: {message}")]
    Decode { slide_id: String, key: TileKey, message: String },
    #[error("out of bounds in slide {slide_id}: {detail}")]
    OutOfBounds { slide_id: String, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl StoreError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether a retry could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport { .. })
    }
}
