//! Byte sources behind a store root.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportErrorKind {
    NotFound,
    /// Network hiccups, 5xx responses, timeouts.
    Retryable,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub kind: TransportErrorKind,
    pub message: String,
}

impl TransportError {
    pub fn new(kind: TransportErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl std::error::Error for TransportError {}

/// Resolves store-relative paths to bytes. Implementations must be safe to
/// call from many threads at once.
pub trait Transport: Send + Sync {
    /// Whole object.
    fn get(&self, path: &str) -> Result<Vec<u8>, TransportError>;

    /// Exactly `length` bytes starting at `offset`.
    fn get_range(&self, path: &str, offset: u64, length: u64) -> Result<Vec<u8>, TransportError>;

    fn describe(&self) -> String;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn get(&self, path: &str) -> Result<Vec<u8>, TransportError> {
        (**self).get(path)
    }

    fn get_range(&self, path: &str, offset: u64, length: u64) -> Result<Vec<u8>, TransportError> {
        (**self).get_range(path, offset, length)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

pub struct LocalTransport {
    root: PathBuf,
}

impl LocalTransport {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }

    fn resolve(&self, path: &str) -> Result<PathBuf, TransportError> {
        if path.starts_with("http://") || path.starts_with("https://") {
            return Err(TransportError::new(
                TransportErrorKind::Fatal,
                format!("{path}: URL locators need an HTTP store root"),
            ));
        }
        Ok(self.root.join(path))
    }
}

fn io_error(path: &Path, e: io::Error) -> TransportError {
    let kind = match e.kind() {
        io::ErrorKind::NotFound => TransportErrorKind::NotFound,
        io::ErrorKind::Interrupted | io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => {
            TransportErrorKind::Retryable
        }
        _ => TransportErrorKind::Fatal,
    };
    TransportError::new(kind, format!("{}: {e}", path.display()))
}

impl Transport for LocalTransport {
    fn get(&self, path: &str) -> Result<Vec<u8>, TransportError> {
        let full = self.resolve(path)?;
        std::fs::read(&full).map_err(|e| io_error(&full, e))
    }

    fn get_range(&self, path: &str, offset: u64, length: u64) -> Result<Vec<u8>, TransportError> {
        let full = self.resolve(path)?;
        let mut file = File::open(&full).map_err(|e| io_error(&full, e))?;
        file.seek(SeekFrom::Start(offset)).map_err(|e| io_error(&full, e))?;
        let mut buf = vec![0u8; length as usize];
        file.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => TransportError::new(
                TransportErrorKind::Fatal,
                format!("{}: range {offset}+{length} past end of file", full.display()),
            ),
            _ => io_error(&full, e),
        })?;
        Ok(buf)
    }

    fn describe(&self) -> String {
        format!("file://{}", self.root.display())
    }
}

/// HTTP(S) source. Byte ranges use `Range: bytes=<first>-<last>`.
pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build();
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent: config.into(),
        }
    }

    fn url(&self, path: &str) -> String {
        if path.starts_with("http://") || path.starts_with("https://") {
            path.to_string()
        } else {
            format!("{}/{}", self.base, path.trim_start_matches('/'))
        }
    }

    fn fetch(&self, url: &str, range: Option<(u64, u64)>) -> Result<(u16, Vec<u8>), TransportError> {
        let mut req = self.agent.get(url);
        if let Some((offset, length)) = range {
            req = req.header("Range", format!("bytes={}-{}", offset, offset + length - 1));
        }
        let mut resp = req
            .call()
            .map_err(|e| TransportError::new(TransportErrorKind::Retryable, format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| TransportError::new(TransportErrorKind::Retryable, format!("{url}: {e}")))?;
        match status {
            200..=299 => Ok((status, body)),
            404 | 410 => Err(TransportError::new(TransportErrorKind::NotFound, format!("{url}: HTTP {status}"))),
            408 | 429 | 500..=599 => Err(TransportError::new(
                TransportErrorKind::Retryable,
                format!("{url}: HTTP {status}"),
            )),
            _ => Err(TransportError::new(TransportErrorKind::Fatal, format!("{url}: HTTP {status}"))),
        }
    }
}

impl Transport for HttpTransport {
    fn get(&self, path: &str) -> Result<Vec<u8>, TransportError> {
        self.fetch(&self.url(path), None).map(|(_, body)| body)
    }

    fn get_range(&self, path: &str, offset: u64, length: u64) -> Result<Vec<u8>, TransportError> {
        if length == 0 {
            return Ok(Vec::new());
        }
        let url = self.url(path);
        let (status, body) = self.fetch(&url, Some((offset, length)))?;
        let (start, end) = if status == 206 {
            (0, length as usize)
        } else {
            // Server ignored the range and sent the whole object.
            (offset as usize, (offset + length) as usize)
        };
        if body.len() < end {
            return Err(TransportError::new(
                TransportErrorKind::Retryable,
                format!("{url}: short body ({} bytes) for range {offset}+{length}", body.len()),
            ));
        }
        Ok(body[start..end].to_vec())
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}

/// Wraps another transport, adding a fixed per-read latency and counting
/// reads. Used by the benchmark harness and tests.
pub struct InstrumentedTransport<T> {
    inner: T,
    latency: Duration,
    reads: AtomicU64,
    bytes: AtomicU64,
}

impl<T: Transport> InstrumentedTransport<T> {
    pub fn new(inner: T, latency: Duration) -> Self {
        Self {
            inner,
            latency,
            reads: AtomicU64::new(0),
            bytes: AtomicU64::new(0),
        }
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn bytes_read(&self) -> u64 {
        self.bytes.load(Ordering::SeqCst)
    }

    fn account<R>(&self, res: Result<Vec<u8>, R>) -> Result<Vec<u8>, R> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        if let Ok(b) = &res {
            self.bytes.fetch_add(b.len() as u64, Ordering::SeqCst);
        }
        res
    }
}

impl<T: Transport> Transport for InstrumentedTransport<T> {
    fn get(&self, path: &str) -> Result<Vec<u8>, TransportError> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        self.account(self.inner.get(path))
    }

    fn get_range(&self, path: &str, offset: u64, length: u64) -> Result<Vec<u8>, TransportError> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        self.account(self.inner.get_range(path, offset, length))
    }

    fn describe(&self) -> String {
        format!("{} (+{:?} latency)", self.inner.describe(), self.latency)
    }
}
