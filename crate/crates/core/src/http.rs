// SPDX-License-Identifier: MIT OR Apache-2.0

//! Blocking GET with an optional on-disk response cache.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Directory for cached responses, read from this variable when set.
pub const CACHE_DIR_ENV: &str = "PRISM_CACHE_DIR";

#[derive(Clone)]
pub struct CachedHttp {
    agent: ureq::Agent,
    cache_dir: Option<PathBuf>,
}

/// Outcome of a GET: body, or a 404 the caller may treat as "absent".
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fetched {
    Body(String),
    NotFound,
}

const NOT_FOUND_MARKER: &str = "\u{0}404";

impl CachedHttp {
    pub fn new(timeout: Duration, cache_dir: Option<PathBuf>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent(concat!("prism/", env!("CARGO_PKG_VERSION")))
            .build();
        CachedHttp {
            agent: ureq::Agent::new_with_config(config),
            cache_dir,
        }
    }

    /// Cache directory from [`CACHE_DIR_ENV`], if set.
    pub fn from_env(timeout: Duration) -> Self {
        Self::new(timeout, std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
    }

    fn cache_path(&self, url: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(hex::encode(Sha256::digest(url.as_bytes()))))
    }

    pub fn get(&self, url: &str) -> Result<Fetched> {
        if let Some(p) = self.cache_path(url) {
            if let Ok(cached) = fs::read_to_string(&p) {
                log::debug!("cache hit for {url}");
                return Ok(if cached == NOT_FOUND_MARKER {
                    Fetched::NotFound
                } else {
                    Fetched::Body(cached)
                });
            }
        }
        let mut resp = self
            .agent
            .get(url)
            .call()
            .map_err(|e| Error::Http(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let fetched = match status {
            200..=299 => Fetched::Body(
                resp.body_mut()
                    .read_to_string()
                    .map_err(|e| Error::Http(format!("{url}: {e}")))?,
            ),
            404 => Fetched::NotFound,
            other => return Err(Error::Http(format!("{url}: status {other}"))),
        };
        if let Some(p) = self.cache_path(url) {
            let text = match &fetched {
                Fetched::Body(b) => b.as_str(),
                Fetched::NotFound => NOT_FOUND_MARKER,
            };
            crate::io::write_atomic(&p, text.as_bytes())?;
        }
        Ok(fetched)
    }
}

#[cfg(test)]
pub(crate) mod testserver {
    //! Minimal HTTP/1.1 server answering from a route table.

    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    pub struct TestServer {
        pub base: String,
        pub hits: Arc<AtomicUsize>,
    }

    /// Serve `routes` (path prefix, status, body) until the process exits.
    pub fn serve(routes: Vec<(String, u16, String)>) -> TestServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                loop {
                    let mut h = String::new();
                    if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
                        break;
                    }
                }
                let (status, body) = routes
                    .iter()
                    .find(|(p, _, _)| path.starts_with(p.as_str()))
                    .map(|(_, s, b)| (*s, b.clone()))
                    .unwrap_or((404, String::new()));
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        TestServer { base, hits }
    }
}
