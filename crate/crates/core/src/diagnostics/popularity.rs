// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subject popularity (page views) lookup.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

/// Path-safe characters of article titles stay unescaped.
const TITLE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'_').remove(b'-').remove(b'.').remove(b'~');
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{CachedHttp, Fetched};

/// Base URL override for the pageview client.
pub const PAGEVIEW_URL_ENV: &str = "PRISM_PAGEVIEW_URL";
pub const DEFAULT_PAGEVIEW_URL: &str =
    "https://wikimedia.org/api/rest_v1/metrics/pageviews/per-article/en.wikipedia/all-access/all-agents";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityRecord {
    pub subject: String,
    pub views: u64,
}

pub trait PopularitySource: Send + Sync {
    /// `None` when the source has no record for the subject.
    fn lookup(&self, subject: &str) -> Result<Option<u64>>;
}

/// `subject<TAB>views` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TsvPopularity {
    records: BTreeMap<String, u64>,
}

impl TsvPopularity {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (subject, views) = line.rsplit_once('\t').ok_or_else(|| {
                Error::InvalidInput(format!("popularity line {}: expected subject<TAB>views", n + 1))
            })?;
            let views: u64 = views.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("popularity line {}: bad view count `{views}`", n + 1))
            })?;
            records.insert(subject.to_string(), views);
        }
        Ok(TsvPopularity { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_to_string(path)?)
    }

    pub fn insert(&mut self, subject: &str, views: u64) {
        self.records.insert(subject.to_string(), views);
    }

    pub fn to_tsv(&self) -> String {
        self.records.iter().map(|(s, v)| format!("{s}\t{v}\n")).collect()
    }
}

impl FromIterator<(String, u64)> for TsvPopularity {
    fn from_iter<I: IntoIterator<Item = (String, u64)>>(iter: I) -> Self {
        TsvPopularity {
            records: iter.into_iter().collect(),
        }
    }
}

impl PopularitySource for TsvPopularity {
    fn lookup(&self, subject: &str) -> Result<Option<u64>> {
        Ok(self.records.get(subject).copied())
    }
}

/// Client for a per-article monthly pageview endpoint. Views are the mean of
/// the monthly counts over the configured year.
pub struct PageviewClient {
    http: CachedHttp,
    base_url: String,
    year: u32,
    memo: Mutex<BTreeMap<String, Option<u64>>>,
}

#[derive(Deserialize)]
struct PageviewResponse {
    items: Vec<PageviewItem>,
}

#[derive(Deserialize)]
struct PageviewItem {
    views: u64,
}

impl PageviewClient {
    pub fn new(base_url: &str, year: u32, http: CachedHttp) -> Self {
        PageviewClient {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            year,
            memo: Mutex::new(BTreeMap::new()),
        }
    }

    /// Base URL from [`PAGEVIEW_URL_ENV`] (or the public endpoint) and cache
    /// directory from the environment.
    pub fn from_env(year: u32, timeout: Duration) -> Self {
        let base = std::env::var(PAGEVIEW_URL_ENV).unwrap_or_else(|_| DEFAULT_PAGEVIEW_URL.into());
        Self::new(&base, year, CachedHttp::from_env(timeout))
    }

    fn url(&self, subject: &str) -> String {
        let title = subject.trim().replace(' ', "_");
        format!(
            "{}/{}/monthly/{y}010100/{y}123100",
            self.base_url,
            utf8_percent_encode(&title, TITLE),
            y = self.year
        )
    }
}

impl PopularitySource for PageviewClient {
    fn lookup(&self, subject: &str) -> Result<Option<u64>> {
        if let Some(v) = self.memo.lock().expect("memo lock").get(subject) {
            return Ok(*v);
        }
        let views = match self.http.get(&self.url(subject))? {
            Fetched::NotFound => None,
            Fetched::Body(body) => {
                let r: PageviewResponse = serde_json::from_str(&body)?;
                if r.items.is_empty() {
                    Some(0)
                } else {
                    let total: u64 = r.items.iter().map(|i| i.views).sum();
                    Some(total / r.items.len() as u64)
                }
            }
        };
        self.memo.lock().expect("memo lock").insert(subject.to_string(), views);
        Ok(views)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testserver;

    #[test]
    fn tsv_lookup() {
        let p = TsvPopularity::parse("Thomas Ong\t1418\nSonar Kollektiv\t215\n").unwrap();
        assert_eq!(p.lookup("Thomas Ong").unwrap(), Some(1418));
        assert_eq!(p.lookup("Nobody").unwrap(), None);
        assert!(TsvPopularity::parse("x\ty\n").is_err());
        assert_eq!(TsvPopularity::parse(&p.to_tsv()).unwrap(), p);
    }

    #[test]
    fn pageview_client_averages_months() {
        let body = r#"{"items":[{"views":1000},{"views":2000},{"views":3000}]}"#;
        let server = testserver::serve(vec![
            ("/Thomas_Ong/monthly/2019".into(), 200, body.into()),
            ("/Empty/".into(), 200, r#"{"items":[]}"#.into()),
        ]);
        let client = PageviewClient::new(
            &server.base,
            2019,
            CachedHttp::new(Duration::from_secs(5), None),
        );
        assert_eq!(client.lookup("Thomas Ong").unwrap(), Some(2000));
        assert_eq!(client.lookup("Thomas Ong").unwrap(), Some(2000));
        assert_eq!(client.lookup("Empty").unwrap(), Some(0));
        assert_eq!(client.lookup("Missing Page").unwrap(), None);
    }
}
