//! Pluggable web search. Tests use [`FixtureSearch`]; deployments point
//! [`HttpSearch`] at a JSON search endpoint via `CAMPAIGN_SEARCH_URL`.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{str_arg, ToolErrorKind, ToolResult};

pub const SEARCH_URL_ENV: &str = "CAMPAIGN_SEARCH_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    #[serde(default)]
    pub snippet: String,
}

pub trait SearchProvider: Send + Sync {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchHit>, String>;
}

/// Canned results keyed by a case-insensitive substring of the query.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureSearch {
    pub entries: Vec<(String, Vec<SearchHit>)>,
}

impl SearchProvider for FixtureSearch {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchHit>, String> {
        let q = query.to_lowercase();
        Ok(self
            .entries
            .iter()
            .filter(|(k, _)| q.contains(&k.to_lowercase()))
            .flat_map(|(_, hits)| hits.iter().cloned())
            .take(max_results)
            .collect())
    }
}

/// `GET <url>?q=<query>&n=<max>`, answering a JSON list of hits or
/// `{"results": [...]}`.
pub struct HttpSearch {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("http client builds"),
        }
    }
}

impl SearchProvider for HttpSearch {
    fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchHit>, String> {
        let resp = self
            .client
            .get(&self.url)
            .query(&[("q", query), ("n", &max_results.to_string())])
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("search endpoint returned {}", resp.status()));
        }
        let body: Value = resp.json().map_err(|e| e.to_string())?;
        let list = body.get("results").cloned().unwrap_or(body);
        let mut hits: Vec<SearchHit> = serde_json::from_value(list).map_err(|e| e.to_string())?;
        hits.truncate(max_results);
        Ok(hits)
    }
}

/// HTTP provider if the environment names an endpoint, otherwise an empty fixture.
pub fn from_env() -> Arc<dyn SearchProvider> {
    match std::env::var(SEARCH_URL_ENV) {
        Ok(url) if !url.is_empty() => Arc::new(HttpSearch::new(url)),
        _ => Arc::new(FixtureSearch::default()),
    }
}

pub(crate) fn run(provider: &dyn SearchProvider, args: &Value) -> ToolResult {
    let query = str_arg(args, "query").unwrap_or_default();
    let max = args.get("max_results").and_then(Value::as_u64).unwrap_or(5).min(50) as usize;
    match provider.search(query, max) {
        Ok(hits) => ToolResult::record(json!({ "query": query, "results": hits })),
        Err(e) => ToolResult::error(ToolErrorKind::Provider, e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_matches_substrings() {
        let hit = SearchHit {
            title: "ReduceLROnPlateau".into(),
            url: "https://example.org/lr".into(),
            snippet: "verbose argument removed".into(),
        };
        let f = FixtureSearch {
            entries: vec![("plateau".into(), vec![hit.clone()])],
        };
        assert_eq!(f.search("ReduceLROnPlateau verbose", 5).unwrap(), vec![hit]);
        assert!(f.search("unrelated", 5).unwrap().is_empty());
    }
}
