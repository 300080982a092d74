use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ConfigError;

/// Substrings a verification query may never contain: the robot must not
/// ask outright whether something went wrong.
pub const FORBIDDEN_QUERY_TOKENS: &[&str] = &["error", "mistake", "wrong", "fail"];

const BUILTIN_POOL: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../queries/pool.json"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    queries: Vec<String>,
}

/// Validated set of yes/no query templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPool {
    templates: Arc<[String]>,
}

impl QueryPool {
    pub fn new(templates: Vec<String>) -> Result<Self, ConfigError> {
        if templates.is_empty() {
            return Err(ConfigError::Invalid("query pool is empty".into()));
        }
        for q in &templates {
            if let Some(bad) = forbidden_token(q) {
                return Err(ConfigError::Invalid(format!("query {q:?} contains forbidden token {bad:?}")));
            }
            if q.trim().is_empty() {
                return Err(ConfigError::Invalid("query pool contains an empty template".into()));
            }
        }
        Ok(Self { templates: templates.into() })
    }

    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let file: PoolFile = serde_json::from_str(json)?;
        Self::new(file.queries)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_POOL).expect("shipped query pool is valid")
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }
}

pub fn forbidden_token(text: &str) -> Option<&'static str> {
    let lower = text.to_lowercase();
    FORBIDDEN_QUERY_TOKENS.iter().copied().find(|t| lower.contains(t))
}

/// Picks the next query given the queries already asked.
///
/// The first query is always the pool's first template. Later picks are
/// uniform over the pool minus the previous query, drawn from a ChaCha stream
/// keyed by `(seed, history length)`.
pub fn generate_query(pool: &QueryPool, seed: u64, history: &[String]) -> String {
    pool.templates[pick(pool, seed, history.len() as u64, history.last().map(String::as_str))].clone()
}

fn pick(pool: &QueryPool, seed: u64, issued: u64, previous: Option<&str>) -> usize {
    let Some(previous) = previous else { return 0 };
    let candidates: Vec<usize> = (0..pool.templates.len()).filter(|&i| pool.templates[i] != previous).collect();
    if candidates.is_empty() {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(issued);
    candidates[rng.random_range(0..candidates.len())]
}

/// Stateful wrapper over [`generate_query`] that remembers only what the
/// pick depends on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGenerator {
    pool: QueryPool,
    seed: u64,
    issued: u64,
    previous: Option<usize>,
}

impl QueryGenerator {
    pub fn new(pool: QueryPool, seed: u64) -> Self {
        Self { pool, seed, issued: 0, previous: None }
    }

    pub fn next_query(&mut self) -> String {
        let previous = self.previous.map(|i| self.pool.templates[i].as_str());
        let i = pick(&self.pool, self.seed, self.issued, previous);
        self.issued += 1;
        self.previous = Some(i);
        self.pool.templates[i].clone()
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }
}
