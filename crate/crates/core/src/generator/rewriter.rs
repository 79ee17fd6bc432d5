use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the bearer token for [`HttpRewriter`].
pub const TOKEN_ENV: &str = "NAVSYNTH_REWRITER_TOKEN";

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("no recorded response for prompt {0:?}")]
    MissingFixture(String),
    #[error("fixture {path}:{line}: {message}")]
    Fixture { path: String, line: usize, message: String },
    #[error("rewriter request failed: {0}")]
    Http(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Turns a prompt into rewritten text. Implementations are shared across
/// worker threads.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, prompt: &str) -> Result<String, RewriteError>;
}

/// Returns the prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn rewrite(&self, prompt: &str) -> Result<String, RewriteError> {
        Ok(prompt.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt: String,
    pub text: String,
}

/// Plays back recorded responses from a JSONL file of `{"prompt", "text"}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureRewriter {
    responses: HashMap<String, String>,
}

impl FixtureRewriter {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        Self { responses: entries.into_iter().map(|e| (e.prompt, e.text)).collect() }
    }

    pub fn load(path: &Path) -> Result<Self, RewriteError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| RewriteError::Fixture {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Rewriter for FixtureRewriter {
    fn rewrite(&self, prompt: &str) -> Result<String, RewriteError> {
        self.responses
            .get(prompt)
            .cloned()
            .ok_or_else(|| RewriteError::MissingFixture(prompt.to_string()))
    }
}

/// POSTs `{"prompt": ...}` to an endpoint that answers `{"text": ...}`.
pub struct HttpRewriter {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct HttpResponse {
    text: String,
}

impl HttpRewriter {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        Self { url: url.into(), token, agent: ureq::Agent::new_with_defaults() }
    }

    /// Reads the bearer token from [`TOKEN_ENV`] if set.
    pub fn from_env(url: impl Into<String>) -> Self {
        Self::new(url, std::env::var(TOKEN_ENV).ok())
    }
}

impl std::fmt::Debug for HttpRewriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpRewriter")
            .field("url", &self.url)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl Rewriter for HttpRewriter {
    fn rewrite(&self, prompt: &str) -> Result<String, RewriteError> {
        let mut request = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(HttpRequest { prompt })
            .map_err(|e| RewriteError::Http(e.to_string()))?;
        let body: HttpResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| RewriteError::Http(e.to_string()))?;
        Ok(body.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn identity_is_verbatim() {
        assert_eq!(IdentityRewriter.rewrite("Go north.").unwrap(), "Go north.");
    }

    #[test]
    fn fixture_playback() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", serde_json::json!({"prompt": "p1", "text": "t1"})).unwrap();
        writeln!(f).unwrap();
        let r = FixtureRewriter::load(f.path()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.rewrite("p1").unwrap(), "t1");
        assert!(matches!(r.rewrite("p2"), Err(RewriteError::MissingFixture(_))));
    }

    #[test]
    fn fixture_parse_error_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", serde_json::json!({"prompt": "p1", "text": "t1"})).unwrap();
        writeln!(f, "{{\"prompt\": 3}}").unwrap();
        let err = FixtureRewriter::load(f.path()).unwrap_err();
        assert!(matches!(err, RewriteError::Fixture { line: 2, .. }), "{err}");
    }

    #[test]
    fn token_is_redacted_in_debug() {
        let r = HttpRewriter::new("http://localhost:1/rewrite", Some("secret".into()));
        assert!(!format!("{r:?}").contains("secret"));
    }
}
