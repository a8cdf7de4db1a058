//! Candidate token vocabulary and its rendering.

use std::path::Path;

use crate::error::{Error, Result};
use crate::task::TokenSeq;
use crate::util::sha256_hex;

/// The candidate vocabulary the policy searches over. Tokens are surface
/// strings: non-empty, whitespace-free, unique. Rendering a sequence joins
/// tokens with single spaces, so ids and surface words stay aligned 1:1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    hash: String,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Config("candidate vocabulary is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for token in &tokens {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "vocabulary token {token:?} must be non-empty and whitespace-free"
                )));
            }
            if !seen.insert(token.as_str()) {
                return Err(Error::Config(format!("duplicate vocabulary token {token:?}")));
            }
        }
        let hash = sha256_hex(tokens.join("\n").as_bytes());
        Ok(Vocab { tokens, hash })
    }

    /// Loads a JSON array of token strings.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = serde_json::from_str(&raw)?;
        Vocab::new(tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.tokens)?)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.tokens.iter().position(|t| t == token).map(|i| i as u32)
    }

    /// Content hash used to detect checkpoint/vocabulary mismatches.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Renders ids into a [`TokenSeq`]. Rendering is deterministic:
    /// identical ids always yield identical text.
    pub fn seq(&self, ids: &[u32]) -> Result<TokenSeq> {
        for &id in ids {
            if id as usize >= self.tokens.len() {
                return Err(Error::Argument(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.tokens.len()
                )));
            }
        }
        let text = ids.iter().map(|&id| self.tokens[id as usize].as_str()).collect::<Vec<_>>();
        Ok(TokenSeq { ids: ids.to_vec(), text: text.join(" ") })
    }
}
