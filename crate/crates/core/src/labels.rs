//! Label-name sidecar files: one label per line, line `i` (zero-based) naming class `i`.
//! Blank lines keep their id but have no name.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown label {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn parse(text: &str) -> Self {
        Self {
            names: text.lines().map(|l| l.trim().to_string()).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabelError> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str).filter(|s| !s.is_empty())
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| !n.is_empty() && n == name)
    }

    /// Maps names to ids. Purely numeric entries are taken as ids directly.
    pub fn resolve<S: AsRef<str>>(&self, names: &[S]) -> Result<BTreeSet<usize>, LabelError> {
        names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                self.id(n)
                    .or_else(|| n.parse().ok())
                    .ok_or_else(|| LabelError::Unknown(n.to_string()))
            })
            .collect()
    }
}
