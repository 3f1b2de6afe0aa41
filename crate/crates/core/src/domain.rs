use serde::{Deserialize, Serialize};

/// A data domain. Index 0 is always the source domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainId {
    pub index: usize,
    pub name: String,
}

impl DomainId {
    pub fn new(index: usize, name: impl Into<String>) -> Self {
        Self {
            index,
            name: name.into(),
        }
    }

    pub fn source() -> Self {
        Self::new(0, "source")
    }

    pub fn target() -> Self {
        Self::new(1, "target")
    }

    pub fn is_source(&self) -> bool {
        self.index == 0
    }

    /// The usual source/target pair.
    pub fn pair() -> Vec<Self> {
        vec![Self::source(), Self::target()]
    }
}

impl std::fmt::Display for DomainId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name)
    }
}
