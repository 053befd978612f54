use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(DocumentId);
string_id!(
    /// `"<doc_id>#<ordinal>"`.
    ChunkId
);
string_id!(
    /// A normalized entity name (see [`normalize_entity_name`]).
    EntityId
);

impl DocumentId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Invalid("empty document id".into()));
        }
        Ok(Self(id))
    }
}

impl ChunkId {
    pub fn from_parts(doc: &DocumentId, ordinal: usize) -> Self {
        Self(format!("{}#{}", doc.0, ordinal))
    }

    /// Wraps an existing chunk id string without validation.
    pub fn from_raw(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl EntityId {
    /// Normalizes `raw` into an entity id.
    pub fn new(raw: &str) -> Result<Self> {
        normalize_entity_name(raw)
    }
}

/// Canonical, undirected relation identity: `source <= target`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId {
    pub source: EntityId,
    pub target: EntityId,
}

impl RelationId {
    /// Orders the endpoints. Returns `None` for a self-loop.
    pub fn new(a: EntityId, b: EntityId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self { source: a, target: b }),
            std::cmp::Ordering::Greater => Some(Self { source: b, target: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn touches(&self, e: &EntityId) -> bool {
        &self.source == e || &self.target == e
    }

    /// The endpoint opposite to `e`.
    pub fn other(&self, e: &EntityId) -> &EntityId {
        if &self.source == e {
            &self.target
        } else {
            &self.source
        }
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <-> {}", self.source, self.target)
    }
}

/// Trims, collapses whitespace and Title-Cases each token.
///
/// Tokens that already carry an uppercase letter after their first character
/// (acronyms such as `RoHS`) and tokens containing non-ASCII characters are
/// kept as written.
pub fn normalize_entity_name(raw: &str) -> Result<EntityId> {
    let tokens: Vec<String> = raw.split_whitespace().map(title_case_token).collect();
    if tokens.is_empty() {
        return Err(Error::Invalid("entity name is empty or whitespace".into()));
    }
    Ok(EntityId(tokens.join(" ")))
}

fn title_case_token(tok: &str) -> String {
    if !tok.is_ascii() || tok.chars().skip(1).any(|c| c.is_ascii_uppercase()) {
        return tok.to_string();
    }
    let mut chars = tok.chars();
    match chars.next() {
        Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collapses_and_title_cases() {
        assert_eq!(normalize_entity_name("abigail  breslin").unwrap().as_str(), "Abigail Breslin");
        assert_eq!(normalize_entity_name("  signs ").unwrap().as_str(), "Signs");
    }

    #[test]
    fn keeps_acronyms() {
        assert_eq!(normalize_entity_name("RoHS").unwrap().as_str(), "RoHS");
        assert_eq!(normalize_entity_name("peak forward current").unwrap().as_str(), "Peak Forward Current");
        assert_eq!(normalize_entity_name("NASA").unwrap().as_str(), "NASA");
    }

    #[test]
    fn non_ascii_tokens_untouched() {
        assert_eq!(normalize_entity_name("école normale").unwrap().as_str(), "école Normale");
    }

    #[test]
    fn whitespace_only_rejected() {
        assert!(normalize_entity_name("   \t ").is_err());
        assert!(normalize_entity_name("").is_err());
    }

    #[test]
    fn relation_id_is_canonical() {
        let a = EntityId::new("a").unwrap();
        let b = EntityId::new("b").unwrap();
        let ab = RelationId::new(a.clone(), b.clone()).unwrap();
        let ba = RelationId::new(b.clone(), a.clone()).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.source, a);
        assert_eq!(ab.other(&a), &b);
        assert!(RelationId::new(a.clone(), a).is_none());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(raw in "[ a-zA-Zé]{0,30}") {
            if let Ok(id) = normalize_entity_name(&raw) {
                let again = normalize_entity_name(id.as_str()).unwrap();
                prop_assert_eq!(again, id);
            }
        }
    }
}
