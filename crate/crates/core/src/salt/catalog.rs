//! Template catalog and word bank (a human-editable JSON data file).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{derive_constituents, Complexity, Constituent, ConstituentLabel, Pos, SaltError};

static BUNDLED: &str = include_str!("../../data/salt_catalog.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTemplate {
    pub name: String,
    pub complexity: Complexity,
    /// Word-bank categories, one per token (`pos` or `pos.class`).
    pub slots: Vec<String>,
    pub constituents: Vec<(ConstituentLabel, usize, usize)>,
}

impl SentenceTemplate {
    pub fn pos_sequence(&self) -> Vec<Pos> {
        self.slots
            .iter()
            .map(|s| Pos::from_tag(s).expect("validated at load"))
            .collect()
    }

    pub fn constituent_spans(&self) -> Vec<Constituent> {
        self.constituents
            .iter()
            .map(|&(label, start, end)| Constituent { label, start, end })
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
struct CatalogFile {
    word_bank: BTreeMap<String, Vec<String>>,
    templates: Vec<SentenceTemplate>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub word_bank: BTreeMap<String, Vec<String>>,
    pub templates: Vec<SentenceTemplate>,
    pos: BTreeMap<String, Pos>,
}

impl Catalog {
    pub fn bundled() -> Catalog {
        Catalog::from_json(BUNDLED).expect("bundled catalog is valid")
    }

    pub fn from_path(path: &Path) -> Result<Catalog, SaltError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SaltError::Catalog(format!("{}: {e}", path.display())))?;
        Catalog::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Catalog, SaltError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| SaltError::Catalog(e.to_string()))?;
        let mut pos = BTreeMap::new();
        for (tag, words) in &file.word_bank {
            let p = Pos::from_tag(tag)
                .ok_or_else(|| SaltError::Catalog(format!("unknown part of speech in `{tag}`")))?;
            if words.is_empty() {
                return Err(SaltError::Catalog(format!("category `{tag}` is empty")));
            }
            for w in words {
                if let Some(prev) = pos.insert(w.clone(), p) {
                    if prev != p {
                        return Err(SaltError::Catalog(format!(
                            "`{w}` listed under two parts of speech"
                        )));
                    }
                }
            }
        }
        for t in &file.templates {
            for s in &t.slots {
                if !file.word_bank.contains_key(s) {
                    return Err(SaltError::Catalog(format!(
                        "template {}: no word-bank category `{s}`",
                        t.name
                    )));
                }
            }
            let spans = t.constituent_spans();
            let mut cursor = 0;
            for c in &spans {
                if c.start != cursor || c.end <= c.start {
                    return Err(SaltError::Catalog(format!(
                        "template {}: constituents do not partition the sentence",
                        t.name
                    )));
                }
                cursor = c.end;
            }
            if cursor != t.slots.len() {
                return Err(SaltError::Catalog(format!(
                    "template {}: constituents cover {cursor} of {} tokens",
                    t.name,
                    t.slots.len()
                )));
            }
            if derive_constituents(&t.pos_sequence()) != spans {
                return Err(SaltError::Catalog(format!(
                    "template {}: bracketing disagrees with the chunker",
                    t.name
                )));
            }
        }
        Ok(Catalog {
            word_bank: file.word_bank,
            templates: file.templates,
            pos,
        })
    }

    pub fn pos_of(&self, word: &str) -> Option<Pos> {
        self.pos.get(word).copied().or_else(|| {
            let lower = word.to_lowercase();
            self.pos.get(&lower).copied()
        })
    }

    pub fn templates_at(&self, complexity: Complexity) -> Vec<&SentenceTemplate> {
        self.templates
            .iter()
            .filter(|t| t.complexity == complexity)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_loads() {
        let c = Catalog::bundled();
        for cx in [
            Complexity::Simple,
            Complexity::Intermediate,
            Complexity::Complex,
        ] {
            assert!(c.templates_at(cx).len() >= 4);
        }
        assert_eq!(c.pos_of("elephant"), Some(Pos::Noun));
        assert_eq!(c.pos_of("Giant"), Some(Pos::Adj));
    }

    #[test]
    fn rejects_non_partitioning_spans() {
        let bad = r#"{"word_bank": {"adj": ["red"], "noun.thing": ["box"]},
            "templates": [{"name": "x", "complexity": "simple", "slots": ["adj", "noun.thing"],
            "constituents": [["subject", 0, 1]]}]}"#;
        assert!(matches!(
            Catalog::from_json(bad),
            Err(SaltError::Catalog(_))
        ));
    }
}
