use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::metric_tokens;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub canonical: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Keyword phrases and their aliases, matched case-insensitively on
/// metric tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordLexicon {
    entries: Vec<LexiconEntry>,
    #[serde(skip)]
    surfaces: Vec<(Vec<String>, usize)>,
}

impl KeywordLexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CoreError::invalid("empty keyword lexicon"));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(metric_tokens(&e.canonical)) {
                return Err(CoreError::invalid(format!("duplicate keyword {:?}", e.canonical)));
            }
        }
        let mut lex = Self {
            entries,
            surfaces: Vec::new(),
        };
        lex.index();
        Ok(lex)
    }

    fn index(&mut self) {
        self.surfaces = self
            .entries
            .iter()
            .enumerate()
            .flat_map(|(i, e)| std::iter::once(&e.canonical).chain(&e.aliases).map(move |s| (metric_tokens(s), i)))
            .filter(|(t, _)| !t.is_empty())
            .collect();
        // Longest surface first; stable so earlier entries win exact ties.
        self.surfaces.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: KeywordLexicon = serde_json::from_str(text)?;
        Self::new(raw.entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Canonical keywords whose surface form or alias occurs in `text`.
///
/// Scans left to right taking the longest match at each position, so a
/// phrase nested inside a longer match is not reported unless it also
/// occurs on its own.
pub fn extract_keywords(text: &str, lexicon: &KeywordLexicon) -> BTreeSet<String> {
    let toks = metric_tokens(text);
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < toks.len() {
        let hit = lexicon
            .surfaces
            .iter()
            .find(|(s, _)| toks.len() - i >= s.len() && toks[i..i + s.len()] == s[..]);
        match hit {
            Some((s, e)) => {
                found.insert(lexicon.entries[*e].canonical.clone());
                i += s.len();
            }
            None => i += 1,
        }
    }
    found
}
