use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::{detokenize, pretokenize};
use crate::error::{CoreError, Result};

/// The 20 standard amino acids in token order.
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

pub mod specials {
    pub const PAD: &str = "<PAD>";
    pub const UNK: &str = "<UNK>";
    pub const BOS: &str = "<BOS>";
    pub const EOS: &str = "<EOS>";
    pub const SEP: &str = "<SEP>";
    pub const PROT_S: &str = "<PROT_S>";
    pub const PROT_S_END: &str = "</PROT_S>";
    pub const PROT_X: &str = "<PROT_X>";
    pub const PROT_X_END: &str = "</PROT_X>";

    pub const ALL: [&str; 9] = [PAD, UNK, BOS, EOS, SEP, PROT_S, PROT_S_END, PROT_X, PROT_X_END];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Special,
    Text,
    AminoAcid,
    Structure,
}

/// Token ids are laid out as `specials | text | amino acids | structure`,
/// so the protein tokens form the tail of the table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    n_text: usize,
    n_structure: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: BTreeMap<String, usize>,
    ranges: BTreeMap<String, [usize; 2]>,
}

impl Vocabulary {
    /// Word-level vocabulary from `corpus`. Words with count `>= min_count`
    /// are kept, ordered by count descending then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize, n_structure: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for w in pretokenize(line.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !specials::ALL.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = specials::ALL.iter().map(|s| s.to_string()).collect();
        let n_text = words.len();
        tokens.extend(words.into_iter().map(|(w, _)| w));
        tokens.extend(AMINO_ACIDS.chars().map(|c| format!("<AA_{c}>")));
        tokens.extend((0..n_structure).map(|j| format!("<STR_{j}>")));
        Self::from_tokens(tokens, n_text, n_structure)
    }

    fn from_tokens(tokens: Vec<String>, n_text: usize, n_structure: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            n_text,
            n_structure,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special_range(&self) -> Range<usize> {
        0..specials::ALL.len()
    }

    pub fn text_range(&self) -> Range<usize> {
        let s = specials::ALL.len();
        s..s + self.n_text
    }

    pub fn amino_range(&self) -> Range<usize> {
        let s = self.text_range().end;
        s..s + AMINO_ACIDS.len()
    }

    pub fn structure_range(&self) -> Range<usize> {
        let s = self.amino_range().end;
        s..s + self.n_structure
    }

    /// Number of amino-acid plus structure tokens.
    pub fn protein_count(&self) -> usize {
        AMINO_ACIDS.len() + self.n_structure
    }

    pub fn class_of(&self, id: usize) -> Option<TokenClass> {
        if self.special_range().contains(&id) {
            Some(TokenClass::Special)
        } else if self.text_range().contains(&id) {
            Some(TokenClass::Text)
        } else if self.amino_range().contains(&id) {
            Some(TokenClass::AminoAcid)
        } else if self.structure_range().contains(&id) {
            Some(TokenClass::Structure)
        } else {
            None
        }
    }

    /// Id of a special token. Panics on a name outside [`specials::ALL`].
    pub fn special(&self, name: &str) -> usize {
        let id = specials::ALL
            .iter()
            .position(|s| *s == name)
            .unwrap_or_else(|| panic!("{name} is not a special token"));
        debug_assert_eq!(self.tokens[id], name);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn amino_token(&self, letter: char) -> Option<usize> {
        AMINO_ACIDS.find(letter).map(|i| self.amino_range().start + i)
    }

    pub fn structure_token(&self, code: usize) -> Option<usize> {
        (code < self.n_structure).then(|| self.structure_range().start + code)
    }

    /// Word ids for `text`; out-of-vocabulary words map to `<UNK>`.
    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        let unk = self.special(specials::UNK);
        pretokenize(text)
            .iter()
            .map(|w| match self.index.get(w) {
                Some(&id) if self.text_range().contains(&id) => id,
                _ => unk,
            })
            .collect()
    }

    /// Text for `ids`, skipping specials other than `<UNK>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let unk = self.special(specials::UNK);
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id == unk || !self.special_range().contains(&id))
            .filter_map(|&id| self.token(id))
            .collect();
        detokenize(&words)
    }

    pub fn to_json(&self) -> Result<String> {
        let tokens = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut ranges = BTreeMap::new();
        for (name, r) in [
            ("special", self.special_range()),
            ("text", self.text_range()),
            ("amino_acid", self.amino_range()),
            ("structure", self.structure_range()),
        ] {
            ranges.insert(name.to_string(), [r.start, r.end]);
        }
        Ok(serde_json::to_string_pretty(&VocabFile { tokens, ranges })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        let fmt = |m: String| CoreError::Format {
            kind: "vocabulary",
            message: m,
        };
        let n = file.tokens.len();
        let mut tokens = vec![String::new(); n];
        for (tok, id) in file.tokens {
            let slot = tokens
                .get_mut(id)
                .ok_or_else(|| fmt(format!("id {id} for {tok} is outside 0..{n}")))?;
            *slot = tok;
        }
        if let Some(empty) = tokens.iter().position(String::is_empty) {
            return Err(fmt(format!("id {empty} is unassigned")));
        }
        let range = |name: &str| {
            file.ranges
                .get(name)
                .copied()
                .ok_or_else(|| fmt(format!("missing range {name}")))
        };
        let text = range("text")?;
        let structure = range("structure")?;
        let vocab = Self::from_tokens(tokens, text[1] - text[0], structure[1] - structure[0]);
        for (i, s) in specials::ALL.iter().enumerate() {
            if vocab.tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(fmt(format!("expected {s} at id {i}")));
            }
        }
        if vocab.structure_range().end != vocab.len() || text[0] != specials::ALL.len() {
            return Err(fmt("class ranges do not match the token table".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_json(&text)
    }
}
