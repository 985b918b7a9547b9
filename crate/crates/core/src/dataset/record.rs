use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tokenizer::{encode_protein, ProteinRecord, StructureInput, Vocabulary};

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    pub sequence: String,
    pub structure_tokens: Vec<usize>,
    pub answer: String,
    pub class: usize,
    pub keywords: Vec<String>,
}

impl QaRecord {
    pub fn protein(&self) -> ProteinRecord {
        ProteinRecord {
            id: self.id.clone(),
            sequence: self.sequence.clone(),
            structure: StructureInput::Codes(self.structure_tokens.clone()),
        }
    }

    pub fn residues(&self) -> usize {
        self.sequence.chars().count()
    }
}

/// A record mapped to vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRecord {
    pub id: String,
    pub question: Vec<usize>,
    pub t_s: Vec<usize>,
    pub t_x: Vec<usize>,
    pub answer: Vec<usize>,
}

impl EncodedRecord {
    pub fn encode(rec: &QaRecord, vocab: &Vocabulary) -> Result<Self> {
        let (t_s, t_x) = encode_protein(&rec.protein(), vocab, None)?;
        Ok(Self {
            id: rec.id.clone(),
            question: vocab.encode_text(&rec.question),
            t_s,
            t_x,
            answer: vocab.encode_text(&rec.answer),
        })
    }
}

pub fn encode_records(records: &[QaRecord], vocab: &Vocabulary) -> Result<Vec<EncodedRecord>> {
    records.iter().map(|r| EncodedRecord::encode(r, vocab)).collect()
}

/// Writes one JSON object per line.
pub fn save_dataset(records: &[QaRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(&out).map_err(|e| CoreError::io(path, e))
}

/// Reads a JSONL dataset. Blank lines are skipped; a malformed line fails
/// with its 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<QaRecord>> {
    let f = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
