use super::codebook::{quantize_structure, Codebook};
use super::vocab::Vocabulary;
use crate::error::{CoreError, Result};

/// Per-residue structure information: raw features to quantize, or code
/// indices that are already quantized.
#[derive(Debug, Clone, PartialEq)]
pub enum StructureInput {
    Features(Vec<Vec<f32>>),
    Codes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinRecord {
    pub id: String,
    pub sequence: String,
    pub structure: StructureInput,
}

/// Sequence and structure token ids for `record`, one of each per residue.
pub fn encode_protein(
    record: &ProteinRecord,
    vocab: &Vocabulary,
    codebook: Option<&Codebook>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if record.sequence.is_empty() {
        return Err(CoreError::EmptyProtein);
    }
    let t_s = record
        .sequence
        .chars()
        .enumerate()
        .map(|(index, letter)| vocab.amino_token(letter).ok_or(CoreError::UnknownResidue { index, letter }))
        .collect::<Result<Vec<_>>>()?;
    let codes = match &record.structure {
        StructureInput::Codes(c) => c.clone(),
        StructureInput::Features(f) => {
            let cb = codebook.ok_or_else(|| CoreError::invalid("structure features need a codebook"))?;
            quantize_structure(f, cb)?
        }
    };
    if codes.len() != t_s.len() {
        return Err(CoreError::ResidueAlignment {
            what: "structure tokens",
            got: codes.len(),
            expected: t_s.len(),
        });
    }
    let t_x = codes
        .iter()
        .map(|&c| {
            vocab
                .structure_token(c)
                .ok_or_else(|| CoreError::invalid(format!("structure code {c} outside the codebook")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((t_s, t_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::CODEBOOK_SIZE;
    use pcc_tensor::SplitMix64;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&["what"], 1, CODEBOOK_SIZE)
    }

    #[test]
    fn sequence_maps_in_order() {
        let v = vocab();
        let rec = ProteinRecord {
            id: "p".into(),
            sequence: "ACD".into(),
            structure: StructureInput::Codes(vec![0, 1, 2]),
        };
        let (t_s, t_x) = encode_protein(&rec, &v, None).unwrap();
        let a = v.amino_range().start;
        assert_eq!(t_s, vec![a, a + 1, a + 2]);
        assert_eq!(t_x.len(), 3);
    }

    #[test]
    fn empty_protein() {
        let rec = ProteinRecord {
            id: "p".into(),
            sequence: String::new(),
            structure: StructureInput::Codes(vec![]),
        };
        let err = encode_protein(&rec, &vocab(), None).unwrap_err();
        assert_eq!(err.to_string(), "empty protein");
    }

    #[test]
    fn unknown_residue_names_index() {
        let rec = ProteinRecord {
            id: "p".into(),
            sequence: "ACZ".into(),
            structure: StructureInput::Codes(vec![0, 0, 0]),
        };
        let err = encode_protein(&rec, &vocab(), None).unwrap_err();
        assert!(matches!(err, CoreError::UnknownResidue { index: 2, letter: 'Z' }));
    }

    #[test]
    fn feature_path_matches_code_path() {
        let v = vocab();
        let cb = Codebook::random(16, &mut SplitMix64::new(5));
        let codes = vec![3, 500, 17, 17];
        let feats = codes.iter().map(|&c| cb.code(c).to_vec()).collect();
        let a = ProteinRecord {
            id: "p".into(),
            sequence: "MKLV".into(),
            structure: StructureInput::Codes(codes),
        };
        let b = ProteinRecord {
            structure: StructureInput::Features(feats),
            ..a.clone()
        };
        assert_eq!(encode_protein(&a, &v, None).unwrap(), encode_protein(&b, &v, Some(&cb)).unwrap());
    }

    #[test]
    fn misaligned_structure() {
        let rec = ProteinRecord {
            id: "p".into(),
            sequence: "AC".into(),
            structure: StructureInput::Codes(vec![0]),
        };
        assert!(matches!(
            encode_protein(&rec, &vocab(), None),
            Err(CoreError::ResidueAlignment { .. })
        ));
    }
}
