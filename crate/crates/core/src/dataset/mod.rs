//! Question-answer records, their on-disk format, and the seeded
//! synthetic task generator.

mod record;
mod synth;

pub use record::{encode_records, load_dataset, save_dataset, EncodedRecord, QaRecord};
pub use synth::{
    answer_text, generate_dataset, text_corpus, Splits, SyntheticTask, SyntheticTaskSpec, CODEBOOK_FILE, LEXICON_FILE,
    OOD_QUESTIONS, QUESTIONS, SPLIT_FILES,
};
