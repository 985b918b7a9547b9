use std::path::Path;

use pcc_tensor::SplitMix64;
use serde::{Deserialize, Serialize};

use super::record::{load_dataset, save_dataset, QaRecord};
use crate::error::{CoreError, Result};
use crate::evaluation::{KeywordLexicon, LexiconEntry};
use crate::tokenizer::{quantize_structure, Codebook, AMINO_ACIDS, CODEBOOK_SIZE};

/// Question phrasings used for training and in-domain evaluation.
pub const QUESTIONS: [&str; 4] = [
    "What is the function of this protein?",
    "Describe the molecular function of the given protein.",
    "What activity does this protein perform?",
    "Which function does the following protein carry out?",
];

/// Held-out phrasings for the out-of-domain split.
pub const OOD_QUESTIONS: [&str; 4] = [
    "Can you tell me what role this protein plays?",
    "Please summarize the biological role of the protein below.",
    "Explain what this protein does inside a cell.",
    "Identify the activity associated with this protein sequence.",
];

/// Function phrases with their aliases. No phrase occurs inside another.
const PHRASES: [(&str, &[&str]); 24] = [
    ("metal ion binding", &["binding of metal ions"]),
    ("ATP hydrolysis", &["hydrolysis of ATP"]),
    ("DNA repair", &["repair of DNA"]),
    ("protein folding", &["folding of proteins"]),
    ("proton transport", &["transport of protons"]),
    ("lipid metabolism", &["metabolism of lipids"]),
    ("signal transduction", &["signalling"]),
    ("RNA splicing", &["splicing of RNA"]),
    ("heme binding", &["binding of heme"]),
    ("oxidoreductase", &[]),
    ("cell adhesion", &["adhesion of cells"]),
    ("zinc finger binding", &[]),
    ("transcription regulation", &["regulation of transcription"]),
    ("chitin degradation", &["degradation of chitin"]),
    ("phosphorylation", &[]),
    ("glycolysis", &[]),
    ("membrane fusion", &["fusion of membranes"]),
    ("calcium sensing", &["sensing of calcium"]),
    ("electron transfer", &["transfer of electrons"]),
    ("nucleotide synthesis", &["synthesis of nucleotides"]),
    ("peptidase", &["protease"]),
    ("ubiquitin ligation", &[]),
    ("actin polymerization", &["polymerization of actin"]),
    ("iron storage", &["storage of iron"]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskSpec {
    pub n_classes: usize,
    pub codes_per_class: usize,
    pub keywords_per_class: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_test_ood: usize,
    pub feature_dim: usize,
    /// Standard deviation of the noise added to a residue's code vector.
    pub feature_noise: f64,
    /// Probability that a residue draws its code from the whole codebook.
    pub off_class_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            codes_per_class: 64,
            keywords_per_class: 2,
            len_min: 20,
            len_max: 60,
            n_train: 2000,
            n_val: 200,
            n_test: 200,
            n_test_ood: 200,
            feature_dim: 16,
            feature_noise: 0.1,
            off_class_rate: 0.03,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<QaRecord>,
    pub val: Vec<QaRecord>,
    pub test: Vec<QaRecord>,
    pub test_ood: Vec<QaRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub splits: Splits,
    pub codebook: Codebook,
    pub lexicon: KeywordLexicon,
    /// Code indices owned by each class.
    pub regions: Vec<Vec<usize>>,
    /// Canonical keywords of each class.
    pub class_keywords: Vec<Vec<String>>,
}

impl SyntheticTask {
    /// Fraction of structure tokens that fall inside their record's class
    /// region, over every split.
    pub fn class_purity(&self) -> f64 {
        let mut owner = vec![usize::MAX; CODEBOOK_SIZE];
        for (c, region) in self.regions.iter().enumerate() {
            for &j in region {
                owner[j] = c;
            }
        }
        let (mut inside, mut total) = (0usize, 0usize);
        for r in self.splits.all() {
            total += r.structure_tokens.len();
            inside += r.structure_tokens.iter().filter(|&&t| owner[t] == r.class).count();
        }
        inside as f64 / total.max(1) as f64
    }
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &QaRecord> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .chain(&self.test_ood)
    }
}

/// File names of the four splits inside a dataset directory.
pub const SPLIT_FILES: [&str; 4] = ["train.jsonl", "val.jsonl", "test.jsonl", "test_ood.jsonl"];
pub const LEXICON_FILE: &str = "lexicon.json";
pub const CODEBOOK_FILE: &str = "codebook.json";

impl SyntheticTask {
    /// Writes the splits as JSONL plus the lexicon and codebook as JSON.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let s = &self.splits;
        for (name, recs) in SPLIT_FILES.iter().zip([&s.train, &s.val, &s.test, &s.test_ood]) {
            save_dataset(recs, &dir.join(name))?;
        }
        self.lexicon.save(&dir.join(LEXICON_FILE))?;
        self.codebook.save(&dir.join(CODEBOOK_FILE))
    }
}

impl Splits {
    /// Reads the four split files written by [`SyntheticTask::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let mut parts = SPLIT_FILES.iter().map(|n| load_dataset(&dir.join(n)));
        Ok(Self {
            train: parts.next().unwrap()?,
            val: parts.next().unwrap()?,
            test: parts.next().unwrap()?,
            test_ood: parts.next().unwrap()?,
        })
    }

    pub fn by_name(&self, name: &str) -> Result<&[QaRecord]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            "test_ood" | "ood" => Ok(&self.test_ood),
            other => Err(CoreError::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Question and answer texts, the corpus a vocabulary is built from.
pub fn text_corpus(records: &[QaRecord]) -> Vec<String> {
    records.iter().flat_map(|r| [r.question.clone(), r.answer.clone()]).collect()
}

/// Answer text for a class's keywords.
pub fn answer_text(keywords: &[String]) -> String {
    format!("The protein performs {} activity.", keywords.join(", "))
}

fn validate(spec: &SyntheticTaskSpec) -> Result<()> {
    if spec.n_classes == 0 || spec.codes_per_class == 0 {
        return Err(CoreError::invalid("n_classes and codes_per_class must be positive"));
    }
    if spec.n_classes * spec.codes_per_class > CODEBOOK_SIZE {
        return Err(CoreError::invalid(format!(
            "{} classes of {} codes need more than {CODEBOOK_SIZE} codes",
            spec.n_classes, spec.codes_per_class
        )));
    }
    if spec.keywords_per_class == 0 || spec.n_classes * spec.keywords_per_class > PHRASES.len() {
        return Err(CoreError::invalid(format!(
            "{} classes × {} keywords exceeds the {}-phrase pool",
            spec.n_classes,
            spec.keywords_per_class,
            PHRASES.len()
        )));
    }
    if spec.len_min == 0 || spec.len_min > spec.len_max {
        return Err(CoreError::invalid("need 1 <= len_min <= len_max"));
    }
    if spec.feature_dim == 0 || !(0.0..=1.0).contains(&spec.off_class_rate) {
        return Err(CoreError::invalid("bad feature_dim or off_class_rate"));
    }
    Ok(())
}

/// Generates the codebook, class layout, lexicon and all splits from
/// `spec.seed`. Each record draws from its own derived stream.
pub fn generate_dataset(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    validate(spec)?;
    let mut layout_rng = SplitMix64::derive(spec.seed, 1);
    let codebook = Codebook::random(spec.feature_dim, &mut layout_rng);
    let mut codes: Vec<usize> = (0..CODEBOOK_SIZE).collect();
    layout_rng.shuffle(&mut codes);
    let regions: Vec<Vec<usize>> = (0..spec.n_classes)
        .map(|c| {
            let mut r = codes[c * spec.codes_per_class..(c + 1) * spec.codes_per_class].to_vec();
            r.sort_unstable();
            r
        })
        .collect();
    let mut phrase_order: Vec<usize> = (0..PHRASES.len()).collect();
    layout_rng.shuffle(&mut phrase_order);
    let class_keywords: Vec<Vec<String>> = (0..spec.n_classes)
        .map(|c| {
            (0..spec.keywords_per_class)
                .map(|k| PHRASES[phrase_order[c * spec.keywords_per_class + k]].0.to_string())
                .collect()
        })
        .collect();
    let lexicon = KeywordLexicon::new(
        PHRASES
            .iter()
            .map(|(canonical, aliases)| LexiconEntry {
                canonical: canonical.to_string(),
                aliases: aliases.iter().map(|a| a.to_string()).collect(),
            })
            .collect(),
    )?;

    let ctx = Ctx {
        spec,
        codebook: &codebook,
        regions: &regions,
        class_keywords: &class_keywords,
    };
    let splits = Splits {
        train: ctx.split(2, "train", spec.n_train, &QUESTIONS)?,
        val: ctx.split(3, "val", spec.n_val, &QUESTIONS)?,
        test: ctx.split(4, "test", spec.n_test, &QUESTIONS)?,
        test_ood: ctx.split(5, "ood", spec.n_test_ood, &OOD_QUESTIONS)?,
    };
    Ok(SyntheticTask {
        spec: spec.clone(),
        splits,
        codebook,
        lexicon,
        regions,
        class_keywords,
    })
}

struct Ctx<'a> {
    spec: &'a SyntheticTaskSpec,
    codebook: &'a Codebook,
    regions: &'a [Vec<usize>],
    class_keywords: &'a [Vec<String>],
}

impl Ctx<'_> {
    fn split(&self, stream: u64, prefix: &str, n: usize, questions: &[&str]) -> Result<Vec<QaRecord>> {
        (0..n)
            .map(|i| {
                let mut rng = SplitMix64::derive(self.spec.seed, (stream << 32) | i as u64);
                self.record(&mut rng, format!("{prefix}-{i:05}"), questions)
            })
            .collect()
    }

    fn record(&self, rng: &mut SplitMix64, id: String, questions: &[&str]) -> Result<QaRecord> {
        let spec = self.spec;
        let class = rng.below(spec.n_classes as u64) as usize;
        let len = rng.range_inclusive(spec.len_min, spec.len_max);
        let aa: Vec<char> = AMINO_ACIDS.chars().collect();
        let sequence: String = (0..len).map(|_| aa[rng.below(aa.len() as u64) as usize]).collect();
        let region = &self.regions[class];
        let features: Vec<Vec<f32>> = (0..len)
            .map(|_| {
                let code = if rng.next_f64() < spec.off_class_rate {
                    rng.below(CODEBOOK_SIZE as u64) as usize
                } else {
                    region[rng.below(region.len() as u64) as usize]
                };
                self.codebook
                    .code(code)
                    .iter()
                    .map(|&c| (c as f64 + rng.normal() * spec.feature_noise) as f32)
                    .collect()
            })
            .collect();
        let structure_tokens = quantize_structure(&features, self.codebook)?;
        let question = questions[rng.below(questions.len() as u64) as usize].to_string();
        let keywords = self.class_keywords[class].clone();
        Ok(QaRecord {
            id,
            question,
            sequence,
            structure_tokens,
            answer: answer_text(&keywords),
            class,
            keywords,
        })
    }
}
