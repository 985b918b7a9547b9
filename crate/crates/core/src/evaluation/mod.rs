//! Keyword, n-gram and budget metrics, attention reports, sweeps and
//! report assembly.

mod attention;
mod budget;
mod lexicon;
mod metrics;
mod report;
mod sweep;

pub use attention::{attention_report, format_attention_table};
pub use budget::{budget_report, solve_query_length, BudgetRow};
pub use lexicon::{extract_keywords, KeywordLexicon, LexiconEntry};
pub use metrics::{bleu, emji, jaccard, metric_tokens, rouge, BleuScore, RougeVariant};
pub use report::{score_predictions, EvalReport, MetricSummary};
pub use sweep::{score_records, sweep, sweep_csv, write_sweep_csv, SweepCell, SweepSetup, SWEEP_CSV_HEADER};
