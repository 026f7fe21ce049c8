//! Character-level text handling, dataset files, label filtering and the
//! synthetic corpus generator.

mod category;
mod cdf;
mod dataset;
mod synthetic;
mod vocab;

pub use category::{assemble_category_text, CategoryRecord, CategorySet, CategoryText};
pub use cdf::filter_labels_by_cdf;
pub use dataset::{
    encode_queries, parse_categories, parse_queries, read_categories, read_queries, write_categories, write_queries,
    write_text_file, LabeledQuery, QueryRecord,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};
pub use vocab::{tokenize, TokenSequence, Vocab, PAD_ID, UNK_ID};
