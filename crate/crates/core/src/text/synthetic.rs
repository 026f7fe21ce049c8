//! Synthetic query-intent corpus with a long-tailed label distribution.
//!
//! Every category owns a disjoint block of "core" characters; a shared pool
//! of noise characters belongs to no category. Category text is the first
//! two core characters as the name and the remainder chunked into two-char
//! product words. Queries draw from the core characters of their labels, mixed
//! with noise at `noise_rate`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::category::CategoryText;
use super::dataset::QueryRecord;
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// First character of the synthetic alphabet (CJK Unified Ideographs).
const ALPHABET_START: u32 = 0x4E00;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_categories: usize,
    pub vocab_size: usize,
    /// Average query count per category; the total is split by the power law.
    pub queries_per_category: usize,
    /// Category `r` (0-based) gets weight `(r + 1)^-tail_exponent`.
    pub tail_exponent: f64,
    /// Probability that a query character is drawn from the noise pool.
    pub noise_rate: f64,
    /// Fraction of queries carrying a second label.
    pub multi_label_fraction: f64,
    pub test_fraction: f64,
    pub min_query_len: usize,
    pub max_query_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_categories: 8,
            vocab_size: 200,
            queries_per_category: 300,
            tail_exponent: 1.0,
            noise_rate: 0.1,
            multi_label_fraction: 0.15,
            test_fraction: 1.0 / 6.0,
            min_query_len: 2,
            max_query_len: 8,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    fn noise_pool(&self) -> usize {
        self.vocab_size / 5
    }

    fn core_size(&self) -> usize {
        (self.vocab_size - self.noise_pool()) / self.num_categories.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(Error::Config(format!(
                "need at least 2 categories, got {}",
                self.num_categories
            )));
        }
        if self.core_size() < 2 {
            return Err(Error::Config(format!(
                "vocab size {} is too small: each of {} categories needs at least 2 disjoint tokens \
                 after reserving {} noise tokens",
                self.vocab_size,
                self.num_categories,
                self.noise_pool()
            )));
        }
        if self.queries_per_category == 0 {
            return Err(Error::Config("queries_per_category must be positive".into()));
        }
        if self.min_query_len < 2 || self.max_query_len < self.min_query_len {
            return Err(Error::Config(format!(
                "query length range [{}, {}] must satisfy 2 <= min <= max",
                self.min_query_len, self.max_query_len
            )));
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("multi_label_fraction", self.multi_label_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} must lie in [0, 1)")));
            }
        }
        if !(self.tail_exponent >= 0.0 && self.tail_exponent.is_finite()) {
            return Err(Error::Config("tail_exponent must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub vocab: Vocab,
    pub categories: Vec<CategoryText>,
    pub train: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
    /// Core characters owned by each category.
    pub core_tokens: Vec<Vec<String>>,
    /// Queries per category by primary label, before the train/test split.
    pub primary_counts: Vec<usize>,
}

fn symbol(i: usize) -> String {
    char::from_u32(ALPHABET_START + i as u32)
        .expect("synthetic alphabet stays inside the CJK block")
        .to_string()
}

/// Splits `total` across power-law weights by largest remainder, so rounding
/// error never exceeds one per category.
fn allocate(total: usize, n: usize, exponent: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..n).map(|r| ((r + 1) as f64).powf(-exponent)).collect();
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_cats = config.num_categories;
    let noise_pool = config.noise_pool();
    let core = config.core_size();

    let alphabet: Vec<String> = (0..config.vocab_size).map(symbol).collect();
    let vocab = Vocab::from_tokens(alphabet.iter().cloned());
    let noise: &[String] = &alphabet[..noise_pool];
    let core_tokens: Vec<Vec<String>> = (0..n_cats)
        .map(|c| alphabet[noise_pool + c * core..noise_pool + (c + 1) * core].to_vec())
        .collect();

    let categories = core_tokens
        .iter()
        .enumerate()
        .map(|(id, toks)| {
            let name_len = toks.len().min(2);
            CategoryText {
                id,
                name: toks[..name_len].concat(),
                product_words: toks[name_len..].chunks(2).map(|w| w.concat()).collect(),
            }
        })
        .collect();

    let primary_counts = allocate(n_cats * config.queries_per_category, n_cats, config.tail_exponent);
    let mut primaries: Vec<usize> = primary_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    primaries.shuffle(&mut rng);

    let mut records = Vec::with_capacity(primaries.len());
    for primary in primaries {
        let mut labels = vec![primary];
        if rng.random_bool(config.multi_label_fraction) {
            let other = (primary + rng.random_range(1..n_cats)) % n_cats;
            labels.push(other);
        }
        let len = rng.random_range(config.min_query_len..=config.max_query_len);
        let mut chars: Vec<&str> = labels
            .iter()
            .map(|&l| core_tokens[l][rng.random_range(0..core)].as_str())
            .collect();
        while chars.len() < len {
            if noise_pool > 0 && rng.random_bool(config.noise_rate) {
                chars.push(&noise[rng.random_range(0..noise_pool)]);
            } else {
                let l = labels[rng.random_range(0..labels.len())];
                chars.push(&core_tokens[l][rng.random_range(0..core)]);
            }
        }
        chars.shuffle(&mut rng);
        labels.sort_unstable();
        records.push(QueryRecord {
            text: chars.concat(),
            labels,
        });
    }

    let n_test = (records.len() as f64 * config.test_fraction).round() as usize;
    let test = records.split_off(records.len() - n_test);
    Ok(SyntheticData {
        vocab,
        categories,
        train: records,
        test,
        core_tokens,
        primary_counts,
    })
}
