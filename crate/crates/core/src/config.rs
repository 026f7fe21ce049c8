//! Resolved run configuration. Serialized verbatim into checkpoints and
//! report headers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which matching branches feed the fusion head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    NoSelf,
    NoChar,
    NoSemantic,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoSelf, Variant::NoChar, Variant::NoSemantic];

    pub fn uses_self(self) -> bool {
        self != Variant::NoSelf
    }

    pub fn uses_char(self) -> bool {
        self != Variant::NoChar
    }

    pub fn uses_semantic(self) -> bool {
        self != Variant::NoSemantic
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSelf => "no_self",
            Variant::NoChar => "no_char",
            Variant::NoSemantic => "no_semantic",
        }
    }

    /// Row label used in the ablation table.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Full => "MMAN",
            Variant::NoSelf => "w/o self-matching",
            Variant::NoChar => "w/o char matching",
            Variant::NoSemantic => "w/o semantic matching",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (full|no_self|no_char|no_semantic)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub query_len: usize,
    pub category_len: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub conv_blocks: usize,
    pub conv_filters: usize,
    pub conv_window: [usize; 2],
    pub conv_stride: [usize; 2],
    pub pool_window: [usize; 2],
    pub pool_stride: [usize; 2],
    pub layer_norm_eps: f64,
    pub variant: Variant,
    /// Label space size; set from the category file.
    pub num_categories: usize,
    /// Id space size including PAD and UNK; set from the vocabulary.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            query_len: 16,
            category_len: 32,
            encoder_layers: 2,
            heads: 4,
            ffn_width: 256,
            conv_blocks: 2,
            conv_filters: 8,
            conv_window: [3, 3],
            conv_stride: [1, 1],
            pool_window: [2, 2],
            pool_stride: [2, 2],
            layer_norm_eps: 1e-5,
            variant: Variant::Full,
            num_categories: 0,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    /// Spatial extent after each conv and pool stage, starting from the
    /// `query_len × category_len` interaction map.
    pub fn feature_map_dims(&self) -> Result<Vec<[usize; 2]>> {
        let mut dims = vec![[self.query_len, self.category_len]];
        let mut cur = dims[0];
        for block in 0..self.conv_blocks {
            for (stage, window, stride) in [
                ("conv", self.conv_window, self.conv_stride),
                ("pool", self.pool_window, self.pool_stride),
            ] {
                if stride[0] == 0 || stride[1] == 0 || window[0] == 0 || window[1] == 0 {
                    return Err(Error::Config(format!("{stage} window and stride must be positive")));
                }
                if window[0] > cur[0] || window[1] > cur[1] {
                    return Err(Error::Config(format!(
                        "char-matching feature map collapses: block {} {stage} window {:?} exceeds \
                         {}x{} (query_len {}, category_len {})",
                        block + 1,
                        window,
                        cur[0],
                        cur[1],
                        self.query_len,
                        self.category_len
                    )));
                }
                cur = [
                    (cur[0] - window[0]) / stride[0] + 1,
                    (cur[1] - window[1]) / stride[1] + 1,
                ];
                dims.push(cur);
            }
        }
        Ok(dims)
    }

    /// Length of the flattened final feature map per category.
    pub fn flat_dim(&self) -> Result<usize> {
        let last = *self.feature_map_dims()?.last().expect("non-empty");
        Ok(self.conv_filters * last[0] * last[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} must be positive and divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.query_len == 0 || self.category_len == 0 || self.ffn_width == 0 {
            return Err(Error::Config("sequence lengths and ffn width must be positive".into()));
        }
        if self.num_categories == 0 {
            return Err(Error::Config("num_categories must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must include PAD and UNK".into()));
        }
        if self.variant.uses_char() {
            if self.conv_blocks == 0 || self.conv_filters == 0 {
                return Err(Error::Config(
                    "char matching needs at least one conv block and filter".into(),
                ));
            }
            self.feature_map_dims()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub workers: usize,
    /// Evaluate on the held-out set every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            workers: 1,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config("batch_size and workers must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub threshold: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threshold: 0.5,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config text: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} must lie in (0, 1)",
                self.threshold
            )));
        }
        self.model.validate()?;
        self.train.validate()
    }
}
