//! `key = value` configuration files for training runs.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelSpec};
use crate::variant::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got `{s}`"))),
        }
    }
}

pub const KEYS: [&str; 18] = [
    "variant",
    "n",
    "d_h",
    "d_emb",
    "d_ctx",
    "vocab_size",
    "max_len",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "precision",
    "rho",
    "eps",
    "clip_norm",
    "train_path",
    "valid_path",
    "test_path",
];

const REQUIRED_FOR_TRAINING: [&str; 3] = ["variant", "train_path", "valid_path"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Number of preceding sentences in each context window.
    pub n: usize,
    pub d_h: usize,
    pub d_emb: usize,
    pub d_ctx: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
    pub rho: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Rlm,
            n: 1,
            d_h: 1000,
            d_emb: 1000,
            d_ctx: 1000,
            vocab_size: 10_000,
            max_len: 50,
            batch_size: 32,
            max_epochs: 100,
            patience: 2,
            seed: 1234,
            precision: Precision::F64,
            rho: 0.95,
            eps: 1e-6,
            clip_norm: 5.0,
            train_path: None,
            valid_path: None,
            test_path: None,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
}

impl TrainConfig {
    /// Parses a config file. Keys not given keep their defaults; `d_emb`
    /// and `d_ctx` default to `d_h`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key `{key}` on line {}", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
            match key {
                "variant" => c.variant = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
                "n" => c.n = parse_value(key, value)?,
                "d_h" => c.d_h = parse_value(key, value)?,
                "d_emb" => c.d_emb = parse_value(key, value)?,
                "d_ctx" => c.d_ctx = parse_value(key, value)?,
                "vocab_size" => c.vocab_size = parse_value(key, value)?,
                "max_len" => c.max_len = parse_value(key, value)?,
                "batch_size" => c.batch_size = parse_value(key, value)?,
                "max_epochs" => c.max_epochs = parse_value(key, value)?,
                "patience" => c.patience = parse_value(key, value)?,
                "seed" => c.seed = parse_value(key, value)?,
                "precision" => c.precision = value.parse()?,
                "rho" => c.rho = parse_value(key, value)?,
                "eps" => c.eps = parse_value(key, value)?,
                "clip_norm" => c.clip_norm = parse_value(key, value)?,
                "train_path" => c.train_path = Some(PathBuf::from(value)),
                "valid_path" => c.valid_path = Some(PathBuf::from(value)),
                "test_path" => c.test_path = Some(PathBuf::from(value)),
                _ => unreachable!("key list checked above"),
            }
        }
        if !seen.contains("d_emb") {
            c.d_emb = c.d_h;
        }
        if !seen.contains("d_ctx") {
            c.d_ctx = c.d_h;
        }
        c.validate()?;
        Ok(c)
    }

    /// Parses and additionally requires the keys a training run needs.
    pub fn parse_for_training(text: &str) -> Result<Self> {
        let c = Self::parse(text)?;
        let present: HashSet<&str> = text
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, _)| k.trim()))
            .collect();
        for key in REQUIRED_FOR_TRAINING {
            if !present.contains(key) {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("d_h", self.d_h),
            ("d_emb", self.d_emb),
            ("d_ctx", self.d_ctx),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("`vocab_size` must be at least 2".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("`rho` must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Config(format!("`eps` must be positive, got {}", self.eps)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("`clip_norm` must be non-negative".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "d_h = {}", self.d_h);
        let _ = writeln!(s, "d_emb = {}", self.d_emb);
        let _ = writeln!(s, "d_ctx = {}", self.d_ctx);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "precision = {}", self.precision);
        let _ = writeln!(s, "rho = {:?}", self.rho);
        let _ = writeln!(s, "eps = {:?}", self.eps);
        let _ = writeln!(s, "clip_norm = {:?}", self.clip_norm);
        for (k, p) in [
            ("train_path", &self.train_path),
            ("valid_path", &self.valid_path),
            ("test_path", &self.test_path),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        s
    }

    /// Model shape for a vocabulary of `vocab_len` entries. The attention
    /// scorer width follows `d_ctx`.
    pub fn model_spec(&self, vocab_len: usize) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            dims: ModelDims {
                vocab_size: vocab_len,
                d_emb: self.d_emb,
                d_h: self.d_h,
                d_ctx: self.d_ctx,
                d_att: self.d_ctx,
            },
        }
    }
}
