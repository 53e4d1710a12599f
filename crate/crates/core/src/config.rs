//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are grouped by prefix:
//!
//! | key | default |
//! |-----|---------|
//! | `model.dense_layers`, `model.rre_layers` | 1, 2 |
//! | `model.heads`, `model.hidden`, `model.ffn` | 2, 16, 32 |
//! | `model.vocab`, `model.max_seq_len` | 48, 64 |
//! | `model.embedding_slots`, `model.num_domains`, `model.experts_per_domain` | 1, 3, 2 |
//! | `model.domain_slots` (comma list) | all 0 |
//! | `model.init_seed`, `model.routing_seed` | 0, 0 |
//! | `adam.beta1`, `adam.beta2` | 0.8, 0.95 |
//! | `adam.eps_dense`, `adam.eps_rre` | 1e-8, 1e-20 |
//! | `adam.peak_lr`, `adam.end_lr` | 1e-3, 2e-5 |
//! | `adam.warmup_steps`, `adam.decay_steps` | 5000, 180000 |
//! | `train.steps`, `train.batch_size`, `train.seed` | 100, 8, 0 |
//! | `train.pad` (token id or `none`) | none |
//! | `train.stages` (`start..end:d,d;...`) | every domain for all steps |
//! | `data.path` (instance file or directory of `*.pgsi`) | unset |
//! | `data.synthetic_per_domain`, `data.synthetic_seq_len`, `data.synthetic_seed` | unset, 64, 0 |
//! | `out.checkpoint`, `out.trace` | unset |
//!
//! Relative paths are resolved against the directory of the config file.
//! Environment variables are never consulted.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{read_instances, synthetic_instances, InstanceSet};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{AdamConfig, StageSchedule, TrainOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub per_domain: usize,
    pub seq_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub train: TrainOptions,
    pub stages: Option<StageSchedule>,
    pub data_path: Option<PathBuf>,
    pub synthetic: Option<SyntheticData>,
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

pub fn default_model_config() -> ModelConfig {
    ModelConfig {
        dense_layers: 1,
        rre_layers: 2,
        heads: 2,
        hidden: 16,
        ffn: 32,
        vocab: 48,
        embedding_slots: 1,
        num_domains: 3,
        experts_per_domain: 2,
        max_seq_len: 64,
        domain_slots: vec![0; 3],
        init_seed: 0,
        routing_seed: 0,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: default_model_config(),
            adam: AdamConfig::default(),
            train: TrainOptions {
                steps: 100,
                batch_size: 8,
                seed: 0,
                pad: None,
            },
            stages: None,
            data_path: None,
            synthetic: None,
            checkpoint: None,
            trace: None,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str, what: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: expected {what}, got `{raw}`")))
}

/// Splits text into `(line, key, value)` triples, rejecting duplicates and
/// lines without `=`.
fn assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !seen.insert(k.clone()) {
            return Err(Error::Config(format!("key `{k}` set twice (line {})", i + 1)));
        }
        out.push((i + 1, k, v));
    }
    Ok(out)
}

/// Applies one `model.*` key; returns false when the key is not a model key.
fn apply_model_key(m: &mut ModelConfig, slots: &mut Option<Vec<usize>>, key: &str, raw: &str) -> Result<bool> {
    const UINT: &str = "an unsigned integer";
    match key {
        "model.dense_layers" => m.dense_layers = value(key, raw, UINT)?,
        "model.rre_layers" => m.rre_layers = value(key, raw, UINT)?,
        "model.heads" => m.heads = value(key, raw, UINT)?,
        "model.hidden" => m.hidden = value(key, raw, UINT)?,
        "model.ffn" => m.ffn = value(key, raw, UINT)?,
        "model.vocab" => m.vocab = value(key, raw, UINT)?,
        "model.embedding_slots" => m.embedding_slots = value(key, raw, UINT)?,
        "model.num_domains" => m.num_domains = value(key, raw, UINT)?,
        "model.experts_per_domain" => m.experts_per_domain = value(key, raw, UINT)?,
        "model.max_seq_len" => m.max_seq_len = value(key, raw, UINT)?,
        "model.init_seed" => m.init_seed = value(key, raw, UINT)?,
        "model.routing_seed" => m.routing_seed = value(key, raw, UINT)?,
        "model.domain_slots" => {
            *slots = Some(
                raw.split(',')
                    .map(|s| value(key, s.trim(), "a comma-separated list of slot indices"))
                    .collect::<Result<_>>()?,
            )
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn finish_model(m: &mut ModelConfig, slots: Option<Vec<usize>>) -> Result<()> {
    m.domain_slots = slots.unwrap_or_else(|| vec![0; m.num_domains]);
    m.validate().map_err(|e| Error::Config(format!("model section: {e}")))
}

/// Parses the `model.*` keys only; any other key is an error.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let mut m = default_model_config();
    let mut slots = None;
    for (line, key, raw) in assignments(text)? {
        if !apply_model_key(&mut m, &mut slots, &key, &raw)? {
            return Err(Error::Config(format!("unknown key `{key}` (line {line})")));
        }
    }
    finish_model(&mut m, slots)?;
    Ok(m)
}

pub fn model_config_text(m: &ModelConfig) -> String {
    let slots: Vec<String> = m.domain_slots.iter().map(ToString::to_string).collect();
    let mut s = String::new();
    for (k, v) in [
        ("dense_layers", m.dense_layers.to_string()),
        ("rre_layers", m.rre_layers.to_string()),
        ("heads", m.heads.to_string()),
        ("hidden", m.hidden.to_string()),
        ("ffn", m.ffn.to_string()),
        ("vocab", m.vocab.to_string()),
        ("embedding_slots", m.embedding_slots.to_string()),
        ("num_domains", m.num_domains.to_string()),
        ("experts_per_domain", m.experts_per_domain.to_string()),
        ("max_seq_len", m.max_seq_len.to_string()),
        ("domain_slots", slots.join(",")),
        ("init_seed", m.init_seed.to_string()),
        ("routing_seed", m.routing_seed.to_string()),
    ] {
        let _ = writeln!(s, "model.{k} = {v}");
    }
    s
}

impl RunConfig {
    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        const UINT: &str = "an unsigned integer";
        const FLOAT: &str = "a number";
        let mut c = RunConfig::default();
        let mut slots = None;
        let mut synth_per_domain = None;
        let mut synth_len = 64;
        let mut synth_seed = 0;
        let path = |raw: &str| base.join(raw);
        for (line, key, raw) in assignments(text)? {
            if apply_model_key(&mut c.model, &mut slots, &key, &raw)? {
                continue;
            }
            let k = key.as_str();
            match k {
                "adam.beta1" => c.adam.beta1 = value(k, &raw, FLOAT)?,
                "adam.beta2" => c.adam.beta2 = value(k, &raw, FLOAT)?,
                "adam.eps_dense" => c.adam.eps_dense = value(k, &raw, FLOAT)?,
                "adam.eps_rre" => c.adam.eps_rre = value(k, &raw, FLOAT)?,
                "adam.peak_lr" => c.adam.peak_lr = value(k, &raw, FLOAT)?,
                "adam.end_lr" => c.adam.end_lr = value(k, &raw, FLOAT)?,
                "adam.warmup_steps" => c.adam.warmup_steps = value(k, &raw, UINT)?,
                "adam.decay_steps" => c.adam.decay_steps = value(k, &raw, UINT)?,
                "train.steps" => c.train.steps = value(k, &raw, UINT)?,
                "train.batch_size" => c.train.batch_size = value(k, &raw, UINT)?,
                "train.seed" => c.train.seed = value(k, &raw, UINT)?,
                "train.pad" => {
                    c.train.pad = if raw == "none" {
                        None
                    } else {
                        Some(value(k, &raw, "a token id or `none`")?)
                    }
                }
                "train.stages" => {
                    c.stages = Some(StageSchedule::parse(&raw).map_err(|e| Error::Config(format!("key `{k}`: {e}")))?)
                }
                "data.path" => c.data_path = Some(path(&raw)),
                "data.synthetic_per_domain" => synth_per_domain = Some(value(k, &raw, UINT)?),
                "data.synthetic_seq_len" => synth_len = value(k, &raw, UINT)?,
                "data.synthetic_seed" => synth_seed = value(k, &raw, UINT)?,
                "out.checkpoint" => c.checkpoint = Some(path(&raw)),
                "out.trace" => c.trace = Some(path(&raw)),
                _ => return Err(Error::Config(format!("unknown key `{key}` (line {line})"))),
            }
        }
        finish_model(&mut c.model, slots)?;
        c.synthetic = synth_per_domain.map(|per_domain| SyntheticData {
            per_domain,
            seq_len: synth_len,
            seed: synth_seed,
        });
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| Error::Config(format!("model section: {e}")))?;
        self.adam
            .validate()
            .map_err(|e| Error::Config(format!("adam section: {e}")))?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("key `train.batch_size`: must be positive".into()));
        }
        if let Some(s) = &self.stages {
            if s.end() < self.train.steps {
                return Err(Error::Config(format!(
                    "key `train.stages`: covers {} steps but train.steps = {}",
                    s.end(),
                    self.train.steps
                )));
            }
        }
        if let Some(s) = &self.synthetic {
            if s.seq_len > self.model.max_seq_len {
                return Err(Error::Config(format!(
                    "key `data.synthetic_seq_len`: {} exceeds model.max_seq_len {}",
                    s.seq_len, self.model.max_seq_len
                )));
            }
        }
        Ok(())
    }

    /// Stage schedule, or one stage with every domain active.
    pub fn schedule(&self) -> Result<StageSchedule> {
        match &self.stages {
            Some(s) => Ok(s.clone()),
            None => StageSchedule::single(self.train.steps.max(1), self.model.num_domains),
        }
    }

    /// Training data: `data.path` when set, else the synthetic corpus.
    pub fn load_data(&self) -> Result<InstanceSet> {
        if let Some(p) = &self.data_path {
            return load_instance_path(p);
        }
        match &self.synthetic {
            Some(s) => synthetic_instances(
                self.model.num_domains,
                self.model.vocab,
                s.seq_len,
                s.per_domain,
                s.seed,
            ),
            None => Err(Error::Config(
                "no training data: set `data.path` or `data.synthetic_per_domain`".into(),
            )),
        }
    }
}

/// Reads one instance file, or every `*.pgsi` file of a directory in name
/// order merged into one set.
pub fn load_instance_path(path: &Path) -> Result<InstanceSet> {
    if !path.is_dir() {
        return read_instances(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "pgsi"));
    files.sort();
    let mut sets = files.iter().map(read_instances);
    let mut merged = sets
        .next()
        .ok_or_else(|| Error::Config(format!("{} holds no .pgsi files", path.display())))??;
    for set in sets {
        let set = set?;
        if set.seq_len != merged.seq_len {
            return Err(Error::Format(format!(
                "instance files disagree on length: {} vs {}",
                merged.seq_len, set.seq_len
            )));
        }
        merged.num_domains = merged.num_domains.max(set.num_domains);
        merged.instances.extend(set.instances);
    }
    merged.validate()?;
    Ok(merged)
}
