//! Flat `key = value` configuration files with `[section]` headers.
//!
//! The same format doubles as the run manifest: a manifest echoes every
//! effective value (defaults applied) plus a `[run]` section, so any run
//! can be reproduced by pointing the command back at its manifest.

use std::collections::BTreeMap;

use abmil::data::BagSpec;
use abmil::eval::PoolSpec;
use abmil::train::{Strategy, TrainConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
use abmil::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    /// section -> ordered key/value pairs
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(Error::Config(format!(
                        "line {}: malformed section header '{raw}'",
                        lineno + 1
                    )));
                }
                current = line[1..line.len() - 1].trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            if current.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key '{}' appears before any [section]",
                    lineno + 1,
                    key.trim()
                )));
            }
            sections
                .get_mut(&current)
                .unwrap()
                .push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(ConfigFile { sections })
    }

    pub fn section(&self, name: &str) -> &[(String, String)] {
        self.sections.get(name).map_or(&[], |v| v.as_slice())
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key} = {value}: not a valid number")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "[{section}] {key} = {value}: expected true or false"
        ))),
    }
}

fn parse_list(section: &str, key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Err(Error::Config(format!(
            "[{section}] {key} must not be empty"
        )));
    }
    value
        .split(',')
        .map(|v| parse_num(section, key, v.trim()))
        .collect()
}

fn unknown_key(section: &str, key: &str, valid: &[&str]) -> Error {
    Error::Config(format!(
        "[{section}] unknown key '{key}'; valid keys: {}",
        valid.join(", ")
    ))
}

/// Pinned constant echoed into manifests; reject attempts to change it.
fn check_pinned(section: &str, key: &str, value: &str, expected: f64) -> Result<()> {
    let got: f64 = parse_num(section, key, value)?;
    if got != expected {
        return Err(Error::Config(format!(
            "[{section}] {key} is fixed at {expected}; remove the key or set it to that value"
        )));
    }
    Ok(())
}

// ── [dataset] ───────────────────────────────────────────────────────

/// Where the instance pool comes from.
#[derive(Debug, Clone)]
pub enum PoolSource {
    Synthetic(PoolSpec),
    Idx {
        images_path: String,
        labels_path: String,
        limit: usize,
    },
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub bag_spec: BagSpec,
    pub source: PoolSource,
}

const DATASET_KEYS: &[&str] = &[
    "seed",
    "n_train_bags",
    "n_val_bags",
    "n_test_bags",
    "instances_per_bag",
    "key_fraction",
    "key_class",
    "positive_bag_fraction",
    "source",
    "n_classes",
    "input_dim",
    "samples_per_class",
    "images_path",
    "labels_path",
    "limit",
];

pub fn parse_dataset(cfg: &ConfigFile) -> Result<DatasetConfig> {
    let section = "dataset";
    let mut spec = BagSpec::default();
    let mut pool = PoolSpec::default();
    let mut source = "synthetic".to_string();
    let mut images_path = String::new();
    let mut labels_path = String::new();
    let mut limit = 60_000usize;

    for (key, value) in cfg.section(section) {
        match key.as_str() {
            "seed" => spec.seed = parse_num(section, key, value)?,
            "n_train_bags" => spec.n_train_bags = parse_num(section, key, value)?,
            "n_val_bags" => spec.n_val_bags = parse_num(section, key, value)?,
            "n_test_bags" => spec.n_test_bags = parse_num(section, key, value)?,
            "instances_per_bag" => spec.instances_per_bag = parse_num(section, key, value)?,
            "key_fraction" => {
                spec.key_fraction = parse_num(section, key, value)?;
                if spec.key_fraction <= 0.0 {
                    return Err(Error::Config("[dataset] key_fraction must exceed 0".into()));
                }
            }
            "key_class" => spec.key_class = parse_num(section, key, value)?,
            "positive_bag_fraction" => spec.positive_bag_fraction = parse_num(section, key, value)?,
            "source" => source = value.clone(),
            "n_classes" => pool.n_classes = parse_num(section, key, value)?,
            "input_dim" => pool.input_dim = parse_num(section, key, value)?,
            "samples_per_class" => pool.samples_per_class = parse_num(section, key, value)?,
            "images_path" => images_path = value.clone(),
            "labels_path" => labels_path = value.clone(),
            "limit" => limit = parse_num(section, key, value)?,
            _ => return Err(unknown_key(section, key, DATASET_KEYS)),
        }
    }
    spec.validate()?;

    let source = match source.as_str() {
        "synthetic" => PoolSource::Synthetic(pool),
        "idx" => {
            if images_path.is_empty() || labels_path.is_empty() {
                return Err(Error::Config(
                    "[dataset] source = idx requires images_path and labels_path".into(),
                ));
            }
            PoolSource::Idx {
                images_path,
                labels_path,
                limit,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "[dataset] source = {other}: expected synthetic or idx"
            )))
        }
    };
    Ok(DatasetConfig {
        bag_spec: spec,
        source,
    })
}

pub fn echo_dataset(out: &mut String, ds: &DatasetConfig) {
    use std::fmt::Write as _;
    let s = &ds.bag_spec;
    let _ = writeln!(out, "[dataset]");
    let _ = writeln!(out, "seed = {}", s.seed);
    let _ = writeln!(out, "n_train_bags = {}", s.n_train_bags);
    let _ = writeln!(out, "n_val_bags = {}", s.n_val_bags);
    let _ = writeln!(out, "n_test_bags = {}", s.n_test_bags);
    let _ = writeln!(out, "instances_per_bag = {}", s.instances_per_bag);
    let _ = writeln!(out, "key_fraction = {}", s.key_fraction);
    let _ = writeln!(out, "key_class = {}", s.key_class);
    let _ = writeln!(out, "positive_bag_fraction = {}", s.positive_bag_fraction);
    match &ds.source {
        PoolSource::Synthetic(p) => {
            let _ = writeln!(out, "source = synthetic");
            let _ = writeln!(out, "n_classes = {}", p.n_classes);
            let _ = writeln!(out, "input_dim = {}", p.input_dim);
            let _ = writeln!(out, "samples_per_class = {}", p.samples_per_class);
        }
        PoolSource::Idx {
            images_path,
            labels_path,
            limit,
        } => {
            let _ = writeln!(out, "source = idx");
            let _ = writeln!(out, "images_path = {images_path}");
            let _ = writeln!(out, "labels_path = {labels_path}");
            let _ = writeln!(out, "limit = {limit}");
        }
    }
}

// ── [train] ─────────────────────────────────────────────────────────

const TRAIN_KEYS: &[&str] = &[
    "strategy",
    "learning_rate",
    "weight_decay",
    "epochs",
    "alpha_percent",
    "selection_window",
    "seed",
    "bn_enabled",
    "sample_percent",
    "hidden",
    "attention_dim",
    "bn_epsilon",
    "bn_momentum",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
];

pub fn parse_train(cfg: &ConfigFile) -> Result<TrainConfig> {
    let section = "train";
    let mut tc = TrainConfig::default();
    for (key, value) in cfg.section(section) {
        match key.as_str() {
            "strategy" => tc.strategy = Strategy::parse(value)?,
            "learning_rate" => tc.learning_rate = parse_num(section, key, value)?,
            "weight_decay" => tc.weight_decay = parse_num(section, key, value)?,
            "epochs" => tc.epochs = parse_num(section, key, value)?,
            "alpha_percent" => tc.alpha_percent = parse_num(section, key, value)?,
            "selection_window" => tc.selection_window = parse_num(section, key, value)?,
            "seed" => tc.seed = parse_num(section, key, value)?,
            "bn_enabled" => tc.bn_enabled = parse_bool(section, key, value)?,
            "sample_percent" => tc.sample_percent = parse_num(section, key, value)?,
            "hidden" => {
                tc.hidden = parse_list(section, key, value)?
                    .into_iter()
                    .map(|v| v as usize)
                    .collect()
            }
            "attention_dim" => tc.attention_dim = parse_num(section, key, value)?,
            "bn_epsilon" => check_pinned(section, key, value, abmil::model::BN_EPSILON)?,
            "bn_momentum" => check_pinned(section, key, value, abmil::model::BN_MOMENTUM)?,
            "adam_beta1" => check_pinned(section, key, value, ADAM_BETA1)?,
            "adam_beta2" => check_pinned(section, key, value, ADAM_BETA2)?,
            "adam_epsilon" => check_pinned(section, key, value, ADAM_EPSILON)?,
            _ => return Err(unknown_key(section, key, TRAIN_KEYS)),
        }
    }
    tc.validate()?;
    Ok(tc)
}

pub fn echo_train(out: &mut String, tc: &TrainConfig) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "[train]");
    let _ = writeln!(out, "strategy = {}", tc.strategy.name());
    let _ = writeln!(out, "learning_rate = {}", tc.learning_rate);
    let _ = writeln!(out, "weight_decay = {}", tc.weight_decay);
    let _ = writeln!(out, "epochs = {}", tc.epochs);
    let _ = writeln!(out, "alpha_percent = {}", tc.alpha_percent);
    let _ = writeln!(out, "selection_window = {}", tc.selection_window);
    let _ = writeln!(out, "seed = {}", tc.seed);
    let _ = writeln!(out, "bn_enabled = {}", tc.bn_enabled);
    let _ = writeln!(out, "sample_percent = {}", tc.sample_percent);
    let hidden: Vec<String> = tc.hidden.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "hidden = {}", hidden.join(","));
    let _ = writeln!(out, "attention_dim = {}", tc.attention_dim);
    let _ = writeln!(out, "bn_epsilon = {}", abmil::model::BN_EPSILON);
    let _ = writeln!(out, "bn_momentum = {}", abmil::model::BN_MOMENTUM);
    let _ = writeln!(out, "adam_beta1 = {ADAM_BETA1}");
    let _ = writeln!(out, "adam_beta2 = {ADAM_BETA2}");
    let _ = writeln!(out, "adam_epsilon = {ADAM_EPSILON}");
}

// ── [eval] ──────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub inference_sample_percent: f64,
    pub split: String,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            inference_sample_percent: 100.0,
            split: "test".into(),
            seed: 0,
        }
    }
}

const EVAL_KEYS: &[&str] = &["inference_sample_percent", "split", "seed"];

pub fn parse_eval(cfg: &ConfigFile) -> Result<EvalConfig> {
    let section = "eval";
    let mut ec = EvalConfig::default();
    for (key, value) in cfg.section(section) {
        match key.as_str() {
            "inference_sample_percent" => {
                ec.inference_sample_percent = parse_num(section, key, value)?
            }
            "split" => {
                if !["train", "val", "test"].contains(&value.as_str()) {
                    return Err(Error::Config(format!(
                        "[eval] split = {value}: expected train, val, or test"
                    )));
                }
                ec.split = value.clone();
            }
            "seed" => ec.seed = parse_num(section, key, value)?,
            _ => return Err(unknown_key(section, key, EVAL_KEYS)),
        }
    }
    Ok(ec)
}

pub fn echo_eval(out: &mut String, ec: &EvalConfig) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "[eval]");
    let _ = writeln!(
        out,
        "inference_sample_percent = {}",
        ec.inference_sample_percent
    );
    let _ = writeln!(out, "split = {}", ec.split);
    let _ = writeln!(out, "seed = {}", ec.seed);
}

// ── [matrix] ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct MatrixConfig {
    pub strategies: Vec<Strategy>,
    pub alphas: Vec<f64>,
    pub inference_samples: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            strategies: vec![Strategy::FullBag, Strategy::Accumulate],
            alphas: vec![25.0, 50.0, 100.0],
            inference_samples: vec![100.0],
            repeats: 3,
            base_seed: 0,
        }
    }
}

const MATRIX_KEYS: &[&str] = &[
    "strategies",
    "alphas",
    "inference_samples",
    "repeats",
    "seed",
];

pub fn parse_matrix(cfg: &ConfigFile) -> Result<MatrixConfig> {
    let section = "matrix";
    let mut mc = MatrixConfig::default();
    for (key, value) in cfg.section(section) {
        match key.as_str() {
            "strategies" => {
                if value.is_empty() {
                    return Err(Error::Config(
                        "[matrix] strategies must not be empty".into(),
                    ));
                }
                mc.strategies = value
                    .split(',')
                    .map(|s| Strategy::parse(s.trim()))
                    .collect::<Result<_>>()?;
            }
            "alphas" => mc.alphas = parse_list(section, key, value)?,
            "inference_samples" => mc.inference_samples = parse_list(section, key, value)?,
            "repeats" => mc.repeats = parse_num(section, key, value)?,
            "seed" => mc.base_seed = parse_num(section, key, value)?,
            _ => return Err(unknown_key(section, key, MATRIX_KEYS)),
        }
    }
    Ok(mc)
}

pub fn echo_matrix(out: &mut String, mc: &MatrixConfig) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "[matrix]");
    let strategies: Vec<&str> = mc.strategies.iter().map(|s| s.name()).collect();
    let _ = writeln!(out, "strategies = {}", strategies.join(","));
    let join = |xs: &[f64]| {
        xs.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(out, "alphas = {}", join(&mc.alphas));
    let _ = writeln!(out, "inference_samples = {}", join(&mc.inference_samples));
    let _ = writeln!(out, "repeats = {}", mc.repeats);
    let _ = writeln!(out, "seed = {}", mc.base_seed);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_dataset_config_applies_defaults() {
        let cfg = ConfigFile::parse("[dataset]\nseed = 7\n").unwrap();
        let ds = parse_dataset(&cfg).unwrap();
        assert_eq!(ds.bag_spec.seed, 7);
        assert_eq!(ds.bag_spec.n_train_bags, 40);
        assert_eq!(ds.bag_spec.instances_per_bag, 50);
    }

    #[test]
    fn zero_key_fraction_rejected_at_parse() {
        let cfg = ConfigFile::parse("[dataset]\nkey_fraction = 0\n").unwrap();
        let err = parse_dataset(&cfg).unwrap_err();
        assert!(err.to_string().contains("must exceed 0"), "{err}");
    }

    #[test]
    fn unknown_key_lists_valid_ones() {
        let cfg = ConfigFile::parse("[dataset]\nbogus = 1\n").unwrap();
        let err = parse_dataset(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("instances_per_bag"), "{msg}");
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = ConfigFile::parse("# header\n[train]\nepochs = 3 # inline\n\n").unwrap();
        let tc = parse_train(&cfg).unwrap();
        assert_eq!(tc.epochs, 3);
    }

    #[test]
    fn pinned_constants_must_match() {
        let cfg = ConfigFile::parse("[train]\nadam_beta1 = 0.9\n").unwrap();
        assert!(parse_train(&cfg).is_ok());
        let cfg = ConfigFile::parse("[train]\nadam_beta1 = 0.5\n").unwrap();
        assert!(parse_train(&cfg).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = "[dataset]\nseed = 3\nn_train_bags = 5\n[train]\nstrategy = accumulate\nalpha_percent = 25\n";
        let cfg = ConfigFile::parse(text).unwrap();
        let ds = parse_dataset(&cfg).unwrap();
        let tc = parse_train(&cfg).unwrap();
        let mut echo = String::new();
        echo_dataset(&mut echo, &ds);
        echo_train(&mut echo, &tc);
        let cfg2 = ConfigFile::parse(&echo).unwrap();
        let ds2 = parse_dataset(&cfg2).unwrap();
        let tc2 = parse_train(&cfg2).unwrap();
        assert_eq!(ds.bag_spec, ds2.bag_spec);
        assert_eq!(tc.alpha_percent, tc2.alpha_percent);
        assert_eq!(tc.strategy, tc2.strategy);
    }

    #[test]
    fn empty_matrix_alpha_list_is_config_error() {
        let cfg = ConfigFile::parse("[matrix]\nalphas =\n").unwrap();
        assert!(parse_matrix(&cfg).is_err());
    }
}
