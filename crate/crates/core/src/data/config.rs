//! Flat `key: value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::gnn::{OptimizerKind, DEFAULT_DROPOUT, DEFAULT_HIDDEN, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};
use crate::secure::SUPPORTED_KEY_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FedAvg,
    FedGcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingType {
    Random,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    Tcp,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::FedAvg => "FedAvg",
            Method::FedGcn => "FedGCN",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "FedAvg" => Ok(Method::FedAvg),
            "FedGCN" => Ok(Method::FedGcn),
            _ => Err(format!("unknown method {s:?} (expected FedAvg or FedGCN)")),
        }
    }
}

impl fmt::Display for SamplingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingType::Random => "random",
            SamplingType::Uniform => "uniform",
        })
    }
}

impl FromStr for SamplingType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(SamplingType::Random),
            "uniform" => Ok(SamplingType::Uniform),
            _ => Err(format!("sampling_type must be either 'random' or 'uniform', got {s:?}")),
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::InProc => "inproc",
            TransportKind::Tcp => "tcp",
        })
    }
}

impl FromStr for TransportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" => Ok(TransportKind::InProc),
            "tcp" => Ok(TransportKind::Tcp),
            _ => Err(format!("unknown transport {s:?} (expected inproc or tcp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub fedgraph_task: String,
    /// File path to an FGB file, or an `sbm:` spec.
    pub dataset: String,
    pub method: Method,
    pub n_trainer: usize,
    pub global_rounds: usize,
    pub local_step: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub iid_beta: f64,
    /// FedGCN only; `None` means one hop.
    pub num_hops: Option<u8>,
    /// 0 trains on the full local graph.
    pub batch_size: usize,
    pub fanout: usize,
    pub sample_ratio: f64,
    pub sampling_type: SamplingType,
    pub use_encryption: bool,
    pub he_key_bits: usize,
    pub use_dp: bool,
    pub dp_sigma: Option<f64>,
    pub dp_clip: Option<f64>,
    pub use_lowrank: bool,
    pub rank: Option<usize>,
    /// Accepted for compatibility; the projection is always sent in the clear.
    pub encrypt_projection: bool,
    /// Send parameter differences instead of full parameters.
    pub delta_updates: bool,
    pub transport: TransportKind,
    pub address: String,
    pub timeout_ms: u64,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

pub const DEFAULT_DP_SIGMA: f64 = 1.0;
pub const DEFAULT_DP_CLIP: f64 = 1.0;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fedgraph_task: "NC".into(),
            dataset: String::new(),
            method: Method::FedAvg,
            n_trainer: 10,
            global_rounds: 100,
            local_step: 3,
            learning_rate: DEFAULT_LR,
            hidden: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            optimizer: OptimizerKind::Adam,
            iid_beta: 10000.0,
            num_hops: None,
            batch_size: 0,
            fanout: 10,
            sample_ratio: 1.0,
            sampling_type: SamplingType::Random,
            use_encryption: false,
            he_key_bits: 2048,
            use_dp: false,
            dp_sigma: None,
            dp_clip: None,
            use_lowrank: false,
            rank: None,
            encrypt_projection: false,
            delta_updates: false,
            transport: TransportKind::InProc,
            address: "127.0.0.1:0".into(),
            timeout_ms: 600_000,
            seed: 0,
            output_dir: None,
        }
    }
}

/// One problem with one or more keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub fields: Vec<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.fields.join(", "), self.message)
    }
}

/// Every invalid field found, not just the first.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl ConfigError {
    pub fn mentions(&self, field: &str) -> bool {
        self.issues.iter().any(|i| i.fields.iter().any(|f| f == field))
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for i in &self.issues {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

const KEYS: &[&str] = &[
    "fedgraph_task",
    "dataset",
    "method",
    "n_trainer",
    "global_rounds",
    "local_step",
    "learning_rate",
    "hidden",
    "dropout",
    "weight_decay",
    "optimizer",
    "iid_beta",
    "num_hops",
    "batch_size",
    "fanout",
    "sample_ratio",
    "sampling_type",
    "use_encryption",
    "he_key_bits",
    "use_dp",
    "dp_sigma",
    "dp_clip",
    "use_lowrank",
    "rank",
    "encrypt_projection",
    "delta_updates",
    "transport",
    "address",
    "timeout_ms",
    "seed",
    "output_dir",
];

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, fields: &[&str], message: impl Into<String>) {
        self.0.push(ConfigIssue { fields: fields.iter().map(|s| s.to_string()).collect(), message: message.into() });
    }
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

/// Parses `key: value` lines (`#` starts a comment), applies defaults and
/// cross-checks the result.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut issues = Issues(Vec::new());
    let mut raw: BTreeMap<&str, &str> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once(':') else {
            issues.push(&[&format!("line {}", lineno + 1)], format!("expected `key: value`, got {line:?}"));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            issues.push(&[k], "unknown key");
        } else if raw.insert(k, v).is_some() {
            issues.push(&[k], "given more than once");
        }
    }

    let mut cfg = ExperimentConfig::default();
    macro_rules! field {
        ($key:literal, $dst:expr, $parse:expr) => {
            if let Some(v) = raw.get($key) {
                match $parse(*v) {
                    Ok(x) => $dst = x,
                    Err(e) => issues.push(&[$key], e),
                }
            }
        };
    }
    fn num<T: FromStr>(s: &str) -> Result<T, String> {
        s.parse().map_err(|_| format!("not a valid number: {s:?}"))
    }
    let text_value = |s: &str| -> Result<String, String> { Ok(s.to_string()) };

    field!("fedgraph_task", cfg.fedgraph_task, text_value);
    field!("dataset", cfg.dataset, text_value);
    field!("method", cfg.method, Method::from_str);
    field!("n_trainer", cfg.n_trainer, num::<usize>);
    field!("global_rounds", cfg.global_rounds, num::<usize>);
    field!("local_step", cfg.local_step, num::<usize>);
    field!("learning_rate", cfg.learning_rate, num::<f64>);
    field!("hidden", cfg.hidden, num::<usize>);
    field!("dropout", cfg.dropout, num::<f64>);
    field!("weight_decay", cfg.weight_decay, num::<f64>);
    field!("optimizer", cfg.optimizer, |s: &str| match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?} (expected adam or sgd)")),
    });
    field!("iid_beta", cfg.iid_beta, num::<f64>);
    field!("num_hops", cfg.num_hops, |s| num::<u8>(s).map(Some));
    field!("batch_size", cfg.batch_size, num::<usize>);
    field!("fanout", cfg.fanout, num::<usize>);
    field!("sample_ratio", cfg.sample_ratio, num::<f64>);
    field!("sampling_type", cfg.sampling_type, SamplingType::from_str);
    field!("use_encryption", cfg.use_encryption, parse_bool);
    field!("he_key_bits", cfg.he_key_bits, num::<usize>);
    field!("use_dp", cfg.use_dp, parse_bool);
    field!("dp_sigma", cfg.dp_sigma, |s| num::<f64>(s).map(Some));
    field!("dp_clip", cfg.dp_clip, |s| num::<f64>(s).map(Some));
    field!("use_lowrank", cfg.use_lowrank, parse_bool);
    field!("rank", cfg.rank, |s| num::<usize>(s).map(Some));
    field!("encrypt_projection", cfg.encrypt_projection, parse_bool);
    field!("delta_updates", cfg.delta_updates, parse_bool);
    field!("transport", cfg.transport, TransportKind::from_str);
    field!("address", cfg.address, text_value);
    field!("timeout_ms", cfg.timeout_ms, num::<u64>);
    field!("seed", cfg.seed, num::<u64>);
    field!("output_dir", cfg.output_dir, |s: &str| Ok::<_, String>(Some(PathBuf::from(s))));

    for key in ["dataset", "method"] {
        if !raw.contains_key(key) {
            issues.push(&[key], "required");
        }
    }
    // value checks only for fields that parsed
    let parsed_ok = |k: &str| !issues.0.iter().any(|i| i.fields.iter().any(|f| f == k));
    let mut cross = cfg.check();
    cross.retain(|i| i.fields.iter().all(|f| parsed_ok(f)));
    issues.0.extend(cross);

    if issues.0.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { issues: issues.0 })
    }
}

impl ExperimentConfig {
    pub fn hops(&self) -> u8 {
        self.num_hops.unwrap_or(1)
    }

    pub fn dp_sigma(&self) -> f64 {
        self.dp_sigma.unwrap_or(DEFAULT_DP_SIGMA)
    }

    pub fn dp_clip(&self) -> f64 {
        self.dp_clip.unwrap_or(DEFAULT_DP_CLIP)
    }

    /// Value and cross-field checks.
    fn check(&self) -> Vec<ConfigIssue> {
        let mut is = Issues(Vec::new());
        if self.fedgraph_task != "NC" {
            is.push(&["fedgraph_task"], format!("only NC is supported, got {:?}", self.fedgraph_task));
        }
        if self.dataset.is_empty() {
            is.push(&["dataset"], "must not be empty");
        }
        if self.n_trainer == 0 {
            is.push(&["n_trainer"], "must be at least 1");
        }
        if self.hidden == 0 {
            is.push(&["hidden"], "must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            is.push(&["learning_rate"], "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            is.push(&["dropout"], "must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            is.push(&["weight_decay"], "must be a finite non-negative number");
        }
        if !(self.iid_beta > 0.0 && self.iid_beta.is_finite()) {
            is.push(&["iid_beta"], "must be positive");
        }
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            is.push(&["sample_ratio"], "Sample ratio must be between 0 and 1");
        } else if ((self.n_trainer as f64 * self.sample_ratio).floor() as usize) == 0 && self.n_trainer > 0 {
            is.push(&["sample_ratio", "n_trainer"], "selects no trainer per round");
        }
        if let Some(h) = self.num_hops {
            if self.method != Method::FedGcn {
                is.push(&["num_hops", "method"], "num_hops applies to FedGCN only");
            } else if !(1..=2).contains(&h) {
                is.push(&["num_hops"], "must be 1 or 2");
            }
        }
        if self.batch_size > 0 && self.fanout == 0 {
            is.push(&["fanout"], "must be at least 1 when batch_size > 0");
        }
        if self.use_encryption && !SUPPORTED_KEY_BITS.contains(&self.he_key_bits) {
            is.push(&["he_key_bits"], format!("must be one of {SUPPORTED_KEY_BITS:?}"));
        }
        for (key, v) in [("dp_sigma", self.dp_sigma), ("dp_clip", self.dp_clip)] {
            if let Some(v) = v {
                if !self.use_dp {
                    is.push(&[key, "use_dp"], format!("{key} requires use_dp: true"));
                } else if !(v >= 0.0 && v.is_finite()) || (key == "dp_clip" && v == 0.0) {
                    is.push(&[key], "out of range");
                }
            }
        }
        match (self.use_lowrank, self.rank) {
            (false, Some(_)) => is.push(&["rank", "use_lowrank"], "rank requires use_lowrank: true"),
            (true, None) => is.push(&["rank", "use_lowrank"], "use_lowrank requires rank"),
            (true, Some(0)) => is.push(&["rank"], "must be at least 1"),
            _ => {}
        }
        if self.use_lowrank && self.method != Method::FedGcn {
            is.push(&["use_lowrank", "method"], "low-rank projection applies to FedGCN pre-train only");
        }
        if self.transport == TransportKind::Tcp && self.address.is_empty() {
            is.push(&["address"], "required for tcp transport");
        }
        if self.timeout_ms == 0 {
            is.push(&["timeout_ms"], "must be positive");
        }
        is.0
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.check();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// Every resolved setting, as it would be written in a config file.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("fedgraph_task", self.fedgraph_task.clone());
        put("dataset", self.dataset.clone());
        put("method", self.method.to_string());
        put("n_trainer", self.n_trainer.to_string());
        put("global_rounds", self.global_rounds.to_string());
        put("local_step", self.local_step.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("hidden", self.hidden.to_string());
        put("dropout", self.dropout.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("optimizer", if self.optimizer == OptimizerKind::Adam { "adam" } else { "sgd" }.into());
        put("iid_beta", self.iid_beta.to_string());
        if let Some(h) = self.num_hops {
            put("num_hops", h.to_string());
        }
        put("batch_size", self.batch_size.to_string());
        put("fanout", self.fanout.to_string());
        put("sample_ratio", self.sample_ratio.to_string());
        put("sampling_type", self.sampling_type.to_string());
        put("use_encryption", self.use_encryption.to_string());
        put("he_key_bits", self.he_key_bits.to_string());
        put("use_dp", self.use_dp.to_string());
        if let Some(v) = self.dp_sigma {
            put("dp_sigma", v.to_string());
        }
        if let Some(v) = self.dp_clip {
            put("dp_clip", v.to_string());
        }
        put("use_lowrank", self.use_lowrank.to_string());
        if let Some(k) = self.rank {
            put("rank", k.to_string());
        }
        put("encrypt_projection", self.encrypt_projection.to_string());
        put("delta_updates", self.delta_updates.to_string());
        put("transport", self.transport.to_string());
        put("address", self.address.clone());
        put("timeout_ms", self.timeout_ms.to_string());
        put("seed", self.seed.to_string());
        if let Some(d) = &self.output_dir {
            put("output_dir", d.display().to_string());
        }
        m
    }

    /// Renders the config back to parseable text.
    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_gets_defaults() {
        let c = parse_config("fedgraph_task: NC\nmethod: FedAvg\ndataset: sbm:blocks=2,n=10\n").unwrap();
        assert_eq!(c.hidden, 16);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.sample_ratio, 1.0);
        assert_eq!(c.method, Method::FedAvg);
        assert_eq!(c.hops(), 1);
    }

    #[test]
    fn rank_without_lowrank_names_both() {
        let e = parse_config("method: FedGCN\ndataset: x.fgb\nrank: 100\n").unwrap_err();
        assert!(e.mentions("rank") && e.mentions("use_lowrank"), "{e}");
    }

    #[test]
    fn unknown_method_names_field() {
        let e = parse_config("method: FedSage\ndataset: x.fgb\n").unwrap_err();
        assert_eq!(e.issues.len(), 1);
        assert!(e.mentions("method"));
    }

    #[test]
    fn all_problems_reported_at_once() {
        let text = "method: FedAvg\ndataset: d.fgb\nsample_ratio: 1.5\nnum_hops: 2\nlearning_rate: abc\nbogus: 1\nuse_dp: maybe\n";
        let e = parse_config(text).unwrap_err();
        for f in ["sample_ratio", "num_hops", "learning_rate", "bogus", "use_dp"] {
            assert!(e.mentions(f), "{f} missing from {e}");
        }
    }

    #[test]
    fn quick_start_config_accepted_and_echoed() {
        let text = "\
# quick start
fedgraph_task: NC
dataset: cora.fgb
method: FedGCN
n_trainer: 10
global_rounds: 100
local_step: 3
learning_rate: 0.5
num_hops: 1   # one-hop pre-train
iid_beta: 10000
use_encryption: true
";
        let c = parse_config(text).unwrap();
        assert!(c.use_encryption);
        let pairs = c.to_pairs();
        for line in text.lines().filter(|l| !l.starts_with('#')) {
            let (k, v) = line.split_once(':').unwrap();
            let v = strip_comment(v).trim();
            assert_eq!(pairs[k.trim()], v, "{k}");
        }
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let e = parse_config("method: FedAvg\nmethod: FedGCN\ndataset: a\nnonsense\n").unwrap_err();
        assert!(e.mentions("method"));
        assert!(e.mentions("line 4"));
    }
}
