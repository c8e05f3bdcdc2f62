//! Run configuration: a flat JSON document of dotted keys mirroring the
//! training configuration plus the dataset spec and evaluation grid.
//!
//! Keys are applied over built-in defaults; `train.preset = "paper"` swaps
//! the baseline before the remaining keys land. Unknown keys and wrong
//! types are rejected by name. `--set key=value` feeds single overrides
//! through the same path.

use anyhow::{anyhow, Result};
use serde_json::{json, Map, Value};

use pointrank_core::hcl::PositiveSet;
use pointrank_core::scorer::ScorerMode;
use pointrank_core::train::TrainConfig;

/// Marker for command-line / configuration mistakes (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub classes: Vec<usize>,
    pub clouds_per_class: usize,
    pub n_points: usize,
    pub train_fraction: f64,
    /// Classes held out of training entirely (appear only in the test
    /// split). Empty disables the zero-shot protocol.
    pub zero_shot_classes: Vec<usize>,
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            classes: (0..8).collect(),
            clouds_per_class: 24,
            n_points: 256,
            train_fraction: 0.75,
            zero_shot_classes: Vec::new(),
            seed: 7,
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub sizes: Vec<usize>,
    pub fps_start: usize,
    pub seed: u64,
    /// Any of "classification", "retrieval", "reconstruction".
    pub tasks: Vec<String>,
    pub classifier_epochs: usize,
    pub autoencoder_epochs: usize,
    pub decoder_points: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            sizes: vec![256, 128, 64, 32, 16],
            fps_start: 0,
            seed: 999,
            tasks: vec![
                "classification".into(),
                "retrieval".into(),
                "reconstruction".into(),
            ],
            classifier_epochs: 40,
            autoencoder_epochs: 30,
            decoder_points: 64,
        }
    }
}

/// Timing-run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { sizes: vec![8, 16, 32, 64, 128, 256, 512], repeats: 3 }
    }
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub data: DataSpec,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    pub bench: BenchSpec,
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| usage_err(format!("config key {key}: expected an unsigned integer")))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    Ok(as_u64(key, v)? as usize)
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| usage_err(format!("config key {key}: expected a number")))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| usage_err(format!("config key {key}: expected a boolean")))
}

fn as_str<'v>(key: &str, v: &'v Value) -> Result<&'v str> {
    v.as_str().ok_or_else(|| usage_err(format!("config key {key}: expected a string")))
}

fn as_usize_vec(key: &str, v: &Value) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| usage_err(format!("config key {key}: expected an array of integers")))?;
    arr.iter().map(|e| as_usize(key, e)).collect()
}

fn as_string_vec(key: &str, v: &Value) -> Result<Vec<String>> {
    let arr = v
        .as_array()
        .ok_or_else(|| usage_err(format!("config key {key}: expected an array of strings")))?;
    arr.iter().map(|e| as_str(key, e).map(String::from)).collect()
}

impl RunConfig {
    /// Apply one dotted key. Unknown keys are rejected by name.
    pub fn apply(&mut self, key: &str, value: &Value) -> Result<()> {
        match key {
            "data.classes" => self.data.classes = as_usize_vec(key, value)?,
            "data.clouds_per_class" => self.data.clouds_per_class = as_usize(key, value)?,
            "data.n_points" => self.data.n_points = as_usize(key, value)?,
            "data.train_fraction" => self.data.train_fraction = as_f64(key, value)?,
            "data.zero_shot_classes" => self.data.zero_shot_classes = as_usize_vec(key, value)?,
            "data.seed" => self.data.seed = as_u64(key, value)?,

            "model.hidden" => self.train.model.hidden = as_usize_vec(key, value)?,
            "model.feature_dim" => self.train.model.feature_dim = as_usize(key, value)?,
            "model.head_hidden" => self.train.model.head_hidden = as_usize(key, value)?,
            "model.embed_dim" => self.train.model.embed_dim = as_usize(key, value)?,
            "model.share_weights" => self.train.model.share_weights = as_bool(key, value)?,
            "model.normalize_embed" => self.train.model.normalize_embed = as_bool(key, value)?,

            "scorer.mode" => {
                let s = as_str(key, value)?;
                self.train.scorer.mode = ScorerMode::parse(s).ok_or_else(|| {
                    usage_err(format!(
                        "config key {key}: unknown mode {s:?} (exact, soft, maxpool, sum)"
                    ))
                })?;
            }
            "scorer.tau" => self.train.scorer.tau = as_f64(key, value)?,

            "sinkhorn.epsilon" => self.train.sinkhorn.epsilon = as_f64(key, value)?,
            "sinkhorn.max_iters" => self.train.sinkhorn.max_iters = as_usize(key, value)?,
            "sinkhorn.tol" => self.train.sinkhorn.tol = as_f64(key, value)?,
            "sinkhorn.anneal_eps" => {
                let v = as_f64(key, value)?;
                self.train.sinkhorn.anneal_eps = (v > 0.0).then_some(v);
            }

            "hcl.theta" => self.train.hcl.theta = as_usize(key, value)?,
            "hcl.phi" => self.train.hcl.phi = as_f64(key, value)?,
            "hcl.positives" => {
                let s = as_str(key, value)?;
                self.train.hcl.positives = match s {
                    "own-level" => PositiveSet::OwnLevel,
                    "all-own-levels" => PositiveSet::AllOwnLevels,
                    _ => {
                        return Err(usage_err(format!(
                            "config key {key}: unknown positive set {s:?} (own-level, all-own-levels)"
                        )))
                    }
                };
            }
            "hcl.hard_forward" => self.train.hcl.hard_forward = as_bool(key, value)?,

            "train.preset" => {
                // handled before the other keys in from_flat; reaching here
                // means it appeared twice or out of band, which is fine
                let s = as_str(key, value)?;
                apply_preset(self, s)?;
            }
            "train.batch_size" => self.train.batch_size = as_usize(key, value)?,
            "train.epochs" => self.train.epochs = as_usize(key, value)?,
            "train.lr0" => self.train.lr0 = as_f64(key, value)?,
            "train.weight_decay" => self.train.weight_decay = as_f64(key, value)?,
            "train.seed" => self.train.seed = as_u64(key, value)?,

            "eval.sizes" => self.eval.sizes = as_usize_vec(key, value)?,
            "eval.fps_start" => self.eval.fps_start = as_usize(key, value)?,
            "eval.seed" => self.eval.seed = as_u64(key, value)?,
            "eval.tasks" => {
                let tasks = as_string_vec(key, value)?;
                for t in &tasks {
                    if !matches!(t.as_str(), "classification" | "retrieval" | "reconstruction") {
                        return Err(usage_err(format!("config key {key}: unknown task {t:?}")));
                    }
                }
                self.eval.tasks = tasks;
            }
            "eval.classifier_epochs" => self.eval.classifier_epochs = as_usize(key, value)?,
            "eval.autoencoder_epochs" => self.eval.autoencoder_epochs = as_usize(key, value)?,
            "eval.decoder_points" => self.eval.decoder_points = as_usize(key, value)?,

            "bench.sizes" => self.bench.sizes = as_usize_vec(key, value)?,
            "bench.repeats" => self.bench.repeats = as_usize(key, value)?,

            _ => return Err(usage_err(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// The canonical flat document (sorted keys).
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let t = &self.train;
        m.insert("data.classes".into(), json!(self.data.classes));
        m.insert("data.clouds_per_class".into(), json!(self.data.clouds_per_class));
        m.insert("data.n_points".into(), json!(self.data.n_points));
        m.insert("data.train_fraction".into(), json!(self.data.train_fraction));
        m.insert("data.zero_shot_classes".into(), json!(self.data.zero_shot_classes));
        m.insert("data.seed".into(), json!(self.data.seed));

        m.insert("model.hidden".into(), json!(t.model.hidden));
        m.insert("model.feature_dim".into(), json!(t.model.feature_dim));
        m.insert("model.head_hidden".into(), json!(t.model.head_hidden));
        m.insert("model.embed_dim".into(), json!(t.model.embed_dim));
        m.insert("model.share_weights".into(), json!(t.model.share_weights));
        m.insert("model.normalize_embed".into(), json!(t.model.normalize_embed));

        m.insert("scorer.mode".into(), json!(t.scorer.mode.as_str()));
        m.insert("scorer.tau".into(), json!(t.scorer.tau));

        m.insert("sinkhorn.epsilon".into(), json!(t.sinkhorn.epsilon));
        m.insert("sinkhorn.max_iters".into(), json!(t.sinkhorn.max_iters));
        m.insert("sinkhorn.tol".into(), json!(t.sinkhorn.tol));
        m.insert(
            "sinkhorn.anneal_eps".into(),
            json!(t.sinkhorn.anneal_eps.unwrap_or(0.0)),
        );

        m.insert("hcl.theta".into(), json!(t.hcl.theta));
        m.insert("hcl.phi".into(), json!(t.hcl.phi));
        m.insert(
            "hcl.positives".into(),
            json!(match t.hcl.positives {
                PositiveSet::OwnLevel => "own-level",
                PositiveSet::AllOwnLevels => "all-own-levels",
            }),
        );
        m.insert("hcl.hard_forward".into(), json!(t.hcl.hard_forward));

        m.insert("train.batch_size".into(), json!(t.batch_size));
        m.insert("train.epochs".into(), json!(t.epochs));
        m.insert("train.lr0".into(), json!(t.lr0));
        m.insert("train.weight_decay".into(), json!(t.weight_decay));
        m.insert("train.seed".into(), json!(t.seed));

        m.insert("eval.sizes".into(), json!(self.eval.sizes));
        m.insert("eval.fps_start".into(), json!(self.eval.fps_start));
        m.insert("eval.seed".into(), json!(self.eval.seed));
        m.insert("eval.tasks".into(), json!(self.eval.tasks));
        m.insert("eval.classifier_epochs".into(), json!(self.eval.classifier_epochs));
        m.insert("eval.autoencoder_epochs".into(), json!(self.eval.autoencoder_epochs));
        m.insert("eval.decoder_points".into(), json!(self.eval.decoder_points));

        m.insert("bench.sizes".into(), json!(self.bench.sizes));
        m.insert("bench.repeats".into(), json!(self.bench.repeats));
        m
    }

    /// Build a config from a flat document over the defaults.
    pub fn from_flat(map: &Map<String, Value>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(preset) = map.get("train.preset") {
            apply_preset(&mut cfg, as_str("train.preset", preset)?)?;
        }
        for (key, value) in map {
            if key == "train.preset" {
                continue;
            }
            if value.is_object() {
                return Err(usage_err(format!(
                    "config key {key:?}: nested objects are not allowed, use flat dotted keys"
                )));
            }
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }
}

fn apply_preset(cfg: &mut RunConfig, name: &str) -> Result<()> {
    match name {
        "desk" => cfg.train = TrainConfig::default(),
        "paper" => cfg.train = TrainConfig::paper(),
        _ => return Err(usage_err(format!("unknown train.preset {name:?} (desk, paper)"))),
    }
    Ok(())
}

/// Load a config file (if given) and apply `--set` overrides and the
/// global seed (which pins data, train, and eval seeds at once).
pub fn load(
    path: Option<&std::path::Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut map = Map::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow!("reading config {}: {e}", path.display()))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| usage_err(format!("config {}: {e}", path.display())))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| usage_err(format!("config {}: expected a JSON object", path.display())))?;
        map = obj.clone();
    }
    for kv in sets {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| usage_err(format!("--set {kv:?}: expected KEY=VALUE")))?;
        // accept bare strings so --set scorer.mode=soft works unquoted
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| json!(raw));
        map.insert(key.to_string(), value);
    }
    let mut cfg = RunConfig::from_flat(&map)?;
    if let Some(seed) = seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
    }
    cfg.train.validate().map_err(|e| usage_err(format!("config: {e}")))?;
    Ok(cfg)
}

/// Flat keys describing the training side only (stored in checkpoints).
pub fn train_keys(cfg: &RunConfig) -> Map<String, Value> {
    cfg.to_flat()
        .into_iter()
        .filter(|(k, _)| {
            k.starts_with("train.")
                || k.starts_with("model.")
                || k.starts_with("scorer.")
                || k.starts_with("sinkhorn.")
                || k.starts_with("hcl.")
        })
        .collect()
}
