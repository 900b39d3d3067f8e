//! Run configuration: one TOML file per run, mapped onto the training and
//! evaluation structs. Lists where a scalar is expected (currently only
//! `alignment.lambda`) expand into grid sub-runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignKind, AlignmentSpec, Bandwidth};
use crate::error::{Error, Result};
use crate::eval::{ClassifierConfig, MatcherConfig};
use crate::sampling::SamplerConfig;
use crate::scoring::{ModelKind, NormOrder, ScoringModel};
use crate::store::OptimizerConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub alignment: AlignmentSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub mlp_optimizer: OptimizerSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub evaluation: Option<EvalSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either explicit per-source triple files, or one triple file plus
/// relation groups to split it by.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub sources: BTreeMap<String, String>,
    #[serde(default)]
    pub triples: Option<String>,
    /// source name -> list of relation names (used with `triples`).
    #[serde(default)]
    pub groups: BTreeMap<String, Vec<String>>,
    /// Optional `entity<TAB>type` file.
    #[serde(default)]
    pub entity_types: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    pub dim: usize,
    #[serde(default = "default_norm")]
    pub norm: String,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_norm() -> String {
    "l2".to_string()
}

fn default_margin() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub head_tail_prob: f64,
    pub filter_true: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerSection {
            batch_size: d.batch_size,
            negatives_per_positive: d.negatives_per_positive,
            head_tail_prob: d.head_tail_prob,
            filter_true: d.filter_true,
        }
    }
}

/// `lambda` accepts a scalar or a grid list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    One(f64),
    Grid(Vec<f64>),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::One(1.0)
    }
}

impl LambdaSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let vals = match self {
            LambdaSpec::One(v) => vec![*v],
            LambdaSpec::Grid(vs) => vs.clone(),
        };
        if vals.is_empty() {
            return Err(Error::Config("lambda grid is empty".to_string()));
        }
        for &v in &vals {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("lambda must be finite and >= 0, got {v}")));
            }
        }
        Ok(vals)
    }
}

/// `bandwidth` accepts the string "median" or a fixed positive number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Named(String),
    Fixed(f64),
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec::Named("median".to_string())
    }
}

impl BandwidthSpec {
    pub fn resolve(&self) -> Result<Bandwidth> {
        match self {
            BandwidthSpec::Named(s) if s == "median" => Ok(Bandwidth::MedianHeuristic),
            BandwidthSpec::Named(s) => {
                Err(Error::Config(format!("unknown bandwidth {s:?} (expected \"median\" or a number)")))
            }
            BandwidthSpec::Fixed(v) if *v > 0.0 => Ok(Bandwidth::Fixed(*v)),
            BandwidthSpec::Fixed(v) => {
                Err(Error::Config(format!("bandwidth must be positive, got {v}")))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentSection {
    pub kind: String,
    pub lambda: LambdaSpec,
    pub bandwidth: BandwidthSpec,
    pub hist_bins: usize,
    pub hist_smoothing: f64,
    pub flip_targets: bool,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        let d = AlignmentSpec::default();
        AlignmentSection {
            kind: "none".to_string(),
            lambda: LambdaSpec::default(),
            bandwidth: BandwidthSpec::default(),
            hist_bins: d.hist_bins,
            hist_smoothing: d.hist_smoothing,
            flip_targets: d.flip_targets,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            epsilon: d.epsilon,
        }
    }
}

impl OptimizerSection {
    fn resolve(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub discriminator_steps_per_batch: usize,
    pub discriminator_hidden: Vec<usize>,
    pub alignment_sample_cap: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 2000,
            checkpoint_every: 0,
            seed: 0,
            discriminator_steps_per_batch: 1,
            discriminator_hidden: vec![128, 128],
            alignment_sample_cap: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Train-source -> test-source arrow, e.g. "A->B".
    pub arrow: String,
    pub hits_ns: Vec<usize>,
    pub n_negatives: usize,
    pub matcher_hidden: Vec<usize>,
    pub matcher_epochs: usize,
    pub matcher_negatives: usize,
    pub classifier_hidden: Vec<usize>,
    pub classifier_epochs: usize,
    /// Optional `entity<TAB>class` label file for node classification.
    pub labels: Option<String>,
    pub eval_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let m = MatcherConfig::default();
        let c = ClassifierConfig::default();
        EvalSection {
            arrow: String::new(),
            hits_ns: vec![1, 3, 10],
            n_negatives: 1000,
            matcher_hidden: m.hidden,
            matcher_epochs: m.epochs,
            matcher_negatives: m.negatives_per_positive,
            classifier_hidden: c.hidden,
            classifier_epochs: c.epochs,
            labels: None,
            eval_seed: 0,
        }
    }
}

impl EvalSection {
    pub fn matcher_config(&self, optimizer: OptimizerConfig, seed: u64) -> MatcherConfig {
        MatcherConfig {
            hidden: self.matcher_hidden.clone(),
            epochs: self.matcher_epochs,
            negatives_per_positive: self.matcher_negatives,
            optimizer,
            seed,
            ..MatcherConfig::default()
        }
    }

    pub fn classifier_config(&self, optimizer: OptimizerConfig, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            hidden: self.classifier_hidden.clone(),
            epochs: self.classifier_epochs,
            optimizer,
            seed,
            ..ClassifierConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".to_string(),
        }
    }
}

/// Strict `"A->B"` parser: exactly one arrow, non-empty sides, no inner
/// whitespace.
pub fn parse_arrow(s: &str) -> Result<(String, String)> {
    let err = || Error::Config(format!("malformed arrow {s:?} (expected \"LEFT->RIGHT\")"));
    let (left, right) = s.split_once("->").ok_or_else(err)?;
    if left.is_empty() || right.is_empty() || right.contains("->") {
        return Err(err());
    }
    if left.chars().any(char::is_whitespace) || right.chars().any(char::is_whitespace) {
        return Err(err());
    }
    Ok((left.to_string(), right.to_string()))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let s = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&s)
    }

    fn validate(&self) -> Result<()> {
        let explicit = !self.dataset.sources.is_empty();
        let split = self.dataset.triples.is_some();
        if explicit == split {
            return Err(Error::Config(
                "dataset needs either [dataset] sources = {...} or triples + groups, not both or neither"
                    .to_string(),
            ));
        }
        if split && self.dataset.groups.is_empty() {
            return Err(Error::Config(
                "dataset.triples requires non-empty dataset.groups".to_string(),
            ));
        }
        if !split && !self.dataset.groups.is_empty() {
            return Err(Error::Config(
                "dataset.groups only applies with dataset.triples".to_string(),
            ));
        }
        self.scoring_model()?;
        self.alignment_kind()?;
        self.alignment.lambda.values()?;
        self.alignment.bandwidth.resolve()?;
        if self.model.dim == 0 {
            return Err(Error::Config("model.dim must be >= 1".to_string()));
        }
        if let Some(eval) = &self.evaluation {
            parse_arrow(&eval.arrow)?;
            if eval.hits_ns.is_empty() {
                return Err(Error::Config("evaluation.hits_ns is empty".to_string()));
            }
            if eval.n_negatives == 0 {
                return Err(Error::Config("evaluation.n_negatives must be >= 1".to_string()));
            }
        }
        Ok(())
    }

    pub fn scoring_model(&self) -> Result<ScoringModel> {
        let kind = ModelKind::parse(&self.model.kind)?;
        let norm = match self.model.norm.to_ascii_lowercase().as_str() {
            "l1" => NormOrder::L1,
            "l2" => NormOrder::L2,
            other => return Err(Error::Config(format!("unknown norm {other:?} (expected l1 or l2)"))),
        };
        ScoringModel::new(kind, norm, self.model.margin)
    }

    pub fn alignment_kind(&self) -> Result<AlignKind> {
        AlignKind::parse(&self.alignment.kind)
    }

    /// Resolved train config for one λ value.
    pub fn train_config(&self, lambda: f64) -> Result<TrainConfig> {
        let model = self.scoring_model()?;
        let mut cfg = TrainConfig::new(model, self.model.dim);
        cfg.sampler = SamplerConfig {
            batch_size: self.sampler.batch_size,
            negatives_per_positive: self.sampler.negatives_per_positive,
            head_tail_prob: self.sampler.head_tail_prob,
            filter_true: self.sampler.filter_true,
        };
        cfg.alignment = AlignmentSpec {
            kind: self.alignment_kind()?,
            bandwidth: self.alignment.bandwidth.resolve()?,
            hist_bins: self.alignment.hist_bins,
            hist_smoothing: self.alignment.hist_smoothing,
            flip_targets: self.alignment.flip_targets,
            lambda,
        };
        cfg.optimizer = self.optimizer.resolve();
        cfg.mlp_optimizer = self.mlp_optimizer.resolve();
        cfg.epochs = self.train.epochs;
        cfg.checkpoint_every = self.train.checkpoint_every;
        cfg.seed = self.train.seed;
        cfg.discriminator_steps_per_batch = self.train.discriminator_steps_per_batch;
        cfg.discriminator_hidden = self.train.discriminator_hidden.clone();
        cfg.alignment_sample_cap = self.train.alignment_sample_cap;
        Ok(cfg)
    }

    /// One train config per λ grid value, with a subdirectory name for each.
    pub fn train_grid(&self) -> Result<Vec<(String, TrainConfig)>> {
        let lambdas = self.alignment.lambda.values()?;
        let single = lambdas.len() == 1;
        lambdas
            .into_iter()
            .map(|l| {
                let name = if single {
                    String::new()
                } else {
                    format!("lambda_{l}")
                };
                Ok((name, self.train_config(l)?))
            })
            .collect()
    }

    /// Provenance echo written into every output directory.
    pub fn echo_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config echo: {e}")))
    }
}
