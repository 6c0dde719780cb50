//! Experiment configuration: one TOML file plus one seed fully determines a
//! run. Parsing is strict — unknown keys are errors, so hyperparameter typos
//! cannot silently change a comparison.

use anyhow::{bail, Context, Result};
use resop::datagen::{DarcyConfig, TimeSeriesConfig};
use resop::model::{Activation, Architecture, OperatorSpec, TrainConfig, TrainMode};
use resop::residual::{AuxInputChannels, AuxiliaryPolicy};
use resop::retrieval::SimilarityMetric;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub genres: Option<GenresSection>,
    #[serde(default)]
    pub analysis: Option<AnalysisSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    /// Dataset file written by `datagen` and read by everything else.
    pub path: PathBuf,
    pub resolution: usize,
    pub num_train: usize,
    pub num_test: usize,
    // Steady-problem parameters.
    #[serde(default = "default_coefficient_low")]
    pub coefficient_low: f64,
    #[serde(default = "default_coefficient_high")]
    pub coefficient_high: f64,
    #[serde(default = "default_correlation_length")]
    pub correlation_length: f64,
    #[serde(default = "default_forcing")]
    pub forcing: f64,
    // Time-series parameters.
    #[serde(default = "default_input_steps")]
    pub input_steps: usize,
    #[serde(default = "default_output_steps")]
    pub output_steps: usize,
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_coefficient_low() -> f64 {
    3.0
}
fn default_coefficient_high() -> f64 {
    12.0
}
fn default_correlation_length() -> f64 {
    0.35
}
fn default_forcing() -> f64 {
    1.0
}
fn default_input_steps() -> usize {
    10
}
fn default_output_steps() -> usize {
    10
}
fn default_viscosity() -> f64 {
    1e-3
}
fn default_dt() -> f64 {
    0.008
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Darcy,
    Timeseries,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: ArchitectureName,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default)]
    pub activation: ActivationName,
}

fn default_width() -> usize {
    32
}
fn default_depth() -> usize {
    4
}
fn default_modes() -> usize {
    12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureName {
    Fno,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    #[default]
    Gelu,
    Relu,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_lr_step")]
    pub lr_step: usize,
    #[serde(default = "default_lr_gamma")]
    pub lr_gamma: f64,
    pub mode: ModeName,
    #[serde(default)]
    pub freeze_pairs: bool,
}

fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    8
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_lr_step() -> usize {
    100
}
fn default_lr_gamma() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Direct,
    Residual,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    #[serde(default)]
    pub metric: MetricName,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_keep_last")]
    pub keep_last_input_steps: KeepLast,
    #[serde(default = "default_true")]
    pub include_aux_solution: bool,
    #[serde(default = "default_true")]
    pub include_score_channel: bool,
}

fn default_k() -> usize {
    20
}
fn default_true() -> bool {
    true
}
fn default_keep_last() -> KeepLast {
    KeepLast::Word(KeepAllWord::All)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    #[default]
    Cosine,
    Euclidean,
    Manhattan,
}

/// `"all"` or a nonnegative integer (0 omits the auxiliary input).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum KeepLast {
    Count(usize),
    Word(KeepAllWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeepAllWord {
    All,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenresSection {
    pub eval_resolution: usize,
    #[serde(default)]
    pub eval_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_max_rank")]
    pub max_rank: usize,
}

fn default_max_rank() -> usize {
    40
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.num_train < 2 || d.num_test < 1 {
            bail!("data: need num_train >= 2 and num_test >= 1");
        }
        if d.resolution < 8 {
            bail!("data: resolution must be at least 8");
        }
        match d.kind {
            DataKind::Darcy => {
                if !(d.coefficient_low > 0.0 && d.coefficient_low < d.coefficient_high) {
                    bail!("data: need 0 < coefficient_low < coefficient_high");
                }
            }
            DataKind::Timeseries => {
                if d.input_steps < 3 {
                    bail!("data: input_steps must be at least 3");
                }
            }
        }
        if self.model.architecture == ArchitectureName::Fno
            && 2 * self.model.modes > d.resolution
        {
            bail!(
                "model: modes {} exceed floor(resolution/2) = {}",
                self.model.modes,
                d.resolution / 2
            );
        }
        if let Some(g) = &self.genres {
            if g.eval_resolution < d.resolution {
                bail!("genres: eval_resolution must be at least the training resolution");
            }
            if self.model.architecture != ArchitectureName::Fno {
                bail!("genres: resolution generalization requires the fno architecture");
            }
        }
        if let Some(a) = &self.analysis {
            if a.max_rank < 1 || a.max_rank > d.num_train {
                bail!("analysis: max_rank must lie in [1, num_train]");
            }
        }
        let p = self.policy();
        let has_aux = !matches!(p.aux_input, AuxInputChannels::Last(0));
        if !(has_aux || p.include_aux_solution || p.include_score_channel) {
            bail!("retrieval: the policy must enable at least one auxiliary source");
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.data.num_train + self.data.num_test
    }

    pub fn darcy_config(&self) -> DarcyConfig {
        DarcyConfig {
            resolution: self.data.resolution,
            num_samples: self.num_samples(),
            seed: self.seed,
            coefficient_low: self.data.coefficient_low,
            coefficient_high: self.data.coefficient_high,
            correlation_length: self.data.correlation_length,
        }
    }

    pub fn timeseries_config(&self) -> TimeSeriesConfig {
        TimeSeriesConfig {
            resolution: self.data.resolution,
            num_samples: self.num_samples(),
            seed: self.seed,
            input_steps: self.data.input_steps,
            output_steps: self.data.output_steps,
            viscosity: self.data.viscosity,
            dt: self.data.dt,
        }
    }

    pub fn metric(&self) -> SimilarityMetric {
        match self.retrieval.metric {
            MetricName::Cosine => SimilarityMetric::CosineDistance,
            MetricName::Euclidean => SimilarityMetric::Euclidean,
            MetricName::Manhattan => SimilarityMetric::Manhattan,
        }
    }

    pub fn policy(&self) -> AuxiliaryPolicy {
        AuxiliaryPolicy {
            aux_input: match self.retrieval.keep_last_input_steps {
                KeepLast::Word(KeepAllWord::All) => AuxInputChannels::All,
                KeepLast::Count(n) => AuxInputChannels::Last(n),
            },
            include_aux_solution: self.retrieval.include_aux_solution,
            include_score_channel: self.retrieval.include_score_channel,
        }
    }

    pub fn mode(&self) -> TrainMode {
        match self.train.mode {
            ModeName::Direct => TrainMode::Direct,
            ModeName::Residual => TrainMode::Residual,
        }
    }

    /// Operator spec for a given mode, with input channels derived from the
    /// dataset channel counts.
    pub fn operator_spec(&self, mode: TrainMode, c_a: usize, c_u: usize) -> OperatorSpec {
        let in_channels = match mode {
            TrainMode::Direct => c_a,
            TrainMode::Residual => self.policy().network_input_channels(c_a, c_u),
        };
        OperatorSpec {
            architecture: match self.model.architecture {
                ArchitectureName::Fno => Architecture::Fno,
                ArchitectureName::Resnet => Architecture::Resnet,
            },
            width: self.model.width,
            depth: self.model.depth,
            modes: self.model.modes,
            in_channels,
            out_channels: c_u,
            activation: match self.model.activation {
                ActivationName::Gelu => Activation::Gelu,
                ActivationName::Relu => Activation::Relu,
            },
        }
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            lr_step: self.train.lr_step,
            lr_gamma: self.train.lr_gamma,
            k: self.retrieval.k,
            mode,
            seed: self.seed,
            policy: self.policy(),
            freeze_pairs: self.train.freeze_pairs,
        }
    }

    pub fn genres_eval_path(&self) -> PathBuf {
        match self.genres.as_ref().and_then(|g| g.eval_path.clone()) {
            Some(p) => p,
            None => self.output_dir.join("genres_test.dphi"),
        }
    }
}
