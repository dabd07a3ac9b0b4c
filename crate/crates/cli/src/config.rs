use std::path::{Path, PathBuf};

use clap::{ArgAction, Args};
use msl_core::backbone::Activation;
use msl_core::stream::{MemoryMode, SyntheticConfig};
use msl_core::trainer::{BiasInit, Method, TrainConfig};
use serde::de::{DeserializeOwned, IntoDeserializer};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::CliError;

/// Environment variable supplying the output directory when neither the
/// config file nor `--out` sets one.
pub const OUT_DIR_ENV: &str = "MSL_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "msl-out";
pub const DEFAULT_TASKS: usize = 5;

/// Every key of the config file, each mirrored by a flag of the same name.
/// Absent keys stay `None` so that file and flags can be layered.
#[derive(Args, Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Methods to run, comma separated
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "methods")]
    pub method: Option<Vec<Method>>,

    /// Held-out domain indices, comma separated; defaults to every domain
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub held_out: Option<Vec<usize>>,

    /// Seeds, comma separated; each seeds data, task split and training
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub seed: Option<Vec<u64>>,

    /// Feature table (CSV) replacing the synthetic generator
    #[arg(long)]
    pub features: Option<PathBuf>,

    /// Synthetic generator parameters (config file only)
    #[arg(skip)]
    pub synthetic: Option<SyntheticSection>,

    /// Number of tasks the classes are split into
    #[arg(long)]
    pub tasks: Option<usize>,

    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Worker threads for the experiment grid
    #[arg(long)]
    pub jobs: Option<usize>,

    /// Passes over each source domain per task
    #[arg(long)]
    pub epochs_per_domain: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// SGD step size; 0 freezes the model
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight of the distillation loss
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Distillation temperature
    #[arg(long)]
    pub tau: Option<f64>,
    /// Teacher moving-average coefficient in [0, 1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Repetitions with reshuffled domain order
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Exemplars per memory cell
    #[arg(long)]
    pub memory_capacity: Option<usize>,
    /// per_domain or class_balanced
    #[arg(long, value_parser = parse_name::<MemoryMode>)]
    pub memory_mode: Option<MemoryMode>,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub hidden_dims: Option<Vec<usize>>,
    /// Backbone output width
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Metric rank; defaults to min(64, feature_dim)
    #[arg(long)]
    pub rank: Option<usize>,
    /// relu or tanh
    #[arg(long, value_parser = parse_name::<Activation>)]
    pub activation: Option<Activation>,
    /// zero or class_mean
    #[arg(long, value_parser = parse_name::<BiasInit>)]
    pub bias_init: Option<BiasInit>,
    /// Overrides the method's distillation switch (true or false)
    #[arg(long, action = ArgAction::Set)]
    pub distill: Option<bool>,
}

/// Synthetic generator parameters. The generator seed is the cell seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub m_domains: usize,
    pub d: usize,
    pub per_cell_count: usize,
    pub shift_strength: f64,
    pub noise_sigma: f64,
    pub prototype_radius: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let c = SyntheticConfig::default();
        Self {
            num_classes: c.num_classes,
            m_domains: c.m_domains,
            d: c.d,
            per_cell_count: c.per_cell_count,
            shift_strength: c.shift_strength,
            noise_sigma: c.noise_sigma,
            prototype_radius: c.prototype_radius,
        }
    }
}

impl SyntheticSection {
    pub fn with_seed(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            num_classes: self.num_classes,
            m_domains: self.m_domains,
            d: self.d,
            per_cell_count: self.per_cell_count,
            shift_strength: self.shift_strength,
            noise_sigma: self.noise_sigma,
            prototype_radius: self.prototype_radius,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSection),
    Features(PathBuf),
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// `None` runs every domain as the held-out one.
    pub held_out: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    pub data: DataSource,
    pub tasks: usize,
    /// Training hyperparameters before the method and seed are applied.
    pub train: TrainConfig,
    /// Explicit distillation switch, overriding the method's.
    pub distill: Option<bool>,
    pub out: PathBuf,
    pub jobs: usize,
}

impl ExperimentConfig {
    /// Training configuration of one grid cell.
    pub fn cell_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        cfg.apply_method(method);
        if let Some(d) = self.distill {
            cfg.distill = d;
        }
        cfg
    }
}

macro_rules! layer {
    ($base:expr, $over:expr; $($field:ident),* $(,)?) => {
        Settings { $($field: $over.$field.or($base.$field)),* }
    };
}

impl Settings {
    /// Values in `over` win.
    pub fn merge(mut self, over: Settings) -> Settings {
        // either data source on top replaces both below
        if over.features.is_some() || over.synthetic.is_some() {
            self.features = None;
            self.synthetic = None;
        }
        layer!(self, over;
            method, held_out, seed, features, synthetic, tasks, out, jobs,
            epochs_per_domain, batch_size, learning_rate, lambda, tau, gamma,
            repetitions, memory_capacity, memory_mode, hidden_dims, feature_dim,
            rank, activation, bias_init, distill,
        )
    }

    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let data = match (self.features, self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("`features` and `synthetic` are mutually exclusive".into()))
            }
            (Some(path), None) => DataSource::Features(path),
            (None, s) => DataSource::Synthetic(s.unwrap_or_default()),
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            epochs_per_domain: self.epochs_per_domain.unwrap_or(d.epochs_per_domain),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            lambda: self.lambda.unwrap_or(d.lambda),
            tau: self.tau.unwrap_or(d.tau),
            gamma: self.gamma.unwrap_or(d.gamma),
            repetitions: self.repetitions.unwrap_or(d.repetitions),
            memory_capacity: self.memory_capacity.unwrap_or(d.memory_capacity),
            memory_mode: self.memory_mode.unwrap_or(d.memory_mode),
            hidden_dims: self.hidden_dims.unwrap_or(d.hidden_dims),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            rank: self.rank.or(d.rank),
            activation: self.activation.unwrap_or(d.activation),
            bias_init: self.bias_init.unwrap_or(d.bias_init),
            ..d
        };
        let out = self
            .out
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let cfg = ExperimentConfig {
            methods: dedup(self.method.unwrap_or_else(|| vec![Method::MslMov])),
            held_out: self.held_out.map(dedup),
            seeds: dedup(self.seed.unwrap_or_else(|| vec![0])),
            data,
            tasks: self.tasks.unwrap_or(DEFAULT_TASKS),
            train,
            distill: self.distill,
            out,
            jobs: self.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), CliError> {
        let empty = |key: &str| Err(CliError::Config(format!("`{key}` must not be empty")));
        if self.methods.is_empty() {
            return empty("method");
        }
        if self.seeds.is_empty() {
            return empty("seed");
        }
        if self.held_out.as_ref().is_some_and(|h| h.is_empty()) {
            return empty("held_out");
        }
        if self.jobs == 0 {
            return Err(CliError::Config("`jobs` must be >= 1".into()));
        }
        if self.tasks == 0 {
            return Err(CliError::Config("`tasks` must be >= 1".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.with_seed(0).validate().map_err(CliError::invalid)?;
        }
        for &m in &self.methods {
            self.cell_config(m, 0).validate().map_err(CliError::invalid)?;
        }
        Ok(())
    }
}

fn dedup<T: PartialEq>(v: Vec<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(v.len());
    for x in v {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Reads the config file and layers `flags` on top.
pub fn parse_config(path: &Path, flags: Settings) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: Settings =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    file.merge(flags).resolve()
}

/// Parses a snake_case enum name through its serde representation.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let de: serde::de::value::StrDeserializer<'_, serde::de::value::Error> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> From<OneOrMany<T>> for Vec<T> {
    fn from(v: OneOrMany<T>) -> Self {
        match v {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

fn one_or_many<'de, D, T>(de: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    OneOrMany::deserialize(de).map(|v| Some(v.into()))
}

fn methods<'de, D: Deserializer<'de>>(de: D) -> Result<Option<Vec<Method>>, D::Error> {
    let names: Vec<String> = OneOrMany::deserialize(de)?.into();
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(serde::de::Error::custom))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}
