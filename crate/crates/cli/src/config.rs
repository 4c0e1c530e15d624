//! Run configuration (TOML). Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use epic_core::datagen::{CountrySpec, LineageSpec, SyntheticSpec, SURVEILLANCE_COUNTRIES, SURVEILLANCE_LINEAGES};
use epic_core::encode::{Alphabet, EncodingContext, SequenceRecord};
use epic_core::fed::Scheme;
use epic_core::nn::{Activation, ModelSpec, TrainConfig};
use epic_core::orchestrator::{Experiment, FedConfig, GlobalMember};
use epic_core::partition::SplitConfig;
use epic_core::seeds::derive_seed;
use epic_core::tsv::{read_tsv, StudyWindow, YearMonth};
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

fn default_start() -> YearMonth {
    YearMonth { year: 2021, month: 1 }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub months: u32,
    #[serde(default = "default_start")]
    pub study_start: YearMonth,
    #[serde(default = "yes")]
    pub centralized: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub federation: FederationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// TSV dataset; relative paths resolve against the config file.
    pub path: PathBuf,
    pub labels: Vec<String>,
    /// Defaults to countries in order of first appearance.
    #[serde(default)]
    pub countries: Option<Vec<String>>,
    /// Defaults to the longest sequence in `path`.
    #[serde(default)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub ancestral_length: usize,
    pub total_samples: usize,
    pub noise_mutations_per_sample: usize,
    pub month_ramp: bool,
    pub lineages: Vec<LineageSpec>,
    pub countries: Vec<CountrySpec>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            ancestral_length: 1274,
            total_samples: 8000,
            noise_mutations_per_sample: 2,
            month_ramp: false,
            lineages: SURVEILLANCE_LINEAGES
                .iter()
                .map(|&(n, s, f)| LineageSpec { name: n.into(), signature_mutations: s, frequency: f })
                .collect(),
            countries: SURVEILLANCE_COUNTRIES
                .iter()
                .map(|&(n, f)| CountrySpec { name: n.into(), frequency: f })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub global_test_fraction: f64,
    pub global_train_fraction: f64,
    pub local_test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitConfig::default();
        Self {
            global_test_fraction: d.global_test_fraction,
            global_train_fraction: d.global_train_fraction,
            local_test_fraction: d.local_test_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelSpec::with_defaults(1, 1, 0);
        Self {
            hidden_dims: d.hidden_dims,
            dropout_rate: d.dropout_rate,
            use_batchnorm: d.use_batchnorm,
            activation: d.activation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_epsilon: d.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub scheme: Scheme,
    pub local_fraction: Option<f64>,
    pub global_member: GlobalMember,
}

/// Seeds derived from the master seed, recorded in every run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DerivedSeeds {
    pub master: u64,
    pub datagen: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
}

/// A loaded config together with the directory it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub text: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedConfig { config, base_dir, text };
    loaded.validate()?;
    Ok(loaded)
}

impl LoadedConfig {
    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        if c.months == 0 {
            return Err(CliError::Config("`months` must be at least 1".into()));
        }
        match (&c.data, &c.synthetic) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("set exactly one of [data] and [synthetic], not both".into()))
            }
            (None, None) => {
                return Err(CliError::Config("missing key: one of [data] or [synthetic] is required".into()))
            }
            _ => {}
        }
        if let Some(d) = &c.data {
            if d.labels.is_empty() {
                return Err(CliError::Config("data.labels must list at least one lineage".into()));
            }
        }
        self.split_config().validate()?;
        self.train_config().validate()?;
        if let Some(f) = c.federation.local_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::Config(format!("federation.local_fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> DerivedSeeds {
        let m = self.config.seed;
        DerivedSeeds {
            master: m,
            datagen: derive_seed(m, &["datagen"]),
            split: derive_seed(m, &["split"]),
            init: derive_seed(m, &["init"]),
            train: derive_seed(m, &["train"]),
        }
    }

    pub fn window(&self) -> StudyWindow {
        StudyWindow { start: self.config.study_start, months: self.config.months }
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec, CliError> {
        let s = self
            .config
            .synthetic
            .as_ref()
            .ok_or_else(|| CliError::Config("missing key: [synthetic] section is required".into()))?;
        Ok(SyntheticSpec {
            ancestral_length: s.ancestral_length,
            lineages: s.lineages.clone(),
            countries: s.countries.clone(),
            months: self.config.months,
            total_samples: s.total_samples,
            noise_mutations_per_sample: s.noise_mutations_per_sample,
            month_ramp: s.month_ramp,
            seed: self.seeds().datagen,
        })
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        self.config.data.as_ref().map(|d| self.base_dir.join(&d.path))
    }

    pub fn labels(&self) -> Vec<String> {
        match (&self.config.data, &self.config.synthetic) {
            (Some(d), _) => d.labels.clone(),
            (None, Some(s)) => s.lineages.iter().map(|l| l.name.clone()).collect(),
            (None, None) => Vec::new(),
        }
    }

    /// Records for a run: generated, or read from the configured dataset.
    pub fn records(&self) -> Result<Vec<SequenceRecord>, CliError> {
        match self.data_path() {
            Some(path) => Ok(read_tsv(&path, &self.window())?),
            None => Ok(epic_core::datagen::generate(&self.synthetic_spec()?)?),
        }
    }

    pub fn countries(&self, records: &[SequenceRecord]) -> Vec<String> {
        if let Some(s) = &self.config.synthetic {
            return s.countries.iter().map(|c| c.name.clone()).collect();
        }
        if let Some(list) = self.config.data.as_ref().and_then(|d| d.countries.clone()) {
            return list;
        }
        let mut seen: Vec<String> = Vec::new();
        for r in records {
            if !seen.contains(&r.country) {
                seen.push(r.country.clone());
            }
        }
        seen
    }

    /// Encoding context shared by every client. For datasets without an
    /// explicit `max_len`, the configured dataset file determines it.
    pub fn context(&self, records: Option<&[SequenceRecord]>) -> Result<EncodingContext, CliError> {
        let max_len = match (&self.config.data, &self.config.synthetic) {
            (Some(DataSection { max_len: Some(n), .. }), _) => *n,
            (Some(_), _) => {
                let owned;
                let recs = match records {
                    Some(r) => r,
                    None => {
                        owned = self.records()?;
                        &owned
                    }
                };
                recs.iter().map(|r| r.sequence.chars().count()).max().unwrap_or(0)
            }
            (None, Some(s)) => s.ancestral_length,
            (None, None) => 0,
        };
        Ok(EncodingContext::new(Alphabet::amino_acids(), max_len, self.labels())?)
    }

    pub fn split_config(&self) -> SplitConfig {
        let s = &self.config.split;
        SplitConfig {
            global_test_fraction: s.global_test_fraction,
            global_train_fraction: s.global_train_fraction,
            local_test_fraction: s.local_test_fraction,
            seed: self.seeds().split,
        }
    }

    pub fn model_spec(&self, ctx: &EncodingContext) -> ModelSpec {
        let m = &self.config.model;
        ModelSpec {
            input_dim: ctx.feature_width(),
            hidden_dims: m.hidden_dims.clone(),
            num_classes: ctx.num_classes(),
            dropout_rate: m.dropout_rate,
            use_batchnorm: m.use_batchnorm,
            activation: m.activation,
            seed: self.seeds().init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.config.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            shuffle_seed: self.seeds().train,
        }
    }

    pub fn fed_config(&self) -> FedConfig {
        let f = &self.config.federation;
        FedConfig {
            scheme: f.scheme,
            local_fraction: f.local_fraction.unwrap_or(FedConfig::default().local_fraction),
            global_member: f.global_member,
        }
    }

    pub fn experiment(&self, records: &[SequenceRecord], parallelism: usize) -> Result<Experiment, CliError> {
        let context = self.context(Some(records))?;
        let exp = Experiment {
            model: self.model_spec(&context),
            countries: self.countries(records),
            months: (0..self.config.months).collect(),
            split: self.split_config(),
            train: self.train_config(),
            fed: self.fed_config(),
            context,
            parallelism,
        };
        exp.validate()?;
        Ok(exp)
    }
}
