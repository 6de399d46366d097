//! Experiment configuration: a TOML file with one table per concern. Unknown keys are
//! rejected so a typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use fpfm_core::baselines::{ClassifierConfig, GuidanceConfig};
use fpfm_core::basis::TrainConfig;
use fpfm_core::datasets::Split;
use fpfm_core::dynamic::{DynamicConfig, LocalSolver, WeightFloor};
use fpfm_core::flow::IntegratorConfig;
use fpfm_core::nn::Activation;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::method::Method;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub gradient_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ridge: f64,
    pub k: usize,
    pub residual_mode: bool,
    pub detach_coefficients: bool,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: String,
    pub distributions_per_step: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            gradient_steps: d.gradient_steps,
            batch_size: d.batch_size,
            lr: d.lr,
            ridge: d.ridge,
            k: d.k,
            residual_mode: d.residual_mode,
            detach_coefficients: d.detach_coefficients,
            hidden_width: d.hidden_width,
            hidden_layers: d.hidden_layers,
            activation: d.activation.name().to_string(),
            distributions_per_step: d.distributions_per_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicSection {
    pub t_clamp: f64,
    pub anchor_subsample: usize,
    /// Effective sample size below which the heaviest sample is used alone; 0 disables.
    pub min_ess: f64,
    pub solver: String,
}

impl Default for DynamicSection {
    fn default() -> Self {
        Self {
            t_clamp: 1e-2,
            anchor_subsample: 64,
            min_ess: 1.5,
            solver: "gram".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub steps: usize,
    pub t_max: f64,
    pub backward_steps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            steps: 100,
            t_max: 1.0,
            backward_steps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSection {
    pub alpha: f64,
    pub classifier_steps: usize,
    pub classifier_batch_size: usize,
    pub classifier_lr: f64,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            alpha: GuidanceConfig::default().alpha,
            classifier_steps: c.steps,
            classifier_batch_size: c.batch_size,
            classifier_lr: c.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train_arcs: usize,
    /// Mixtures drawn for the UD split.
    pub n_mixtures: usize,
    /// Samples per training distribution and per evaluation shot set.
    pub shots: usize,
    /// Training arcs used as TD evaluation targets (the first `eval_td`).
    pub eval_td: usize,
    /// Generated samples per target.
    pub m_gen: usize,
    /// `shots` compares against the shot set itself, `fresh` against new draws.
    pub reference: String,
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_train_arcs: 8,
            n_mixtures: 2,
            shots: 500,
            eval_td: 2,
            m_gen: 1000,
            reference: "shots".into(),
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub methods: Vec<String>,
    pub splits: Vec<String>,
    pub seeds: Vec<u64>,
    pub out: String,
    pub kappa: usize,
    /// Rows resampled from the shot set for each temporal projection.
    pub m_eval: usize,
    pub finetune_steps: usize,
    pub timing_repeats: usize,
    pub svg: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            methods: vec!["static".into(), "temporal".into(), "dynamic".into(), "unconditional".into()],
            splits: vec!["TD".into(), "UD".into(), "US".into()],
            seeds: vec![0],
            out: "out".into(),
            kappa: 3,
            m_eval: 1024,
            finetune_steps: 1000,
            timing_repeats: 1,
            svg: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train: TrainSection,
    pub dynamic: DynamicSection,
    pub integrator: IntegratorSection,
    pub guidance: GuidanceSection,
    pub data: DataSection,
    pub experiment: ExperimentSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Shots,
    Fresh,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config(0)?.validate().map_err(config_err)?;
        self.dynamic_config()?.validate().map_err(config_err)?;
        self.integrator()?;
        self.backward_integrator()?;
        self.guidance().validate().map_err(config_err)?;
        self.methods()?;
        self.splits()?;
        self.reference()?;
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.data.n_train_arcs < 2 {
            return bad("data.n_train_arcs must be >= 2");
        }
        if self.data.shots == 0 {
            return bad("data.shots must be positive");
        }
        if self.data.eval_td > self.data.n_train_arcs {
            return bad("data.eval_td cannot exceed data.n_train_arcs");
        }
        if self.experiment.seeds.is_empty() {
            return bad("experiment.seeds must not be empty");
        }
        if self.experiment.kappa == 0 {
            return bad("experiment.kappa must be positive");
        }
        if self.experiment.timing_repeats == 0 {
            return bad("experiment.timing_repeats must be positive");
        }
        if self.guidance.classifier_steps == 0 || self.guidance.classifier_batch_size == 0 || !(self.guidance.classifier_lr > 0.0) {
            return bad("guidance.classifier_* values must be positive");
        }
        Ok(())
    }

    pub fn activation(&self) -> Result<Activation, CliError> {
        Activation::parse(&self.train.activation)
            .ok_or_else(|| CliError::Config(format!("train.activation: unknown activation {:?}", self.train.activation)))
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        Ok(TrainConfig {
            gradient_steps: t.gradient_steps,
            batch_size: t.batch_size,
            lr: t.lr,
            ridge: t.ridge,
            k: t.k,
            seed,
            residual_mode: t.residual_mode,
            detach_coefficients: t.detach_coefficients,
            hidden_width: t.hidden_width,
            hidden_layers: t.hidden_layers,
            activation: self.activation()?,
            distributions_per_step: t.distributions_per_step,
        })
    }

    pub fn dynamic_config(&self) -> Result<DynamicConfig, CliError> {
        let d = &self.dynamic;
        let solver = match d.solver.as_str() {
            "gram" => LocalSolver::Gram,
            "dual" => LocalSolver::Dual,
            other => return Err(CliError::Config(format!("dynamic.solver: expected \"gram\" or \"dual\", got {other:?}"))),
        };
        if !(d.min_ess >= 0.0) {
            return Err(CliError::Config("dynamic.min_ess must be >= 0".into()));
        }
        Ok(DynamicConfig {
            t_clamp: d.t_clamp,
            anchor_subsample: d.anchor_subsample,
            weight_floor: if d.min_ess > 0.0 { WeightFloor::EssFallback(d.min_ess) } else { WeightFloor::Off },
            solver,
        })
    }

    pub fn integrator(&self) -> Result<IntegratorConfig, CliError> {
        let c = IntegratorConfig {
            steps: self.integrator.steps,
            t_max: self.integrator.t_max,
        };
        c.validate().map_err(config_err)?;
        Ok(c)
    }

    pub fn backward_integrator(&self) -> Result<IntegratorConfig, CliError> {
        let c = IntegratorConfig {
            steps: self.integrator.backward_steps,
            t_max: self.integrator.t_max,
        };
        c.validate().map_err(config_err)?;
        Ok(c)
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig { alpha: self.guidance.alpha }
    }

    pub fn classifier_config(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            steps: self.guidance.classifier_steps,
            batch_size: self.guidance.classifier_batch_size,
            lr: self.guidance.classifier_lr,
            hidden: vec![self.train.hidden_width; self.train.hidden_layers],
            seed,
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        if self.experiment.methods.is_empty() {
            return Err(CliError::Config("experiment.methods must not be empty".into()));
        }
        self.experiment
            .methods
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| CliError::Config(format!("experiment.methods: unknown method {m:?}"))))
            .collect()
    }

    pub fn splits(&self) -> Result<Vec<Split>, CliError> {
        self.experiment
            .splits
            .iter()
            .map(|s| Split::parse(s).ok_or_else(|| CliError::Config(format!("experiment.splits: unknown split {s:?}"))))
            .collect()
    }

    pub fn reference(&self) -> Result<Reference, CliError> {
        match self.data.reference.as_str() {
            "shots" => Ok(Reference::Shots),
            "fresh" => Ok(Reference::Fresh),
            other => Err(CliError::Config(format!("data.reference: expected \"shots\" or \"fresh\", got {other:?}"))),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.experiment.out)
    }
}

fn config_err(e: fpfm_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.k = 7;
        cfg.experiment.seeds = vec![3, 1];
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("[train]\ngradient_stepz = 3\n").unwrap_err();
        assert!(err.to_string().contains("gradient_stepz"), "{err}");
        let err = ExperimentConfig::from_toml("[trian]\n").unwrap_err();
        assert!(err.to_string().contains("trian"), "{err}");
    }

    #[test]
    fn bad_values_rejected() {
        for text in [
            "[train]\nk = 0\n",
            "[train]\nactivation = \"swish\"\n",
            "[dynamic]\nt_clamp = 1.5\n",
            "[guidance]\nalpha = -1.0\n",
            "[experiment]\nmethods = [\"magic\"]\n",
            "[experiment]\nsplits = [\"XX\"]\n",
            "[data]\nreference = \"other\"\n",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
