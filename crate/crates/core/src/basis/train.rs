use rand::seq::index;

use super::gram::projection_loss;
use super::{time_inputs, BasisSet};
use crate::adam::AdamState;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::flow::{make_path_batch_from, TimeMode};
use crate::nn::Activation;
use crate::rng::{self, Rng};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gradient_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ridge: f64,
    pub k: usize,
    pub seed: u64,
    pub residual_mode: bool,
    pub detach_coefficients: bool,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    /// Distributions visited per step when the family is larger than this.
    pub distributions_per_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gradient_steps: 1000,
            batch_size: 512,
            lr: 1e-3,
            ridge: 1e-6,
            k: 100,
            seed: 0,
            residual_mode: false,
            detach_coefficients: false,
            hidden_width: 64,
            hidden_layers: 2,
            activation: Activation::Tanh,
            distributions_per_step: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge must be >= 0");
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return bad("hidden_width and hidden_layers must be positive");
        }
        if self.distributions_per_step == 0 {
            return bad("distributions_per_step must be positive");
        }
        Ok(())
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }
}

/// A trained model and its per-step loss trace.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: T,
    pub losses: Vec<f64>,
}

pub(crate) fn check_family(datasets: &[Dataset]) -> Result<usize> {
    if datasets.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training distributions, got {}",
            datasets.len()
        )));
    }
    let n = datasets[0].dim();
    if let Some(d) = datasets.iter().find(|d| d.dim() != n) {
        return Err(Error::shape("training family", n, d.dim()));
    }
    Ok(n)
}

/// Distribution indices visited at one step, in ascending order.
pub(crate) fn pick_distributions(count: usize, per_step: usize, r: &mut Rng) -> Vec<usize> {
    if count <= per_step {
        return (0..count).collect();
    }
    let mut idx = index::sample(r, count, per_step).into_vec();
    idx.sort_unstable();
    idx
}

/// Rows of a dataset used as `x_1` at one step.
pub(crate) fn minibatch(data: &DenseMatrix, batch_size: usize, r: &mut Rng) -> DenseMatrix {
    if data.rows() <= batch_size {
        return data.clone();
    }
    data.select_rows(&index::sample(r, data.rows(), batch_size).into_vec())
}

pub(crate) fn init_basis(n: usize, cfg: &TrainConfig) -> Result<BasisSet> {
    let mut r = rng::rng(rng::derive(cfg.seed, "init"));
    BasisSet::new(n, cfg.k, &cfg.hidden(), cfg.activation, cfg.residual_mode, &mut r)
}

pub(crate) struct Optimizers {
    basis: AdamState,
    mean: Option<AdamState>,
}

impl Optimizers {
    pub(crate) fn new(basis: &BasisSet, lr: f64) -> Self {
        Self {
            basis: AdamState::new(basis.net.params().len(), lr),
            mean: basis.mean_field.as_ref().map(|m| AdamState::new(m.params().len(), lr)),
        }
    }

    pub(crate) fn step(&mut self, basis: &mut BasisSet, grads: &StepGrads) -> Result<()> {
        self.basis.update(basis.net.params_mut(), &grads.basis)?;
        if let (Some(opt), Some(mf), Some(g)) = (&mut self.mean, &mut basis.mean_field, &grads.mean) {
            opt.update(mf.params_mut(), g)?;
        }
        Ok(())
    }
}

pub(crate) struct StepGrads {
    pub basis: Vec<f64>,
    pub mean: Option<Vec<f64>>,
}

impl StepGrads {
    pub(crate) fn zeros(basis: &BasisSet) -> Self {
        Self {
            basis: vec![0.0; basis.net.params().len()],
            mean: basis.mean_field.as_ref().map(|m| vec![0.0; m.params().len()]),
        }
    }
}

pub(crate) fn accumulate(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn train_projection(datasets: &[Dataset], cfg: &TrainConfig, single_time: bool) -> Result<TrainOutcome<BasisSet>> {
    cfg.validate()?;
    let n = check_family(datasets)?;
    let mut basis = init_basis(n, cfg)?;
    let mut opt = Optimizers::new(&basis, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.gradient_steps);
    let mut pick_rng = rng::rng(rng::derive(cfg.seed, "distributions"));
    let mut batch_rng = rng::rng(rng::derive(cfg.seed, "minibatch"));
    let mode = if single_time {
        TimeMode::SingleRandom
    } else {
        TimeMode::PerSample
    };

    for step in 0..cfg.gradient_steps {
        let mut grads = StepGrads::zeros(&basis);
        let mut loss = 0.0;
        let step_seed = rng::derive_index(rng::derive(cfg.seed, "paths"), step as u64);
        for iota in pick_distributions(datasets.len(), cfg.distributions_per_step, &mut pick_rng) {
            let x1 = minibatch(&datasets[iota].samples, cfg.batch_size, &mut batch_rng);
            let pb = make_path_batch_from(&x1, rng::derive_index(step_seed, iota as u64), mode)?;
            let inputs = time_inputs(&pb.xt, &pb.t)?;
            let cache = basis.net.forward_cached(&inputs)?;
            let mean_cache = match &basis.mean_field {
                Some(mf) => Some(mf.forward_cached(&inputs)?),
                None => None,
            };
            let targets = match &mean_cache {
                Some(mc) => pb.u.sub(mc.output())?,
                None => pb.u.clone(),
            };
            let pl = projection_loss(
                cache.output(),
                &targets,
                n,
                cfg.k,
                cfg.ridge,
                cfg.detach_coefficients,
            )
            .map_err(|e| match e {
                Error::Singular { .. } => Error::NonFiniteLoss {
                    step,
                    context: format!("distribution {iota}: {e}"),
                },
                other => other,
            })?;
            if !pl.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    context: format!("distribution {iota}"),
                });
            }
            loss += pl.loss;
            let g = basis.net.backward(&cache, &pl.d_values)?;
            accumulate(&mut grads.basis, &g.params);
            if let (Some(mf), Some(mc), Some(acc)) = (&basis.mean_field, &mean_cache, &mut grads.mean) {
                let mut up = pl.d_targets.clone();
                up.scale(-1.0);
                let gm = mf.backward(mc, &up)?;
                accumulate(acc, &gm.params);
            }
        }
        opt.step(&mut basis, &grads)?;
        if basis.net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                context: "parameters became non-finite".into(),
            });
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { model: basis, losses })
}

/// Per step and distribution: one path batch with independent times, coefficients from
/// that batch, squared projection error accumulated over the family, one Adam step.
pub fn train_static(datasets: &[Dataset], cfg: &TrainConfig) -> Result<TrainOutcome<BasisSet>> {
    train_projection(datasets, cfg, false)
}

/// As [`train_static`] but every distribution's batch shares one random time, and the
/// coefficients are the single-time projection.
pub fn train_temporal(datasets: &[Dataset], cfg: &TrainConfig) -> Result<TrainOutcome<BasisSet>> {
    train_projection(datasets, cfg, true)
}
