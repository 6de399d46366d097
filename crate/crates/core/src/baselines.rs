//! Comparison methods: an unconditional and a conditional flow-matching net, classifier
//! guidance, distribution guidance through a secondary noise model, and finetuning.

use std::sync::Arc;

use crate::adam::AdamState;
use crate::basis::train::{minibatch, pick_distributions};
use crate::basis::{time_inputs, TrainConfig, TrainOutcome};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::flow::{check_dim, integrate, integrate_backward, make_path_batch_from, IntegratorConfig, TimeMode, VelocityField};
use crate::nn::Mlp;
use crate::rng::{self, Rng};
use crate::tensor::DenseMatrix;

/// A velocity net on `(x, t)` or, when conditioned, `(x, t, code)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetField {
    pub net: Mlp,
    pub code: Option<f64>,
    label: String,
}

impl NetField {
    pub fn new(net: Mlp, code: Option<f64>, label: impl Into<String>) -> Result<Self> {
        let n = net.output_dim();
        let expected = n + 1 + usize::from(code.is_some());
        if net.input_dim() != expected {
            return Err(Error::shape("NetField", expected, net.input_dim()));
        }
        Ok(Self {
            net,
            code,
            label: label.into(),
        })
    }

    fn inputs(&self, x: &DenseMatrix, t: &[f64]) -> Result<DenseMatrix> {
        let xt = time_inputs(x, t)?;
        match self.code {
            Some(c) => xt.with_column(&vec![c; x.rows()]),
            None => Ok(xt),
        }
    }
}

impl VelocityField for NetField {
    fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        check_dim(self.dim(), x)?;
        self.net.forward(&self.inputs(x, &vec![t; x.rows()])?)
    }

    fn label(&self) -> &str {
        &self.label
    }
}

fn velocity_net(input: usize, n: usize, cfg: &TrainConfig, r: &mut Rng) -> Result<Mlp> {
    let mut dims = vec![input];
    dims.extend(cfg.hidden());
    dims.push(n);
    Mlp::new(&dims, cfg.activation, r)
}

/// Mean squared regression of `net` onto the targets produced for each step.
fn fit<F>(net: &mut Mlp, steps: usize, lr: f64, mut batch: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<(DenseMatrix, DenseMatrix)>,
{
    let mut opt = AdamState::new(net.params().len(), lr);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (inputs, targets) = batch(step)?;
        let cache = net.forward_cached(&inputs)?;
        let mut diff = cache.output().sub(&targets)?;
        let count = diff.as_slice().len() as f64;
        let loss = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / count;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                context: "velocity regression".into(),
            });
        }
        diff.scale(2.0 / count);
        let g = net.backward(&cache, &diff)?;
        opt.update(net.params_mut(), &g.params)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Pooled flow-matching inputs and targets for one step over the given datasets.
fn pooled_batch(
    datasets: &[&Dataset],
    codes: Option<&[f64]>,
    cfg: &TrainConfig,
    step: usize,
    pick: &mut Rng,
    batch: &mut Rng,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let step_seed = rng::derive_index(rng::derive(cfg.seed, "paths"), step as u64);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for iota in pick_distributions(datasets.len(), cfg.distributions_per_step, pick) {
        let x1 = minibatch(&datasets[iota].samples, cfg.batch_size, batch);
        let pb = make_path_batch_from(&x1, rng::derive_index(step_seed, iota as u64), TimeMode::PerSample)?;
        let mut inp = pb.inputs();
        if let Some(c) = codes {
            inp = inp.with_column(&vec![c[iota]; pb.len()])?;
        }
        inputs.push(inp);
        targets.push(pb.u);
    }
    Ok((DenseMatrix::vstack(&inputs.iter().collect::<Vec<_>>())?, DenseMatrix::vstack(&targets.iter().collect::<Vec<_>>())?))
}

fn train_pooled(datasets: &[&Dataset], codes: Option<&[f64]>, cfg: &TrainConfig, label: &'static str) -> Result<TrainOutcome<Mlp>> {
    cfg.validate()?;
    let n = datasets[0].dim();
    if let Some(d) = datasets.iter().find(|d| d.dim() != n) {
        return Err(Error::shape(label, n, d.dim()));
    }
    let mut init = rng::rng(rng::derive(cfg.seed, "init"));
    let mut net = velocity_net(n + 1 + usize::from(codes.is_some()), n, cfg, &mut init)?;
    let mut pick = rng::rng(rng::derive(cfg.seed, "distributions"));
    let mut batch = rng::rng(rng::derive(cfg.seed, "minibatch"));
    let losses = fit(&mut net, cfg.gradient_steps, cfg.lr, |step| {
        pooled_batch(datasets, codes, cfg, step, &mut pick, &mut batch)
    })?;
    Ok(TrainOutcome { model: net, losses })
}

/// One net trained on all distributions as if they were a single one.
pub fn train_unconditional(datasets: &[Dataset], cfg: &TrainConfig) -> Result<TrainOutcome<NetField>> {
    if datasets.is_empty() {
        return Err(Error::Empty("datasets"));
    }
    let refs: Vec<&Dataset> = datasets.iter().collect();
    let out = train_pooled(&refs, None, cfg, "unconditional")?;
    Ok(TrainOutcome {
        model: NetField::new(out.model, None, "unconditional")?,
        losses: out.losses,
    })
}

/// A velocity net with a scalar conditioning input; [`ConditionalModel::bind`] fixes it.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalModel {
    pub net: Mlp,
}

impl ConditionalModel {
    pub fn bind(&self, code: f64) -> Result<NetField> {
        if !code.is_finite() {
            return Err(Error::InvalidArgument(format!("conditioning code must be finite, got {code}")));
        }
        NetField::new(self.net.clone(), Some(code), "conditional")
    }
}

pub fn train_conditional(datasets: &[Dataset], codes: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome<ConditionalModel>> {
    if datasets.is_empty() {
        return Err(Error::Empty("datasets"));
    }
    if codes.len() != datasets.len() {
        return Err(Error::InvalidArgument(format!(
            "missing conditioning code: {} datasets but {} codes",
            datasets.len(),
            codes.len()
        )));
    }
    if let Some(c) = codes.iter().find(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(format!("conditioning code must be finite, got {c}")));
    }
    let refs: Vec<&Dataset> = datasets.iter().collect();
    let out = train_pooled(&refs, Some(codes), cfg, "conditional")?;
    Ok(TrainOutcome {
        model: ConditionalModel { net: out.model },
        losses: out.losses,
    })
}

/// Continue training a copy of `base` on the target alone, with a fresh optimizer.
/// A zero learning rate is accepted and leaves the parameters untouched.
pub fn finetune(base: &NetField, target: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<NetField>> {
    let mut check = cfg.clone();
    if check.lr == 0.0 {
        check.lr = 1.0;
    }
    check.validate()?;
    if target.dim() != base.dim() {
        return Err(Error::shape("finetune", base.dim(), target.dim()));
    }
    let mut net = base.net.clone();
    let mut batch = rng::rng(rng::derive(cfg.seed, "finetune-minibatch"));
    let paths = rng::derive(cfg.seed, "finetune-paths");
    let losses = fit(&mut net, cfg.gradient_steps, cfg.lr, |step| {
        let x1 = minibatch(&target.samples, cfg.batch_size, &mut batch);
        let pb = make_path_batch_from(&x1, rng::derive_index(paths, step as u64), TimeMode::PerSample)?;
        let mut inp = pb.inputs();
        if let Some(c) = base.code {
            inp = inp.with_column(&vec![c; pb.len()])?;
        }
        Ok((inp, pb.u))
    })?;
    Ok(TrainOutcome {
        model: NetField::new(net, base.code, "finetune")?,
        losses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub alpha: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { alpha: 5.0 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("guidance alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 256,
            lr: 1e-3,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

/// Logit of "this state came from the target's probability path".
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub net: Mlp,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Classifier {
    pub fn dim(&self) -> usize {
        self.net.input_dim() - 1
    }

    pub fn logits(&self, x: &DenseMatrix, t: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(&time_inputs(x, t)?)?.into_vec())
    }

    /// `log σ(z)` per row.
    pub fn log_prob(&self, x: &DenseMatrix, t: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(x, t)?.into_iter().map(|z| -softplus(-z)).collect())
    }

    /// `∇ₓ log σ(z) = σ(−z) ∇ₓ z`.
    pub fn log_prob_gradient(&self, x: &DenseMatrix, t: &[f64]) -> Result<DenseMatrix> {
        let inputs = time_inputs(x, t)?;
        let cache = self.net.forward_cached(&inputs)?;
        let up: Vec<f64> = cache.output().as_slice().iter().map(|&z| sigmoid(-z)).collect();
        let g = self.net.backward(&cache, &DenseMatrix::from_vec(x.rows(), 1, up)?)?;
        Ok(g.input.leading_columns(x.cols()))
    }
}

/// Binary cross-entropy on probability-path states: positives from `target`, negatives
/// pooled from `negatives`, with independent times per state.
pub fn train_classifier(target: &Dataset, negatives: &[Dataset], cfg: &ClassifierConfig) -> Result<TrainOutcome<Classifier>> {
    if negatives.is_empty() {
        return Err(Error::Empty("negative datasets"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("classifier batch_size and lr must be positive".into()));
    }
    let n = target.dim();
    let pooled = DenseMatrix::vstack(&negatives.iter().map(|d| &d.samples).collect::<Vec<_>>())?;
    if pooled.cols() != n {
        return Err(Error::shape("train_classifier", n, pooled.cols()));
    }
    let mut dims = vec![n + 1];
    dims.extend(&cfg.hidden);
    dims.push(1);
    let mut net = Mlp::new(&dims, crate::nn::Activation::Tanh, &mut rng::rng(rng::derive(cfg.seed, "classifier-init")))?;
    let mut opt = AdamState::new(net.params().len(), cfg.lr);
    let mut batch = rng::rng(rng::derive(cfg.seed, "classifier-minibatch"));
    let paths = rng::derive(cfg.seed, "classifier-paths");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let s = rng::derive_index(paths, step as u64);
        let pos = make_path_batch_from(&minibatch(&target.samples, cfg.batch_size, &mut batch), rng::derive(s, "pos"), TimeMode::PerSample)?;
        let neg = make_path_batch_from(&minibatch(&pooled, cfg.batch_size, &mut batch), rng::derive(s, "neg"), TimeMode::PerSample)?;
        let inputs = DenseMatrix::vstack(&[&pos.inputs(), &neg.inputs()])?;
        let labels: Vec<f64> = (0..inputs.rows()).map(|i| if i < pos.len() { 1.0 } else { 0.0 }).collect();
        let cache = net.forward_cached(&inputs)?;
        let total = inputs.rows() as f64;
        let z = cache.output().as_slice();
        let loss = z
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| if y > 0.5 { softplus(-z) } else { softplus(z) })
            .sum::<f64>()
            / total;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                context: "classifier cross-entropy".into(),
            });
        }
        let up: Vec<f64> = z.iter().zip(&labels).map(|(&z, &y)| (sigmoid(z) - y) / total).collect();
        let g = net.backward(&cache, &DenseMatrix::from_vec(inputs.rows(), 1, up)?)?;
        opt.update(net.params_mut(), &g.params)?;
        losses.push(loss);
    }
    Ok(TrainOutcome {
        model: Classifier { net },
        losses,
    })
}

/// `v̄(x, t) + α ∇ₓ log σ(z(x, t))`.
pub struct ClassifierGuidedField {
    base: Arc<dyn VelocityField>,
    classifier: Classifier,
    alpha: f64,
}

pub fn classifier_guided_field(
    base: Arc<dyn VelocityField>,
    classifier: Classifier,
    gcfg: GuidanceConfig,
) -> Result<ClassifierGuidedField> {
    gcfg.validate()?;
    if classifier.dim() != base.dim() {
        return Err(Error::shape("classifier_guided_field", base.dim(), classifier.dim()));
    }
    Ok(ClassifierGuidedField {
        base,
        classifier,
        alpha: gcfg.alpha,
    })
}

impl VelocityField for ClassifierGuidedField {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        let mut v = self.base.velocity(x, t)?;
        if self.alpha != 0.0 {
            let g = self.classifier.log_prob_gradient(x, &vec![t; x.rows()])?;
            v.axpy(self.alpha, &g)?;
        }
        Ok(v)
    }

    fn label(&self) -> &str {
        "classifier-guided"
    }
}

/// Anything that maps noise to samples.
pub trait Sampler: Send + Sync {
    fn generate(&self, x0: &DenseMatrix, cfg: &IntegratorConfig) -> Result<DenseMatrix>;
    fn name(&self) -> &str;
}

impl<F: VelocityField + ?Sized> Sampler for F {
    fn generate(&self, x0: &DenseMatrix, cfg: &IntegratorConfig) -> Result<DenseMatrix> {
        integrate(self, x0, cfg)
    }

    fn name(&self) -> &str {
        self.label()
    }
}

/// Noise → secondary field → pretrained field.
pub struct DistributionGuided {
    pub base: Arc<dyn VelocityField>,
    pub secondary: NetField,
}

impl Sampler for DistributionGuided {
    fn generate(&self, x0: &DenseMatrix, cfg: &IntegratorConfig) -> Result<DenseMatrix> {
        let noise = integrate(&self.secondary, x0, cfg)?;
        integrate(self.base.as_ref(), &noise, cfg)
    }

    fn name(&self) -> &str {
        "distribution-guided"
    }
}

/// Pull the target samples back through `base` to the noise states that produce them,
/// then fit a secondary flow from Gaussian noise to those states.
pub fn train_distribution_guided(
    base: Arc<dyn VelocityField>,
    target: &Dataset,
    cfg: &TrainConfig,
    backward: &IntegratorConfig,
) -> Result<TrainOutcome<DistributionGuided>> {
    let labels = integrate_backward(base.as_ref(), &target.samples, backward)?;
    let labels = Dataset::new(labels, target.split, format!("{} pulled back", target.provenance))?;
    let secondary = train_unconditional(std::slice::from_ref(&labels), cfg)?;
    let mut field = secondary.model;
    field.label = "distribution-guided-secondary".into();
    Ok(TrainOutcome {
        model: DistributionGuided { base, secondary: field },
        losses: secondary.losses,
    })
}
