//! Linear-path flow matching primitives and Euler integration.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::DenseMatrix;

/// A time-dependent vector field `(x, t) ↦ v(x, t)` evaluated on a batch of states.
pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix>;

    fn label(&self) -> &str;
}

impl<F: VelocityField + ?Sized> VelocityField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        (**self).velocity(x, t)
    }

    fn label(&self) -> &str {
        (**self).label()
    }
}

impl<F: VelocityField + ?Sized> VelocityField for std::sync::Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        (**self).velocity(x, t)
    }

    fn label(&self) -> &str {
        (**self).label()
    }
}

/// Field defined by a per-row closure `(x_row, t, out_row)`.
pub struct FnField<F> {
    dim: usize,
    label: String,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, label: impl Into<String>, f: F) -> Self {
        Self {
            dim,
            label: label.into(),
            f,
        }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        check_dim(self.dim, x)?;
        let mut out = DenseMatrix::zeros(x.rows(), self.dim);
        for i in 0..x.rows() {
            (self.f)(x.row(i), t, out.row_mut(i));
        }
        Ok(out)
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// `v(x, t) = u` everywhere.
pub struct ConstantField {
    pub value: Vec<f64>,
}

impl VelocityField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn velocity(&self, x: &DenseMatrix, _t: f64) -> Result<DenseMatrix> {
        check_dim(self.value.len(), x)?;
        let mut out = DenseMatrix::zeros(x.rows(), self.value.len());
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&self.value);
        }
        Ok(out)
    }

    fn label(&self) -> &str {
        "constant"
    }
}

pub(crate) fn check_dim(dim: usize, x: &DenseMatrix) -> Result<()> {
    if x.cols() != dim {
        return Err(Error::shape("VelocityField::velocity", dim, x.cols()));
    }
    Ok(())
}

/// Standard normal draws, reproducible per seed.
pub fn sample_noise(m: usize, n: usize, seed: u64) -> DenseMatrix {
    let mut r = rng::rng(seed);
    DenseMatrix::from_fn(m, n, |_, _| r.sample(StandardNormal))
}

/// How times are drawn for a path batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeMode {
    /// Independent `t ~ U[0, 1]` per sample.
    PerSample,
    /// One time shared by the whole batch.
    Single(f64),
    /// One shared time drawn from `U[0, 1)`.
    SingleRandom,
}

/// Samples of the linear path `X_t = (1 − t) X_0 + t X_1` with regression targets `u = X_1 − X_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub x0: DenseMatrix,
    pub x1: DenseMatrix,
    pub t: Vec<f64>,
    pub xt: DenseMatrix,
    pub u: DenseMatrix,
}

impl PathBatch {
    /// Assemble a batch from explicit endpoints and times.
    pub fn from_parts(x0: DenseMatrix, x1: DenseMatrix, t: Vec<f64>) -> Result<Self> {
        if x0.shape() != x1.shape() || t.len() != x0.rows() {
            return Err(Error::shape(
                "PathBatch::from_parts",
                format!("{:?} endpoints with {} times", x1.shape(), x1.rows()),
                format!("{:?} / {}", x0.shape(), t.len()),
            ));
        }
        if x1.rows() == 0 {
            return Err(Error::Empty("path batch"));
        }
        let (m, n) = x1.shape();
        let mut xt = DenseMatrix::zeros(m, n);
        let mut u = DenseMatrix::zeros(m, n);
        for i in 0..m {
            let ti = t[i];
            for d in 0..n {
                let (a, b) = (x0[(i, d)], x1[(i, d)]);
                xt[(i, d)] = (1.0 - ti) * a + ti * b;
                u[(i, d)] = b - a;
            }
        }
        Ok(Self { x0, x1, t, xt, u })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x1.cols()
    }

    /// `(x_t, t)` rows, the network input.
    pub fn inputs(&self) -> DenseMatrix {
        self.xt.with_column(&self.t).expect("t has one entry per row")
    }

    /// Single shared time, if every sample uses the same one.
    pub fn shared_time(&self) -> Option<f64> {
        let t0 = *self.t.first()?;
        self.t.iter().all(|&t| t == t0).then_some(t0)
    }
}

/// Draw a path batch whose endpoints are the rows of `data`.
pub fn make_path_batch(data: &Dataset, seed: u64, mode: TimeMode) -> Result<PathBatch> {
    make_path_batch_from(&data.samples, seed, mode)
}

pub fn make_path_batch_from(x1: &DenseMatrix, seed: u64, mode: TimeMode) -> Result<PathBatch> {
    if x1.rows() == 0 {
        return Err(Error::Empty("dataset"));
    }
    let (m, n) = x1.shape();
    let x0 = sample_noise(m, n, rng::derive(seed, "x0"));
    let mut r = rng::rng(rng::derive(seed, "t"));
    let t = match mode {
        TimeMode::PerSample => (0..m).map(|_| r.gen::<f64>()).collect(),
        TimeMode::Single(t) => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::TimeDomain { t });
            }
            vec![t; m]
        }
        TimeMode::SingleRandom => vec![r.gen::<f64>(); m],
    };
    PathBatch::from_parts(x0, x1.clone(), t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub steps: usize,
    pub t_max: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            t_max: 1.0,
        }
    }
}

impl IntegratorConfig {
    pub fn new(steps: usize) -> Self {
        Self { steps, t_max: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("integrator needs at least one step".into()));
        }
        if !(self.t_max > 0.0 && self.t_max <= 1.0) {
            return Err(Error::InvalidArgument(format!("t_max must lie in (0, 1], got {}", self.t_max)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.steps as f64
    }
}

/// Explicit Euler from `t = 0` to `t_max`: `x ← x + Δt·v(x, j·Δt)`.
pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    x0: &DenseMatrix,
    cfg: &IntegratorConfig,
) -> Result<DenseMatrix> {
    cfg.validate()?;
    check_dim(field.dim(), x0)?;
    let dt = cfg.dt();
    let mut x = x0.clone();
    for j in 0..cfg.steps {
        let v = field.velocity(&x, j as f64 * dt)?;
        if v.shape() != x.shape() || !v.is_finite() {
            return Err(Error::Diverged { step: j });
        }
        x.axpy(dt, &v)?;
        if !x.is_finite() {
            return Err(Error::Diverged { step: j });
        }
    }
    Ok(x)
}

/// Explicit Euler run backwards from `t_max` to 0: `x ← x − Δt·v(x, (j+1)·Δt)`.
/// Exact inverse of [`integrate`] for constant fields.
pub fn integrate_backward<F: VelocityField + ?Sized>(
    field: &F,
    x1: &DenseMatrix,
    cfg: &IntegratorConfig,
) -> Result<DenseMatrix> {
    cfg.validate()?;
    check_dim(field.dim(), x1)?;
    let dt = cfg.dt();
    let mut x = x1.clone();
    for j in (0..cfg.steps).rev() {
        let v = field.velocity(&x, (j + 1) as f64 * dt)?;
        x.axpy(-dt, &v)?;
        if let Some(bad) = x.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::BackwardDiverged { sample: bad });
        }
    }
    Ok(x)
}
