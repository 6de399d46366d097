//! Learned basis velocity fields and least-squares projection onto them.
//!
//! A target velocity field is represented as `v ≈ [v̄ +] Σ_i c_i g^i`. The coefficients
//! come from a ridge least-squares solve whose inner products are estimated from path
//! samples `(x_t, t, x_1 − x_0)`; the target field itself is never evaluated.

mod gram;
pub(crate) mod train;

use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;

pub use gram::{combine, projection_loss, GramSystem, ProjectionLoss};
pub use train::{train_static, train_temporal, TrainConfig, TrainOutcome};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::flow::{check_dim, make_path_batch_from, PathBatch, TimeMode, VelocityField};
use crate::nn::{Activation, Mlp};
use crate::rng::{self, Rng};
use crate::tensor::DenseMatrix;

/// Something that evaluates `k` vector fields `R^n × [0, 1] → R^n` on a batch.
pub trait BasisFunctions: Send + Sync {
    fn n(&self) -> usize;

    fn k(&self) -> usize;

    /// `m × (n·k)` values with `g^i_d(x_s, t_s)` at `(s, d·k + i)`.
    fn values(&self, x: &DenseMatrix, t: &[f64]) -> Result<DenseMatrix>;

    /// Mean field `v̄` for residual mode.
    fn mean(&self, _x: &DenseMatrix, _t: &[f64]) -> Result<Option<DenseMatrix>> {
        Ok(None)
    }
}

/// Neural basis: one network `(x, t) ↦ R^{n·k}` holding all `k` fields, plus an
/// optional mean field network.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    n: usize,
    k: usize,
    pub net: Mlp,
    pub mean_field: Option<Mlp>,
}

impl BasisSet {
    pub fn new(
        n: usize,
        k: usize,
        hidden: &[usize],
        activation: Activation,
        residual: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!("basis needs n >= 1 and k >= 1, got n={n}, k={k}")));
        }
        let mut dims = vec![n + 1];
        dims.extend_from_slice(hidden);
        dims.push(n * k);
        let net = Mlp::new(&dims, activation, rng)?;
        let mean_field = if residual {
            let mut md = vec![n + 1];
            md.extend_from_slice(hidden);
            md.push(n);
            Some(Mlp::new(&md, activation, rng)?)
        } else {
            None
        };
        Ok(Self { n, k, net, mean_field })
    }

    pub fn from_parts(n: usize, k: usize, net: Mlp, mean_field: Option<Mlp>) -> Result<Self> {
        if net.input_dim() != n + 1 || net.output_dim() != n * k {
            return Err(Error::shape(
                "BasisSet::from_parts",
                format!("({}) -> ({})", n + 1, n * k),
                format!("({}) -> ({})", net.input_dim(), net.output_dim()),
            ));
        }
        if let Some(mf) = &mean_field {
            if mf.input_dim() != n + 1 || mf.output_dim() != n {
                return Err(Error::shape("BasisSet mean field", n, mf.output_dim()));
            }
        }
        Ok(Self { n, k, net, mean_field })
    }

    pub fn is_residual(&self) -> bool {
        self.mean_field.is_some()
    }
}

pub(crate) fn time_inputs(x: &DenseMatrix, t: &[f64]) -> Result<DenseMatrix> {
    x.with_column(t)
}

impl BasisFunctions for BasisSet {
    fn n(&self) -> usize {
        self.n
    }

    fn k(&self) -> usize {
        self.k
    }

    fn values(&self, x: &DenseMatrix, t: &[f64]) -> Result<DenseMatrix> {
        check_dim(self.n, x)?;
        self.net.forward(&time_inputs(x, t)?)
    }

    fn mean(&self, x: &DenseMatrix, t: &[f64]) -> Result<Option<DenseMatrix>> {
        match &self.mean_field {
            Some(mf) => Ok(Some(mf.forward(&time_inputs(x, t)?)?)),
            None => Ok(None),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoefficientMode {
    Static,
    Temporal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    pub c: Vec<f64>,
    pub mode: CoefficientMode,
    pub source: String,
}

/// Inner products over a path batch. With `restrict_t`, every sample must sit at that
/// time (the single-time inner product). In residual mode the targets are `u − v̄`.
pub fn estimate_gram_rhs<B: BasisFunctions + ?Sized>(
    basis: &B,
    pb: &PathBatch,
    restrict_t: Option<f64>,
    ridge: f64,
) -> Result<GramSystem> {
    if pb.is_empty() {
        return Err(Error::Empty("path batch"));
    }
    if let Some(t) = restrict_t {
        if pb.t.iter().any(|&ti| ti != t) {
            return Err(Error::InvalidArgument(format!(
                "batch times differ from the restricted time {t}"
            )));
        }
    }
    let values = basis.values(&pb.xt, &pb.t)?;
    let targets = match basis.mean(&pb.xt, &pb.t)? {
        Some(mean) => pb.u.sub(&mean)?,
        None => pb.u.clone(),
    };
    GramSystem::assemble(&values, &targets, None, basis.n(), basis.k(), ridge)
}

/// Rows used as `x_1` when projecting from a shot set: all of them when `m_eval`
/// equals the shot count (or is 0), a subset when smaller, and every row plus extra
/// random draws when larger.
pub fn resample_rows(x1: &DenseMatrix, m_eval: usize, seed: u64) -> DenseMatrix {
    let len = x1.rows();
    if m_eval == 0 || m_eval == len {
        return x1.clone();
    }
    let mut r = rng::rng(seed);
    let idx: Vec<usize> = if m_eval < len {
        index::sample(&mut r, len, m_eval).into_vec()
    } else {
        (0..len).chain((len..m_eval).map(|_| r.gen_range(0..len))).collect()
    };
    x1.select_rows(&idx)
}

/// Coefficients for a whole distribution: one solve over `p(t, X_t)`.
pub fn project_static<B: BasisFunctions + ?Sized>(
    basis: &B,
    dataset: &Dataset,
    m_eval: usize,
    seed: u64,
    ridge: f64,
) -> Result<CoefficientVector> {
    let x1 = resample_rows(&dataset.samples, m_eval, rng::derive(seed, "rows"));
    let pb = make_path_batch_from(&x1, rng::derive(seed, "path"), TimeMode::PerSample)?;
    let c = estimate_gram_rhs(basis, &pb, None, ridge)?.solve()?;
    Ok(CoefficientVector {
        c,
        mode: CoefficientMode::Static,
        source: dataset.provenance.clone(),
    })
}

/// Coefficients at one time `t`: the solve over `p(X_t | t)`.
pub fn project_temporal<B: BasisFunctions + ?Sized>(
    basis: &B,
    dataset: &Dataset,
    t: f64,
    m_eval: usize,
    seed: u64,
    ridge: f64,
) -> Result<CoefficientVector> {
    project_temporal_from(basis, &dataset.samples, &dataset.provenance, t, m_eval, seed, ridge)
}

fn project_temporal_from<B: BasisFunctions + ?Sized>(
    basis: &B,
    samples: &DenseMatrix,
    source: &str,
    t: f64,
    m_eval: usize,
    seed: u64,
    ridge: f64,
) -> Result<CoefficientVector> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::TimeDomain { t });
    }
    let x1 = resample_rows(samples, m_eval, rng::derive(seed, "rows"));
    let pb = make_path_batch_from(&x1, rng::derive(seed, "path"), TimeMode::Single(t))?;
    let c = estimate_gram_rhs(basis, &pb, Some(t), ridge)?.solve()?;
    Ok(CoefficientVector {
        c,
        mode: CoefficientMode::Temporal(t),
        source: source.to_string(),
    })
}

/// `Σ c_i g^i(x, t) [+ v̄(x, t)]` at a batch of states sharing one time.
pub fn evaluate_expansion<B: BasisFunctions + ?Sized>(
    basis: &B,
    c: &[f64],
    x: &DenseMatrix,
    t: f64,
) -> Result<DenseMatrix> {
    check_dim(basis.n(), x)?;
    let ts = vec![t; x.rows()];
    let values = basis.values(x, &ts)?;
    let mut out = combine(&values, c, basis.n(), basis.k())?;
    if let Some(mean) = basis.mean(x, &ts)? {
        out.axpy(1.0, &mean)?;
    }
    Ok(out)
}

/// Field with fixed coefficients.
pub struct StaticField {
    basis: Arc<dyn BasisFunctions>,
    coefficients: Vec<f64>,
}

impl VelocityField for StaticField {
    fn dim(&self) -> usize {
        self.basis.n()
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        evaluate_expansion(self.basis.as_ref(), &self.coefficients, x, t)
    }

    fn label(&self) -> &str {
        "static"
    }
}

/// Field whose coefficients are re-projected from the shot set at every queried time.
pub struct TemporalField {
    basis: Arc<dyn BasisFunctions>,
    shots: DenseMatrix,
    m_eval: usize,
    seed: u64,
    ridge: f64,
}

impl TemporalField {
    pub fn coefficients_at(&self, t: f64) -> Result<Vec<f64>> {
        let seed = rng::derive_index(self.seed, t.to_bits());
        Ok(project_temporal_from(self.basis.as_ref(), &self.shots, "", t, self.m_eval, seed, self.ridge)?.c)
    }
}

impl VelocityField for TemporalField {
    fn dim(&self) -> usize {
        self.basis.n()
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        let c = self.coefficients_at(t)?;
        evaluate_expansion(self.basis.as_ref(), &c, x, t)
    }

    fn label(&self) -> &str {
        "temporal"
    }
}

pub enum ProjectionMode<'a> {
    Static(&'a CoefficientVector),
    Temporal {
        shots: &'a Dataset,
        m_eval: usize,
        seed: u64,
        ridge: f64,
    },
}

pub fn make_projected_field(
    basis: Arc<dyn BasisFunctions>,
    mode: ProjectionMode<'_>,
) -> Result<Box<dyn VelocityField>> {
    match mode {
        ProjectionMode::Static(cv) => {
            if cv.c.len() != basis.k() {
                return Err(Error::shape("make_projected_field", basis.k(), cv.c.len()));
            }
            Ok(Box::new(StaticField {
                basis,
                coefficients: cv.c.clone(),
            }))
        }
        ProjectionMode::Temporal {
            shots,
            m_eval,
            seed,
            ridge,
        } => {
            if shots.dim() != basis.n() {
                return Err(Error::shape("make_projected_field shots", basis.n(), shots.dim()));
            }
            Ok(Box::new(TemporalField {
                basis,
                shots: shots.samples.clone(),
                m_eval,
                seed,
                ridge,
            }))
        }
    }
}

/// Pairwise Euclidean distances between coefficient vectors, for spotting two
/// distributions that share a representation.
pub fn coefficient_distances(coeffs: &[CoefficientVector]) -> DenseMatrix {
    DenseMatrix::from_fn(coeffs.len(), coeffs.len(), |i, j| {
        coeffs[i]
            .c
            .iter()
            .zip(&coeffs[j].c)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}
