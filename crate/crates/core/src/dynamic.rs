//! State-dependent coefficients.
//!
//! The conditional velocity `E[X_1 − X_0 | X_t = x]` is estimated from target samples
//! alone: each target `x_1` fixes the only noise point consistent with `x`,
//! `x_0* = (x − t·x_1)/(1 − t)`, and the Gaussian density of that point is its
//! importance weight. Weights are normalized in log space. The estimate is then
//! projected onto the span of the basis values at `(x, t)`.

use std::sync::Arc;

use rand::seq::index;

use crate::basis::train::{accumulate, check_family, init_basis, minibatch, pick_distributions, Optimizers, StepGrads};
use crate::basis::{time_inputs, BasisFunctions, BasisSet, TrainConfig, TrainOutcome};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::flow::{check_dim, make_path_batch_from, TimeMode, VelocityField};
use crate::linalg::RidgeSolver;
use crate::rng;
use crate::tensor::DenseMatrix;

/// What to do when the normalized weights collapse onto one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightFloor {
    /// Below this effective sample size, return the single heaviest sample's velocity.
    EssFallback(f64),
    /// Always return the weighted mean.
    Off,
}

/// Which linear system yields the local coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalSolver {
    /// The `k × k` Gram system.
    Gram,
    /// The equivalent `n × n` system `c = Φᵀ(ΦΦᵀ/n + λI)⁻¹ v / n` (requires λ > 0 when `k > n`).
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicConfig {
    pub t_clamp: f64,
    pub anchor_subsample: usize,
    pub weight_floor: WeightFloor,
    pub solver: LocalSolver,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            t_clamp: 1e-2,
            anchor_subsample: 64,
            weight_floor: WeightFloor::EssFallback(1.5),
            solver: LocalSolver::Gram,
        }
    }
}

impl DynamicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_clamp > 0.0 && self.t_clamp < 1.0) {
            return Err(Error::InvalidArgument(format!("t_clamp must lie in (0, 1), got {}", self.t_clamp)));
        }
        if self.anchor_subsample == 0 {
            return Err(Error::InvalidArgument("anchor_subsample must be >= 1".into()));
        }
        Ok(())
    }

    pub fn clamp_time(&self, t: f64) -> f64 {
        t.min(1.0 - self.t_clamp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalVelocityEstimate {
    pub v_hat: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub effective_sample_size: f64,
    pub degenerate: bool,
}

impl ConditionalVelocityEstimate {
    /// Normalized weights `softmax(log_weights)`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        softmax(&self.log_weights)
    }
}

pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Scratch buffers for repeated estimates against one target set.
struct Estimator {
    log_w: Vec<f64>,
}

struct EstimateStats {
    ess: f64,
    degenerate: bool,
}

impl Estimator {
    fn new(m: usize) -> Self {
        Self { log_w: vec![0.0; m] }
    }

    fn estimate_into(
        &mut self,
        x: &[f64],
        t: f64,
        targets: &DenseMatrix,
        floor: WeightFloor,
        out: &mut [f64],
    ) -> EstimateStats {
        let n = x.len();
        let inv = 1.0 / (1.0 - t);
        let mut max = f64::NEG_INFINITY;
        let mut argmax = 0;
        for (i, x1) in targets.row_iter().enumerate() {
            let mut sq = 0.0;
            for d in 0..n {
                let z = (x[d] - t * x1[d]) * inv;
                sq += z * z;
            }
            let lw = -0.5 * sq;
            self.log_w[i] = lw;
            if lw > max {
                max = lw;
                argmax = i;
            }
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, x1) in targets.row_iter().enumerate() {
            let w = (self.log_w[i] - max).exp();
            sum += w;
            sum_sq += w * w;
            if w > 0.0 {
                for d in 0..n {
                    let x0 = (x[d] - t * x1[d]) * inv;
                    out[d] += w * (x1[d] - x0);
                }
            }
        }
        let ess = if sum > 0.0 { sum * sum / sum_sq } else { 0.0 };
        let collapsed = !(sum > 0.0) || !sum.is_finite();
        let below = matches!(floor, WeightFloor::EssFallback(min) if ess < min);
        if collapsed || below {
            let x1 = targets.row(argmax);
            for d in 0..n {
                out[d] = x1[d] - (x[d] - t * x1[d]) * inv;
            }
            return EstimateStats { ess, degenerate: true };
        }
        out.iter_mut().for_each(|o| *o /= sum);
        EstimateStats { ess, degenerate: false }
    }
}

fn check_targets(x: &[f64], t: f64, targets: &DenseMatrix) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::TimeDomain { t });
    }
    if targets.rows() == 0 {
        return Err(Error::Empty("targets"));
    }
    if targets.cols() != x.len() {
        return Err(Error::shape("conditional_velocity", targets.cols(), x.len()));
    }
    Ok(())
}

/// Self-normalized importance-sampling estimate of `E[X_1 − X_0 | X_t = x]`.
pub fn conditional_velocity(x: &[f64], t: f64, targets: &DenseMatrix) -> Result<ConditionalVelocityEstimate> {
    conditional_velocity_with(x, t, targets, WeightFloor::EssFallback(1.5))
}

pub fn conditional_velocity_with(
    x: &[f64],
    t: f64,
    targets: &DenseMatrix,
    floor: WeightFloor,
) -> Result<ConditionalVelocityEstimate> {
    check_targets(x, t, targets)?;
    let mut est = Estimator::new(targets.rows());
    let mut v_hat = vec![0.0; x.len()];
    let stats = est.estimate_into(x, t, targets, floor, &mut v_hat);
    Ok(ConditionalVelocityEstimate {
        v_hat,
        log_weights: est.log_w,
        effective_sample_size: stats.ess,
        degenerate: stats.degenerate,
    })
}

/// Local least squares at one point. `phi` holds `g^i_d(x, t)` at `d·k + i`.
struct LocalProjector {
    n: usize,
    k: usize,
    ridge: f64,
    solver: LocalSolver,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    small: Vec<f64>,
    ridge_solver: RidgeSolver,
}

impl LocalProjector {
    fn new(n: usize, k: usize, ridge: f64, solver: LocalSolver) -> Self {
        let dim = match solver {
            LocalSolver::Gram => k,
            LocalSolver::Dual => n,
        };
        Self {
            n,
            k,
            ridge,
            solver,
            gram: vec![0.0; dim * dim],
            rhs: vec![0.0; dim],
            small: vec![0.0; n],
            ridge_solver: RidgeSolver::new(dim),
        }
    }

    fn coefficients(&mut self, phi: &[f64], v: &[f64], c: &mut [f64]) -> Result<()> {
        let (n, k) = (self.n, self.k);
        let inv_n = 1.0 / n as f64;
        match self.solver {
            LocalSolver::Gram => {
                for i in 0..k {
                    for j in 0..=i {
                        let mut s = 0.0;
                        for d in 0..n {
                            s += phi[d * k + i] * phi[d * k + j];
                        }
                        s *= inv_n;
                        self.gram[i * k + j] = s;
                        self.gram[j * k + i] = s;
                    }
                    let mut s = 0.0;
                    for d in 0..n {
                        s += v[d] * phi[d * k + i];
                    }
                    self.rhs[i] = s * inv_n;
                }
                self.ridge_solver.solve_in_place(&mut self.gram, &mut self.rhs, self.ridge)?;
                c.copy_from_slice(&self.rhs);
            }
            LocalSolver::Dual => {
                for a in 0..n {
                    for b in 0..n {
                        let ra = &phi[a * k..(a + 1) * k];
                        let rb = &phi[b * k..(b + 1) * k];
                        self.gram[a * n + b] = crate::tensor::dot(ra, rb) * inv_n;
                    }
                    self.small[a] = v[a] * inv_n;
                }
                self.ridge_solver.solve_in_place(&mut self.gram, &mut self.small, self.ridge)?;
                for (i, ci) in c.iter_mut().enumerate() {
                    *ci = (0..n).map(|d| phi[d * k + i] * self.small[d]).sum();
                }
            }
        }
        Ok(())
    }
}

fn reconstruct(phi: &[f64], c: &[f64], n: usize, k: usize, out: &mut [f64]) {
    for d in 0..n {
        out[d] = crate::tensor::dot(&phi[d * k..(d + 1) * k], c);
    }
}

/// Coefficients at one state `(x, t)`: `G = (1/n) Φᵀ Φ`, `b = (1/n) Φᵀ v̂`.
pub fn project_dynamic<B: BasisFunctions + ?Sized>(
    basis: &B,
    x: &[f64],
    t: f64,
    targets: &DenseMatrix,
    ridge: f64,
) -> Result<Vec<f64>> {
    project_dynamic_with(basis, x, t, targets, ridge, LocalSolver::Gram)
}

pub fn project_dynamic_with<B: BasisFunctions + ?Sized>(
    basis: &B,
    x: &[f64],
    t: f64,
    targets: &DenseMatrix,
    ridge: f64,
    solver: LocalSolver,
) -> Result<Vec<f64>> {
    check_targets(x, t, targets)?;
    let (n, k) = (basis.n(), basis.k());
    let xm = DenseMatrix::from_vec(1, n, x.to_vec())?;
    let phi = basis.values(&xm, &[t])?;
    let mut v = conditional_velocity(x, t, targets)?.v_hat;
    if let Some(mean) = basis.mean(&xm, &[t])? {
        for d in 0..n {
            v[d] -= mean[(0, d)];
        }
    }
    let mut c = vec![0.0; k];
    LocalProjector::new(n, k, ridge, solver).coefficients(phi.as_slice(), &v, &mut c)?;
    Ok(c)
}

/// Velocity field with per-state coefficients projected from a shot set.
pub struct DynamicField {
    basis: Arc<dyn BasisFunctions>,
    targets: DenseMatrix,
    cfg: DynamicConfig,
    ridge: f64,
}

pub fn make_dynamic_field(
    basis: Arc<dyn BasisFunctions>,
    targets: &Dataset,
    cfg: DynamicConfig,
    ridge: f64,
) -> Result<DynamicField> {
    cfg.validate()?;
    if targets.dim() != basis.n() {
        return Err(Error::shape("make_dynamic_field", basis.n(), targets.dim()));
    }
    Ok(DynamicField {
        basis,
        targets: targets.samples.clone(),
        cfg,
        ridge,
    })
}

impl VelocityField for DynamicField {
    fn dim(&self) -> usize {
        self.basis.n()
    }

    fn velocity(&self, x: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
        check_dim(self.basis.n(), x)?;
        if t < 0.0 {
            return Err(Error::TimeDomain { t });
        }
        let t = self.cfg.clamp_time(t);
        let (n, k) = (self.basis.n(), self.basis.k());
        let ts = vec![t; x.rows()];
        let values = self.basis.values(x, &ts)?;
        let mean = self.basis.mean(x, &ts)?;
        let mut est = Estimator::new(self.targets.rows());
        let mut proj = LocalProjector::new(n, k, self.ridge, self.cfg.solver);
        let mut v = vec![0.0; n];
        let mut c = vec![0.0; k];
        let mut out = DenseMatrix::zeros(x.rows(), n);
        for s in 0..x.rows() {
            est.estimate_into(x.row(s), t, &self.targets, self.cfg.weight_floor, &mut v);
            if let Some(m) = &mean {
                for d in 0..n {
                    v[d] -= m[(s, d)];
                }
            }
            let phi = values.row(s);
            proj.coefficients(phi, &v, &mut c)?;
            let row = out.row_mut(s);
            reconstruct(phi, &c, n, k, row);
            if let Some(m) = &mean {
                for d in 0..n {
                    row[d] += m[(s, d)];
                }
            }
        }
        Ok(out)
    }

    fn label(&self) -> &str {
        "dynamic"
    }
}

/// Pointwise loss `‖y − Φc‖²/n` at the ridge solution and its gradients, computed in the
/// `n × n` form. With `A = ΦΦᵀ/n + λI` and `z = A⁻¹y` the residual is `λz`.
pub(crate) struct PointLoss {
    pub loss: f64,
    pub d_phi: Vec<f64>,
    pub d_target: Vec<f64>,
}

pub(crate) fn point_loss(phi: &[f64], y: &[f64], n: usize, k: usize, ridge: f64, detach: bool) -> Result<PointLoss> {
    let inv_n = 1.0 / n as f64;
    let mut a = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            a[p * n + q] = crate::tensor::dot(&phi[p * k..(p + 1) * k], &phi[q * k..(q + 1) * k]) * inv_n;
        }
    }
    let mut solver = RidgeSolver::new(n);
    let mut z = y.to_vec();
    solver.solve_in_place(&mut a.clone(), &mut z, ridge)?;
    let loss = ridge * ridge * z.iter().map(|v| v * v).sum::<f64>() * inv_n;

    // Φᵀz
    let phit = |vec: &[f64]| -> Vec<f64> {
        (0..k).map(|i| (0..n).map(|d| phi[d * k + i] * vec[d]).sum()).collect()
    };
    let ptz = phit(&z);
    let mut d_phi = vec![0.0; n * k];
    let d_target;
    if detach {
        // c = Φᵀz/n fixed: dℓ/dΦ = −(2/n) e cᵀ with e = λz
        let s = -2.0 * ridge * inv_n * inv_n;
        for d in 0..n {
            for i in 0..k {
                d_phi[d * k + i] = s * z[d] * ptz[i];
            }
        }
        d_target = z.iter().map(|v| 2.0 * ridge * inv_n * v).collect();
    } else {
        let mut w = z.clone();
        solver.solve_in_place(&mut a, &mut w, ridge)?;
        let ptw = phit(&w);
        let s = -2.0 * ridge * ridge * inv_n * inv_n;
        for d in 0..n {
            for i in 0..k {
                d_phi[d * k + i] = s * (w[d] * ptz[i] + z[d] * ptw[i]);
            }
        }
        d_target = w.iter().map(|v| 2.0 * ridge * ridge * inv_n * v).collect();
    }
    Ok(PointLoss { loss, d_phi, d_target })
}

/// Per step and distribution: a path batch, a subsample of its states as anchors, the
/// importance-sampled velocity at each anchor from all batch targets, and the squared
/// error of its local projection. Losses are averaged over anchors and summed over the
/// family before one Adam step.
pub fn train_dynamic(datasets: &[Dataset], cfg: &TrainConfig, dcfg: &DynamicConfig) -> Result<TrainOutcome<BasisSet>> {
    cfg.validate()?;
    dcfg.validate()?;
    let n = check_family(datasets)?;
    let k = cfg.k;
    let mut basis = init_basis(n, cfg)?;
    let mut opt = Optimizers::new(&basis, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.gradient_steps);
    let mut pick_rng = rng::rng(rng::derive(cfg.seed, "distributions"));
    let mut batch_rng = rng::rng(rng::derive(cfg.seed, "minibatch"));
    let mut anchor_rng = rng::rng(rng::derive(cfg.seed, "anchors"));

    for step in 0..cfg.gradient_steps {
        let mut grads = StepGrads::zeros(&basis);
        let mut loss = 0.0;
        let step_seed = rng::derive_index(rng::derive(cfg.seed, "paths"), step as u64);
        for iota in pick_distributions(datasets.len(), cfg.distributions_per_step, &mut pick_rng) {
            let x1 = minibatch(&datasets[iota].samples, cfg.batch_size, &mut batch_rng);
            let pb = make_path_batch_from(&x1, rng::derive_index(step_seed, iota as u64), TimeMode::PerSample)?;
            let na = dcfg.anchor_subsample.min(pb.len());
            let anchors = index::sample(&mut anchor_rng, pb.len(), na).into_vec();
            let xa = pb.xt.select_rows(&anchors);
            let ta: Vec<f64> = anchors.iter().map(|&i| pb.t[i]).collect();
            let inputs = time_inputs(&xa, &ta)?;
            let cache = basis.net.forward_cached(&inputs)?;
            let mean_cache = match &basis.mean_field {
                Some(mf) => Some(mf.forward_cached(&inputs)?),
                None => None,
            };
            let mut d_values = DenseMatrix::zeros(na, n * k);
            let mut d_mean = DenseMatrix::zeros(na, n);
            let mut est = Estimator::new(x1.rows());
            let mut v = vec![0.0; n];
            let scale = 1.0 / na as f64;
            let mut dist_loss = 0.0;
            for a in 0..na {
                est.estimate_into(xa.row(a), ta[a], &x1, dcfg.weight_floor, &mut v);
                if let Some(mc) = &mean_cache {
                    for d in 0..n {
                        v[d] -= mc.output()[(a, d)];
                    }
                }
                let pl = point_loss(cache.output().row(a), &v, n, k, cfg.ridge, cfg.detach_coefficients)
                    .map_err(|e| Error::NonFiniteLoss {
                        step,
                        context: format!("distribution {iota}, anchor {a}: {e}"),
                    })?;
                if !pl.loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        context: format!("distribution {iota}, anchor {a}"),
                    });
                }
                dist_loss += pl.loss * scale;
                for (o, g) in d_values.row_mut(a).iter_mut().zip(&pl.d_phi) {
                    *o = g * scale;
                }
                for (o, g) in d_mean.row_mut(a).iter_mut().zip(&pl.d_target) {
                    *o = -g * scale;
                }
            }
            loss += dist_loss;
            let g = basis.net.backward(&cache, &d_values)?;
            accumulate(&mut grads.basis, &g.params);
            if let (Some(mf), Some(mc), Some(acc)) = (&basis.mean_field, &mean_cache, &mut grads.mean) {
                let gm = mf.backward(mc, &d_mean)?;
                accumulate(acc, &gm.params);
            }
        }
        opt.step(&mut basis, &grads)?;
        losses.push(loss);
    }
    Ok(TrainOutcome { model: basis, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::sample_noise;
    use crate::nn::Activation;
    use rand::Rng as _;

    fn gram_route_loss(phi: &[f64], y: &[f64], n: usize, k: usize, ridge: f64) -> f64 {
        let mut c = vec![0.0; k];
        LocalProjector::new(n, k, ridge, LocalSolver::Gram)
            .coefficients(phi, y, &mut c)
            .unwrap();
        let mut rec = vec![0.0; n];
        reconstruct(phi, &c, n, k, &mut rec);
        rec.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64
    }

    #[test]
    fn routes_agree() {
        let mut r = rng::rng(2);
        for (n, k) in [(2, 1), (2, 2), (2, 7), (3, 5)] {
            let phi: Vec<f64> = (0..n * k).map(|_| r.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
            let mut cg = vec![0.0; k];
            let mut cd = vec![0.0; k];
            LocalProjector::new(n, k, 1e-3, LocalSolver::Gram).coefficients(&phi, &v, &mut cg).unwrap();
            LocalProjector::new(n, k, 1e-3, LocalSolver::Dual).coefficients(&phi, &v, &mut cd).unwrap();
            for (a, b) in cg.iter().zip(&cd) {
                assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "n={n} k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn point_loss_gradient_matches_finite_differences() {
        let mut r = rng::rng(3);
        let (n, k, ridge) = (2, 3, 0.2);
        let phi: Vec<f64> = (0..n * k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = vec![0.7, -1.1];
        let pl = point_loss(&phi, &y, n, k, ridge, false).unwrap();
        assert!((pl.loss - gram_route_loss(&phi, &y, n, k, ridge)).abs() < 1e-12);
        let h = 1e-6;
        for idx in 0..n * k {
            let mut p = phi.clone();
            p[idx] += h;
            let mut q = phi.clone();
            q[idx] -= h;
            let fd = (gram_route_loss(&p, &y, n, k, ridge) - gram_route_loss(&q, &y, n, k, ridge)) / (2.0 * h);
            assert!((fd - pl.d_phi[idx]).abs() < 1e-7, "{idx}: {fd} vs {}", pl.d_phi[idx]);
        }
        for d in 0..n {
            let mut p = y.clone();
            p[d] += h;
            let mut q = y.clone();
            q[d] -= h;
            let fd = (gram_route_loss(&phi, &p, n, k, ridge) - gram_route_loss(&phi, &q, n, k, ridge)) / (2.0 * h);
            assert!((fd - pl.d_target[d]).abs() < 1e-7);
        }
    }

    #[test]
    fn t_zero_collapses_to_mean_minus_x() {
        let targets = sample_noise(50, 2, 1);
        let x = [0.3, -0.4];
        let est = conditional_velocity(&x, 0.0, &targets).unwrap();
        let mean = targets.column_means();
        assert!(est.log_weights.iter().all(|l| *l == est.log_weights[0]));
        for d in 0..2 {
            assert!((est.v_hat[d] - (mean[d] - x[d])).abs() < 1e-12);
        }
        assert!(!est.degenerate);
    }

    #[test]
    fn single_target() {
        let targets = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (x, t) = ([0.5, -0.5], 0.3);
        let est = conditional_velocity(&x, t, &targets).unwrap();
        for d in 0..2 {
            let x1 = targets[(0, d)];
            let expected = x1 - (x[d] - t * x1) / (1.0 - t);
            assert!((est.v_hat[d] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn domain_errors() {
        let targets = sample_noise(3, 2, 1);
        assert!(matches!(conditional_velocity(&[0.0, 0.0], 1.0, &targets), Err(Error::TimeDomain { .. })));
        assert!(conditional_velocity(&[0.0, 0.0], 0.5, &DenseMatrix::zeros(0, 2)).is_err());
        assert!(conditional_velocity(&[0.0], 0.5, &targets).is_err());
    }

    #[test]
    fn extreme_spread_is_normalized() {
        // Targets far apart: at t close to 1 the log-weights differ by ~1e6.
        let targets = DenseMatrix::from_rows(&[vec![0.0], vec![15.0], vec![-15.0]]).unwrap();
        let est = conditional_velocity_with(&[0.01], 0.99, &targets, WeightFloor::Off).unwrap();
        let spread = est.log_weights.iter().cloned().fold(f64::MIN, f64::max)
            - est.log_weights.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 1e6);
        let w = est.normalized_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(est.v_hat[0].is_finite());
    }

    #[test]
    fn k1_closed_form_and_null_basis() {
        let mut r = rng::rng(8);
        let basis = BasisSet::new(2, 1, &[6], Activation::Tanh, false, &mut r).unwrap();
        let targets = sample_noise(40, 2, 3);
        let (x, t, ridge) = ([0.2, 0.1], 0.4, 1e-3);
        let c = project_dynamic(&basis, &x, t, &targets, ridge).unwrap();
        let g = basis.values(&DenseMatrix::from_vec(1, 2, x.to_vec()).unwrap(), &[t]).unwrap();
        let v = conditional_velocity(&x, t, &targets).unwrap().v_hat;
        let num = g[(0, 0)] * v[0] + g[(0, 1)] * v[1];
        let den = g[(0, 0)].powi(2) + g[(0, 1)].powi(2) + 2.0 * ridge;
        assert!((c[0] - num / den).abs() < 1e-12);

        let mut zero = basis.clone();
        zero.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let c = project_dynamic(&zero, &x, t, &targets, 1e-6).unwrap();
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn identical_rows_get_identical_velocities() {
        let mut r = rng::rng(9);
        let basis: Arc<dyn BasisFunctions> =
            Arc::new(BasisSet::new(2, 4, &[8], Activation::Tanh, false, &mut r).unwrap());
        let shots = Dataset::new(sample_noise(30, 2, 2), crate::datasets::Split::Td, "s").unwrap();
        let field = make_dynamic_field(basis, &shots, DynamicConfig::default(), 1e-6).unwrap();
        let x = DenseMatrix::filled(5, 2, 0.25);
        let v = field.velocity(&x, 0.6).unwrap();
        for i in 1..5 {
            assert_eq!(v.row(i), v.row(0));
        }
    }
}
