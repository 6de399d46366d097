#![allow(dead_code)]

use fpfm_core::basis::BasisFunctions;
use fpfm_core::tensor::DenseMatrix;
use fpfm_core::Result;

/// Basis given by a closure returning all `n·k` values at `(x, t)`, laid out with
/// component `d` of field `i` at `d·k + i`.
pub struct FnBasis<F> {
    pub n: usize,
    pub k: usize,
    pub f: F,
}

impl<F> BasisFunctions for FnBasis<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn n(&self) -> usize {
        self.n
    }

    fn k(&self) -> usize {
        self.k
    }

    fn values(&self, x: &DenseMatrix, t: &[f64]) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(x.rows(), self.n * self.k);
        for (s, &ts) in t.iter().enumerate() {
            out.row_mut(s).copy_from_slice(&(self.f)(x.row(s), ts));
        }
        Ok(out)
    }
}

/// Nodes and trapezoid weights on `[a, b]`.
pub fn trapezoid(a: f64, b: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / (nodes - 1) as f64;
    let x = (0..nodes).map(|i| a + h * i as f64).collect();
    let w = (0..nodes)
        .map(|i| if i == 0 || i == nodes - 1 { h / 2.0 } else { h })
        .collect();
    (x, w)
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// The 1D bimodal target `½N(−μ, σ²) + ½N(μ, σ²)`.
pub fn bimodal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    0.5 * normal_pdf(x, -mu, sd) + 0.5 * normal_pdf(x, mu, sd)
}

pub fn bimodal_samples(m: usize, mu: f64, sd: f64, seed: u64) -> DenseMatrix {
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    let mut r = fpfm_core::rng::rng(seed);
    DenseMatrix::from_fn(m, 1, |_, _| {
        let z: f64 = r.sample(StandardNormal);
        let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        sign * mu + sd * z
    })
}

/// `E[X₁ − X₀ | X_t = x]` for a 1D target density, by quadrature over `x₁`. The
/// posterior over `x₁` is `p₁(x₁)·N((x − t·x₁)/(1 − t))` up to a constant.
pub fn conditional_velocity_quadrature(x: f64, t: f64, density: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> f64 {
    let (grid, w) = trapezoid(lo, hi, nodes);
    let (mut num, mut den) = (0.0, 0.0);
    for (&x1, &wi) in grid.iter().zip(&w) {
        let x0 = (x - t * x1) / (1.0 - t);
        let p = wi * density(x1) * normal_pdf(x0, 0.0, 1.0);
        num += p * (x1 - x0);
        den += p;
    }
    num / den
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}
