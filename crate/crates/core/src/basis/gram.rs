//! Distribution-weighted inner products between basis fields and target velocities.
//!
//! Basis values for a batch are stored as an `m × (n·k)` matrix whose row `s` holds
//! `g^i_d(x_s, t_s)` at column `d·k + i`. The same buffer read as `(m·n) × k` stacks the
//! per-sample `n × k` blocks `Φ_s`, so `Σ_s Φ_sᵀ Φ_s` is a single `FᵀF` product.

use crate::error::{Error, Result};
use crate::linalg::solve_ridge;
use crate::tensor::{gemm, DenseMatrix, Trans};

/// `G c = b` with `G[i][j] = ⟨g^i, g^j⟩` and `b[i] = ⟨v, g^i⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramSystem {
    pub g: DenseMatrix,
    pub b: Vec<f64>,
    pub sample_count: usize,
    pub ridge: f64,
}

fn check_values(values: &DenseMatrix, n: usize, k: usize) -> Result<usize> {
    if values.cols() != n * k {
        return Err(Error::shape("basis values", n * k, values.cols()));
    }
    if values.rows() == 0 {
        return Err(Error::Empty("basis values"));
    }
    Ok(values.rows())
}

/// View `m × (n·k)` values as the stacked `(m·n) × k` design matrix.
pub(crate) fn design(values: &DenseMatrix, n: usize, k: usize) -> DenseMatrix {
    DenseMatrix::from_vec(values.rows() * n, k, values.as_slice().to_vec()).expect("layout")
}

impl GramSystem {
    /// Weighted inner products `⟨f, g⟩ = (1/n) Σ_s w_s f_sᵀ g_s`; uniform weights `1/m`
    /// when `weights` is `None`.
    pub fn assemble(
        values: &DenseMatrix,
        targets: &DenseMatrix,
        weights: Option<&[f64]>,
        n: usize,
        k: usize,
        ridge: f64,
    ) -> Result<Self> {
        let m = check_values(values, n, k)?;
        if targets.shape() != (m, n) {
            return Err(Error::shape(
                "GramSystem::assemble",
                format!("targets {m}x{n}"),
                format!("{:?}", targets.shape()),
            ));
        }
        if let Some(w) = weights {
            if w.len() != m {
                return Err(Error::shape("GramSystem::assemble weights", m, w.len()));
            }
        }
        let f = design(values, n, k);
        let mut fw = f.clone();
        let uniform = 1.0 / m as f64;
        for s in 0..m {
            let w = weights.map_or(uniform, |w| w[s]) / n as f64;
            for d in 0..n {
                fw.row_mut(s * n + d).iter_mut().for_each(|v| *v *= w);
            }
        }
        let mut g = DenseMatrix::zeros(k, k);
        gemm(1.0, &f, Trans::Yes, &fw, Trans::No, 0.0, &mut g)?;
        for i in 0..k {
            for j in 0..i {
                let avg = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = avg;
                g[(j, i)] = avg;
            }
        }
        let b = fw.t_matvec(targets.as_slice())?;
        Ok(Self {
            g,
            b,
            sample_count: m,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        solve_ridge(&self.g, &self.b, self.ridge)
    }
}

/// `Σ_i c_i g^i` at every row: an `m × n` matrix.
pub fn combine(values: &DenseMatrix, c: &[f64], n: usize, k: usize) -> Result<DenseMatrix> {
    let m = check_values(values, n, k)?;
    if c.len() != k {
        return Err(Error::shape("combine", k, c.len()));
    }
    let flat = design(values, n, k).matvec(c)?;
    DenseMatrix::from_vec(m, n, flat)
}

/// Loss `(1/(n·m)) Σ_s ‖u_s − Φ_s c‖²` at the ridge least-squares `c`, with gradients with
/// respect to the basis values and the targets.
#[derive(Clone, Debug)]
pub struct ProjectionLoss {
    pub loss: f64,
    pub coefficients: Vec<f64>,
    pub d_values: DenseMatrix,
    pub d_targets: DenseMatrix,
}

/// With `detach` the coefficients are treated as constants; otherwise the gradient flows
/// through `G`, `b` and the solve via `dc = (G + λI)⁻¹ (db − dG·c)`.
pub fn projection_loss(
    values: &DenseMatrix,
    targets: &DenseMatrix,
    n: usize,
    k: usize,
    ridge: f64,
    detach: bool,
) -> Result<ProjectionLoss> {
    let sys = GramSystem::assemble(values, targets, None, n, k, ridge)?;
    let c = sys.solve()?;
    let m = sys.sample_count;
    let scale = 1.0 / (n * m) as f64;

    let f = design(values, n, k);
    let fc = f.matvec(&c)?;
    let r: Vec<f64> = targets.as_slice().iter().zip(&fc).map(|(u, p)| u - p).collect();
    let loss = scale * r.iter().map(|v| v * v).sum::<f64>();

    // a = (G + λI)⁻¹ ∂L/∂c, with ∂L/∂c = 2(Gc − b)
    let a = if detach {
        vec![0.0; k]
    } else {
        let gc = sys.g.matvec(&c)?;
        let dl_dc: Vec<f64> = gc.iter().zip(&sys.b).map(|(x, y)| 2.0 * (x - y)).collect();
        solve_ridge(&sys.g, &dl_dc, ridge)?
    };
    let fa = f.matvec(&a)?;

    let mut d_values = DenseMatrix::zeros(m, n * k);
    {
        let dv = d_values.as_mut_slice();
        for (row, (&ri, &fai)) in r.iter().zip(&fa).enumerate() {
            let out = &mut dv[row * k..(row + 1) * k];
            for i in 0..k {
                out[i] = scale * (-2.0 * ri * c[i] + ri * a[i] - fai * c[i]);
            }
        }
    }
    let dt: Vec<f64> = r.iter().zip(&fa).map(|(ri, fai)| scale * (2.0 * ri + fai)).collect();
    let d_targets = DenseMatrix::from_vec(m, n, dt)?;
    Ok(ProjectionLoss {
        loss,
        coefficients: c,
        d_values,
        d_targets,
    })
}
