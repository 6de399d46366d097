//! The 2D Arcs family: quarter arcs of the unit circle for training, two-arc mixtures
//! over the same support, and a spiral whose support the training arcs never touch.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    /// Training distributions.
    Td,
    /// Unseen mixtures over the training support.
    Ud,
    /// Unseen support.
    Us,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Td, Split::Ud, Split::Us];

    pub fn name(self) -> &'static str {
        match self {
            Split::Td => "TD",
            Split::Ud => "UD",
            Split::Us => "US",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TD" => Some(Split::Td),
            "UD" => Some(Split::Ud),
            "US" => Some(Split::Us),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform distribution over a quarter of the unit circle centred at `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArcSpec {
    pub center: f64,
    pub width: f64,
}

impl ArcSpec {
    pub fn new(center: f64) -> Self {
        Self {
            center,
            width: FRAC_PI_2,
        }
    }

    /// Whether `angle` falls on this arc (modulo 2π).
    pub fn contains_angle(&self, angle: f64, tol: f64) -> bool {
        let d = wrap_angle(angle - self.center);
        d.abs() <= self.width / 2.0 + tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureSpec {
    pub components: [ArcSpec; 2],
    pub weights: [f64; 2],
}

impl MixtureSpec {
    pub fn new(a: ArcSpec, b: ArcSpec) -> Self {
        Self {
            components: [a, b],
            weights: [0.5, 0.5],
        }
    }
}

/// Archimedean spiral `r(θ) = θ / (2π · turns)` for `θ ∈ [0, 2π · turns]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpiralSpec {
    pub turns: u32,
}

impl Default for SpiralSpec {
    fn default() -> Self {
        Self { turns: 1 }
    }
}

impl SpiralSpec {
    pub fn point(&self, theta: f64) -> [f64; 2] {
        let r = theta / (TAU * f64::from(self.turns));
        [r * theta.cos(), r * theta.sin()]
    }
}

/// Any target distribution of the benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetSpec {
    Arc(ArcSpec),
    Mixture(MixtureSpec),
    Spiral(SpiralSpec),
}

impl TargetSpec {
    pub fn split(&self) -> Split {
        match self {
            TargetSpec::Arc(_) => Split::Td,
            TargetSpec::Mixture(_) => Split::Ud,
            TargetSpec::Spiral(_) => Split::Us,
        }
    }

    pub fn sample(&self, m: usize, seed: u64) -> Result<Dataset> {
        match self {
            TargetSpec::Arc(a) => sample_arc(a, m, seed),
            TargetSpec::Mixture(mx) => sample_mixture(mx, m, seed),
            TargetSpec::Spiral(s) => sample_spiral(s, m, seed),
        }
    }

    /// Conditioning value for the conditional baseline: the arc centre on TD, the
    /// circular mean of the two component centres on UD, and 0 on US.
    pub fn conditioning_code(&self) -> f64 {
        match self {
            TargetSpec::Arc(a) => a.center,
            TargetSpec::Mixture(m) => {
                circular_mean(&[m.components[0].center, m.components[1].center])
            }
            TargetSpec::Spiral(_) => 0.0,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TargetSpec::Arc(a) => format!("arc(center={:.6})", a.center),
            TargetSpec::Mixture(m) => format!(
                "mixture(centers={:.6},{:.6})",
                m.components[0].center, m.components[1].center
            ),
            TargetSpec::Spiral(s) => format!("spiral(turns={})", s.turns),
        }
    }
}

/// Samples from one distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: DenseMatrix,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: DenseMatrix, split: Split, provenance: impl Into<String>) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if !samples.is_finite() {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Self {
            samples,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Write as CSV with header `x0,x1,...` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_samples_csv(&self.samples, w)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Format with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_samples_csv<W: Write>(samples: &DenseMatrix, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = (0..samples.cols()).map(|j| format!("x{j}")).collect();
    out.write_record(&header)?;
    for r in samples.row_iter().take(samples.rows()) {
        out.write_record(r.iter().map(|v| format_f64(*v)))?;
    }
    out.flush()?;
    Ok(())
}

/// Parse a samples CSV. An empty body yields a `0 × d` matrix.
pub fn read_samples_csv<R: Read>(r: R) -> Result<DenseMatrix> {
    let mut rdr = csv::Reader::from_reader(r);
    let cols = rdr.headers()?.len();
    if cols == 0 {
        return Err(Error::Parse("missing header".into()));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Parse(format!("row {} has {} fields, expected {cols}", i + 1, rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: cannot parse {field:?}", i + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn load_dataset_csv(path: &Path, split: Split) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    let samples = read_samples_csv(std::io::BufReader::new(f))?;
    Dataset::new(samples, split, path.display().to_string())
}

/// Map an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut d = a.rem_euclid(TAU);
    if d > PI {
        d -= TAU;
    }
    d
}

pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c).rem_euclid(TAU)
}

pub fn sample_arc(spec: &ArcSpec, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Empty("sample count"));
    }
    let mut r = rng::rng(seed);
    let half = spec.width / 2.0;
    let mut samples = DenseMatrix::zeros(m, 2);
    for i in 0..m {
        let theta = r.gen_range(spec.center - half..=spec.center + half);
        samples[(i, 0)] = theta.cos();
        samples[(i, 1)] = theta.sin();
    }
    Dataset::new(samples, Split::Td, format!("arc(center={})", spec.center))
}

pub fn sample_mixture(spec: &MixtureSpec, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Empty("sample count"));
    }
    let mut r = rng::rng(seed);
    let mut samples = DenseMatrix::zeros(m, 2);
    for i in 0..m {
        let comp = if r.gen::<f64>() < spec.weights[0] {
            &spec.components[0]
        } else {
            &spec.components[1]
        };
        let half = comp.width / 2.0;
        let theta = r.gen_range(comp.center - half..=comp.center + half);
        samples[(i, 0)] = theta.cos();
        samples[(i, 1)] = theta.sin();
    }
    Dataset::new(
        samples,
        Split::Ud,
        format!(
            "mixture(centers={},{})",
            spec.components[0].center, spec.components[1].center
        ),
    )
}

pub fn sample_spiral(spec: &SpiralSpec, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Empty("sample count"));
    }
    if spec.turns == 0 {
        return Err(Error::InvalidArgument("spiral needs at least one turn".into()));
    }
    let mut r = rng::rng(seed);
    let max = TAU * f64::from(spec.turns);
    let mut samples = DenseMatrix::zeros(m, 2);
    for i in 0..m {
        let p = spec.point(r.gen_range(0.0..=max));
        samples.row_mut(i).copy_from_slice(&p);
    }
    Dataset::new(samples, Split::Us, format!("spiral(turns={})", spec.turns))
}

/// Training arcs, unseen mixtures and the unseen-support spiral.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub td: Vec<ArcSpec>,
    pub ud: Vec<MixtureSpec>,
    pub us: SpiralSpec,
}

impl Splits {
    pub fn targets(&self, split: Split) -> Vec<TargetSpec> {
        match split {
            Split::Td => self.td.iter().copied().map(TargetSpec::Arc).collect(),
            Split::Ud => self.ud.iter().copied().map(TargetSpec::Mixture).collect(),
            Split::Us => vec![TargetSpec::Spiral(self.us)],
        }
    }
}

/// Evenly spaced training arcs plus `n_mixtures` random pairs of distinct arcs.
pub fn make_splits(n_train_arcs: usize, n_mixtures: usize, seed: u64) -> Result<Splits> {
    if n_train_arcs < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training arcs, got {n_train_arcs}"
        )));
    }
    let td: Vec<ArcSpec> = (0..n_train_arcs)
        .map(|i| ArcSpec::new(TAU * i as f64 / n_train_arcs as f64))
        .collect();
    let mut r = rng::rng(rng::derive(seed, "ud-pairs"));
    let ud = (0..n_mixtures)
        .map(|_| {
            let pick = index::sample(&mut r, n_train_arcs, 2);
            MixtureSpec::new(td[pick.index(0)], td[pick.index(1)])
        })
        .collect();
    Ok(Splits {
        td,
        ud,
        us: SpiralSpec::default(),
    })
}

/// Angle of a 2D point in `[0, 2π)`.
pub fn angle_of(p: &[f64]) -> f64 {
    p[1].atan2(p[0]).rem_euclid(TAU)
}

/// Half of the arc width, exposed for geometry checks.
pub const ARC_HALF_WIDTH: f64 = FRAC_PI_4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_points_are_on_the_unit_circle() {
        let d = sample_arc(&ArcSpec::new(1.3), 2000, 1).unwrap();
        for r in d.samples.row_iter() {
            assert!(((r[0] * r[0] + r[1] * r[1]).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn arc_at_zero_stays_in_quarter() {
        let d = sample_arc(&ArcSpec::new(0.0), 5000, 2).unwrap();
        for r in d.samples.row_iter() {
            let a = r[1].atan2(r[0]);
            assert!(a >= -FRAC_PI_4 - 1e-12 && a <= FRAC_PI_4 + 1e-12);
        }
    }

    #[test]
    fn identical_components_keep_arc_support() {
        let a = ArcSpec::new(2.0);
        let d = sample_mixture(&MixtureSpec::new(a, a), 3000, 3).unwrap();
        for r in d.samples.row_iter() {
            assert!(a.contains_angle(angle_of(r), 1e-12));
        }
    }

    #[test]
    fn disjoint_components_cover_each_sample_once() {
        let (a, b) = (ArcSpec::new(0.0), ArcSpec::new(PI));
        let d = sample_mixture(&MixtureSpec::new(a, b), 3000, 4).unwrap();
        for r in d.samples.row_iter() {
            let ang = angle_of(r);
            assert!(a.contains_angle(ang, 1e-12) ^ b.contains_angle(ang, 1e-12));
        }
    }

    #[test]
    fn spiral_geometry() {
        let s = SpiralSpec::default();
        let d = sample_spiral(&s, 3000, 5).unwrap();
        for r in d.samples.row_iter() {
            let rad = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!((0.0..=1.0 + 1e-15).contains(&rad));
        }
        let end = s.point(TAU);
        assert!((end[0] - 1.0).abs() < 1e-15 && end[1].abs() < 1e-15);
    }

    #[test]
    fn splits_layout() {
        let s = make_splits(8, 6, 0).unwrap();
        for (i, a) in s.td.iter().enumerate() {
            assert!((a.center - i as f64 * FRAC_PI_4).abs() < 1e-15);
        }
        for m in &s.ud {
            assert_ne!(m.components[0].center, m.components[1].center);
            assert!(s.td.contains(&m.components[0]) && s.td.contains(&m.components[1]));
        }
        assert!(make_splits(1, 2, 0).is_err());
    }

    #[test]
    fn arcs_cover_the_circle_when_at_least_four() {
        for n in 4..12 {
            let s = make_splits(n, 0, 0).unwrap();
            for step in 0..3600 {
                let ang = TAU * step as f64 / 3600.0;
                assert!(s.td.iter().any(|a| a.contains_angle(ang, 1e-12)), "n={n} ang={ang}");
            }
        }
    }

    #[test]
    fn csv_roundtrip_and_empty() {
        let d = sample_spiral(&SpiralSpec::default(), 17, 9).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1\n"));
        assert_eq!(read_samples_csv(&buf[..]).unwrap(), d.samples);
        let empty = read_samples_csv(&b"x0,x1\n"[..]).unwrap();
        assert_eq!(empty.shape(), (0, 2));
        assert!(read_samples_csv(&b"x0,x1\n1.0,abc\n"[..]).is_err());
    }

    #[test]
    fn codes() {
        let s = make_splits(8, 4, 1).unwrap();
        assert_eq!(TargetSpec::Arc(s.td[3]).conditioning_code(), s.td[3].center);
        assert_eq!(TargetSpec::Spiral(s.us).conditioning_code(), 0.0);
        let m = MixtureSpec::new(ArcSpec::new(0.1), ArcSpec::new(TAU - 0.1));
        let c = TargetSpec::Mixture(m).conditioning_code();
        assert!(wrap_angle(c).abs() < 1e-12);
    }
}
