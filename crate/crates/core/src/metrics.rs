//! k-NN manifold precision and recall, generation timing, and seed aggregation.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use crate::datasets::{format_f64, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

pub const DEFAULT_KAPPA: usize = 3;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Union of balls around reference points, each with radius equal to the distance to
/// its κ-th nearest other reference point.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldEstimate {
    points: DenseMatrix,
    radii_sq: Vec<f64>,
}

impl ManifoldEstimate {
    pub fn new(points: &DenseMatrix, kappa: usize) -> Result<Self> {
        let m = points.rows();
        if kappa == 0 {
            return Err(Error::InvalidArgument("kappa must be >= 1".into()));
        }
        if m <= kappa {
            return Err(Error::InvalidArgument(format!(
                "need more than kappa={kappa} points for a manifold estimate, got {m}"
            )));
        }
        let mut row = vec![0.0; m - 1];
        let radii_sq = (0..m)
            .map(|i| {
                let p = points.row(i);
                let mut w = 0;
                for j in (0..m).filter(|&j| j != i) {
                    row[w] = sq_dist(p, points.row(j));
                    w += 1;
                }
                let (_, kth, _) = row.select_nth_unstable_by(kappa - 1, f64::total_cmp);
                *kth
            })
            .collect();
        Ok(Self {
            points: points.clone(),
            radii_sq,
        })
    }

    pub fn radii(&self) -> Vec<f64> {
        self.radii_sq.iter().map(|r| r.sqrt()).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.points
            .row_iter()
            .zip(&self.radii_sq)
            .any(|(p, &r)| sq_dist(x, p) <= r)
    }

    /// Fraction of rows of `x` inside the manifold.
    pub fn coverage(&self, x: &DenseMatrix) -> f64 {
        let inside = x.row_iter().filter(|r| self.contains(r)).count();
        inside as f64 / x.rows() as f64
    }
}

/// `(precision, recall)`: the fraction of generated points on the real manifold, and of
/// real points on the generated manifold.
pub fn precision_recall(real: &DenseMatrix, generated: &DenseMatrix, kappa: usize) -> Result<(f64, f64)> {
    if real.cols() != generated.cols() {
        return Err(Error::shape("precision_recall", real.cols(), generated.cols()));
    }
    let real_m = ManifoldEstimate::new(real, kappa)?;
    let gen_m = ManifoldEstimate::new(generated, kappa)?;
    Ok((real_m.coverage(generated), gen_m.coverage(real)))
}

pub fn precision_recall_datasets(real: &Dataset, generated: &Dataset, kappa: usize) -> Result<(f64, f64)> {
    precision_recall(&real.samples, &generated.samples, kappa)
}

/// Mean and sample standard deviation of repeated wall-clock measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub runs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Timing {
    pub fn from_runs(runs: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&runs);
        Self { runs, mean, std }
    }
}

/// Run `f` `repeats` times and time each call; returns the last output.
pub fn time_repeated<T, F>(repeats: usize, mut f: F) -> Result<(Timing, T)>
where
    F: FnMut() -> Result<T>,
{
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let out = f()?;
        runs.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((Timing::from_runs(runs), last.expect("repeats >= 1")))
}

/// Sample mean and standard deviation (`n − 1` denominator); the deviation of fewer than
/// two values is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub split: Split,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub gen_seconds: f64,
    pub n_real: usize,
    pub n_generated: usize,
    /// Set when the cell could not be produced; metric fields are then meaningless.
    pub failure: Option<String>,
}

impl MetricReport {
    pub fn failed(method: impl Into<String>, split: Split, seed: u64, reason: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            split,
            seed,
            precision: f64::NAN,
            recall: f64::NAN,
            gen_seconds: f64::NAN,
            n_real: 0,
            n_generated: 0,
            failure: Some(reason.into()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

pub const REPORT_HEADER: [&str; 6] = ["method", "split", "seed", "precision", "recall", "gen_seconds"];

fn sort_reports(reports: &mut [MetricReport]) {
    reports.sort_by(|a, b| (&a.method, a.split, a.seed).cmp(&(&b.method, b.split, b.seed)));
}

/// One row per report, ordered by method, split and seed. Failed cells carry `failed` in
/// every metric column.
pub fn write_reports_csv<W: Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut sorted = reports.to_vec();
    sort_reports(&mut sorted);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in &sorted {
        let metric = |v: f64| if r.is_failed() { "failed".to_string() } else { format_f64(v) };
        w.write_record([
            r.method.clone(),
            r.split.to_string(),
            r.seed.to_string(),
            metric(r.precision),
            metric(r.recall),
            metric(r.gen_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricReport>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != REPORT_HEADER {
        return Err(Error::Parse(format!("unexpected report header: {:?}", headers)));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let split = Split::parse(&rec[1]).ok_or_else(|| Error::Parse(format!("unknown split {:?}", &rec[1])))?;
        let seed = rec[2].parse().map_err(|_| Error::Parse(format!("bad seed {:?}", &rec[2])))?;
        if &rec[3] == "failed" {
            out.push(MetricReport::failed(&rec[0], split, seed, "failed"));
            continue;
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse(format!("bad number {:?}", &rec[i])))
        };
        out.push(MetricReport {
            method: rec[0].to_string(),
            split,
            seed,
            precision: num(3)?,
            recall: num(4)?,
            gen_seconds: num(5)?,
            n_real: 0,
            n_generated: 0,
            failure: None,
        });
    }
    Ok(out)
}

/// Statistics of one (method, split) cell over seeds. `n_seeds == 1` flags a zero
/// standard deviation that is a convention rather than a measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub split: Split,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub gen_seconds: (f64, f64),
}

impl AggregateRow {
    pub fn single_seed(&self) -> bool {
        self.n_seeds == 1
    }
}

pub fn aggregate(reports: &[MetricReport]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(String, Split), Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        cells.entry((r.method.clone(), r.split)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, split), rows)| {
            let ok: Vec<&&MetricReport> = rows.iter().filter(|r| !r.is_failed()).collect();
            let col = |f: fn(&MetricReport) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                method,
                split,
                n_seeds: ok.len(),
                n_failed: rows.len() - ok.len(),
                precision: col(|r| r.precision),
                recall: col(|r| r.recall),
                gen_seconds: col(|r| r.gen_seconds),
            }
        })
        .collect()
}

pub const AGGREGATE_HEADER: [&str; 10] = [
    "method",
    "split",
    "n_seeds",
    "n_failed",
    "precision_mean",
    "precision_std",
    "recall_mean",
    "recall_std",
    "gen_seconds_mean",
    "gen_seconds_std",
];

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.split.to_string(),
            r.n_seeds.to_string(),
            r.n_failed.to_string(),
            format_f64(r.precision.0),
            format_f64(r.precision.1),
            format_f64(r.recall.0),
            format_f64(r.recall.1),
            format_f64(r.gen_seconds.0),
            format_f64(r.gen_seconds.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(m: usize, radius: f64) -> DenseMatrix {
        DenseMatrix::from_fn(m, 2, |i, j| {
            let a = std::f64::consts::TAU * i as f64 / m as f64;
            radius * if j == 0 { a.cos() } else { a.sin() }
        })
    }

    #[test]
    fn identical_and_far_sets() {
        let a = circle(40, 1.0);
        assert_eq!(precision_recall(&a, &a, 3).unwrap(), (1.0, 1.0));
        let mut far = a.clone();
        far.as_mut_slice().iter_mut().for_each(|v| *v += 1e6);
        assert_eq!(precision_recall(&a, &far, 3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn evenly_spaced_radius_is_kth_neighbour() {
        // Neighbours on a regular 12-gon are at chord lengths 2 sin(πj/12).
        let est = ManifoldEstimate::new(&circle(12, 1.0), 3).unwrap();
        let expected = 2.0 * (std::f64::consts::PI * 2.0 / 12.0).sin();
        for r in est.radii() {
            assert!((r - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(ManifoldEstimate::new(&circle(3, 1.0), 3).is_err());
        assert!(ManifoldEstimate::new(&circle(4, 1.0), 0).is_err());
    }

    #[test]
    fn aggregate_known_values() {
        let vals = [0.1, 0.2, 0.4, 0.8, 1.0];
        let reports: Vec<MetricReport> = vals
            .iter()
            .enumerate()
            .map(|(s, &p)| MetricReport {
                method: "m".into(),
                split: Split::Td,
                seed: s as u64,
                precision: p,
                recall: 0.5,
                gen_seconds: 1.0,
                n_real: 10,
                n_generated: 10,
                failure: None,
            })
            .collect();
        let agg = aggregate(&reports);
        assert_eq!(agg.len(), 1);
        let mean = 2.5 / 5.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!((agg[0].precision.0 - mean).abs() < 1e-15);
        assert!((agg[0].precision.1 - var.sqrt()).abs() < 1e-15);
        assert_eq!(agg[0].recall.1, 0.0);
        assert!(!agg[0].single_seed());
        let one = aggregate(&reports[..1]);
        assert!(one[0].single_seed());
        assert_eq!(one[0].precision.1, 0.0);
    }

    #[test]
    fn report_csv_round_trip_and_ordering() {
        let mk = |m: &str, split, seed, p| MetricReport {
            method: m.into(),
            split,
            seed,
            precision: p,
            recall: 0.25,
            gen_seconds: 0.125,
            n_real: 1,
            n_generated: 1,
            failure: None,
        };
        let reports = vec![
            mk("static", Split::Us, 1, 0.5),
            mk("dynamic", Split::Td, 0, 0.9),
            MetricReport::failed("static", Split::Td, 0, "boom"),
            mk("static", Split::Us, 0, 1.0 / 3.0),
        ];
        let mut buf = Vec::new();
        write_reports_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("method,split,seed,precision,recall,gen_seconds\n"));
        let back = read_reports_csv(&buf[..]).unwrap();
        let order: Vec<(String, Split, u64)> = back.iter().map(|r| (r.method.clone(), r.split, r.seed)).collect();
        assert_eq!(
            order,
            vec![
                ("dynamic".into(), Split::Td, 0),
                ("static".into(), Split::Td, 0),
                ("static".into(), Split::Us, 0),
                ("static".into(), Split::Us, 1)
            ]
        );
        assert!(back[1].is_failed());
        assert_eq!(back[2].precision, 1.0 / 3.0);
    }
}
