use std::f64::consts::TAU;
use std::sync::Arc;

use fpfm_core::basis::{make_projected_field, project_static, BasisSet, ProjectionMode};
use fpfm_core::datasets::{sample_arc, ArcSpec, Split};
use fpfm_core::flow::{integrate, sample_noise, ConstantField, IntegratorConfig};
use fpfm_core::metrics::{aggregate, mean_std, precision_recall, time_repeated, MetricReport};
use fpfm_core::nn::Activation;
use fpfm_core::rng;
use fpfm_core::tensor::DenseMatrix;
use proptest::prelude::*;
use rand::Rng as _;

/// Exhaustive oracle: sort every distance list.
fn brute_force(real: &DenseMatrix, gen: &DenseMatrix, kappa: usize) -> (f64, f64) {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let radii = |set: &DenseMatrix| -> Vec<f64> {
        (0..set.rows())
            .map(|i| {
                let mut d: Vec<f64> = (0..set.rows()).filter(|&j| j != i).map(|j| dist(set.row(i), set.row(j))).collect();
                d.sort_by(f64::total_cmp);
                d[kappa - 1]
            })
            .collect()
    };
    let cover = |refs: &DenseMatrix, r: &[f64], q: &DenseMatrix| {
        let hits = q
            .row_iter()
            .filter(|p| refs.row_iter().zip(r).any(|(c, &rad)| dist(p, c) <= rad))
            .count();
        hits as f64 / q.rows() as f64
    };
    let (rr, rg) = (radii(real), radii(gen));
    (cover(real, &rr, gen), cover(gen, &rg, real))
}

fn circle(m: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::rng(seed);
    (0..m)
        .map(|_| {
            let a = r.gen_range(0.0..TAU);
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

#[test]
fn half_overlap_case_matches_brute_force() {
    let real = DenseMatrix::from_rows(&circle(100, 1.0, 1)).unwrap();
    let mut g = circle(50, 1.0, 2);
    g.extend(circle(50, 100.0, 3));
    let gen = DenseMatrix::from_rows(&g).unwrap();
    let got = precision_recall(&real, &gen, 3).unwrap();
    assert_eq!(got, brute_force(&real, &gen, 3));
    assert!(got.0 <= 0.5 + 1e-12);
}

fn cloud(m: usize, shift: f64, seed: u64) -> DenseMatrix {
    let mut r = rng::rng(seed);
    DenseMatrix::from_fn(m, 2, |_, _| shift + r.gen_range(-1.0..1.0))
}

fn rotate(x: &DenseMatrix, a: f64) -> DenseMatrix {
    let (s, c) = a.sin_cos();
    DenseMatrix::from_fn(x.rows(), 2, |i, j| {
        let p = x.row(i);
        if j == 0 { c * p[0] - s * p[1] } else { s * p[0] + c * p[1] }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_oracle(m1 in 4usize..120, m2 in 4usize..120, shift in 0.0f64..2.0, kappa in 1usize..4, seed in any::<u64>()) {
        let real = cloud(m1, 0.0, seed);
        let gen = cloud(m2, shift, seed ^ 0xabc);
        prop_assert_eq!(precision_recall(&real, &gen, kappa).unwrap(), brute_force(&real, &gen, kappa));
    }

    #[test]
    fn swapping_roles_swaps_metrics(m in 5usize..80, shift in 0.0f64..2.0, seed in any::<u64>()) {
        let (a, b) = (cloud(m, 0.0, seed), cloud(m + 3, shift, seed + 1));
        let (p, r) = precision_recall(&a, &b, 3).unwrap();
        let (p2, r2) = precision_recall(&b, &a, 3).unwrap();
        prop_assert_eq!((p, r), (r2, p2));
    }

    #[test]
    fn rigid_rotation_changes_nothing(angle in 0.0f64..TAU, seed in any::<u64>()) {
        let (a, b) = (cloud(60, 0.0, seed), cloud(50, 0.7, seed + 1));
        let before = precision_recall(&a, &b, 3).unwrap();
        let after = precision_recall(&rotate(&a, angle), &rotate(&b, angle), 3).unwrap();
        // rotations perturb distances by an ulp or so; ties on the boundary are measure-zero
        prop_assert!((before.0 - after.0).abs() <= 1.0 / 50.0 && (before.1 - after.1).abs() <= 1.0 / 60.0);
    }

    #[test]
    fn off_manifold_point_never_raises_precision(seed in any::<u64>()) {
        let (a, b) = (cloud(60, 0.0, seed), cloud(50, 0.5, seed + 1));
        let (p, _) = precision_recall(&a, &b, 3).unwrap();
        let mut rows: Vec<Vec<f64>> = b.row_iter().map(|r| r.to_vec()).collect();
        rows.push(vec![1e3, -1e3]);
        let (p2, _) = precision_recall(&a, &DenseMatrix::from_rows(&rows).unwrap(), 3).unwrap();
        prop_assert!(p2 <= p);
    }
}

#[test]
fn rotation_is_exact_for_quarter_turns() {
    let (a, b) = (cloud(60, 0.0, 4), cloud(50, 0.7, 5));
    let quarter = |x: &DenseMatrix| DenseMatrix::from_fn(x.rows(), 2, |i, j| if j == 0 { -x[(i, 1)] } else { x[(i, 0)] });
    assert_eq!(precision_recall(&a, &b, 3).unwrap(), precision_recall(&quarter(&a), &quarter(&b), 3).unwrap());
}

#[test]
fn aggregate_matches_hand_formula() {
    let vals = [0.2, 0.4, 0.5, 0.9, 1.0];
    let reports: Vec<MetricReport> = vals
        .iter()
        .enumerate()
        .map(|(s, &p)| MetricReport {
            method: "m".into(),
            split: Split::Ud,
            seed: s as u64,
            precision: p,
            recall: 0.5,
            gen_seconds: 1.0,
            n_real: 10,
            n_generated: 10,
            failure: None,
        })
        .collect();
    let rows = aggregate(&reports);
    assert_eq!(rows.len(), 1);
    let mean = 3.0 / 5.0;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
    assert!((rows[0].precision.0 - mean).abs() < 1e-15);
    assert!((rows[0].precision.1 - var.sqrt()).abs() < 1e-15);
    assert_eq!(rows[0].recall.1, 0.0);
    assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
}

fn static_field() -> Box<dyn fpfm_core::flow::VelocityField> {
    let mut r = rng::rng(3);
    let basis = Arc::new(BasisSet::new(2, 16, &[64, 64], Activation::Tanh, false, &mut r).unwrap());
    let shots = sample_arc(&ArcSpec::new(0.0), 200, 1).unwrap();
    let cv = project_static(basis.as_ref(), &shots, 200, 2, 1e-6).unwrap();
    make_projected_field(basis, ProjectionMode::Static(&cv)).unwrap()
}

#[test]
fn timing_orders_and_scales() {
    let x0 = sample_noise(1000, 2, 9);
    let field = static_field();
    let stub = ConstantField { value: vec![0.0, 0.0] };
    let time = |f: &dyn fpfm_core::flow::VelocityField, steps: usize| {
        time_repeated(3, || integrate(f, &x0, &IntegratorConfig::new(steps))).unwrap().0
    };
    let t_stub = time(&stub, 100);
    let t100 = time(field.as_ref(), 100);
    let t200 = time(field.as_ref(), 200);
    assert!(t_stub.mean < t100.mean);
    assert_eq!(t100.runs.len(), 3);
    assert!(t100.std >= 0.0);
    let ratio = t200.mean / t100.mean;
    assert!((1.0..=3.0).contains(&ratio), "doubling steps scaled time by {ratio}");
}
