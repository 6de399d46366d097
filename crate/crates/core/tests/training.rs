use std::sync::OnceLock;

use fpfm_core::basis::{
    evaluate_expansion, project_static, project_temporal, train_static, train_temporal, BasisSet, TrainConfig,
};
use fpfm_core::datasets::{make_splits, Dataset, Split, TargetSpec};
use fpfm_core::dynamic::{conditional_velocity, train_dynamic, DynamicConfig};
use fpfm_core::flow::{make_path_batch, TimeMode};

fn td_specs() -> Vec<TargetSpec> {
    make_splits(8, 0, 0).unwrap().targets(Split::Td)
}

fn td_family() -> Vec<Dataset> {
    td_specs()
        .iter()
        .enumerate()
        .map(|(i, t)| t.sample(500, 100 + i as u64).unwrap())
        .collect()
}

fn cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        gradient_steps: steps,
        batch_size: 128,
        k: 32,
        hidden_width: 32,
        distributions_per_step: 4,
        seed: 11,
        ..TrainConfig::default()
    }
}

/// Window-50 moving average at the start and at the end.
fn drop(losses: &[f64]) -> (f64, f64) {
    let w = 50;
    let head = losses[..w].iter().sum::<f64>() / w as f64;
    let tail = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
    eprintln!("moving average {head:.4e} -> {tail:.4e}");
    (head, tail)
}

struct HeldOut {
    /// `(arc index, t, path batch, E[u | x_t] per row)`
    cells: Vec<(usize, f64, fpfm_core::flow::PathBatch, Vec<Vec<f64>>)>,
    floor: f64,
}

/// Fresh path states on two arcs over a time grid, with the Bayes floor
/// `E‖u − E[u | x_t]‖²/n`. The conditional expectation comes from the
/// importance-sampling estimator with 10⁵ target draws.
fn heldout_set() -> &'static HeldOut {
    static SET: OnceLock<HeldOut> = OnceLock::new();
    SET.get_or_init(|| {
        let specs = td_specs();
        let (mut cells, mut floor, mut count) = (Vec::new(), 0.0, 0usize);
        for iota in [0, 3] {
            let big = specs[iota].sample(100_000, 900 + iota as u64).unwrap();
            for ti in 0..20u64 {
                let t = (ti as f64 + 0.5) / 20.0;
                let fresh = specs[iota].sample(200, 1000 + ti).unwrap();
                let pb = make_path_batch(&fresh, 2000 + ti, TimeMode::Single(t)).unwrap();
                let best: Vec<Vec<f64>> = (0..pb.len())
                    .map(|s| conditional_velocity(pb.xt.row(s), t, &big.samples).unwrap().v_hat)
                    .collect();
                for (s, b) in best.iter().enumerate() {
                    floor += (0..2).map(|d| (pb.u[(s, d)] - b[d]).powi(2) / 2.0).sum::<f64>();
                    count += 1;
                }
                cells.push((iota, t, pb, best));
            }
        }
        HeldOut { cells, floor: floor / count as f64 }
    })
}

/// Held-out flow-matching loss of the field projected from `shots`.
fn heldout_loss(basis: &BasisSet, temporal: bool, shots: &[Dataset]) -> f64 {
    let (mut loss, mut count) = (0.0, 0usize);
    for (ci, (iota, t, pb, _)) in heldout_set().cells.iter().enumerate() {
        let c = if temporal {
            project_temporal(basis, &shots[*iota], *t, 1024, ci as u64, 1e-6).unwrap().c
        } else {
            project_static(basis, &shots[*iota], 1024, 5, 1e-6).unwrap().c
        };
        let pred = evaluate_expansion(basis, &c, &pb.xt, *t).unwrap();
        for s in 0..pb.len() {
            loss += (0..2).map(|d| (pb.u[(s, d)] - pred[(s, d)]).powi(2) / 2.0).sum::<f64>();
            count += 1;
        }
    }
    loss / count as f64
}

/// The flow-matching loss carries the conditional variance of `x₁ − x₀`, which on an arc
/// is most of it, so progress is measured as held-out excess over that floor.
fn excess_halves(train: impl Fn(&[Dataset], &TrainConfig) -> fpfm_core::Result<fpfm_core::basis::TrainOutcome<BasisSet>>, temporal: bool) {
    let data = td_family();
    let untrained = train(&data, &cfg(0)).unwrap().model;
    let out = train(&data, &cfg(1000)).unwrap();
    assert!(out.losses[0].is_finite() && out.losses[0] > 0.0);
    drop(&out.losses);
    let floor = heldout_set().floor;
    let before = heldout_loss(&untrained, temporal, &data);
    let after = heldout_loss(&out.model, temporal, &data);
    eprintln!("held-out {before:.4} -> {after:.4}, floor {floor:.4}");
    assert!(after - floor <= 0.5 * (before - floor));
}

#[test]
fn static_excess_loss_halves_over_training() {
    excess_halves(train_static, false);
}

#[test]
fn temporal_excess_loss_halves_over_training() {
    excess_halves(train_temporal, true);
}

#[test]
fn dynamic_loss_halves_over_training() {
    let dcfg = DynamicConfig { anchor_subsample: 32, ..DynamicConfig::default() };
    let out = train_dynamic(&td_family(), &cfg(1000), &dcfg).unwrap();
    assert!(out.losses[0].is_finite() && out.losses[0] > 0.0);
    let (head, tail) = drop(&out.losses);
    assert!(tail <= 0.5 * head);
}

#[test]
fn training_is_deterministic() {
    let data = td_family();
    let c = cfg(5);
    assert_eq!(train_static(&data, &c).unwrap().model, train_static(&data, &c).unwrap().model);
    assert_eq!(train_temporal(&data, &c).unwrap().model, train_temporal(&data, &c).unwrap().model);
    let d = DynamicConfig::default();
    let (a, b) = (train_dynamic(&data, &c, &d).unwrap(), train_dynamic(&data, &c, &d).unwrap());
    assert_eq!(a.model, b.model);
    assert_eq!(a.losses, b.losses);
}

#[test]
fn too_small_family_is_rejected() {
    let data = td_family();
    assert!(train_static(&data[..1], &cfg(1)).is_err());
    assert!(train_dynamic(&data[..1], &cfg(1), &DynamicConfig::default()).is_err());
}

