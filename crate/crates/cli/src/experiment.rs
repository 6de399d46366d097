//! Train → adapt → generate → evaluate → aggregate.
//!
//! Every random stream is derived from the root seed plus a label naming its role, so
//! adding a method or split never shifts the draws of another.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use fpfm_core::baselines::{
    classifier_guided_field, finetune, train_classifier, train_conditional, train_distribution_guided,
    train_unconditional, Sampler,
};
use fpfm_core::basis::{
    make_projected_field, project_static, train_static, train_temporal, BasisFunctions, ProjectionMode,
    TrainConfig,
};
use fpfm_core::datasets::{make_splits, write_samples_csv, Dataset, Split, Splits, TargetSpec};
use fpfm_core::dynamic::{make_dynamic_field, train_dynamic};
use fpfm_core::flow::{sample_noise, VelocityField};
use fpfm_core::metrics::{
    aggregate, precision_recall, write_aggregate_csv, write_reports_csv, MetricReport, Timing,
};
use fpfm_core::rng;
use fpfm_core::tensor::DenseMatrix;

use crate::checkpoint::{Checkpoint, TrainedModel};
use crate::config::{ExperimentConfig, Reference};
use crate::error::CliError;
use crate::method::{Method, ModelKind};
use crate::svg;

/// Worker count from `FPFM_WORKERS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("FPFM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run jobs on at most `workers` threads; results come back in job order.
pub fn run_pool<T: Send>(jobs: Vec<Box<dyn FnOnce() -> T + Send + '_>>, workers: usize) -> Vec<T> {
    let n = jobs.len();
    let slots: Vec<Mutex<Option<Box<dyn FnOnce() -> T + Send + '_>>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let job = slots[i].lock().expect("job slot").take().expect("job runs once");
                let out = job();
                *results[i].lock().expect("result slot") = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

pub fn splits(cfg: &ExperimentConfig) -> Result<Splits, CliError> {
    Ok(make_splits(cfg.data.n_train_arcs, cfg.data.n_mixtures, cfg.data.split_seed)?)
}

/// One dataset of `shots` samples per training arc.
pub fn training_data(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Dataset>, CliError> {
    let root = rng::derive(seed, "train-data");
    splits(cfg)?
        .targets(Split::Td)
        .iter()
        .enumerate()
        .map(|(i, t)| Ok(t.sample(cfg.data.shots, rng::derive_index(root, i as u64))?))
        .collect()
}

/// Evaluation targets of a split: the first `eval_td` arcs, every mixture, the spiral.
pub fn eval_targets(cfg: &ExperimentConfig, split: Split) -> Result<Vec<TargetSpec>, CliError> {
    let mut t = splits(cfg)?.targets(split);
    if split == Split::Td {
        t.truncate(cfg.data.eval_td);
    }
    Ok(t)
}

fn kind_config(cfg: &ExperimentConfig, kind: ModelKind, seed: u64) -> Result<TrainConfig, CliError> {
    cfg.train_config(rng::derive(seed, kind.name()))
}

pub fn train_model(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    seed: u64,
    data: &[Dataset],
) -> Result<(TrainedModel, Vec<f64>), CliError> {
    let tc = kind_config(cfg, kind, seed)?;
    Ok(match kind {
        ModelKind::StaticBasis => {
            let o = train_static(data, &tc)?;
            (TrainedModel::Basis(kind, o.model), o.losses)
        }
        ModelKind::TemporalBasis => {
            let o = train_temporal(data, &tc)?;
            (TrainedModel::Basis(kind, o.model), o.losses)
        }
        ModelKind::DynamicBasis => {
            let o = train_dynamic(data, &tc, &cfg.dynamic_config()?)?;
            (TrainedModel::Basis(kind, o.model), o.losses)
        }
        ModelKind::Unconditional => {
            let o = train_unconditional(data, &tc)?;
            (TrainedModel::Unconditional(o.model), o.losses)
        }
        ModelKind::Conditional => {
            let codes: Vec<f64> = splits(cfg)?.targets(Split::Td).iter().map(|t| t.conditioning_code()).collect();
            let o = train_conditional(data, &codes, &tc)?;
            (TrainedModel::Conditional(o.model), o.losses)
        }
    })
}

/// What a generation request knows about its target.
pub struct Target<'a> {
    pub shots: Option<&'a Dataset>,
    pub code: f64,
    /// Training datasets that are not the target; negatives for the classifier.
    pub others: &'a [Dataset],
}

fn shots_for<'a>(method: Method, target: &Target<'a>) -> Result<&'a Dataset, CliError> {
    target
        .shots
        .ok_or_else(|| CliError::Usage(format!("method {method} needs a shot set from the target distribution")))
}

fn basis_of(model: &TrainedModel) -> Option<Arc<dyn BasisFunctions>> {
    match model {
        TrainedModel::Basis(_, b) => Some(Arc::new(b.clone()) as Arc<dyn BasisFunctions>),
        _ => None,
    }
}

/// Adapt `model` to the target with `method` and map `noise` to samples.
pub fn adapt_and_generate(
    cfg: &ExperimentConfig,
    method: Method,
    model: &TrainedModel,
    target: &Target<'_>,
    noise: &DenseMatrix,
    seed: u64,
) -> Result<DenseMatrix, CliError> {
    let integ = cfg.integrator()?;
    let mismatch = || {
        CliError::Usage(format!(
            "method {method} cannot run from a {} checkpoint (needs {})",
            model.kind(),
            method.model_kind()
        ))
    };
    let adapt_seed = rng::derive(seed, method.name());
    let ridge = cfg.train.ridge;
    match method {
        Method::Static | Method::Temporal | Method::Dynamic => {
            let basis = basis_of(model).ok_or_else(mismatch)?;
            let shots = shots_for(method, target)?;
            let field: Box<dyn VelocityField> = match method {
                Method::Static => {
                    let cv = project_static(basis.as_ref(), shots, cfg.experiment.m_eval, adapt_seed, ridge)?;
                    make_projected_field(basis, ProjectionMode::Static(&cv))?
                }
                Method::Temporal => make_projected_field(
                    basis,
                    ProjectionMode::Temporal {
                        shots,
                        m_eval: cfg.experiment.m_eval,
                        seed: adapt_seed,
                        ridge,
                    },
                )?,
                _ => Box::new(make_dynamic_field(basis, shots, cfg.dynamic_config()?, ridge)?),
            };
            Ok(field.generate(noise, &integ)?)
        }
        Method::Unconditional => match model {
            TrainedModel::Unconditional(f) => Ok(f.generate(noise, &integ)?),
            _ => Err(mismatch()),
        },
        Method::Conditional => match model {
            TrainedModel::Conditional(c) => Ok(c.bind(target.code)?.generate(noise, &integ)?),
            _ => Err(mismatch()),
        },
        Method::Finetune | Method::ClassifierGuided | Method::DistributionGuided => {
            let TrainedModel::Unconditional(base) = model else {
                return Err(mismatch());
            };
            let shots = shots_for(method, target)?;
            let mut tc = cfg.train_config(adapt_seed)?;
            tc.gradient_steps = cfg.experiment.finetune_steps;
            match method {
                Method::Finetune => Ok(finetune(base, shots, &tc)?.model.generate(noise, &integ)?),
                Method::ClassifierGuided => {
                    if target.others.is_empty() {
                        return Err(CliError::Usage("classifier guidance needs negative datasets".into()));
                    }
                    let clf = train_classifier(shots, target.others, &cfg.classifier_config(adapt_seed))?.model;
                    let base: Arc<dyn VelocityField> = Arc::new(base.clone());
                    Ok(classifier_guided_field(base, clf, cfg.guidance())?.generate(noise, &integ)?)
                }
                _ => {
                    let base: Arc<dyn VelocityField> = Arc::new(base.clone());
                    let dg = train_distribution_guided(base, shots, &tc, &cfg.backward_integrator()?)?;
                    Ok(dg.model.generate(noise, &integ)?)
                }
            }
        }
    }
}

/// Everything one evaluation target needs, drawn deterministically from the seed.
pub struct TargetDraw {
    pub spec: TargetSpec,
    pub shots: Dataset,
    pub reference: Dataset,
    pub noise: DenseMatrix,
    pub others: Vec<Dataset>,
}

pub fn draw_target(
    cfg: &ExperimentConfig,
    split: Split,
    index: usize,
    spec: TargetSpec,
    seed: u64,
    training: &[Dataset],
) -> Result<TargetDraw, CliError> {
    let label = format!("{split}/{index}");
    let shots = spec.sample(cfg.data.shots, rng::derive(rng::derive(seed, "shots"), &label))?;
    let reference = match cfg.reference()? {
        Reference::Shots => shots.clone(),
        Reference::Fresh => spec.sample(cfg.data.m_gen, rng::derive(rng::derive(seed, "reference"), &label))?,
    };
    let noise = sample_noise(cfg.data.m_gen, shots.dim(), rng::derive(rng::derive(seed, "noise"), &label));
    let others = training
        .iter()
        .enumerate()
        .filter(|(i, _)| !(split == Split::Td && *i == index))
        .map(|(_, d)| d.clone())
        .collect();
    Ok(TargetDraw {
        spec,
        shots,
        reference,
        noise,
        others,
    })
}

/// Generated samples and the seconds spent adapting and integrating.
pub fn generate_timed(
    cfg: &ExperimentConfig,
    method: Method,
    model: &TrainedModel,
    draw: &TargetDraw,
    seed: u64,
) -> Result<(DenseMatrix, f64), CliError> {
    let target = Target {
        shots: Some(&draw.shots),
        code: draw.spec.conditioning_code(),
        others: &draw.others,
    };
    let mut runs = Vec::with_capacity(cfg.experiment.timing_repeats);
    let mut samples = None;
    for _ in 0..cfg.experiment.timing_repeats {
        let start = Instant::now();
        samples = Some(adapt_and_generate(cfg, method, model, &target, &draw.noise, seed)?);
        runs.push(start.elapsed().as_secs_f64());
    }
    Ok((samples.expect("timing_repeats >= 1"), Timing::from_runs(runs).mean))
}

/// One (method, split, seed) cell: metrics averaged over the split's targets.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    method: Method,
    split: Split,
    seed: u64,
    model: &TrainedModel,
    training: &[Dataset],
    svg_dir: Option<&Path>,
) -> Result<MetricReport, CliError> {
    let targets = eval_targets(cfg, split)?;
    if targets.is_empty() {
        return Err(CliError::Config(format!("split {split} has no evaluation targets")));
    }
    let (mut p, mut r, mut secs, mut n_real, mut n_gen) = (0.0, 0.0, 0.0, 0, 0);
    for (i, spec) in targets.iter().enumerate() {
        let draw = draw_target(cfg, split, i, *spec, seed, training)?;
        let (samples, s) = generate_timed(cfg, method, model, &draw, seed)?;
        let (pi, ri) = precision_recall(&draw.reference.samples, &samples, cfg.experiment.kappa)?;
        if let Some(dir) = svg_dir {
            let name = format!("{method}_{split}_{seed}_{i}.svg");
            let title = format!("{method} {split} seed {seed} target {i}: P={pi:.3} R={ri:.3}");
            std::fs::write(dir.join(name), svg::scatter(&draw.shots.samples, &samples, &title))?;
        }
        p += pi;
        r += ri;
        secs += s;
        n_real += draw.reference.len();
        n_gen += samples.rows();
    }
    let m = targets.len() as f64;
    Ok(MetricReport {
        method: method.name().to_string(),
        split,
        seed,
        precision: p / m,
        recall: r / m,
        gen_seconds: secs / m,
        n_real,
        n_generated: n_gen,
        failure: None,
    })
}

pub struct BenchmarkOutput {
    pub reports: Vec<MetricReport>,
    /// Trained models keyed by kind and seed, for reuse and inspection.
    pub models: BTreeMap<(ModelKind, u64), TrainedModel>,
}

impl BenchmarkOutput {
    pub fn succeeded(&self) -> usize {
        self.reports.iter().filter(|r| !r.is_failed()).count()
    }
}

/// Train every needed model for every seed, then evaluate every cell. Failures are
/// confined to the cells that depend on them.
pub fn run_benchmark(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<BenchmarkOutput, CliError> {
    cfg.validate()?;
    let methods = cfg.methods()?;
    let split_list = cfg.splits()?;
    let seeds = cfg.experiment.seeds.clone();
    let workers = worker_count();

    let mut data = BTreeMap::new();
    for &seed in &seeds {
        data.insert(seed, training_data(cfg, seed)?);
    }
    let mut kinds: Vec<ModelKind> = methods.iter().map(|m| m.model_kind()).collect();
    kinds.sort();
    kinds.dedup();

    let train_keys: Vec<(ModelKind, u64)> = seeds.iter().flat_map(|&s| kinds.iter().map(move |&k| (k, s))).collect();
    let jobs: Vec<Box<dyn FnOnce() -> Result<(TrainedModel, Vec<f64>), CliError> + Send + '_>> = train_keys
        .iter()
        .map(|&(kind, seed)| {
            let d = &data[&seed];
            Box::new(move || train_model(cfg, kind, seed, d)) as Box<dyn FnOnce() -> _ + Send + '_>
        })
        .collect();
    let trained = run_pool(jobs, workers);

    let ck_dir = out.map(|o| o.join("checkpoints"));
    if let Some(d) = &ck_dir {
        std::fs::create_dir_all(d)?;
    }
    let mut models = BTreeMap::new();
    let mut train_errors = BTreeMap::new();
    for (&(kind, seed), res) in train_keys.iter().zip(trained) {
        match res {
            Ok((model, losses)) => {
                if let Some(d) = &ck_dir {
                    let ck = Checkpoint {
                        model: model.clone(),
                        config: cfg.to_toml(),
                        seed,
                    };
                    ck.save(&d.join(format!("{kind}_seed{seed}.fpfm")))?;
                    write_losses(&d.join(format!("{kind}_seed{seed}_log.csv")), &losses)?;
                }
                models.insert((kind, seed), model);
            }
            Err(e) => {
                train_errors.insert((kind, seed), e.to_string());
            }
        }
    }

    let svg_dir = match (out, cfg.experiment.svg) {
        (Some(o), true) => {
            let d = o.join("svg");
            std::fs::create_dir_all(&d)?;
            Some(d)
        }
        _ => None,
    };
    let mut cells: Vec<(Method, Split, u64)> = Vec::new();
    for &s in &seeds {
        for &m in &methods {
            for &sp in &split_list {
                cells.push((m, sp, s));
            }
        }
    }
    let models_ref = &models;
    let errors_ref = &train_errors;
    let data_ref = &data;
    let svg_ref = svg_dir.as_deref();
    let jobs: Vec<Box<dyn FnOnce() -> MetricReport + Send + '_>> = cells
        .iter()
        .map(|&(method, split, seed)| {
            Box::new(move || {
                let key = (method.model_kind(), seed);
                match models_ref.get(&key) {
                    Some(model) => evaluate_cell(cfg, method, split, seed, model, &data_ref[&seed], svg_ref)
                        .unwrap_or_else(|e| MetricReport::failed(method.name(), split, seed, e.to_string())),
                    None => MetricReport::failed(
                        method.name(),
                        split,
                        seed,
                        format!("training failed: {}", errors_ref.get(&key).map_or("unknown", |s| s.as_str())),
                    ),
                }
            }) as Box<dyn FnOnce() -> MetricReport + Send + '_>
        })
        .collect();
    let reports = run_pool(jobs, workers);

    if let Some(o) = out {
        write_outputs(o, &reports)?;
    }
    Ok(BenchmarkOutput { reports, models })
}

pub fn write_losses(path: &Path, losses: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), fpfm_core::datasets::format_f64(*l)])?;
    }
    w.flush()?;
    Ok(())
}

/// `reports.csv`, `aggregate.csv` and, for failed cells, `failures.txt`.
pub fn write_outputs(out: &Path, reports: &[MetricReport]) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    write_reports_csv(reports, std::fs::File::create(out.join("reports.csv"))?)?;
    write_aggregate_csv(&aggregate(reports), std::fs::File::create(out.join("aggregate.csv"))?)?;
    let failures: Vec<String> = reports
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| format!("{} {} seed {}: {f}", r.method, r.split, r.seed)))
        .collect();
    if !failures.is_empty() {
        std::fs::write(out.join("failures.txt"), failures.join("\n") + "\n")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Shots,
    BasisCount,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shots" => Some(SweepAxis::Shots),
            "basis_count" | "k" => Some(SweepAxis::BasisCount),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Shots => "shots",
            SweepAxis::BasisCount => "basis_count",
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::Shots => c.data.shots = value,
            SweepAxis::BasisCount => c.train.k = value,
        }
        c
    }
}

/// One benchmark per value; rows tagged with the value.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
    out: Option<&Path>,
) -> Result<Vec<(usize, MetricReport)>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &v in values {
        let c = axis.apply(cfg, v);
        let sub = out.map(|o| o.join(format!("{}={v}", axis.name())));
        let res = run_benchmark(&c, sub.as_deref())?;
        rows.extend(res.reports.into_iter().map(|r| (v, r)));
    }
    if let Some(o) = out {
        write_sweep_csv(&o.join("sweep.csv"), axis, &rows)?;
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, axis: SweepAxis, rows: &[(usize, MetricReport)]) -> Result<(), CliError> {
    let mut by_value: BTreeMap<usize, Vec<MetricReport>> = BTreeMap::new();
    for (v, r) in rows {
        by_value.entry(*v).or_default().push(r.clone());
    }
    let mut out = String::new();
    let mut header_done = false;
    for (v, reports) in by_value {
        let mut buf = Vec::new();
        write_reports_csv(&reports, &mut buf)?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if !header_done {
            out.push_str(&format!("{},{header}\n", axis.name()));
            header_done = true;
        }
        for l in lines {
            out.push_str(&format!("{v},{l}\n"));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Samples CSV with header `x0,x1,…`.
pub fn write_samples(path: &Path, samples: &DenseMatrix) -> Result<(), CliError> {
    let f = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_samples_csv(samples, f)?;
    Ok(())
}
