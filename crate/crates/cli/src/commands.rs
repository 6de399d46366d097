use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fpfm_core::datasets::{circular_mean, angle_of, load_dataset_csv, Dataset, Split};
use fpfm_core::flow::sample_noise;
use fpfm_core::metrics::{precision_recall, write_reports_csv, MetricReport, REPORT_HEADER};
use fpfm_core::rng;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::{
    adapt_and_generate, draw_target, eval_targets, run_benchmark, run_sweep, train_model, training_data,
    write_losses, write_samples, SweepAxis, Target,
};
use crate::method::{Method, ModelKind};
use crate::svg;

#[derive(Debug, Parser)]
#[command(name = "fpfm", version, about = "Function projection for flow matching on the 2D Arcs benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML configuration file; defaults apply to anything it omits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed (overrides the configured seed list).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the models needed by the configured methods and write checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Restrict to these methods (repeatable).
        #[arg(long = "method")]
        methods: Vec<String>,
    },
    /// Adapt a checkpoint to a shot set and write generated samples.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train` or `benchmark`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Generation method; defaults to the checkpoint's own.
        #[arg(long)]
        method: Option<String>,
        /// CSV of target samples.
        #[arg(long)]
        shots: Option<PathBuf>,
        /// Draw shots from a benchmark split instead (TD, UD or US).
        #[arg(long)]
        split: Option<String>,
        /// Target index within the split.
        #[arg(long, default_value_t = 0)]
        target: usize,
        /// Number of samples to generate
        #[arg(long, default_value_t = 1000)]
        m_out: usize,
        /// Conditioning angle for the conditional baseline.
        #[arg(long)]
        code: Option<f64>,
        /// Also write a scatter plot here.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Precision and recall of generated samples against real ones; appends one row.
    Eval {
        #[command(flatten)]
        common: Common,
        /// CSV of real samples
        #[arg(long)]
        real: PathBuf,
        /// CSV of generated samples
        #[arg(long)]
        generated: PathBuf,
        /// Neighbour rank for the manifold radii; defaults to the configured kappa
        #[arg(long)]
        kappa: Option<usize>,
        #[arg(long, default_value = "eval")]
        method: String,
        #[arg(long, default_value = "TD")]
        split: String,
    },
    /// Every configured method on every split and seed; writes reports and aggregates.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// One benchmark per value of a shots or basis-count axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `shots` or `basis_count`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.experiment.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.experiment.out = o.display().to_string();
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, methods } => cmd_train(&common, &methods),
        Command::Generate {
            common,
            checkpoint,
            method,
            shots,
            split,
            target,
            m_out,
            code,
            svg,
        } => cmd_generate(&common, &checkpoint, method.as_deref(), shots.as_deref(), split.as_deref(), target, m_out, code, svg.as_deref()),
        Command::Eval {
            common,
            real,
            generated,
            kappa,
            method,
            split,
        } => cmd_eval(&common, &real, &generated, kappa, &method, &split),
        Command::Benchmark { common } => cmd_benchmark(&common),
        Command::Sweep { common, axis, values } => cmd_sweep(&common, &axis, &values),
    }
}

fn cmd_train(common: &Common, methods: &[String]) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if !methods.is_empty() {
        cfg.experiment.methods = methods.to_vec();
        cfg.validate()?;
    }
    let seed = cfg.experiment.seeds[0];
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)?;
    let data = training_data(&cfg, seed)?;
    let mut kinds: Vec<ModelKind> = cfg.methods()?.iter().map(|m| m.model_kind()).collect();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        let (model, losses) = train_model(&cfg, kind, seed, &data).map_err(|e| match e {
            CliError::Core(c) if c.is_numerical() => CliError::Numerical(format!("training {kind}: {c}")),
            other => other,
        })?;
        let path = out.join(format!("{kind}.fpfm"));
        Checkpoint {
            model,
            config: cfg.to_toml(),
            seed,
        }
        .save(&path)?;
        write_losses(&out.join(format!("{kind}_log.csv")), &losses)?;
        println!(
            "{kind}: {} steps, final loss {:.6e} -> {}",
            losses.len(),
            losses.last().copied().unwrap_or(f64::NAN),
            path.display()
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    common: &Common,
    checkpoint: &Path,
    method: Option<&str>,
    shots_path: Option<&Path>,
    split: Option<&str>,
    target_index: usize,
    m_out: usize,
    code: Option<f64>,
    svg_path: Option<&Path>,
) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_toml(&ck.config)?,
    };
    cfg.data.m_gen = m_out;
    let seed = common.seed.unwrap_or(ck.seed);
    let method = match method {
        Some(m) => Method::parse(m).ok_or_else(|| CliError::Usage(format!("unknown method {m:?}")))?,
        None => ck.model.kind().default_method(),
    };
    if method.model_kind() != ck.model.kind() {
        return Err(CliError::Usage(format!(
            "method {method} needs a {} checkpoint, got {}",
            method.model_kind(),
            ck.model.kind()
        )));
    }
    let out = common
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("generate needs --out for the samples CSV".into()))?;

    let training = training_data(&cfg, ck.seed)?;
    let (shots, spec_code, others): (Option<Dataset>, Option<f64>, Vec<Dataset>) = match (shots_path, split) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --shots or --split, not both".into())),
        (Some(p), None) => {
            let d = load_dataset_csv(p, Split::Td).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            (Some(d), None, training.clone())
        }
        (None, Some(s)) => {
            let split = Split::parse(s).ok_or_else(|| CliError::Usage(format!("unknown split {s:?}")))?;
            let specs = eval_targets(&cfg, split)?;
            let spec = *specs.get(target_index).ok_or_else(|| {
                CliError::Usage(format!("split {split} has {} targets, index {target_index} requested", specs.len()))
            })?;
            let draw = draw_target(&cfg, split, target_index, spec, seed, &training)?;
            (Some(draw.shots), Some(spec.conditioning_code()), draw.others)
        }
        (None, None) => (None, None, training.clone()),
    };
    if method.needs_shots() && shots.is_none() {
        return Err(CliError::Usage(format!("method {method} needs target samples: pass --shots or --split")));
    }
    if let Some(s) = &shots {
        if s.dim() != 2 {
            return Err(CliError::Usage(format!("shots must be 2-dimensional, got {}", s.dim())));
        }
    }
    let code = code.or(spec_code).unwrap_or_else(|| match &shots {
        Some(s) => circular_mean(&s.samples.row_iter().map(angle_of).collect::<Vec<_>>()),
        None => 0.0,
    });

    let samples = if m_out == 0 {
        fpfm_core::tensor::DenseMatrix::zeros(0, 2)
    } else {
        let noise = sample_noise(m_out, 2, rng::derive(seed, "generate-noise"));
        let target = Target {
            shots: shots.as_ref(),
            code,
            others: &others,
        };
        adapt_and_generate(&cfg, method, &ck.model, &target, &noise, seed).map_err(|e| match e {
            CliError::Core(c) if c.is_numerical() => CliError::Numerical(c.to_string()),
            other => other,
        })?
    };
    write_samples(&out, &samples)?;
    if let Some(p) = svg_path {
        let empty = fpfm_core::tensor::DenseMatrix::zeros(0, 2);
        let t = shots.as_ref().map_or(&empty, |s| &s.samples);
        std::fs::write(p, svg::scatter(t, &samples, &format!("{method}")))?;
    }
    println!("{} samples from {method} -> {}", samples.rows(), out.display());
    Ok(())
}

fn cmd_eval(common: &Common, real: &Path, generated: &Path, kappa: Option<usize>, method: &str, split: &str) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let kappa = kappa.unwrap_or(cfg.experiment.kappa);
    let split = Split::parse(split).ok_or_else(|| CliError::Usage(format!("unknown split {split:?}")))?;
    let load = |p: &Path| load_dataset_csv(p, split).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())));
    let (r, g) = (load(real)?, load(generated)?);
    let (precision, recall) = precision_recall(&r.samples, &g.samples, kappa).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = MetricReport {
        method: method.to_string(),
        split,
        seed: common.seed.unwrap_or(0),
        precision,
        recall,
        gen_seconds: 0.0,
        n_real: r.len(),
        n_generated: g.len(),
        failure: None,
    };
    println!("precision {precision:.4} recall {recall:.4}");
    let Some(out) = &common.out else {
        return Ok(());
    };
    let mut buf = Vec::new();
    write_reports_csv(std::slice::from_ref(&report), &mut buf)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    let exists = out.exists() && std::fs::metadata(out)?.len() > 0;
    if exists {
        let first = std::fs::read_to_string(out)?.lines().next().unwrap_or_default().to_string();
        if first != REPORT_HEADER.join(",") {
            return Err(CliError::Usage(format!("{} is not a report CSV", out.display())));
        }
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(out)?;
    let body = if exists { text.lines().skip(1).map(|l| format!("{l}\n")).collect() } else { text };
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn cmd_benchmark(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let out = cfg.out_dir();
    let res = run_benchmark(&cfg, Some(&out))?;
    summarize(&res.reports);
    if res.succeeded() == 0 {
        return Err(CliError::Numerical("every benchmark cell failed; see failures.txt".into()));
    }
    println!("reports -> {}", out.join("reports.csv").display());
    Ok(())
}

fn cmd_sweep(common: &Common, axis: &str, values: &[usize]) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let axis = SweepAxis::parse(axis)
        .ok_or_else(|| CliError::Usage(format!("unknown sweep axis {axis:?}; expected shots or basis_count")))?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value in --values".into()));
    }
    if values.contains(&0) {
        return Err(CliError::Usage("sweep values must be positive".into()));
    }
    let out = cfg.out_dir();
    let rows = run_sweep(&cfg, axis, values, Some(&out))?;
    if rows.iter().all(|(_, r)| r.is_failed()) {
        return Err(CliError::Numerical("every sweep cell failed".into()));
    }
    println!("sweep -> {}", out.join("sweep.csv").display());
    Ok(())
}

fn summarize(reports: &[MetricReport]) {
    for r in reports {
        match &r.failure {
            None => println!(
                "{:<20} {} seed {:<3} precision {:.3} recall {:.3} time {:.3}s",
                r.method, r.split, r.seed, r.precision, r.recall, r.gen_seconds
            ),
            Some(f) => println!("{:<20} {} seed {:<3} FAILED: {f}", r.method, r.split, r.seed),
        }
    }
}
