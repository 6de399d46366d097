use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpfm_cli::checkpoint::Checkpoint;
use fpfm_core::datasets::{load_dataset_csv, Split};

const TINY: &str = r#"
[train]
gradient_steps = 50
batch_size = 64
k = 4
hidden_width = 16
distributions_per_step = 2

[integrator]
steps = 10
backward_steps = 20

[guidance]
classifier_steps = 20

[data]
n_train_arcs = 4
n_mixtures = 1
shots = 60
m_gen = 60
eval_td = 1

[experiment]
methods = ["static", "temporal", "dynamic"]
seeds = [0]
m_eval = 64
finetune_steps = 10
svg = false
"#;

fn fpfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpfm")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_static(dir: &Path, out: &str, seed: &str) -> PathBuf {
    let cfg = write_config(dir, TINY);
    let out = dir.join(out);
    let o = fpfm(&["train", "--config", s(&cfg), "--out", s(&out), "--seed", seed, "--method", "static"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("static-basis.fpfm")
}

#[test]
fn train_writes_loadable_reproducible_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_static(dir.path(), "a", "3");
    let first = std::fs::read(&a).unwrap();
    let ck = Checkpoint::load(&a).unwrap();
    assert_eq!(ck.seed, 3);
    let again = train_static(dir.path(), "a", "3");
    assert_eq!(first, std::fs::read(again).unwrap());
    let log = std::fs::read_to_string(a.with_file_name("static-basis_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss"));
    assert_eq!(log.lines().count(), 51);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\ngradient_stepz = 3\n");
    let o = fpfm(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gradient_stepz"), "{}", stderr(&o));
}

#[test]
fn generate_contract() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_static(dir.path(), "m", "0");
    let ck = s(&ck);

    let empty = dir.path().join("empty.csv");
    let o = fpfm(&["generate", "--checkpoint", ck, "--split", "TD", "--m-out", "0", "--out", s(&empty)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&empty).unwrap(), "x0,x1\n");

    let o = fpfm(&["generate", "--checkpoint", ck, "--out", s(&empty)]);
    assert_eq!(code(&o), 2);

    let shots = dir.path().join("shots.csv");
    fpfm_core::datasets::sample_arc(&fpfm_core::datasets::ArcSpec::new(0.5), 80, 1)
        .unwrap()
        .save_csv(&shots)
        .unwrap();
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let svg = p.with_extension("svg");
        let o = fpfm(&[
            "generate", "--checkpoint", ck, "--shots", s(&shots), "--m-out", "40", "--seed", seed, "--out", s(&p),
            "--svg", s(&svg),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(std::fs::read_to_string(svg).unwrap().contains("<svg"));
        std::fs::read(&p).unwrap()
    };
    let first = run("g1.csv", "7");
    assert_eq!(first, run("g2.csv", "7"));
    assert_ne!(first, run("g3.csv", "8"));
    let back = load_dataset_csv(&dir.path().join("g1.csv"), Split::Td).unwrap();
    assert_eq!(back.len(), 40);
}

#[test]
fn loaded_checkpoints_generate_identically_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_static(dir.path(), "a", "1");
    let b = train_static(dir.path(), "b", "1");
    let gen = |ck: &Path, out: &str| {
        let p = dir.path().join(out);
        let o = fpfm(&["generate", "--checkpoint", s(ck), "--split", "UD", "--m-out", "30", "--out", s(&p)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(p).unwrap()
    };
    assert_eq!(gen(&a, "a.csv"), gen(&b, "b.csv"));
}

#[test]
fn bad_checkpoints_are_rejected_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.fpfm");
    std::fs::write(&junk, b"hello world").unwrap();
    let out = dir.path().join("o.csv");
    let o = fpfm(&["generate", "--checkpoint", s(&junk), "--split", "TD", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("not an FPFM checkpoint"));

    let good = train_static(dir.path(), "m", "0");
    let bytes = std::fs::read(&good).unwrap();
    let cut = dir.path().join("cut.fpfm");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = fpfm(&["generate", "--checkpoint", s(&cut), "--split", "TD", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
}

fn write_points(path: &Path, rows: &[(f64, f64)]) {
    let mut text = String::from("x0,x1\n");
    for (a, b) in rows {
        text.push_str(&format!("{a},{b}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn circle(m: usize, radius: f64, phase: f64) -> Vec<(f64, f64)> {
    (0..m)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / m as f64;
            (radius * a.cos(), radius * a.sin())
        })
        .collect()
}

#[test]
fn eval_appends_rows() {
    let dir = tempfile::tempdir().unwrap();
    let real = dir.path().join("real.csv");
    let far = dir.path().join("far.csv");
    let half = dir.path().join("half.csv");
    write_points(&real, &circle(100, 1.0, 0.0));
    write_points(&far, &circle(100, 1.0, 0.0).into_iter().map(|(a, b)| (a + 1e6, b)).collect::<Vec<_>>());
    let mut h = circle(50, 1.0, 0.01);
    h.extend(circle(50, 100.0, 0.0));
    write_points(&half, &h);
    let report = dir.path().join("report.csv");
    for (gen, method) in [(&real, "same"), (&far, "far"), (&half, "half")] {
        let o = fpfm(&["eval", "--real", s(&real), "--generated", s(gen), "--method", method, "--out", s(&report)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,split,seed,precision,recall,gen_seconds");
    assert_eq!(lines.len(), 4);
    let metrics = |line: &str| -> (f64, f64) {
        let f: Vec<&str> = line.split(',').collect();
        (f[3].parse().unwrap(), f[4].parse().unwrap())
    };
    assert_eq!(metrics(lines[1]), (1.0, 1.0));
    assert_eq!(metrics(lines[2]), (0.0, 0.0));
    // points on the same circle with the same spacing all land inside; the far ring never does
    let (p, _) = metrics(lines[3]);
    assert_eq!(p, 0.5);

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "x0,x1\n1.0,oops\n").unwrap();
    let o = fpfm(&["eval", "--real", s(&real), "--generated", s(&broken)]);
    assert_eq!(code(&o), 2);
}

fn bench_config(dir: &Path, methods: &str, seeds: &str) -> PathBuf {
    let body = TINY
        .replace(r#"methods = ["static", "temporal", "dynamic"]"#, &format!("methods = {methods}"))
        .replace("seeds = [0]", &format!("seeds = {seeds}"));
    write_config(dir, &body)
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn benchmark_row_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config(dir.path(), r#"["unconditional"]"#, "[0]");
    let out = dir.path().join("b");
    let o = fpfm(&["benchmark", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("aggregate.csv"));
    assert_eq!(rows.len(), 4);
    let splits: Vec<&str> = rows[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(splits, ["TD", "UD", "US"]);
    assert!(out.join("checkpoints").join("unconditional_seed0.fpfm").exists());

    let cfg = bench_config(dir.path(), r#"["static", "unconditional"]"#, "[4, 0, 2, 1, 3]");
    let out5 = dir.path().join("b5");
    let o = fpfm(&["benchmark", "--config", s(&cfg), "--out", s(&out5)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let agg = read_csv(&out5.join("aggregate.csv"));
    let std_col = agg[0].iter().position(|h| h == "precision_std").unwrap();
    assert!(agg[1..].iter().all(|r| r[2] == "5"));
    assert!(agg[1..].iter().any(|r| r[std_col].parse::<f64>().unwrap() > 0.0));
    let reports = read_csv(&out5.join("reports.csv"));
    let keys: Vec<(String, String, u64)> = reports[1..].iter().map(|r| (r[0].clone(), r[1].clone(), r[2].parse().unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn sweep_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config(dir.path(), r#"["static"]"#, "[0]");
    let o = fpfm(&["sweep", "--config", s(&cfg), "--axis", "shots", "--out", s(&dir.path().join("none"))]);
    assert_eq!(code(&o), 2);
    let o = fpfm(&["sweep", "--config", s(&cfg), "--axis", "colour", "--values", "3"]);
    assert_eq!(code(&o), 2);

    let sweep_out = dir.path().join("sw");
    let o = fpfm(&["sweep", "--config", s(&cfg), "--axis", "shots", "--values", "60", "--out", s(&sweep_out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bench_out = dir.path().join("bench");
    let o = fpfm(&["benchmark", "--config", s(&cfg), "--out", s(&bench_out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let sweep = read_csv(&sweep_out.join("sweep.csv"));
    let bench = read_csv(&bench_out.join("reports.csv"));
    assert_eq!(sweep[0][0], "shots");
    assert_eq!(sweep.len(), bench.len());
    for (a, b) in sweep.iter().zip(&bench) {
        // wall-clock time is the only column allowed to differ
        assert_eq!(a[1..a.len() - 1], b[..b.len() - 1]);
    }
}
