use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cruot::data_io::{eval_report_from_document, parse_document};

fn cruot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cruot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small toy dataset plus a run config next to it.
fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = cruot(&[
        "toy",
        "--seed",
        "3",
        "--n-source",
        "30",
        "--n-target",
        "24",
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "source_path = \"data/source.csv\"\ntarget_path = \"data/target.csv\"\n\
             label_column = \"component\"\nlambda = 1.0\nknn_k = 3\noutput_dir = \"out\"\n\
             {extra}\n[solve]\nepsilon = 0.1\nstandardize = true\n"
        ),
    )
    .unwrap();
    (dir, cfg)
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn toy_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for (d, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        let out = cruot(&[
            "toy",
            "--seed",
            seed,
            "--n-source",
            "50",
            "--n-target",
            "60",
            "--out",
            s(d),
        ]);
        assert_eq!(code(&out), 0);
    }
    for f in ["source.csv", "target.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_ne!(
        fs::read(a.join("source.csv")).unwrap(),
        fs::read(c.join("source.csv")).unwrap()
    );
    assert_eq!(data_rows(&a.join("source.csv")), 50);
    assert_eq!(data_rows(&a.join("target.csv")), 60);
}

#[test]
fn toy_target_is_mostly_ellipse() {
    let dir = tempfile::tempdir().unwrap();
    let out = cruot(&[
        "toy",
        "--seed",
        "1",
        "--n-source",
        "10",
        "--n-target",
        "1000",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("target.csv")).unwrap();
    let ellipse = text.lines().filter(|l| l.ends_with(",ellipse")).count();
    // binomial(1000, 0.85), sd ~ 11.3
    assert!((ellipse as i64 - 850).abs() <= 45, "{ellipse}");
}

#[test]
fn toy_with_no_source_points_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = cruot(&["toy", "--n-source", "0", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset"));
}

#[test]
fn solve_writes_artifacts() {
    let (dir, cfg) = setup("");
    let out = cruot(&["solve", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let doc = parse_document(&fs::read_to_string(o.join("report.txt")).unwrap()).unwrap();
    assert_eq!(doc["converged"], "true");
    let iters: usize = doc["outer_iters"].parse().unwrap();
    assert_eq!(data_rows(&o.join("trace.tsv")), iters);
    // q = 2 rows of M over p = 3 input coordinates
    let m = fs::read_to_string(o.join("cost_map.tsv")).unwrap();
    assert_eq!(m.lines().next().unwrap(), "in_0\tin_1\tin_2");
    assert_eq!(m.lines().count(), 3);
    assert!(o.join("plan_summary.txt").is_file());
}

#[test]
fn missing_input_names_the_path() {
    let (dir, cfg) = setup("");
    fs::remove_file(dir.path().join("data/target.csv")).unwrap();
    let out = cruot(&["solve", "--config", s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("target.csv"));

    let out = cruot(&["solve", "--config", s(&dir.path().join("nope.toml"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn bad_config_exits_with_one() {
    let (dir, _) = setup("");
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "source_path = \"a\"\ntarget_path = \"b\"\nlambda = \"lots\"\n",
    )
    .unwrap();
    assert_eq!(code(&cruot(&["solve", "--config", s(&cfg)])), 1);
}

#[test]
fn single_outer_iteration_is_reported_as_not_converged() {
    let (dir, cfg) = setup("");
    let text = fs::read_to_string(&cfg).unwrap() + "max_outer_iters = 1\n";
    fs::write(&cfg, text).unwrap();
    let out = cruot(&["solve", "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    assert_eq!(data_rows(&dir.path().join("out/trace.tsv")), 1);
}

#[test]
fn map_eval_writes_report_and_alignment() {
    let (dir, cfg) = setup("");
    let alt = dir.path().join("elsewhere");
    let out = cruot(&["map-eval", "--config", s(&cfg), "--out", s(&alt)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = parse_document(&fs::read_to_string(alt.join("report.txt")).unwrap()).unwrap();
    let report = eval_report_from_document(&doc).unwrap();
    assert!((0.0..=1.0).contains(&report.lta));
    assert_eq!(report.n_source_eval, 30);
    assert_eq!(report.k, 3);
    assert_eq!(doc["config.lambda"], "1");
    assert_eq!(doc["map_converged"], "true");
    let aligned = fs::read_to_string(alt.join("aligned.tsv")).unwrap();
    assert_eq!(aligned.lines().next().unwrap(), "dim_0\tdim_1\tlabel");
    assert_eq!(aligned.lines().count(), 31);
}

#[test]
fn runs_are_bit_identical() {
    let (dir, cfg) = setup("");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        assert_eq!(
            code(&cruot(&["map-eval", "--config", s(&cfg), "--out", s(o)])),
            0
        );
    }
    for f in [
        "report.txt",
        "aligned.tsv",
        "trace.tsv",
        "cost_map.tsv",
        "plan_summary.txt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn singleton_lambda_grid_gives_one_row() {
    let (dir, cfg) = setup("");
    let out = cruot(&["sweep", "--config", s(&cfg), "--lambda-grid", "inf"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("out/summary.tsv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("inf\t"));
    assert!(dir.path().join("out/lambda_inf/report.txt").is_file());
}

#[test]
fn lambda_grid_writes_one_directory_per_point() {
    let (dir, cfg) = setup("");
    let out = cruot(&["sweep", "--config", s(&cfg), "--lambda-grid", "inf,2,1"]);
    assert_eq!(code(&out), 0);
    for d in ["lambda_inf", "lambda_2", "lambda_1"] {
        assert!(
            dir.path().join("out").join(d).join("aligned.tsv").is_file(),
            "{d}"
        );
    }
    assert_eq!(data_rows(&dir.path().join("out/summary.tsv")), 3);
}

#[test]
fn epsilon_grid_reports_stripped_values() {
    let (dir, cfg) = setup("");
    let out = cruot(&[
        "sweep",
        "--config",
        s(&cfg),
        "--epsilon-grid",
        "0.4,0.2,0.1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("out/summary.tsv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("epsilon\tstripped_value"));
    for line in lines {
        let v: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!(v.is_finite());
    }
    let bad = cruot(&["sweep", "--config", s(&cfg), "--epsilon-grid", "0.1,0.2"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn subsample_applies_per_side_schemes() {
    let (dir, cfg) = setup(
        "[subsample.source]\nseed = 2\nper_label_rates = { ellipsoid_a = 0.5 }\n\
         [subsample.target]\nseed = 2\ndefault_rate = 0.5\n",
    );
    let out = cruot(&["subsample", "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let count = |file: &str, label: &str| {
        fs::read_to_string(dir.path().join(file))
            .unwrap()
            .lines()
            .filter(|l| l.ends_with(&format!(",{label}")))
            .count()
    };
    let n_a = count("data/source.csv", "ellipsoid_a");
    let n_b = count("data/source.csv", "ellipsoid_b");
    assert_eq!(
        count("out/source.csv", "ellipsoid_a"),
        ((n_a as f64) * 0.5).round() as usize
    );
    assert_eq!(count("out/source.csv", "ellipsoid_b"), n_b);
    assert!(data_rows(&dir.path().join("out/target.csv")) < 24);
}
