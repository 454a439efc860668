mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use lcprune::feature_store::{write_pack, LayerMatrix, Matrix, Split};
use lcprune::knn_scoring::tune_k;
use lcprune::{load_pack, FeaturePack, KnnConfig, ScoreVector, SelectionResult};
use rand::Rng;
use serde_json::Value;

fn lcprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcprune"))
        .args(args)
        .env("LCPRUNE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = lcprune(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    lcprune(args).status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, seed: &str, n: &str, val_n: &str) {
    ok(&[
        "synth",
        "--seed",
        seed,
        "--n",
        n,
        "--val-n",
        val_n,
        "--k",
        "10",
        "--out",
        p(dir),
    ]);
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["score"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(
        code(&[
            "select",
            "--method",
            "lc",
            "--train",
            "x",
            "--eta",
            "0.1",
            "--eta-list",
            "0.2",
            "--out",
            "y"
        ]),
        2
    );
}

#[test]
fn score_lc_tunes_k_on_validation() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3", "300", "100");
    let csv = dir.path().join("scores.csv");
    ok(&[
        "score",
        "--method",
        "lc",
        "--train",
        p(dir.path()),
        "--val",
        p(&dir.path().join("val")),
        "--k-candidates",
        "1,5,15,40",
        "--out",
        p(&csv),
    ]);
    let scores = ScoreVector::read(&csv).unwrap();
    assert_eq!(scores.len(), 300);
    assert!(scores.higher_is_easier);
    let train = load_pack(dir.path()).unwrap();
    let val = load_pack(dir.path().join("val")).unwrap();
    let expect = tune_k(&train, &val, 0, &[1, 5, 15, 40], &KnnConfig::new(1)).unwrap();
    assert_eq!(scores.params["k"], serde_json::json!(expect));
    assert_eq!(
        scores.source_digest.as_deref(),
        Some(train.digest().as_str())
    );
}

#[test]
fn score_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "4", "50", "0");
    let out = p(&dir.path().join("s.csv")).to_string();
    // no probabilities in a synthetic pack
    assert_eq!(
        code(&[
            "score",
            "--method",
            "entropy",
            "--train",
            p(dir.path()),
            "--out",
            &out
        ]),
        3
    );
    assert_eq!(
        code(&[
            "score",
            "--method",
            "lc",
            "--train",
            p(dir.path()),
            "--k",
            "50",
            "--out",
            &out
        ]),
        4
    );
    assert_eq!(
        code(&[
            "score",
            "--method",
            "lc",
            "--train",
            "/no/such/pack",
            "--k",
            "3",
            "--out",
            &out
        ]),
        3
    );
    assert_eq!(
        code(&[
            "score",
            "--method",
            "lc",
            "--train",
            p(dir.path()),
            "--k",
            "3",
            "--layers",
            "4",
            "--out",
            &out
        ]),
        2
    );
    assert!(!dir.path().join("s.csv").exists());
}

#[test]
fn score_regression_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let x = Matrix::from_rows(&[[0.0f32], [1.0], [2.0]]).unwrap();
    let ppl = Matrix::new(3, 4, vec![1.0; 12]).unwrap();
    let pack = FeaturePack::new(
        vec![LayerMatrix::new("h", x)],
        None,
        None,
        Some(ppl),
        Split::Train,
    )
    .unwrap();
    write_pack(&pack, dir.path()).unwrap();
    let csv = dir.path().join("r.csv");
    ok(&[
        "score",
        "--method",
        "lc-reg",
        "--train",
        p(dir.path()),
        "--out",
        p(&csv),
    ]);
    assert_eq!(ScoreVector::read(&csv).unwrap().values, vec![1.0; 3]);
}

#[test]
fn select_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "9", "200", "0");
    let csv = dir.path().join("s.csv");
    ok(&[
        "score",
        "--method",
        "lc",
        "--train",
        p(dir.path()),
        "--k",
        "7",
        "--out",
        p(&csv),
    ]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "select",
            "--method",
            "lc",
            "--train",
            p(dir.path()),
            "--scores",
            p(&csv),
            "--clusters",
            "4",
            "--eta-list",
            "0.1,0.5",
            "--seed",
            "12",
            "--out",
            p(&out),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "selection_eta0.1.json",
        "selection_eta0.1.txt",
        "selection_eta0.5.json",
        "report_eta0.5.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let sel = SelectionResult::read(&a.join("selection_eta0.1.json")).unwrap();
    assert_eq!(sel.len(), 20);
    assert_eq!(sel.seed, Some(12));
}

#[test]
fn select_requires_seed_for_stochastic_methods() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", "30", "0");
    let out = dir.path().join("o");
    assert_eq!(
        code(&[
            "select",
            "--method",
            "random",
            "--train",
            p(dir.path()),
            "--eta",
            "0.5",
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(
        code(&[
            "select",
            "--method",
            "random",
            "--train",
            p(dir.path()),
            "--eta",
            "0",
            "--seed",
            "1",
            "--out",
            p(&out)
        ]),
        4
    );
    ok(&[
        "select",
        "--method",
        "random",
        "--train",
        p(dir.path()),
        "--eta",
        "1.0",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    let sel = SelectionResult::read(&out.join("selection_eta1.json")).unwrap();
    assert_eq!(sel.indices, (0..30).collect::<Vec<_>>());
}

#[test]
fn select_kcenter_on_unit_square() {
    let dir = tempfile::tempdir().unwrap();
    let x = Matrix::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let pack = FeaturePack::new(
        vec![LayerMatrix::new("sq", x)],
        None,
        None,
        None,
        Split::Train,
    )
    .unwrap();
    write_pack(&pack, dir.path()).unwrap();
    let out = dir.path().join("o");
    ok(&[
        "select",
        "--method",
        "kcg",
        "--train",
        p(dir.path()),
        "--eta",
        "0.5",
        "--seed",
        "0",
        "--initial",
        "0",
        "--out",
        p(&out),
    ]);
    assert_eq!(
        SelectionResult::read(&out.join("selection_eta0.5.json"))
            .unwrap()
            .indices,
        vec![0, 3]
    );
}

#[test]
fn eval_against_self_negation_and_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(5);
    let values: Vec<f64> = (0..500).map(|_| r.random()).collect();
    let a = dir.path().join("a.csv");
    ScoreVector::new(values.clone(), "x", true)
        .write(&a)
        .unwrap();
    let neg = dir.path().join("neg.csv");
    ScoreVector::new(values.iter().map(|v| -v).collect(), "x", true)
        .write(&neg)
        .unwrap();
    let noise = dir.path().join("noise.csv");
    ScoreVector::new((0..500).map(|_| r.random()).collect(), "y", true)
        .write(&noise)
        .unwrap();

    let same = dir.path().join("same");
    ok(&["eval", "--a", p(&a), "--b", p(&a), "--out", p(&same)]);
    let rep = json(&same.with_extension("json"));
    assert_eq!(rep["rho"], 1.0);
    assert!(rep["jaccard_at_budget"]
        .as_array()
        .unwrap()
        .iter()
        .all(|j| j["jaccard"] == 1.0));
    assert_eq!(rep["jaccard_at_budget"].as_array().unwrap().len(), 9);
    assert!(same.with_extension("csv").exists());

    let flipped = dir.path().join("flipped");
    ok(&[
        "eval",
        "--a",
        p(&a),
        "--b",
        p(&neg),
        "--eta-list",
        "0.5",
        "--out",
        p(&flipped),
    ]);
    let rep = json(&flipped.with_extension("json"));
    assert!((rep["rho"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(rep["jaccard_at_budget"][0]["jaccard"], 0.0);

    let rand_out = dir.path().join("random");
    ok(&[
        "eval",
        "--a",
        p(&a),
        "--b",
        p(&noise),
        "--out",
        p(&rand_out),
    ]);
    assert!(
        json(&rand_out.with_extension("json"))["rho"]
            .as_f64()
            .unwrap()
            .abs()
            < 0.1
    );
}

#[test]
fn synth_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    synth(&out, "7", "400", "50");
    for f in [
        "pack.json",
        "layer_0.f32",
        "labels.u32",
        "densities.csv",
        "spec.json",
        "density_report.json",
        "val/pack.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = json(&out.join("density_report.json"));
    assert_eq!(report["n"], 400);
    assert_eq!(load_pack(out.join("val")).unwrap().n_samples(), 50);
    let densities = std::fs::read_to_string(out.join("densities.csv")).unwrap();
    assert_eq!(densities.lines().count(), 401);

    let bad = dir.path().join("bad");
    let b = p(&bad);
    assert_eq!(code(&["synth", "--n", "100", "--out", b]), 2);
    assert_eq!(
        code(&["synth", "--seed", "1", "--n", "100", "--k", "100", "--out", b]),
        4
    );
    assert_eq!(
        code(&[
            "synth",
            "--seed",
            "1",
            "--classes",
            "1",
            "--n",
            "100",
            "--out",
            b
        ]),
        4
    );
    assert!(!bad.exists());
}
