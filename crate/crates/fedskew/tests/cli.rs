use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedskew::cli::{train_shards, TrainArgs};
use fedskew::manifest::Manifest;
use fedskew_core::RunResult;

fn fedskew(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedskew"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fedskew(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fedskew(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, json: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json.to_string()).unwrap();
    path
}

fn synth_dir(root: &Path, name: &str, per_category: usize, extent: usize) -> PathBuf {
    let spec = write(
        root,
        &format!("{name}.json"),
        serde_json::json!({"spec": {"num_categories": 4, "per_category": vec![per_category; 4], "extent": extent, "seed": 3}}),
    );
    let out = root.join(name);
    ok(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    out
}

fn read_result(path: &Path) -> RunResult {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_loadable_deterministic_files() {
    let root = tempfile::tempdir().unwrap();
    let a = synth_dir(root.path(), "a", 20, 8);
    let b = synth_dir(root.path(), "b", 20, 8);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "test-images.idx",
            "test-labels.idx",
            "train-images.idx",
            "train-labels.idx",
            "val-images.idx",
            "val-labels.idx"
        ]
    );
    for n in &names {
        assert_eq!(
            std::fs::read(a.join(n)).unwrap(),
            std::fs::read(b.join(n)).unwrap()
        );
    }
    let splits = fedskew::data::load_data_dir(&a).unwrap();
    assert_eq!(splits.iter().map(|d| d.len()).sum::<usize>(), 80);

    let bad = write(
        root.path(),
        "bad.json",
        serde_json::json!({"spec": {"num_categories": 1, "per_category": [5], "extent": 8, "seed": 0}}),
    );
    assert_eq!(
        code(&[
            "synth",
            "--spec",
            s(&bad),
            "--out",
            s(&root.path().join("c"))
        ]),
        1
    );
}

#[test]
fn partition_prints_skew_and_manifests_reproduce_shards() {
    let root = tempfile::tempdir().unwrap();
    let data = synth_dir(root.path(), "d", 700, 4);
    let plan = write(
        root.path(),
        "split2.json",
        serde_json::json!({"regime": {"quantity": {"sizes": [299, 317, 385, 895]}}, "seed": 1}),
    );
    let manifest = root.path().join("m.json");
    let out = ok(&[
        "partition",
        "--data",
        s(&data),
        "--plan",
        s(&plan),
        "--out",
        s(&manifest),
    ]);
    assert!(out.contains("quantity STD 283.1"), "{out}");

    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let shards = train_shards(&data, Some(&manifest)).unwrap();
    for (e, sh) in m.institutions.iter().zip(&shards) {
        assert_eq!(sh.train.ids(), &e.train[..]);
        assert_eq!(sh.val.ids(), &e.val[..]);
        assert_eq!(sh.test.ids(), &e.test[..]);
    }
    let sizes: Vec<usize> = shards.iter().map(|s| s.size()).collect();
    assert_eq!(sizes, [299, 317, 385, 895]);

    let f1 = write(
        root.path(),
        "f1.json",
        serde_json::json!({"regime": {"label": {"institutions": 4, "fraction": 1.0}}}),
    );
    let out = ok(&[
        "partition",
        "--data",
        s(&data),
        "--plan",
        s(&f1),
        "--out",
        s(&root.path().join("f1m.json")),
    ]);
    assert!(out.contains("mean pairwise KS 1.000"), "{out}");

    let infeasible = write(
        root.path(),
        "big.json",
        serde_json::json!({"regime": {"quantity": {"sizes": [5000, 10]}}}),
    );
    assert_eq!(
        code(&[
            "partition",
            "--data",
            s(&data),
            "--plan",
            s(&infeasible),
            "--out",
            s(&root.path().join("x.json"))
        ]),
        1
    );
}

#[test]
fn train_runs_protocols_from_manifests() {
    let root = tempfile::tempdir().unwrap();
    let data = synth_dir(root.path(), "d", 60, 8);
    let r = root.path();
    let common = ["--B", "8", "--lr", "0.05", "--epochs", "2", "--seed", "4"];
    let run = |extra: &[&str], out: &str| -> RunResult {
        let path = r.join(out);
        let mut args = vec!["train", "--data", s(&data), "--out", s(&path)];
        args.extend(common);
        args.extend(extra);
        ok(&args);
        read_result(&path)
    };
    let central = run(&["--method", "centralized"], "central.json");
    assert_eq!(central.rounds.len(), 2);
    let single = run(&["--method", "fedavg"], "fedavg1.json");
    assert_eq!(single.test_accuracy, central.test_accuracy);

    // The same through an explicit one-institution manifest.
    let splits = fedskew::data::load_data_dir(&data).unwrap();
    let manifest = serde_json::json!({
        "plan": {"regime": {"quantity": {"sizes": [splits[0].len()]}}, "seed": 0},
        "institutions": [{
            "institution_id": 0,
            "train": splits[0].ids(), "val": splits[1].ids(), "test": splits[2].ids()
        }],
        "skew": {"quantity_std": 0.0, "mean_pairwise_ks": 0.0, "sizes": [splits[0].len()], "label_histograms": [splits[0].histogram()]}
    });
    let m1 = write(r, "one.json", manifest);
    let via_manifest = run(
        &["--method", "fedavg", "--manifest", s(&m1)],
        "fedavg1m.json",
    );
    assert_eq!(via_manifest.test_accuracy, central.test_accuracy);

    let plan = write(
        r,
        "q.json",
        serde_json::json!({"regime": {"quantity": {"sizes": [2, 3, 4, 5]}}, "scale_to_train": true}),
    );
    let mq = r.join("mq.json");
    ok(&[
        "partition",
        "--data",
        s(&data),
        "--plan",
        s(&plan),
        "--out",
        s(&mq),
    ]);
    let full = [
        "--B",
        "full",
        "--arch",
        "tiny-conv-nobn",
        "--trace",
        "--manifest",
        s(&mq),
        "--epochs",
        "6",
    ];
    let mut a = vec!["--method", "fedsgd", "--wp"];
    a.extend(full);
    let fed = run(&a, "fedsgd.json");
    let mut b = vec!["--method", "centralized"];
    b.extend(full);
    let cen = run(&b, "central_full.json");
    assert_eq!(fed.trace.len(), 6);
    for (x, y) in fed.trace.iter().zip(&cen.trace) {
        let diff = x
            .iter()
            .zip(y)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    let bad_out = r.join("bad.json");
    let bad = [
        "train",
        "--data",
        s(&data),
        "--out",
        s(&bad_out),
        "--method",
        "cwt",
        "--bn-avg",
    ];
    assert_eq!(code(&bad), 1);
    assert_eq!(
        code(&["train", "--data", s(&data), "--out", s(&r.join("bad.json"))]),
        1
    );
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&r.join("bad.json")),
            "--method",
            "fedprox"
        ]),
        1
    );
    assert_eq!(
        code(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&r.join("bad.json")),
            "--method",
            "cwt",
            "--B",
            "-3"
        ]),
        1
    );
}

#[test]
fn flags_override_the_settings_file() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write(
        root.path(),
        "t.json",
        serde_json::json!({"method": "cwt", "lr": 0.5, "epochs": 3, "mitigations": {"wl": true}}),
    );
    let args = TrainArgs {
        data: "unused".into(),
        manifest: None,
        config: Some(cfg),
        method: Some("fedavg".into()),
        wp: true,
        wl: false,
        bn_avg: false,
        batch_size: Some("full".into()),
        lr: None,
        epochs: Some(9),
        seed: None,
        arch: None,
        fedavg_uniform: false,
        trace: false,
        out: "unused".into(),
    };
    let s = args.settings().unwrap();
    assert_eq!(s.method, Some(fedskew_core::Method::Fedavg));
    assert_eq!(s.lr, Some(0.5));
    assert_eq!(s.epochs, Some(9));
    assert!(s.mitigations.wl && s.mitigations.wp && !s.mitigations.bn_avg);
    assert_eq!(s.batch_size, Some(fedskew_core::BatchSize::FULL));
}

#[test]
fn experiment_and_report_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let out = r.join("out");
    let cfg = write(
        r,
        "exp.json",
        serde_json::json!({
            "data": {"synth": {"spec": {"num_categories": 4, "per_category": [60, 60, 60, 60], "extent": 8, "seed": 1}}},
            "partitions": [
                {"id": "split1", "figure": "fig1", "regime": {"quantity": {"sizes": [42, 42, 42, 42]}}},
                {"id": "split4", "figure": "fig1", "regime": {"quantity": {"sizes": [2, 3, 4, 5]}}, "scale_to_train": true}
            ],
            "protocols": [{"id": "fedavg", "method": "fedavg"}, {"id": "cwt", "method": "cwt"}],
            "training": {"batch_size": 8, "lr": 0.05, "epochs": 1},
            "repeats": 2,
            "reference": {"partition": "split1"},
            "output_dir": s(&out)
        }),
    );
    ok(&["experiment", "--config", s(&cfg), "--threads", "2"]);
    for f in ["results.json", "results.csv", "figure-fig1.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let svg = std::fs::read(out.join("figure-fig1.svg")).unwrap();
    ok(&["report", "--results", s(&out)]);
    ok(&["report", "--results", s(&out)]);
    assert_eq!(std::fs::read(out.join("figure-fig1.svg")).unwrap(), svg);

    let other = r.join("other");
    ok(&[
        "experiment",
        "--config",
        s(&cfg),
        "--threads",
        "1",
        "--out",
        s(&other),
    ]);
    for f in ["results.json", "results.csv", "figure-fig1.svg"] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(other.join(f)).unwrap(),
            "{f}"
        );
    }

    std::fs::write(out.join("results.json"), r#"{"cells": "tampered"}"#).unwrap();
    assert_eq!(code(&["report", "--results", s(&out)]), 1);
    let unknown = write(r, "typo.json", serde_json::json!({"lerning_rate": 1}));
    let o = fedskew(&["experiment", "--config", s(&unknown)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lerning_rate"));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["synth", "--out", "x"]), 1);
    assert_eq!(code(&["report", "--results", "/nonexistent/dir"]), 2);
}
