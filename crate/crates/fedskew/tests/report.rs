use fedskew::experiment::{CellReport, ExperimentReport, PartitionReport, TrialRecord};
use fedskew::report::{emit_report, read_report, regenerate, render_results_csv};
use fedskew::svg::render_figure;
use fedskew_core::evaluation::{DropRate, TrialSeeds};
use fedskew_core::{Method, Mitigations, RunResult};

fn trial(r: usize, acc: f64, drop: Option<f64>) -> TrialRecord {
    TrialRecord {
        trial: r,
        seed: 100 + r as u64,
        ks: 0.25,
        quantity_std: 12.5,
        result: RunResult {
            method: Method::Fedavg,
            mitigations: Mitigations::default(),
            test_accuracy: acc,
            selected_round: Some(1),
            rounds: vec![],
            cross_matrix: vec![vec![acc, 0.5], vec![0.5, acc]],
            drop_rate: drop.map(|value| DropRate {
                reference: "p0/a".into(),
                reference_accuracy: 0.9,
                value,
            }),
            trial_seeds: TrialSeeds {
                model: 1,
                data_order: 2,
                partition: 3,
            },
            trace: vec![],
        },
    }
}

fn cell(
    partition: &str,
    protocol: &str,
    figure: &str,
    accs: &[f64],
    drop: Option<f64>,
) -> CellReport {
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let std = (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    CellReport {
        partition_id: partition.into(),
        protocol_id: protocol.into(),
        figure: figure.into(),
        method: Method::Fedavg,
        mitigations: Mitigations {
            wp: protocol.contains("wp"),
            ..Default::default()
        },
        trials: accs
            .iter()
            .enumerate()
            .map(|(r, &a)| trial(r, a, drop))
            .collect(),
        mean_accuracy: Some(mean),
        std_accuracy: Some(std),
        reference: drop.map(|_| "p0/a".into()),
        drop_rate: drop,
        error: None,
    }
}

fn partition(id: &str, figure: &str) -> PartitionReport {
    PartitionReport {
        id: id.into(),
        figure: figure.into(),
        regime: "quantity".into(),
        plan: None,
        skew: vec![],
        error: None,
    }
}

fn sample() -> ExperimentReport {
    ExperimentReport {
        name: "fixture".into(),
        repeats: 2,
        seed: 0,
        reference: Some(Default::default()),
        partitions: vec![
            partition("p0", "one"),
            partition("p1", "one"),
            partition("p2", "two"),
        ],
        cells: vec![
            cell("p0", "a", "one", &[0.9, 0.9], Some(0.0)),
            cell("p0", "b+wp", "one", &[0.85, 0.95], Some(0.5)),
            cell("p1", "a", "one", &[0.8, 0.7], Some(1.0)),
            cell("p1", "b+wp", "one", &[0.88, 0.9], Some(1.0 + 1e-9)),
            cell("p2", "a", "two", &[0.6, 0.5], Some(38.9)),
            cell("p2", "b+wp", "two", &[0.7, 0.72], None),
        ],
    }
}

#[test]
fn empty_report_has_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&ExperimentReport::default(), dir.path()).unwrap();
    assert_eq!(written.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(
        csv,
        "partition_id,protocol,mitigations,trial,seed,test_accuracy,drop_rate,ks,quantity_std\n"
    );
    assert_eq!(
        read_report(dir.path()).unwrap(),
        ExperimentReport::default()
    );
}

#[test]
fn csv_has_one_row_per_cell_trial() {
    let report = sample();
    let csv = render_results_csv(&report).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), report.cells.len() * report.repeats);
    assert_eq!(
        rows[2].iter().collect::<Vec<_>>(),
        ["p0", "b+wp", "wp", "0", "100", "0.85", "0.5", "0.25", "12.5"]
    );
    assert_eq!(&rows[11][6], "");
}

#[test]
fn drop_annotations_mark_cells_above_one_percent() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&sample(), dir.path()).unwrap();
    let back = read_report(dir.path()).unwrap();
    for figure in back.figures() {
        let svg = std::fs::read_to_string(dir.path().join(format!("figure-{figure}.svg"))).unwrap();
        let expected: Vec<String> = back
            .cells
            .iter()
            .filter(|c| c.figure == figure)
            .filter_map(|c| c.drop_rate.filter(|d| *d > 1.0).map(|d| format!("{d:.1}%")))
            .collect();
        let found: Vec<String> = svg
            .lines()
            .filter(|l| l.contains(r#"class="drop""#))
            .map(|l| {
                l.split('>')
                    .nth(1)
                    .unwrap()
                    .trim_end_matches("</text")
                    .to_string()
            })
            .collect();
        assert_eq!(found, expected, "{figure}");
        assert_eq!(
            svg.matches(r#"class="bar""#).count(),
            back.cells.iter().filter(|c| c.figure == figure).count()
        );
    }
    let one = std::fs::read_to_string(dir.path().join("figure-one.svg")).unwrap();
    assert_eq!(one.matches(r#"class="drop""#).count(), 1);
    assert!(one.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\""));
}

#[test]
fn outputs_regenerate_from_results_json() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&sample(), dir.path()).unwrap();
    let before: Vec<Vec<u8>> = written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    std::fs::write(dir.path().join("figure-one.svg"), "stale").unwrap();
    std::fs::remove_file(dir.path().join("results.csv")).unwrap();
    for _ in 0..2 {
        regenerate(dir.path()).unwrap();
        let after: Vec<Vec<u8>> = written.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(after, before);
    }
    let back = read_report(dir.path()).unwrap();
    assert_eq!(back, sample());
    assert_eq!(render_figure(&back, "two"), render_figure(&sample(), "two"));
}

#[test]
fn cross_matrix_is_written_long_form() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&sample(), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("cross_matrix.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "partition_id,protocol,trial,model_institution,test_institution,accuracy"
    );
    assert_eq!(lines.len(), 1 + 6 * 2 * 4);
    assert_eq!(lines[2], "p0,a,0,0,1,0.5");
}

#[test]
fn bad_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("results.json"),
        r#"{"name": "x", "cells": 3}"#,
    )
    .unwrap();
    let err = regenerate(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("results.json"));
}
