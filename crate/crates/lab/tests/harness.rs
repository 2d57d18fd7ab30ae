use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use invlab::{emit, load_report, run, ExperimentConfig, ExperimentKind, ExperimentReport};
use serde_json::json;

/// A toy defense grid shrunk to run in about a second.
fn small_toy() -> ExperimentConfig {
    ExperimentConfig::from_value(json!({
        "experiment": "toy2d-defense-grid",
        "repeats": 2,
        "dataset": {"per_class": 30},
        "train": {"epochs": 30},
        "eval": {"train": {"epochs": 30}},
        "attack": {"steps": 40, "per_class": 2},
        "variants": [
            {"name": "no-defense", "head": {"kind": "standard"}, "defense": {"kind": "none"}},
            {"name": "calor", "head": {"kind": "low_rank", "rank": 1, "activation": "tanh"},
             "defense": {"kind": "calor", "rank": 1, "ca": {"a": 1.0, "b": 8.0, "epochs": 10, "lr": 0.05}}}
        ]
    }))
    .unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

fn results(r: &ExperimentReport) -> (String, String, String, String) {
    (
        serde_json::to_string(&r.rows).unwrap(),
        serde_json::to_string(&r.runs).unwrap(),
        serde_json::to_string(&r.aggregates).unwrap(),
        serde_json::to_string(&r.statistics).unwrap(),
    )
}

#[test]
fn every_experiment_has_valid_defaults() {
    for kind in ExperimentKind::ALL {
        let cfg = ExperimentConfig::from_json(&format!("{{\"experiment\": \"{kind}\"}}")).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(kind));
        assert!(!invlab::variants_for(&cfg).unwrap().is_empty(), "{kind}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::from_json(&read(&path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert_eq!(seen, ExperimentKind::ALL.len());
}

#[test]
fn bad_configs_are_usage_errors() {
    for text in [
        "not json",
        "{}",
        r#"{"experiment": "nope"}"#,
        r#"{"experiment": "calibration", "repeats": 0}"#,
        r#"{"experiment": "calibration", "surprise": 1}"#,
        r#"{"experiment": "toy2d-defense-grid", "attack": {"classes": [7]}}"#,
    ] {
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{text}: {err}");
    }
}

#[test]
fn emitted_report_round_trips() {
    let out = run(&small_toy(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit(&out, dir.path()).unwrap();
    assert!(paths.last().unwrap().ends_with("report.json"));

    let back = load_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, out.report);

    let metrics = read(&dir.path().join("metrics.csv"));
    assert_eq!(
        metrics.lines().next().unwrap(),
        "variant,test_accuracy,acc_at_1,acc_at_k,k,delta_eval,mean_confidence,terminal_grad_norm,kes"
    );
    assert_eq!(metrics.lines().count(), 1 + out.report.rows.len());
    assert_eq!(
        read(&dir.path().join("runs.csv")).lines().count(),
        1 + out.report.runs.len()
    );

    for r in &out.report.runs {
        let trace = read(&dir.path().join(r.trace_file.as_ref().unwrap()));
        let mut lines = trace.lines();
        assert_eq!(lines.next().unwrap(), "step,confidence,grad_norm,grad_norm_smoothed");
        assert_eq!(lines.count(), 40);
    }
}

#[test]
fn echoed_config_reproduces_results() {
    let cfg = small_toy();
    let first = run(&cfg, 1).unwrap();
    let echoed = ExperimentConfig::from_json(&cfg.echo().unwrap()).unwrap();
    assert_eq!(echoed, cfg);
    let second = run(&echoed, 1).unwrap();
    assert_eq!(results(&first.report), results(&second.report));
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = small_toy();
    let one = run(&cfg, 1).unwrap();
    let three = run(&cfg, 3).unwrap();
    assert_eq!(results(&one.report), results(&three.report));
    let tables = |o: &invlab::RunOutput| -> BTreeMap<String, Vec<Vec<f64>>> {
        o.tables.iter().map(|t| (t.file.clone(), t.rows.clone())).collect()
    };
    assert_eq!(tables(&one), tables(&three));
}

#[test]
fn seed_changes_results() {
    let mut cfg = small_toy();
    let a = run(&cfg, 1).unwrap();
    cfg.seed = 1;
    let b = run(&cfg, 1).unwrap();
    assert_ne!(results(&a.report).1, results(&b.report).1);
}

#[test]
fn calibration_report_has_exact_minimizers() {
    let out = run(&ExperimentConfig::defaults(ExperimentKind::Calibration), 1).unwrap();
    let r = &out.report;
    assert!(r.statistics["max_abs_error"] < 1e-9);
    assert_eq!(r.runs.len(), 4);
    let table = out.tables.iter().find(|t| t.file == "calibration.csv").unwrap();
    assert_eq!(table.rows.len(), 4);
    for row in &table.rows {
        assert!((row[3] - (-1.0 / row[0]).exp()).abs() < 1e-9);
    }
}

#[test]
fn adversarial_probe_respects_budget() {
    let cfg = ExperimentConfig::from_value(json!({
        "experiment": "adv-probe",
        "repeats": 1,
        "dataset": {"per_class": 30},
        "train": {"epochs": 30},
        "sweep": {"adv": {"eps": 0.5, "alpha": 0.125, "steps": 10, "random_start": true}}
    }))
    .unwrap();
    let out = run(&cfg, 1).unwrap();
    for r in &out.report.runs {
        for k in ["fgsm_linf", "pgd_linf", "bim_linf"] {
            assert!(r.extras[k] <= 0.5 + 1e-12, "{k} = {}", r.extras[k]);
        }
        assert_eq!(r.extras["eps0_linf"], 0.0);
    }
}

#[test]
fn grid_is_written_for_two_dimensional_data() {
    let mut cfg = small_toy();
    cfg.repeats = 1;
    cfg.grid = Some(5);
    let out = run(&cfg, 1).unwrap();
    let grids: Vec<_> = out.tables.iter().filter(|t| t.file.starts_with("grid/")).collect();
    assert_eq!(grids.len(), 2);
    assert!(grids.iter().all(|t| t.rows.len() == 25));
}
