use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use navsynth_core::generator::InstructionRecord;
use navsynth_core::grammar::default_grammar;
use navsynth_core::mapgraph::load_bundle;
use navsynth_core::metrics::{evaluate, landmark_baseline, EvalPair, MetricsConfig, MetricsReport};
use serde_json::{json, Value};
use tempfile::TempDir;

fn navsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navsynth")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct City {
    dir: TempDir,
    entities: PathBuf,
    streets: PathBuf,
}

fn small_city() -> City {
    let dir = TempDir::new().unwrap();
    let entities = dir.path().join("entities.jsonl");
    let streets = dir.path().join("streets.jsonl");
    let out = navsynth(&[
        "synth-city",
        "--entities-out",
        path(&entities),
        "--streets-out",
        path(&streets),
        "--rows",
        "12",
        "--cols",
        "12",
        "--count",
        "800",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    City { dir, entities, streets }
}

fn generate(city: &City, name: &str, extra: &[&str]) -> (PathBuf, Output) {
    let out_path = city.dir.path().join(name);
    let mut args = vec![
        "generate",
        "--entities",
        path(&city.entities),
        "--streets",
        path(&city.streets),
        "--out",
        path(&out_path),
    ];
    args.extend_from_slice(extra);
    let out = navsynth(&args);
    (out_path, out)
}

fn read_records(p: &Path) -> Vec<InstructionRecord> {
    fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn write_lines(p: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|l| l.to_string() + "\n").collect();
    fs::write(p, text).unwrap();
}

#[test]
fn validate_map_exit_codes() {
    let city = small_city();
    let ok = navsynth(&["validate-map", "--entities", path(&city.entities), "--streets", path(&city.streets)]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).starts_with("ok: 800 entities"));

    let broken = city.dir.path().join("broken.jsonl");
    write_lines(
        &broken,
        &[json!({"id": "p", "name": null, "tags": {}, "geometry": {"type": "polygon",
            "coords": [[2.3501, 48.8501], [2.3503, 48.8501], [2.3503, 48.8503], [2.3502, 48.8504]]}})],
    );
    let bad = navsynth(&["validate-map", "--entities", path(&broken), "--streets", path(&city.streets)]);
    assert_eq!(bad.status.code(), Some(1));
    let diags: Value = serde_json::from_str(&stderr(&bad)).unwrap();
    assert_eq!(diags[0]["line"], 1);
    assert!(stderr(&bad).to_lowercase().contains("open"), "{}", stderr(&bad));

    let usage = navsynth(&["validate-map", "--entities", path(&city.entities)]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn generate_writes_records_and_manifest() {
    let city = small_city();
    let (out_path, out) = generate(&city, "cfg.jsonl", &["--n", "100", "--seed", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let records = read_records(&out_path);
    assert_eq!(records.len(), 100);
    assert!(records.iter().enumerate().all(|(i, r)| r.id == format!("cfg-{i:08}")));

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(city.dir.path().join("cfg.jsonl.manifest.json")).unwrap()).unwrap();
    let pool = default_grammar().enumerate().unwrap().len();
    assert_eq!(manifest["template_pool"], json!(pool));
    assert_eq!(manifest["records"], 100);
    assert_eq!(manifest["misses"], 0);
    assert_eq!(manifest["config"]["seed"], 4);
    assert_eq!(manifest["entities_sha256"].as_str().unwrap().len(), 64);

    let (dummy_path, out) = generate(&city, "dummy.jsonl", &["--n", "20", "--mode", "dummy"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_records(&dummy_path).len(), 20);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(city.dir.path().join("dummy.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["template_pool"], "n/a");
}

#[test]
fn stats_counts_tokens_and_entities() {
    let city = small_city();
    let (out_path, out) = generate(&city, "one.jsonl", &["--n", "1"]);
    assert!(out.status.success());
    let mut record: Value = serde_json::from_str(fs::read_to_string(&out_path).unwrap().trim()).unwrap();
    record["instruction"] = json!("Meet at the garden.");
    let landmarks = record["landmarks"].as_object_mut().unwrap();
    for (key, value) in landmarks.iter_mut() {
        let refs: Vec<&mut Value> = match value {
            Value::Array(items) => items.iter_mut().collect(),
            Value::Null => Vec::new(),
            other => vec![other],
        };
        for r in refs {
            r["mentions"] = json!(if key == "end_point" { 1 } else { 0 });
        }
    }
    let dataset = city.dir.path().join("garden.jsonl");
    write_lines(&dataset, &[record]);
    let csv = city.dir.path().join("stats.csv");
    let out = navsynth(&["stats", path(&dataset), "--csv-out", path(&csv)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("mean tokens      5.00"), "{text}");
    assert!(text.contains("mean entities    1.00"), "{text}");
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2);

    let empty = city.dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = navsynth(&["stats", path(&empty)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_predictions_and_baseline() {
    let city = small_city();
    let (dataset, out) = generate(&city, "eval.jsonl", &["--n", "60", "--seed", "8"]);
    assert!(out.status.success());
    let records = read_records(&dataset);

    let perfect = city.dir.path().join("perfect.jsonl");
    let lines: Vec<Value> = records.iter().map(|r| json!({"id": r.id, "pred": r.goal})).collect();
    write_lines(&perfect, &lines);
    let report_path = city.dir.path().join("perfect.json");
    let out = navsynth(&[
        "evaluate",
        "--dataset",
        path(&dataset),
        "--predictions",
        path(&perfect),
        "--report-out",
        path(&report_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!((report.mae, report.acc100, report.n), (0.0, 100.0, 60));

    let report_path = city.dir.path().join("baseline.json");
    let cdf_path = city.dir.path().join("baseline.csv");
    let out = navsynth(&[
        "evaluate",
        "--dataset",
        path(&dataset),
        "--baseline",
        "landmark",
        "--entities",
        path(&city.entities),
        "--streets",
        path(&city.streets),
        "--report-out",
        path(&report_path),
        "--cdf-out",
        path(&cdf_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let bundle = load_bundle(&city.entities, &city.streets).unwrap();
    let pairs: Vec<EvalPair> = records
        .iter()
        .map(|r| EvalPair { gold: r.goal, pred: landmark_baseline(&bundle, r.start).point })
        .collect();
    assert_eq!(report, evaluate(&pairs, &MetricsConfig::default()).unwrap());
    assert_eq!(fs::read_to_string(&cdf_path).unwrap().lines().count(), 102);

    let stray = city.dir.path().join("stray.jsonl");
    write_lines(&stray, &[json!({"id": "cfg-99999999", "pred": [2.35, 48.85]})]);
    let out = navsynth(&["evaluate", "--dataset", path(&dataset), "--predictions", path(&stray)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cfg-99999999"), "{}", stderr(&out));

    let out = navsynth(&["evaluate", "--dataset", path(&dataset)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grammar_subcommands() {
    let dir = TempDir::new().unwrap();
    let toy = dir.path().join("toy.cfg");
    fs::write(&toy, "S -> A B\nA -> \"Meet at\" | \"Go to\"\nB -> END_POINT \".\" | \"the\" END_POINT \".\" | END_POINT \"now.\"\n")
        .unwrap();
    let dump = dir.path().join("dump.tsv");
    let out = navsynth(&["grammar", "enumerate", "--grammar", path(&toy), "--dump", path(&dump)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "6 templates");
    assert_eq!(fs::read_to_string(&dump).unwrap().lines().count(), 6);

    let out = navsynth(&["grammar", "lint", "--grammar", path(&toy)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("6 templates"));

    let recursive = dir.path().join("rec.cfg");
    fs::write(&recursive, "S -> \"go\" S | END_POINT\n").unwrap();
    let out = navsynth(&["grammar", "lint", "--grammar", path(&recursive)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("recursion"), "{}", stderr(&out));

    let out = navsynth(&["grammar", "minimal"]);
    assert!(out.status.success());
    assert!(stdout(&out).trim_end().ends_with("cover size: 23"));
}
