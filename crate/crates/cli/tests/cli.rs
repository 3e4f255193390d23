use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anchor_core::PipelineConfig;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), PipelineConfig::long_context().to_toml_string()).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn anchor(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_anchor"))
            .current_dir(self.dir.path())
            .env("ANCHOR_CHAT_MODEL", format!("mock:world:{}", fixture("golden_world.json").display()))
            .env("ANCHOR_EMBED_MODEL", "mock:hash-64")
            .env_remove("ANCHOR_CHAT_URL")
            .arg("--config")
            .arg(self.path("config.toml"))
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "anchor {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn eval_then_cost_report() {
    let ws = Workspace::new();
    let dataset = fixture("golden_pairwise.jsonl");
    let out = ws.anchor(&["eval", "pairwise", dataset.to_str().unwrap(), "--out", "run1", "--cache-dir", "cache"]);
    assert!(stdout(&out).contains("micro-avg F1"));
    for name in ["metrics.json", "metrics.txt", "cost.json", "mappings.jsonl", "reports.jsonl"] {
        assert!(ws.path("run1").join(name).exists(), "{name}");
    }
    ws.anchor(&["eval", "pairwise", dataset.to_str().unwrap(), "--out", "run2", "--cache-dir", "cache"]);
    assert_eq!(
        std::fs::read_to_string(ws.path("run1/reports.jsonl")).unwrap(),
        std::fs::read_to_string(ws.path("run2/reports.jsonl")).unwrap()
    );
    let report = stdout(&ws.anchor(&["cost-report", "run2", "--baseline", "run1"]));
    assert!(report.contains("token ratio"), "{report}");
}

#[test]
fn build_map_infer() {
    let ws = Workspace::new();
    let dataset = fixture("golden_pairwise.jsonl");
    let out = ws.anchor(&["build-space", dataset.to_str().unwrap(), "--out", "spaces"]);
    assert_eq!(stdout(&out).lines().count(), 3);
    std::fs::write(
        ws.path("conditions.txt"),
        "Hot water helps in killing any potential foodborne pathogens or microbes present in the noodles.\n\nSomething unrelated.\n",
    )
    .unwrap();
    ws.anchor(&["map", "spaces/noodles.json", "conditions.txt", "--out", "mappings.jsonl"]);
    let mappings = std::fs::read_to_string(ws.path("mappings.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = mappings.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["abstained"], false);
    assert_eq!(rows[1]["abstained"], true);

    let reports = stdout(&ws.anchor(&["infer", "spaces/noodles.json", "mappings.jsonl"]));
    let rows: Vec<serde_json::Value> = reports.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(rows[0]["p_final"].as_f64().unwrap() > 0.5);
    assert!(rows[1]["p_final"].is_null());
}

#[test]
fn curve_prints_table() {
    let ws = Workspace::new();
    let dataset = fixture("golden_pairwise.jsonl");
    let out = ws.anchor(&["curve", dataset.to_str().unwrap(), "--counts", "0,4,40", "--out", "curve.json"]);
    let text = stdout(&out);
    assert!(text.contains("unknown_rate"));
    let points: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("curve.json")).unwrap()).unwrap();
    assert_eq!(points[0]["unknown_rate"], 1.0);
    assert_eq!(points.as_array().unwrap().len(), 3);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.jsonl"), "{\"scenario_id\": \"x\"}\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_anchor"))
        .current_dir(ws.dir.path())
        .env("ANCHOR_CHAT_MODEL", "mock:world:/nonexistent.json")
        .env("ANCHOR_EMBED_MODEL", "mock:hash-8")
        .args(["eval", "pairwise", "bad.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.jsonl:1"), "{err}");
}
