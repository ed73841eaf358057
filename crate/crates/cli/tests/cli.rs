use std::process::Command;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::json;
use tower::ServiceExt;

use znq_core::presets;

fn znq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_znq")).args(args).output().unwrap()
}

async fn http(uri: &str, body: serde_json::Value) -> String {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let resp = znq_cli::server::router().oneshot(req).await.unwrap();
    String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap()
}

#[tokio::test]
async fn cli_json_is_byte_identical_to_http() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.prototxt");
    std::fs::write(&path, presets::ZYNQNET.prototxt).unwrap();
    let p = path.to_str().unwrap();

    let out = znq(&["analyze", p, "--json"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), http("/api/analyze", json!({ "prototxt": presets::ZYNQNET.prototxt })).await);

    let out = znq(&["estimate", p, "--json", "--no-flush", "--clock-mhz", "200"]);
    assert!(out.status.success());
    let scenario = json!({ "flush_fixed": true, "clock_mhz": 200.0 });
    let body = json!({ "prototxt": presets::ZYNQNET.prototxt, "scenario": scenario });
    assert_eq!(String::from_utf8(out.stdout).unwrap(), http("/api/estimate", body).await);
}

#[test]
fn exit_codes() {
    assert_eq!(znq(&["presets"]).status.code(), Some(0));
    assert_eq!(znq(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(znq(&["analyze"]).status.code(), Some(2));
    let out = znq(&["analyze", "/definitely/not/here.prototxt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.prototxt");
    std::fs::write(&bad, "layer {\n  name: \"x\"\n").unwrap();
    let out = znq(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let out = znq(&["estimate", "zynqnet", "--whatif", "warp=9"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_csv_and_text_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = znq(&["analyze", "zynqnet", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().last().unwrap().contains("529301504"));
    let csv = std::fs::read_to_string(csv).unwrap();
    assert!(csv.lines().count() >= 66);
}

#[test]
fn weights_infer_and_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.znqw");
    let a = dir.path().join("a.znqt");
    let b = dir.path().join("b.znqt");
    assert!(znq(&["weights", "tiny_fire", "--seed", "5", "--out", w.to_str().unwrap()]).status.success());
    let ws = w.to_str().unwrap();
    let out = znq(&["infer", "tiny_fire", "--weights", ws, "--input", "random:2", "--out", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = znq(&["simulate", "tiny_fire", "--weights", ws, "--input", "random:2", "--verify", "--counters", "--out", b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("bit-exact vs adder-tree order: true"));
    let ta = znq_core::weights::load_tensor(&a).unwrap();
    let tb = znq_core::weights::load_tensor(&b).unwrap();
    assert_eq!(ta.shape, tb.shape);
    let s: f32 = tb.data.iter().sum();
    assert!((s - 1.0).abs() < 1e-5);
}
