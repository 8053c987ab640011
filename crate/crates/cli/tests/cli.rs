use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use forestsat::api::Engine;
use forestsat::forest::Forest;
use forestsat_cli::server::{router, AppState};

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/breast_cancer.csv");

fn forestsat(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_forestsat"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "forestsat {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Trained {
    _dir: tempfile::TempDir,
    model: PathBuf,
    train: PathBuf,
    test: PathBuf,
}

fn trained(trees: usize) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (model, train, test) = (p("model.json"), p("train.csv"), p("test.csv"));
    let summary = forestsat(&[
        "train",
        "--data",
        DATA,
        "--out",
        s(&model),
        "--trees",
        &trees.to_string(),
        "--train-out",
        s(&train),
        "--test-out",
        s(&test),
    ]);
    let v: Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["n_train"], 285);
    assert_eq!(v["n_test"], 284);
    Trained {
        _dir: dir,
        model,
        train,
        test,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn first_rows(path: &Path, n: usize) -> Vec<String> {
    let rows = forestsat_cli::load_rows(path, "label").unwrap();
    rows.iter()
        .take(n)
        .map(|r| serde_json::to_string(r).unwrap())
        .collect()
}

fn strip(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

async fn post(app: axum::Router, uri: &str, body: String) -> String {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    String::from_utf8(bytes.to_vec()).unwrap()
}

#[tokio::test]
async fn cli_and_http_payloads_agree() {
    let t = trained(5);
    let forest = Forest::load(&t.model).unwrap();
    let bg = forestsat_cli::load_rows(&t.train, "label").unwrap();
    let app = router(Arc::new(AppState::new(
        Engine::new(forest, Some(bg)),
        None,
        1,
        Duration::from_secs(60),
    )));
    for x in first_rows(&t.test, 2) {
        let cli = forestsat(&["explain", "--model", s(&t.model), "--instance", &x]);
        let http = post(
            app.clone(),
            "/counterfactual",
            format!(r#"{{"instance": {x}}}"#),
        )
        .await;
        assert_eq!(strip(&cli), strip(&http));

        for (method, extra) in [("shapley-mc", "--permutations"), ("lime", "--samples")] {
            let cli = forestsat(&[
                "attribute",
                "--model",
                s(&t.model),
                "--background",
                s(&t.train),
                "--instance",
                &x,
                "--method",
                method,
                "--seed",
                "7",
                extra,
                "40",
            ]);
            let field = if method == "lime" {
                "n_samples"
            } else {
                "n_permutations"
            };
            let body =
                format!(r#"{{"instance": {x}, "method": "{method}", "seed": 7, "{field}": 40}}"#);
            let http = post(app.clone(), "/attribution", body).await;
            assert_eq!(strip(&cli), strip(&http), "{method}");
        }
    }
}

#[test]
fn batch_commands_and_files() {
    let t = trained(3);
    let dir = t.model.parent().unwrap();

    let predictions: Value = serde_json::from_str(&forestsat(&[
        "predict",
        "--model",
        s(&t.model),
        "--data",
        s(&t.test),
    ]))
    .unwrap();
    assert_eq!(predictions.as_array().unwrap().len(), 284);

    let attr = dir.join("attr.json");
    forestsat(&[
        "attribute",
        "--model",
        s(&t.model),
        "--data",
        s(&t.test),
        "--background",
        s(&t.train),
        "--background-size",
        "20",
        "--permutations",
        "5",
        "--out",
        s(&attr),
    ]);
    let curves = forestsat(&["stability", "--attributions", s(&attr)]);
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("feature,n,probability"));
    assert_eq!(lines.count(), 30 * 30);
    assert!(curves.contains("\n0,30,1.0\n"));

    let report = dir.join("report.json");
    let samples = dir.join("samples.csv");
    forestsat(&[
        "report",
        "--model",
        s(&t.model),
        "--data",
        s(&t.test),
        "--attributions",
        s(&attr),
        "--out",
        s(&report),
        "--csv",
        s(&samples),
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["n_points"], 284);
    assert!(r["points"][0]["attribution_ranking"].is_array());
    let csv = std::fs::read_to_string(&samples).unwrap();
    assert!(csv.starts_with("cohort,point,feature_index,feature,percent_change\n"));
}

#[test]
fn exported_cnf_solves_like_the_search() {
    let t = trained(3);
    let x = first_rows(&t.test, 1).remove(0);
    let cf: Value = serde_json::from_str(&forestsat(&[
        "explain",
        "--model",
        s(&t.model),
        "--instance",
        &x,
    ]))
    .unwrap();
    let delta = cf["final_delta"].as_f64().unwrap();
    let cnf = t.model.with_file_name("q.cnf");
    let solve_at = |d: f64| {
        forestsat(&[
            "export-cnf",
            "--model",
            s(&t.model),
            "--instance",
            &x,
            "--delta",
            &format!("{d:?}"),
            "--out",
            s(&cnf),
        ]);
        forestsat(&["sat", "--cnf", s(&cnf)])
    };
    assert!(solve_at(delta).starts_with("s SATISFIABLE\nv "));
    if cf["iterations"].as_u64().unwrap() > 1 {
        assert_eq!(solve_at(delta / 1.01 * 0.999).trim(), "s UNSATISFIABLE");
    }
}

#[test]
fn bad_input_fails_cleanly() {
    let t = trained(1);
    let out = Command::new(env!("CARGO_BIN_EXE_forestsat"))
        .args([
            "explain",
            "--model",
            s(&t.model),
            "--instance",
            "[1.0, 2.0]",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("InstanceLengthMismatch"), "{err}");

    let out = Command::new(env!("CARGO_BIN_EXE_forestsat"))
        .args(["summary", "--model", "/nonexistent/model.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
