//! End-to-end tests driving the `calkit` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use calkit_core::client::synthetic::{
    generate_records, AccuracyFn, ConfidenceDist, SyntheticModelSpec,
};
use calkit_core::client::{wire_request, PromptPayload, WireCall};
use calkit_core::record::write_records;
use serde_json::{json, Value};

fn calkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Two-option records realizing the worked 4-point example: confidences
/// 0.95, 0.95, 0.65, 0.55 with exactly one incorrect prediction.
fn four_point_file(dir: &Path) -> PathBuf {
    let mut lines = Vec::new();
    for (i, (confidence, correct)) in
        [(0.95f64, true), (0.95, false), (0.65, true), (0.55, true)].iter().enumerate()
    {
        let logits = [confidence.ln(), (1.0 - confidence).ln()];
        let gold = if *correct { 0 } else { 1 };
        lines.push(format!(
            r#"{{"id":"p{i}","question":"?","options":["yes","no"],"gold_index":{gold},"option_logits":[{},{}],"model_id":"worked"}}"#,
            logits[0], logits[1]
        ));
    }
    let path = dir.join("four.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let path = four_point_file(dir.path());
    let ok = calkit(dir.path(), &["validate", path.to_str().unwrap(), "--task", "mc"]);
    assert_exit(&ok, 0);
    assert!(stdout(&ok).contains("\"record_count\": 4"));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{broken\n").unwrap();
    let err = calkit(dir.path(), &["validate", bad.to_str().unwrap(), "--task", "mc"]);
    assert_exit(&err, 1);
}

#[test]
fn metrics_reproduces_worked_example_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let path = four_point_file(dir.path());
    let out = calkit(
        dir.path(),
        &[
            "metrics",
            path.to_str().unwrap(),
            "--bins",
            "10",
            "--scheme",
            "width",
            "--out",
            "summary.json",
            "--reliability",
            "reliability.csv",
        ],
    );
    assert_exit(&out, 0);

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!((summary["accuracy"].as_f64().unwrap() - 0.75).abs() < 1e-9);
    assert!((summary["ece"].as_f64().unwrap() - 0.425).abs() < 1e-9);
    assert!((summary["mce"].as_f64().unwrap() - 0.45).abs() < 1e-9);

    let reliability = fs::read_to_string(dir.path().join("reliability.csv")).unwrap();
    assert!(reliability.starts_with("bin_lower,bin_upper,count,mean_conf,mean_acc"));
    assert_eq!(reliability.lines().count(), 11); // header + 10 bins

    // manifest written beside the primary output
    let manifest: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("summary.json.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "metrics");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let table = calkit(dir.path(), &["report", "summary", "summary.json", "--format", "csv"]);
    assert_exit(&table, 0);
    let body = stdout(&table);
    assert!(body.starts_with("Model,Acc,Conf,ECE,MCE,ENCE"));
    assert!(body.contains("worked,0.750,0.775,0.425,0.450,0.576"));
}

#[test]
fn ts_fit_recovers_scale_and_apply_rescales() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticModelSpec {
        option_count: 4,
        accuracy_fn: AccuracyFn::Identity,
        confidence_dist: ConfidenceDist::Uniform { lo: 0.3, hi: 1.0 },
        seed: 11,
    };
    let records = generate_records(&spec, 2.5, 4_000).unwrap();
    let cal = dir.path().join("cal.jsonl");
    write_records(&cal, &records).unwrap();

    let fit = calkit(dir.path(), &["ts", "fit", cal.to_str().unwrap(), "--out", "fit.json"]);
    assert_exit(&fit, 0);
    let fitted: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    let t = fitted["t"].as_f64().unwrap();
    assert!((t - 2.5).abs() < 0.3, "fitted T = {t}");
    assert_eq!(fitted["converged"], json!(true));

    let apply = calkit(
        dir.path(),
        &["ts", "apply", cal.to_str().unwrap(), "--t", "2.0", "--out", "scaled.jsonl"],
    );
    assert_exit(&apply, 0);
    let first_in: Value =
        serde_json::from_str(fs::read_to_string(&cal).unwrap().lines().next().unwrap()).unwrap();
    let first_out: Value = serde_json::from_str(
        fs::read_to_string(dir.path().join("scaled.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    let before = first_in["option_logits"][0].as_f64().unwrap();
    let after = first_out["option_logits"][0].as_f64().unwrap();
    assert!((after - before / 2.0).abs() < 1e-12);
}

#[test]
fn entropy_emits_expected_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("open.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"id":"o1","question":"?","samples":[{"text":"Paris","temperature":1.0,"top_p":0.95},{"text":"paris.","temperature":1.0,"top_p":0.95},{"text":"The Paris","temperature":1.0,"top_p":0.95},{"text":"London","temperature":1.0,"top_p":0.95}],"model_id":"m"}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = calkit(
        dir.path(),
        &["entropy", path.to_str().unwrap(), "--judge", "exact", "--out", "entropy.csv"],
    );
    assert_exit(&out, 0);
    let body = fs::read_to_string(dir.path().join("entropy.csv")).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("id,n_samples,n_clusters,entropy_nats"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("o1,4,2,"), "row: {row}");
    // clusters {3, 1}: H = -(0.75 ln 0.75 + 0.25 ln 0.25)
    let expected = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
    let h: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((h - expected).abs() < 1e-12);
}

fn mc_records_file(dir: &Path, n: usize) -> PathBuf {
    let lines: Vec<String> = (0..n)
        .map(|i| {
            format!(
                r#"{{"id":"r{i:03}","question":"?","options":["w","x","y","z"],"gold_index":{},"option_logits":[0.0,0.0,0.0,0.0],"model_id":"m"}}"#,
                i % 4
            )
        })
        .collect();
    let path = dir.join("records.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn idk_segment_quadrants_flow() {
    let dir = tempfile::tempdir().unwrap();
    let records = mc_records_file(dir.path(), 12);

    let segment = calkit(
        dir.path(),
        &[
            "idk",
            "segment",
            records.to_str().unwrap(),
            "--run",
            "--client",
            "gold:p=1.0,k=4,seed=3",
            "--n",
            "10",
            "--trials-out",
            "trials.jsonl",
            "--threshold",
            "1.0",
            "--out",
            "labels.jsonl",
        ],
    );
    assert_exit(&segment, 0);
    let labels = fs::read_to_string(dir.path().join("labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 12);
    assert!(labels.lines().all(|l| l.contains("\"IK\"")));
    assert_eq!(fs::read_to_string(dir.path().join("trials.jsonl")).unwrap().lines().count(), 120);

    // answers: refuse on 3 records, answer the rest
    let answers: Vec<String> = (0..12)
        .map(|i| {
            let answer = if i < 3 { "I don't know." } else { "A" };
            format!(r#"{{"record_id":"r{i:03}","answer":"{answer}"}}"#)
        })
        .collect();
    let answers_path = dir.path().join("answers.jsonl");
    fs::write(&answers_path, answers.join("\n") + "\n").unwrap();

    let quadrants = calkit(
        dir.path(),
        &[
            "idk",
            "quadrants",
            answers_path.to_str().unwrap(),
            "--labels",
            "labels.jsonl",
            "--prompting",
            "on",
            "--label",
            "demo",
            "--out",
            "quadrants.json",
        ],
    );
    assert_exit(&quadrants, 0);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("quadrants.json")).unwrap())
            .unwrap();
    // all records are IK; 3 refusals land in IDK-IK, 9 answers in IK-IK
    assert_eq!(report["ik_idk"], json!(0));
    assert_eq!(report["idk_idk"], json!(0));
    assert_eq!(report["ik_ik"], json!(9));
    assert_eq!(report["idk_ik"], json!(3));
    assert_eq!(report["prompting"], json!("on"));
    assert!((report["truthful"].as_f64().unwrap() - 0.75).abs() < 1e-12);

    // OOD mode needs no labels: every item assumed unknown
    let ood = calkit(
        dir.path(),
        &[
            "idk",
            "quadrants",
            answers_path.to_str().unwrap(),
            "--ood",
            "--label",
            "ood",
            "--out",
            "ood_quadrants.json",
        ],
    );
    assert_exit(&ood, 0);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ood_quadrants.json")).unwrap())
            .unwrap();
    assert_eq!(report["ik_idk"], json!(3));
    assert_eq!(report["idk_idk"], json!(9));
    assert_eq!(report["ik_ik"], Value::Null);
    assert!(stdout(&ood).contains("25.00%"));

    // quadrant report renders with "/" for the absent IK cells
    let table = calkit(
        dir.path(),
        &["report", "quadrants", "ood_quadrants.json", "--format", "csv"],
    );
    assert_exit(&table, 0);
    assert!(stdout(&table).contains("ood,3,9,/,/,25.00%"));
}

#[test]
fn idk_build_ood_with_canned_generator() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("articles.jsonl"),
        r#"{"id":"a1","text":"A bridge opened in July 2024.","image_ref":"bridge.png"}"#.to_string()
            + "\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("gen.txt"),
        concat!(
            r#"{"question":"What opened?","options":["Bridge","Tunnel","Museum","Park"],"answer":"A"}"#,
            "\n",
            r#"{"question":"Too few","options":["x","y"],"answer":"A"}"#,
            "\n",
        ),
    )
    .unwrap();
    let out = calkit(
        dir.path(),
        &[
            "idk",
            "build-ood",
            "articles.jsonl",
            "--client",
            "canned:file=gen.txt",
            "--k-questions",
            "3",
            "--out",
            "ood.jsonl",
        ],
    );
    assert_exit(&out, 0);
    let items = fs::read_to_string(dir.path().join("ood.jsonl")).unwrap();
    assert_eq!(items.lines().count(), 1);
    let item: Value = serde_json::from_str(items.lines().next().unwrap()).unwrap();
    assert_eq!(item["answer_index"], json!(0));
    assert_eq!(item["source_article_id"], json!("a1"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dropped"));
}

fn fusion_items_file(dir: &Path) -> PathBuf {
    let path = dir.join("items.jsonl");
    fs::write(
        &path,
        r#"{"id":"f1","image_ref":"missing.png","description_sentences":["Has wings.","Makes honey."],"mc_question":{"question":"Which?","options":["bee","ant","cat","dog"],"gold_index":0},"open_question":{"question":"What?","gold":"bee"}}"#
            .to_string()
            + "\n",
    )
    .unwrap();
    path
}

#[test]
fn sweep_text_only_grid() {
    let dir = tempfile::tempdir().unwrap();
    let items = fusion_items_file(dir.path());
    let out = calkit(
        dir.path(),
        &[
            "sweep",
            items.to_str().unwrap(),
            "--sigmas",
            "0,25",
            "--form",
            "mc",
            "--client",
            "fixed:logits=2;0;0;0",
            "--mode",
            "text_only",
            "--out",
            "grid.csv",
            "--raw",
            "raw.jsonl",
        ],
    );
    assert_exit(&out, 0);
    let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 5); // header + 2 sigmas x 2 k
    let expected = 2.0f64.exp() / (2.0f64.exp() + 3.0);
    for line in grid.lines().skip(1) {
        let conf: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((conf - expected).abs() < 1e-12);
        assert!(line.ends_with("1,false"));
    }
    assert_eq!(fs::read_to_string(dir.path().join("raw.jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn sweep_missing_image_exits_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let items = fusion_items_file(dir.path());
    let out = calkit(
        dir.path(),
        &[
            "sweep",
            items.to_str().unwrap(),
            "--sigmas",
            "0",
            "--form",
            "mc",
            "--client",
            "fixed:logits=2;0;0;0",
            "--out",
            "grid.csv",
        ],
    );
    assert_exit(&out, 3);
    let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert!(grid.lines().skip(1).all(|l| l.ends_with("0,true")), "grid: {grid}");
}

#[test]
fn ape_with_suffix_invariant_model_returns_first_seed() {
    let dir = tempfile::tempdir().unwrap();
    let eval = mc_records_file(dir.path(), 8);
    fs::write(dir.path().join("seeds.txt"), "Final answer:\nAnswer:\n").unwrap();
    fs::write(dir.path().join("gen.txt"), "This answer might be:\n").unwrap();

    let out = calkit(
        dir.path(),
        &[
            "ape",
            "--seeds",
            "seeds.txt",
            "--k",
            "2",
            "--m",
            "2",
            "--n",
            "2",
            "--band",
            "0.02",
            "--eval",
            eval.to_str().unwrap(),
            "--client",
            "gold:p=1.0,k=4",
            "--generator",
            "canned:file=gen.txt",
            "--out",
            "trace.json",
        ],
    );
    assert_exit(&out, 0);
    let trace: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    // suffix-invariant model: the lexicographically-first seed stays best
    assert_eq!(trace["best"]["text"], json!("Answer:"));
    assert_eq!(trace["iterations"].as_array().unwrap().len(), 2);
    assert_eq!(trace["aborted_at"], Value::Null);
}

#[test]
fn global_replay_flag_serves_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let records = mc_records_file(dir.path(), 2);

    // hand-build the replay log for `idk segment --run --n 2`
    let parsed = calkit_core::record::load_dataset(
        &records,
        calkit_core::record::TaskKind::MultipleChoice,
        calkit_core::record::ErrorPolicy::FailFast,
    )
    .unwrap();
    let mut log_lines = Vec::new();
    for record in &parsed.records {
        let payload = PromptPayload::for_record(record);
        let request = wire_request(
            &payload,
            &WireCall::Samples { n: 2, temperature: 1.0, top_p: 0.95 },
        );
        let letter = ["A", "B", "C", "D"][record.gold_index.unwrap()];
        let response = json!({"choices": [
            {"message": {"content": letter}},
            {"message": {"content": letter}},
        ]});
        log_lines.push(json!({"request": request, "response": response, "timestamp": 0}).to_string());
    }
    fs::write(dir.path().join("replay.jsonl"), log_lines.join("\n") + "\n").unwrap();

    let out = calkit(
        dir.path(),
        &[
            "--replay",
            "replay.jsonl",
            "idk",
            "segment",
            records.to_str().unwrap(),
            "--run",
            "--n",
            "2",
            "--threshold",
            "1.0",
            "--out",
            "labels.jsonl",
        ],
    );
    assert_exit(&out, 0);
    let labels = fs::read_to_string(dir.path().join("labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 2);
    assert!(labels.lines().all(|l| l.contains("\"IK\"")));
}

#[test]
fn unknown_client_is_a_client_error() {
    let dir = tempfile::tempdir().unwrap();
    let records = mc_records_file(dir.path(), 2);
    let out = calkit(
        dir.path(),
        &[
            "idk",
            "segment",
            records.to_str().unwrap(),
            "--run",
            "--client",
            "noserver",
            "--out",
            "labels.jsonl",
        ],
    );
    assert_exit(&out, 2);
}
