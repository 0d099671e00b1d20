mod common;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde_json::Value;
use tempfile::tempdir;

use common::{fixture, hoi_eval, oracle_report};
use hoi_eval::archive::EmbeddingArchive;
use hoi_eval::dataset::{load_annotations, load_taxonomy};
use hoi_eval::pairing::read_pairs;
use hoi_eval::scoring::read_detections;

fn s(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &std::process::Output) {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(o));
}

fn small(name: &str) -> String {
    fixture("small").join(name).to_str().unwrap().to_string()
}

/// Numeric table cells of every data row.
fn cells(table: &str) -> Vec<String> {
    table
        .lines()
        .skip(3)
        .flat_map(|l| l.split('|').skip(1).flat_map(|c| c.split_whitespace().map(String::from)).collect::<Vec<_>>())
        .collect()
}

fn synth(dir: &Path, images: usize) {
    ok(&hoi_eval(&["synth", "--out", s(dir), "--images", &images.to_string(), "--seed", "3"]));
}

#[test]
fn gt_pair_count_equals_distinct_annotated_pairs() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("pairs.jsonl");
    let o = hoi_eval(&[
        "pairs", "--regime", "gt", "--taxonomy", &small("taxonomy.json"),
        "--annotations", &small("annotations.json"), "--out", s(&out),
    ]);
    ok(&o);

    let tax: Value = serde_json::from_str(&fs::read_to_string(small("taxonomy.json")).unwrap()).unwrap();
    let object_of: HashMap<u64, u64> = tax
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["hoi_id"].as_u64().unwrap(), c["object_id"].as_u64().unwrap()))
        .collect();
    let anno: Value = serde_json::from_str(&fs::read_to_string(small("annotations.json")).unwrap()).unwrap();
    let distinct: HashSet<String> = anno["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            format!("{} {} {} {}", a["image_id"], a["human_box"], a["object_box"], object_of[&a["hoi_id"].as_u64().unwrap()])
        })
        .collect();
    assert_eq!(read_pairs(&out).unwrap().len(), distinct.len());
    assert!(stderr(&o).contains(&format!("pairs={}", distinct.len())));
}

#[test]
fn gt_r_count_law_one_human_one_object() {
    let dir = tempdir().unwrap();
    let anno = dir.path().join("anno.json");
    let images: Vec<Value> = (0..4)
        .map(|i| serde_json::json!({"id": format!("im{i}"), "file_name": "x.jpg", "width": 100, "height": 100}))
        .collect();
    let instances: Vec<Value> = (0..4)
        .map(|i| {
            serde_json::json!({"image_id": format!("im{i}"), "human_box": [0, 0, 10, 10 + i],
                               "object_box": [20, 20, 40, 40], "hoi_id": 2})
        })
        .collect();
    fs::write(&anno, serde_json::json!({"images": images, "annotations": instances}).to_string()).unwrap();
    let out = dir.path().join("pairs.jsonl");
    ok(&hoi_eval(&[
        "pairs", "--regime", "gt-r", "--taxonomy", &small("taxonomy.json"),
        "--annotations", s(&anno), "--out", s(&out),
    ]));
    // |H| * |B| - |H| with one human and two boxes per image
    assert_eq!(read_pairs(&out).unwrap().len(), 4);
}

#[test]
fn detector_regime_with_empty_file_gives_zero_pairs() {
    let dir = tempdir().unwrap();
    let dets = dir.path().join("boxes.jsonl");
    fs::write(&dets, "").unwrap();
    let out = dir.path().join("pairs.jsonl");
    let o = hoi_eval(&[
        "pairs", "--regime", "detector", "--taxonomy", &small("taxonomy.json"),
        "--detections", s(&dets), "--out", s(&out),
    ]);
    ok(&o);
    assert!(stderr(&o).contains("pairs=0"));
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn detector_regime_requires_detections() {
    let dir = tempdir().unwrap();
    let o = hoi_eval(&[
        "pairs", "--regime", "detector", "--taxonomy", &small("taxonomy.json"),
        "--out", s(&dir.path().join("p.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--detections"));
}

fn score_args<'a>(d: &'a Path, emb: &'a Path, out: &'a Path) -> Vec<String> {
    [
        "score", "--taxonomy", s(&d.join("taxonomy.json")), "--pairs", s(&d.join("pairs.jsonl")),
        "--pair-embeddings", s(emb), "--text-embeddings", s(&d.join("text_embeddings.hoie")), "--out", s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect()
}

fn run(args: &[String]) -> std::process::Output {
    hoi_eval(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn gt_pairs(d: &Path) {
    ok(&hoi_eval(&[
        "pairs", "--regime", "gt", "--taxonomy", s(&d.join("taxonomy.json")),
        "--annotations", s(&d.join("annotations.json")), "--out", s(&d.join("pairs.jsonl")),
    ]));
}

#[test]
fn score_is_deterministic_and_leaves_inputs_untouched() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth(d, 5);
    gt_pairs(d);
    let inputs = ["pairs.jsonl", "pair_embeddings.gt.hoie", "text_embeddings.hoie", "taxonomy.json"];
    let before: Vec<Vec<u8>> = inputs.iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    let emb = d.join("pair_embeddings.gt.hoie");
    let (a, b) = (d.join("a.jsonl"), d.join("b.jsonl"));
    ok(&run(&score_args(d, &emb, &a)));
    ok(&run(&score_args(d, &emb, &b)));
    let bytes = fs::read(&a).unwrap();
    assert!(!bytes.is_empty());
    assert_eq!(bytes, fs::read(&b).unwrap());
    let after: Vec<Vec<u8>> = inputs.iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    assert_eq!(before, after);
}

/// Rewrites the pair archive without one key; returns that key.
fn drop_one_key(d: &Path, out: &Path) -> String {
    let full = EmbeddingArchive::load(&d.join("pair_embeddings.gt.hoie")).unwrap();
    let victim = full.keys()[full.len() / 2].clone();
    let mut partial = EmbeddingArchive::new(full.dim()).unwrap();
    for (k, v) in full.iter().filter(|(k, _)| *k != victim) {
        partial.insert(k, v).unwrap();
    }
    partial.write(out).unwrap();
    victim
}

#[test]
fn missing_embedding_fails_naming_key() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth(d, 5);
    gt_pairs(d);
    let partial = d.join("partial.hoie");
    let victim = drop_one_key(d, &partial);
    let o = run(&score_args(d, &partial, &d.join("out.jsonl")));
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains(&format!("\"{victim}\"")), "{}", stderr(&o));
}

#[test]
fn missing_embedding_skipped_under_skip_policy() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth(d, 5);
    gt_pairs(d);
    let partial = d.join("partial.hoie");
    let victim = drop_one_key(d, &partial);
    let out = d.join("out.jsonl");
    let mut args = score_args(d, &partial, &out);
    args.extend(["--on-missing".to_string(), "skip".to_string()]);
    let o = run(&args);
    ok(&o);
    assert!(stderr(&o).contains("skipped_missing=1"), "{}", stderr(&o));

    // recount: one detection per candidate class of every remaining pair
    let tax = load_taxonomy(&d.join("taxonomy.json")).unwrap();
    let pairs = read_pairs(&d.join("pairs.jsonl")).unwrap();
    let expected: usize = pairs
        .iter()
        .filter(|p| p.embedding_key() != victim)
        .map(|p| tax.hois_for_object(p.object_id).len())
        .sum();
    let dets = read_detections(&out, Some(&tax)).unwrap();
    assert_eq!(dets.len(), expected);
    let (img, idx) = victim.split_once(':').unwrap();
    let victim_pair = pairs.iter().find(|p| p.image_id == img && p.pair_index.to_string() == idx).unwrap();
    assert!(!dets.iter().any(|x| x.image_id == img
        && x.human_box == victim_pair.human_box
        && x.object_box == victim_pair.object_box));
}

fn eval(dets: &str, out: &Path) -> std::process::Output {
    hoi_eval(&[
        "eval", "--taxonomy", &small("taxonomy.json"), "--annotations", &small("annotations.json"),
        "--splits-dir", &small("splits"), "--detections", dets, "--out", s(out),
    ])
}

#[test]
fn echoed_ground_truth_prints_100_everywhere() {
    let dir = tempdir().unwrap();
    let anno: Value = serde_json::from_str(&fs::read_to_string(small("annotations.json")).unwrap()).unwrap();
    let lines: Vec<String> = anno["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a["score"] = 1.0.into();
            a.to_string()
        })
        .collect();
    let dets = dir.path().join("echo.jsonl");
    fs::write(&dets, lines.join("\n")).unwrap();
    let o = eval(s(&dets), &dir.path().join("r.json"));
    ok(&o);
    let c = cells(&stdout(&o));
    assert_eq!(c.len(), 9, "{}", stdout(&o)); // three groups of three
    assert!(c.iter().all(|v| v == "100.00"), "{}", stdout(&o));
}

#[test]
fn fixture_matches_golden_report_and_oracle() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("report.json");
    ok(&eval(&small("detections.jsonl"), &out));
    let got: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let golden: Value = serde_json::from_str(&fs::read_to_string(small("golden_report.json")).unwrap()).unwrap();
    assert_eq!(got, golden);

    let tax = load_taxonomy(Path::new(&small("taxonomy.json"))).unwrap();
    let anno = load_annotations(Path::new(&small("annotations.json")), &tax).unwrap();
    let dets = read_detections(Path::new(&small("detections.jsonl")), Some(&tax)).unwrap();
    let gts: Vec<_> = anno.instances().cloned().collect();
    let oracle = oracle_report(&dets, &gts, &tax, 0.5);
    let close = |v: &Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-9;
    assert!(close(&got["full"], oracle.full));
    assert!(close(&got["rare"], oracle.rare));
    assert!(close(&got["non_rare"], oracle.non_rare));
    for c in got["per_class"].as_array().unwrap() {
        assert!(close(&c["ap"], oracle.per_class[&(c["hoi_id"].as_u64().unwrap() as u32)]));
    }
    // hand-computed: APs 0, 1, 1/2, 1, 1/2 over classes 1..5, rare = {1, 3}
    assert!(close(&got["full"], 60.0));
    assert!(close(&got["rare"], 25.0));
    assert!(close(&got["non_rare"], 250.0 / 3.0));
}

#[test]
fn eval_output_is_byte_identical_across_runs() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let oa = eval(&small("detections.jsonl"), &a);
    let ob = eval(&small("detections.jsonl"), &b);
    ok(&oa);
    assert_eq!(oa.stdout, ob.stdout);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn empty_detections_give_zero_table() {
    let dir = tempdir().unwrap();
    let dets = dir.path().join("empty.jsonl");
    fs::write(&dets, "").unwrap();
    let out = dir.path().join("r.json");
    let o = eval(s(&dets), &out);
    ok(&o);
    let c = cells(&stdout(&o));
    assert_eq!(c.len(), 9);
    assert!(c.iter().all(|v| v == "0.00"), "{}", stdout(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((r["full"].as_f64(), r["rare"].as_f64(), r["non_rare"].as_f64()), (Some(0.0), Some(0.0), Some(0.0)));
}

#[test]
fn unknown_image_fails() {
    let dir = tempdir().unwrap();
    let dets = dir.path().join("bad.jsonl");
    fs::write(
        &dets,
        r#"{"image_id":"nope","human_box":[0,0,10,10],"object_box":[0,0,5,5],"hoi_id":2,"score":0.5}"#,
    )
    .unwrap();
    let out = dir.path().join("r.json");
    let o = eval(s(&dets), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope"));
    assert!(!out.exists());
}

fn report(name: &str) -> String {
    fixture("reports").join(name).to_str().unwrap().to_string()
}

/// Values of the delta row whose label starts with `label`.
fn delta_row(table: &str, label: &str) -> Vec<String> {
    let line = table.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("{table}"));
    line.split('|').skip(1).flat_map(|c| c.split_whitespace().map(String::from).collect::<Vec<_>>()).collect()
}

#[test]
fn compare_identical_reports_gives_zero_deltas() {
    let o = hoi_eval(&["compare", &report("a.json"), &report("a.json"), "--labels", "x,y"]);
    ok(&o);
    assert!(delta_row(&stdout(&o), "y - x").iter().all(|v| v == "+0.00"), "{}", stdout(&o));
}

#[test]
fn compare_three_reports_matches_hand_subtraction() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("table.txt");
    let o = hoi_eval(&["compare", &report("a.json"), &report("b.json"), &report("c.json"), "--out", s(&out)]);
    ok(&o);
    let t = stdout(&o);
    assert_eq!(fs::read_to_string(&out).unwrap(), t);
    // a = (49.56, 54.98, 47.94), b = (38.86, 50.58, 35.36), c = (30.12, 27.40, 31.05)
    assert_eq!(delta_row(&t, "b - a"), ["-10.70", "-4.40", "-12.58"]);
    assert_eq!(delta_row(&t, "c - a"), ["-19.44", "-27.58", "-16.89"]);
}

#[test]
fn compare_rejects_incompatible_reports_and_single_input() {
    let o = hoi_eval(&["compare", &report("a.json"), &small("golden_report.json")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different splits"));
    let o = hoi_eval(&["compare", &report("a.json")]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn validate_accepts_synthetic_extractor_outputs() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth(d, 4);
    gt_pairs(d);
    let o = hoi_eval(&[
        "validate", "--taxonomy", s(&d.join("taxonomy.json")), "--annotations", s(&d.join("annotations.json")),
        "--splits-dir", s(&d.join("splits")), "--pairs", s(&d.join("pairs.jsonl")),
        "--pair-embeddings", s(&d.join("pair_embeddings.gt.hoie")),
        "--text-embeddings", s(&d.join("text_embeddings.hoie")),
        "--detections", s(&d.join("detector_boxes.jsonl")),
    ]);
    ok(&o);
    let out = stdout(&o);
    assert!(out.contains("detector boxes"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("ok ")).count(), 6 + 6, "{out}");
}

#[test]
fn validate_sniffs_hoi_detections() {
    let o = hoi_eval(&["validate", "--taxonomy", &small("taxonomy.json"), "--detections", &small("detections.jsonl")]);
    ok(&o);
    assert!(stdout(&o).contains("13 HOI detections"));
}

#[test]
fn validate_rejects_broken_archives() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    synth(d, 2);
    let text = d.join("text_embeddings.hoie");
    let bytes = fs::read(&text).unwrap();

    let truncated = d.join("truncated.hoie");
    fs::write(&truncated, &bytes[..bytes.len() - 10]).unwrap();
    let o = hoi_eval(&["validate", "--text-embeddings", s(&truncated)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));

    // scale the first vector: header is 20 bytes, then key length, key, floats
    let key_len = u16::from_le_bytes([bytes[20], bytes[21]]) as usize;
    let mut bad = bytes.clone();
    let at = 22 + key_len;
    let x = f32::from_le_bytes(bad[at..at + 4].try_into().unwrap());
    bad[at..at + 4].copy_from_slice(&(x + 0.5).to_le_bytes());
    let bad_norm = d.join("bad_norm.hoie");
    fs::write(&bad_norm, &bad).unwrap();
    let o = hoi_eval(&["validate", "--text-embeddings", s(&bad_norm)]);
    assert_eq!(o.status.code(), Some(1));
    let key = String::from_utf8(bytes[22..22 + key_len].to_vec()).unwrap();
    assert!(stderr(&o).contains(&key), "{}", stderr(&o));

    // a text archive lacking one class of the taxonomy
    let full = EmbeddingArchive::load(&text).unwrap();
    let mut partial = EmbeddingArchive::new(full.dim()).unwrap();
    for (k, v) in full.iter().skip(1) {
        partial.insert(k, v).unwrap();
    }
    let missing = d.join("missing.hoie");
    partial.write(&missing).unwrap();
    let o = hoi_eval(&["validate", "--taxonomy", s(&d.join("taxonomy.json")), "--text-embeddings", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&full.keys()[0]), "{}", stderr(&o));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "regime": "gt-r",
            "taxonomy": small("taxonomy.json"),
            "annotations": small("annotations.json"),
            "out": s(&d.join("from_config.jsonl")),
        })
        .to_string(),
    )
    .unwrap();
    let o = hoi_eval(&["--config", s(&cfg), "pairs"]);
    ok(&o);
    assert!(stderr(&o).contains("regime=gt-r"));
    assert!(d.join("from_config.jsonl").exists());

    let o = hoi_eval(&["pairs", "--config", s(&cfg), "--regime", "gt", "--out", s(&d.join("flag.jsonl"))]);
    ok(&o);
    assert!(stderr(&o).contains("regime=gt "));
    assert!(d.join("flag.jsonl").exists());

    fs::write(&cfg, r#"{"regime": "gt", "bogus": 1}"#).unwrap();
    let o = hoi_eval(&["--config", s(&cfg), "pairs"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn invalid_settings_are_usage_errors() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = hoi_eval(&[
        "eval", "--taxonomy", &small("taxonomy.json"), "--annotations", &small("annotations.json"),
        "--detections", &small("detections.jsonl"), "--out", s(&out), "--iou-threshold", "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = hoi_eval(&["pairs", "--taxonomy", &small("taxonomy.json"), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--regime"));
    let o = hoi_eval(&["score", "--pairs", "/does/not/exist.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}
