use std::path::{Path, PathBuf};

use paydpi::dataset::{class_counts, load_jsonl, LabeledPayload};
use paydpi_cli::{make_synthetic, run, CliError, SyntheticSpec};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name).display().to_string()
}

fn paydpi(args: &[&str]) -> i32 {
    run(std::iter::once("paydpi").chain(args.iter().copied()))
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn manifest(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("manifest.{command}.json"))).unwrap()).unwrap()
}

const TRUTH: &str = "src_ip,dst_ip,src_port,dst_port,protocol,start_time,end_time,category
10.0.0.1,10.0.0.2,40000,80,TCP,99,101,Exploits
192.168.1.10,8.8.8.8,5353,53,UDP,200,200,Fuzzers
";

fn ingest_fixtures(dir: &Path) -> PathBuf {
    let code = paydpi(&[
        "ingest",
        "--out",
        &s(dir),
        "--pcap",
        &fixture("mixed.pcap"),
        &fixture("edge.pcap"),
        &fixture("one_record_le.pcap"),
    ]);
    assert_eq!(code, 0);
    dir.join("packets.jsonl")
}

#[test]
fn ingest_then_build_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let packets = ingest_fixtures(tmp.path());
    let stats: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("capture_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["total_frames"], 12);
    assert_eq!(stats["tcp_with_payload"], 5);
    assert_eq!(stats["udp_with_payload"], 2);

    let m = manifest(tmp.path(), "ingest");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    let out = &m["outputs"][0];
    assert_eq!(out["path"], "packets.jsonl");
    let digest = hex::encode(Sha256::digest(std::fs::read(&packets).unwrap()));
    assert_eq!(out["sha256"], digest.as_str());

    let truth = tmp.path().join("truth.csv");
    std::fs::write(&truth, TRUTH).unwrap();
    let built = tmp.path().join("built");
    let code = paydpi(&["build-dataset", "--out", &s(&built), "--packets", &s(&packets), "--truth", &s(&truth), "--mode", "binary", "--seed", "7"]);
    assert_eq!(code, 0);
    let data: Vec<LabeledPayload> = load_jsonl(&built.join("dataset.jsonl")).unwrap();
    // ABC (inside the Exploits window) and the DNS query are the only malicious packets
    assert_eq!(class_counts(&data), vec![2, 2]);
    let malicious: Vec<&[u8]> = data.iter().filter(|d| d.label == 1).map(|d| d.payload.as_slice()).collect();
    assert!(malicious.contains(&&b"ABC"[..]));
    assert!(malicious.contains(&&b"\x12\x34query"[..]));
    let labeling: Value = serde_json::from_str(&std::fs::read_to_string(built.join("labeling.json")).unwrap()).unwrap();
    assert_eq!(labeling["unique_payloads"], 7);
    assert_eq!(labeling["malicious"], 2);
    // the dataset file stores payloads as lowercase hex
    let text = std::fs::read_to_string(built.join("dataset.jsonl")).unwrap();
    assert!(text.contains("\"12347175657279\""), "{text}");
}

#[test]
fn multiclass_needs_three_nonempty_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let packets = s(&ingest_fixtures(tmp.path()));
    let truth = tmp.path().join("truth.csv");
    std::fs::write(&truth, TRUTH).unwrap();
    let out = s(&tmp.path().join("mc"));
    let base = ["build-dataset", "--out", &out, "--packets", &packets, "--truth", truth.to_str().unwrap(), "--mode", "multiclass"];
    assert_eq!(paydpi(&base), 2);
    assert_eq!(paydpi(&[&base[..], &["--classes", "Exploits,Fuzzers"]].concat()), 2);
    // Generic never occurs in the truth file
    assert_eq!(paydpi(&[&base[..], &["--preset", "unsw"]].concat()), 1);
}

#[test]
fn synthetic_corpus_contract() {
    let spec = SyntheticSpec { samples: 2000, seed: 1, ..SyntheticSpec::default() };
    assert_eq!((spec.motif.len(), spec.min_len, spec.max_len), (6, 40, 120));
    let data = make_synthetic(&spec).unwrap();
    assert_eq!(class_counts(&data), vec![1000, 1000]);
    let has_motif = |p: &[u8]| p.windows(spec.motif.len()).any(|w| w == spec.motif.as_slice());
    for d in &data {
        assert!((40..=120).contains(&d.payload.len()));
        assert_eq!(has_motif(&d.payload), d.label == 1);
    }
    // not sorted by class
    assert!(data[..100].iter().any(|d| d.label == 0) && data[..100].iter().any(|d| d.label == 1));
    assert_eq!(make_synthetic(&spec).unwrap(), data);
    assert_ne!(make_synthetic(&SyntheticSpec { seed: 2, ..spec.clone() }).unwrap(), data);

    for bad in [
        SyntheticSpec { min_len: 6, ..spec.clone() },
        SyntheticSpec { motif: vec![], ..spec.clone() },
        SyntheticSpec { min_len: 130, ..spec.clone() },
        SyntheticSpec { samples: 7, ..spec.clone() },
    ] {
        assert!(matches!(make_synthetic(&bad), Err(CliError::InvalidSpec(_))), "{bad:?}");
    }
}

#[test]
fn synthetic_files_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(paydpi(&["synthetic", "--out", &s(d), "--samples", "200", "--seed", "4"]), 0);
    }
    assert_eq!(std::fs::read(a.join("dataset.jsonl")).unwrap(), std::fs::read(b.join("dataset.jsonl")).unwrap());
    assert_eq!(manifest(&a, "synthetic")["outputs"], manifest(&b, "synthetic")["outputs"]);
    assert_ne!(paydpi(&["synthetic", "--out", &s(&a), "--motif", "0011", "--min-len", "2"]), 0);
    assert_eq!(paydpi(&["synthetic", "--out", &s(&a), "--motif", "xyz"]), 2);
}

#[test]
fn flags_override_config_file_over_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(paydpi(&["synthetic", "--out", &s(dir), "--samples", "40", "--seed", "3"]), 0);
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        "seed = 9\n[model]\nhidden_size = 32\nintermediate_size = 48\n[train]\nepochs = 1\nbatch_size = 8\n",
    )
    .unwrap();
    let code = paydpi(&[
        "train",
        "--out",
        &s(dir),
        "--config",
        &s(&config),
        "--dataset",
        &s(&dir.join("dataset.jsonl")),
        "--hidden-size",
        "16",
    ]);
    assert_eq!(code, 0);
    let m = manifest(dir, "train");
    let model = &m["config"]["model"];
    assert_eq!(model["hidden_size"], 16);
    assert_eq!(model["intermediate_size"], 48);
    assert_eq!(model["num_hidden_layers"], 2);
    assert_eq!(model["num_labels"], 2);
    assert_eq!(m["config"]["train"]["epochs"], 1);
    assert_eq!(m["config"]["train"]["learning_rate"], 1e-3);
    assert_eq!(m["seed"], 9);
    assert!(dir.join("checkpoint.bin").exists());

    // a wrong-arity checkpoint is refused by evaluate
    let code = paydpi(&[
        "evaluate",
        "--out",
        &s(dir),
        "--checkpoint",
        &s(&dir.join("checkpoint.bin")),
        "--dataset",
        &s(&dir.join("split/test.jsonl")),
        "--mode",
        "multiclass",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn bad_configs_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(paydpi(&["synthetic", "--out", &s(dir), "--samples", "20"]), 0);
    let data = s(&dir.join("dataset.jsonl"));
    for (i, body) in ["[model]\nhiden_size = 3\n", "[model]\nnum_labels = 2\n", "mode = \"multiclass\"\n[model]\nnum_labels = 2\n", "[train]\nseed = 1\n", "bogus = 1\n"]
        .iter()
        .enumerate()
    {
        let cfg = dir.join(format!("bad{i}.toml"));
        std::fs::write(&cfg, body).unwrap();
        let code = paydpi(&["train", "--out", &s(dir), "--config", &s(&cfg), "--dataset", &data, "--epochs", "1"]);
        // num_labels = 2 agrees with the default binary mode
        let expected = if i == 1 { 0 } else { 2 };
        assert_eq!(code, expected, "{body}");
    }
    assert_eq!(paydpi(&["train", "--out", &s(dir), "--dataset", &data, "--model-preset", "huge"]), 1);
    assert_eq!(paydpi(&["frobnicate"]), 2);
    assert_eq!(paydpi(&["train", "--out", &s(dir), "--dataset", &s(&dir.join("missing.jsonl"))]), 1);
}

#[test]
fn report_combines_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let report = paydpi::eval::metrics(
        &paydpi::eval::ConfusionMatrix::from_counts(vec![vec![357, 184], vec![37, 504]]),
        paydpi::eval::Mode::Binary,
    )
    .unwrap();
    std::fs::write(dir.join("a.json"), report.to_json()).unwrap();
    std::fs::write(dir.join("b.json"), report.to_json()).unwrap();
    let out = dir.join("out");
    let code = paydpi(&["report", "--out", &s(&out), "--inputs", &s(&dir.join("a.json")), &s(&dir.join("b.json")), "--names", "transformer"]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("transformer") && lines[1].contains("79.57"));
    assert!(lines[2].starts_with('b'));
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from-env");
    std::env::set_var("PAYDPI_OUT", &dir);
    let code = paydpi(&["synthetic", "--samples", "10"]);
    std::env::remove_var("PAYDPI_OUT");
    assert_eq!(code, 0);
    assert!(dir.join("dataset.jsonl").exists());
    assert!(dir.join("manifest.synthetic.json").exists());
}
