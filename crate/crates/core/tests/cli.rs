use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coverssl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coverssl"))
        .env("COVERSSL_OUTPUT_DIR", out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--way", "2", "--shot", "2", "--q-per-class", "2", "--repetitions", "2", "--epochs", "2",
    "--batch-clouds", "2", "--extractor-widths", "4,8", "--branch-widths", "8", "--head-hidden",
    "8", "--probe-epochs", "10",
];

#[test]
fn end_to_end_commands() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    ok(&coverssl(
        &data,
        &["synthesize", "--classes", "3", "--per-class", "5", "--points", "40", "--seed", "2"],
    ));
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());
    assert!(data.join("run_record.json").exists());
    let cloud = data.join("sphere/sphere_000.xyz");
    let cloud = cloud.to_str().unwrap();

    let trees = root.path().join("trees");
    ok(&coverssl(&trees, &["build-tree", "--input", cloud]));
    let tree: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(trees.join("sphere_000.tree.json")).unwrap()).unwrap();
    assert_eq!(tree["epsilon"], 2.0);

    let labels = root.path().join("labels");
    ok(&coverssl(&labels, &["gen-labels", "--input", cloud, "--epsilon", "2.2"]));
    let text = fs::read_to_string(labels.join("sphere_000.labels.jsonl")).unwrap();
    assert!(text.lines().count() > 0);

    let train = root.path().join("train");
    let mut args = vec!["pretrain", "--manifest", manifest.to_str().unwrap()];
    args.extend_from_slice(TINY);
    ok(&coverssl(&train, &args));
    let curve = fs::read_to_string(train.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,loss_C,loss_R,combined"));
    assert_eq!(curve.lines().count(), 3);

    let ckpt = train.join("model.tensors");
    let episode = train.join("episode.json");
    let emb = root.path().join("emb");
    ok(&coverssl(
        &emb,
        &[
            "embed",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--manifest", manifest.to_str().unwrap(),
            "--episode", episode.to_str().unwrap(),
        ],
    ));
    let probe = root.path().join("probe");
    let msg = ok(&coverssl(
        &probe,
        &[
            "probe",
            "--embeddings", emb.join("embeddings.tensors").to_str().unwrap(),
            "--episode", episode.to_str().unwrap(),
            "--epochs", "20",
        ],
    ));
    assert!(msg.contains("accuracy"));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(probe.join("evaluation.json")).unwrap()).unwrap();
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let heat = root.path().join("heat");
    ok(&coverssl(
        &heat,
        &["heatmap", "--checkpoint", ckpt.to_str().unwrap(), "--input", cloud, "--anchor", "3"],
    ));
    let csv = fs::read_to_string(heat.join("sphere_000.heatmap.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y,z,distance"));
    assert_eq!(lines.count(), 40);
    let row3: Vec<&str> = csv.lines().nth(4).unwrap().split(',').collect();
    assert_eq!(row3[3], "0");
}

#[test]
fn pipeline_and_sweep_replay_bit_identically() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    ok(&coverssl(&data, &["synthesize", "--classes", "2", "--per-class", "4", "--points", "32"]));
    let manifest = data.join("manifest.json");

    let first = root.path().join("first");
    let mut args = vec!["pipeline", "--manifest", manifest.to_str().unwrap()];
    args.extend_from_slice(TINY);
    ok(&coverssl(&first, &args));
    let results = fs::read_to_string(first.join("results.csv")).unwrap();
    assert_eq!(results.lines().next(), Some("episode_seed,way,shot,method,accuracy"));
    let summary = fs::read_to_string(first.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let second = root.path().join("second");
    let record = first.join("run_record.json");
    ok(&coverssl(&second, &["pipeline", "--replay", record.to_str().unwrap()]));
    for f in ["results.csv", "summary.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap());
    }

    let sweep = root.path().join("sweep");
    let mut args = vec!["sweep-epsilon", "--manifest", manifest.to_str().unwrap(), "--grid", "1.5,2.5"];
    args.extend_from_slice(TINY);
    ok(&coverssl(&sweep, &args));
    let rows = fs::read_to_string(sweep.join("epsilon_sweep.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("epsilon,accuracy,silhouette"));
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("o");

    // Configuration problems exit with 1.
    let o = coverssl(&out, &["synthesize", "--classes", "7"]);
    assert_eq!(o.status.code(), Some(1));
    let o = coverssl(&out, &["pipeline", "--manifest", "m.json", "--epsilon", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = coverssl(&out, &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));

    // Data problems exit with 2.
    let bad = root.path().join("bad.xyz");
    fs::write(&bad, "0 0 0\n1 1\n").unwrap();
    let o = coverssl(&out, &["build-tree", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let o = coverssl(&out, &["build-tree", "--input", "/nonexistent.xyz"]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(coverssl(&out, &["--help"]).status.code(), Some(0));
}

#[test]
fn flag_beats_environment_for_output_dir() {
    let root = tempfile::tempdir().unwrap();
    let env_dir = root.path().join("env");
    let flag_dir = root.path().join("flag");
    ok(&coverssl(
        &env_dir,
        &["synthesize", "--classes", "1", "--per-class", "1", "--points", "4", "--out-dir", flag_dir.to_str().unwrap()],
    ));
    assert!(flag_dir.join("manifest.json").exists());
    assert!(!env_dir.exists());
}
