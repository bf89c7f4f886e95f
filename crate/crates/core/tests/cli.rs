use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ktcuda::io::{read_assignments, read_manifest, write_manifest};
use ktcuda::{
    generate_synthetic_domain, AffineEmbedder, AnyEmbedder, Checkpoint, DomainManifest, Embedder, FeatureVector,
    SyntheticSpec, Tracklet,
};
use tempfile::TempDir;

fn ktcuda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktcuda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ktcuda(args);
    assert!(
        out.status.success(),
        "ktcuda {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn four_camera_target(dir: &TempDir) -> PathBuf {
    let mut spec = SyntheticSpec::new("target", 15, 4, 6, 3);
    spec.noise_sigma = 0.1;
    spec.camera_shift = 0.1;
    let m = generate_synthetic_domain(&spec).unwrap();
    let p = dir.path().join("target.jsonl");
    write_manifest(&p, &m).unwrap();
    p
}

#[test]
fn cluster_writes_every_tracklet_once() {
    let dir = TempDir::new().unwrap();
    let manifest = four_camera_target(&dir);
    let out = path(&dir, "clusters.tsv");
    let stdout = ok(&[
        "cluster",
        "--manifest",
        manifest.to_str().unwrap(),
        "--K",
        "2",
        "--T",
        "2",
        "--k1",
        "2",
        "--out",
        &out,
    ]);
    assert!(stdout.contains("K=2 T=2 k1=2"), "{stdout}");

    let text = std::fs::read_to_string(&out).unwrap();
    let mut seen = BTreeMap::new();
    for line in text.lines() {
        let (cluster, id) = line.split_once('\t').unwrap();
        cluster.parse::<i64>().unwrap();
        *seen.entry(id.to_string()).or_insert(0) += 1;
    }
    let m = read_manifest(&manifest).unwrap();
    assert_eq!(seen.len(), m.len());
    assert!(seen.values().all(|&n| n == 1));
    let clusters = read_assignments(&out).unwrap();
    assert!(!clusters.is_empty());
    assert!(clusters.clusters.iter().all(|c| c.member_tracklet_ids.len() > 2));
}

#[test]
fn cluster_defaults_follow_camera_count() {
    let dir = TempDir::new().unwrap();
    let manifest = four_camera_target(&dir);
    let stdout = ok(&[
        "cluster",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        &path(&dir, "a.tsv"),
    ]);
    assert!(stdout.contains("K=2 T=2 k1=2"), "{stdout}");

    let spec = SyntheticSpec::new("pair", 5, 2, 3, 1);
    let two = dir.path().join("two.jsonl");
    write_manifest(&two, &generate_synthetic_domain(&spec).unwrap()).unwrap();
    let stdout = ok(&[
        "cluster",
        "--manifest",
        two.to_str().unwrap(),
        "--out",
        &path(&dir, "b.tsv"),
    ]);
    assert!(stdout.contains("K=1 T=1 k1=1"), "{stdout}");
}

#[test]
fn cluster_output_ignores_thread_count() {
    let dir = TempDir::new().unwrap();
    let manifest = four_camera_target(&dir);
    let m = manifest.to_str().unwrap();
    ok(&[
        "cluster",
        "--manifest",
        m,
        "--out",
        &path(&dir, "one.tsv"),
        "--threads",
        "1",
    ]);
    ok(&[
        "cluster",
        "--manifest",
        m,
        "--out",
        &path(&dir, "many.tsv"),
        "--threads",
        "5",
    ]);
    assert_eq!(
        std::fs::read(path(&dir, "one.tsv")).unwrap(),
        std::fs::read(path(&dir, "many.tsv")).unwrap()
    );
}

#[test]
fn adapt_without_rounds_copies_the_checkpoint() {
    let dir = TempDir::new().unwrap();
    let manifest = four_camera_target(&dir);
    let input = dir.path().join("in.kte");
    Checkpoint::new(AnyEmbedder::Affine(AffineEmbedder::random(6, 4, 9)), 17, 0)
        .save(&input)
        .unwrap();
    let out = path(&dir, "out.kte");
    let report = path(&dir, "report.json");
    ok(&[
        "adapt",
        "--checkpoint",
        input.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--I",
        "0",
        "--out",
        &out,
        "--report",
        &report,
    ]);
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&out).unwrap());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["stop_reason"], "completed");
    assert_eq!(json["rounds"].as_array().unwrap().len(), 0);
}

#[test]
fn adapt_trains_and_bumps_the_round() {
    let dir = TempDir::new().unwrap();
    let manifest = four_camera_target(&dir);
    let input = dir.path().join("in.kte");
    Checkpoint::new(AnyEmbedder::Affine(AffineEmbedder::identity(6, 6)), 0, 0)
        .save(&input)
        .unwrap();
    let out = path(&dir, "out.kte");
    let stdout = ok(&[
        "adapt",
        "--checkpoint",
        input.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--I",
        "2",
        "--iterations",
        "100",
        "--seed",
        "5",
        "--out",
        &out,
    ]);
    assert!(stdout.contains("stop reason: completed"), "{stdout}");
    let adapted = Checkpoint::load(&out).unwrap();
    assert_eq!(adapted.round, 2);
    assert_eq!(adapted.seed, 5);
}

/// Four queries in one camera whose first matches in the gallery camera sit
/// at ranks 1, 1, 3 and 6.
fn crafted_fixture(dir: &TempDir) -> (PathBuf, PathBuf) {
    let one = |id: String, cam: &str, identity: &str, x: f64| {
        Tracklet::new(id, cam, Some(identity.to_string()), vec![FeatureVector::new(vec![x])])
    };
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for (q, rank) in [1usize, 1, 3, 6].into_iter().enumerate() {
        let x = 100.0 * q as f64;
        let who = format!("id{q}");
        queries.push(one(format!("q{q}"), "Q", &who, x));
        for j in 1..=rank {
            let identity = if j == rank {
                who.clone()
            } else {
                format!("other{q}-{j}")
            };
            gallery.push(one(format!("g{q}-{j}"), "G", &identity, x + j as f64 * 0.1));
        }
    }
    let qp = dir.path().join("queries.jsonl");
    let gp = dir.path().join("gallery.jsonl");
    write_manifest(&qp, &DomainManifest::new("queries", queries)).unwrap();
    write_manifest(&gp, &DomainManifest::new("gallery", gallery)).unwrap();
    (qp, gp)
}

#[test]
fn eval_prints_cmc_for_the_crafted_fixture() {
    let dir = TempDir::new().unwrap();
    let (queries, gallery) = crafted_fixture(&dir);
    let summary = path(&dir, "summary.json");
    let csv = path(&dir, "plot.csv");
    let stdout = ok(&[
        "eval",
        "--manifest",
        queries.to_str().unwrap(),
        "--gallery",
        gallery.to_str().unwrap(),
        "--ranks",
        "1,5,20",
        "--summary",
        &summary,
        "--csv",
        &csv,
    ]);
    assert!(stdout.contains("R1=0.500000"), "{stdout}");
    assert!(stdout.contains("R5=0.750000"), "{stdout}");
    assert!(stdout.contains("R20=1.000000"), "{stdout}");

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(json["cmc"][0], 0.5);
    let expected_map = (1.0 + 1.0 + 1.0 / 3.0 + 1.0 / 6.0) / 4.0;
    assert!((json["map"].as_f64().unwrap() - expected_map).abs() < 1e-12);
    let plot = std::fs::read_to_string(csv).unwrap();
    assert!(plot.starts_with("series,x,y\ncmc,1,0.5\n"), "{plot}");
}

#[test]
fn eval_reports_cluster_quality_on_multi_camera_manifests() {
    let dir = TempDir::new().unwrap();
    let manifest = four_camera_target(&dir);
    let stdout = ok(&["eval", "--manifest", manifest.to_str().unwrap()]);
    assert!(stdout.contains("purity="), "{stdout}");
    assert!(stdout.contains("mAP="), "{stdout}");
}

#[test]
fn synth_train_and_merge_round_trip() {
    let dir = TempDir::new().unwrap();
    let a = path(&dir, "a.jsonl");
    let b = path(&dir, "b.jsonl");
    ok(&[
        "synth",
        "--out",
        &a,
        "--name",
        "a",
        "--identities",
        "6",
        "--cameras",
        "3",
        "--dim",
        "4",
        "--seed",
        "1",
    ]);
    ok(&[
        "synth",
        "--out",
        &b,
        "--name",
        "b",
        "--identities",
        "4",
        "--cameras",
        "2",
        "--dim",
        "4",
        "--seed",
        "2",
        "--sidecar",
        &path(&dir, "b.ktf"),
    ]);
    assert_eq!(read_manifest(&b).unwrap().len(), 8);

    let merged = path(&dir, "merged.jsonl");
    let report = path(&dir, "report.jsonl");
    let table = ok(&[
        "merge",
        &a,
        &b,
        "--out",
        &merged,
        "--min-identities",
        "5",
        "--report",
        &report,
    ]);
    assert!(table.contains("too-few-identities"), "{table}");
    let m = read_manifest(&merged).unwrap();
    assert_eq!(m.name, "a");
    assert!(m.tracklets.iter().all(|t| t.tracklet_id.starts_with("a/")));
    assert_eq!(std::fs::read_to_string(report).unwrap().lines().count(), 3);

    let ck = path(&dir, "source.kte");
    ok(&[
        "train-source",
        "--manifest",
        &merged,
        "--out",
        &ck,
        "--output-dim",
        "3",
        "--iterations",
        "50",
    ]);
    let loaded = Checkpoint::load(&ck).unwrap();
    assert_eq!((loaded.round, loaded.embedder.architecture().output_dim()), (0, 3));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = TempDir::new().unwrap();
    let missing = ktcuda(&[
        "cluster",
        "--manifest",
        &path(&dir, "nope.jsonl"),
        "--out",
        &path(&dir, "x.tsv"),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.jsonl"));

    let unknown = ktcuda(&["cluster", "--frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    let line = r#"{"tracklet_id":"t","camera_id":"c","identity":null,"frames":[[1.0]]}"#;
    std::fs::write(&bad, format!("{line}\n{line}\n")).unwrap();
    let dup = ktcuda(&[
        "cluster",
        "--manifest",
        bad.to_str().unwrap(),
        "--out",
        &path(&dir, "x.tsv"),
    ]);
    assert_ne!(dup.status.code(), Some(0));
    let validate = ktcuda(&["validate", bad.to_str().unwrap()]);
    assert_eq!(validate.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&validate.stdout).contains('t'));

    let one_camera = dir.path().join("one.jsonl");
    write_manifest(
        &one_camera,
        &DomainManifest::new(
            "one",
            vec![
                Tracklet::new("a", "c", None, vec![FeatureVector::new(vec![0.0])]),
                Tracklet::new("b", "c", None, vec![FeatureVector::new(vec![1.0])]),
            ],
        ),
    )
    .unwrap();
    let single = ktcuda(&[
        "cluster",
        "--manifest",
        one_camera.to_str().unwrap(),
        "--out",
        &path(&dir, "x.tsv"),
    ]);
    assert_eq!(single.status.code(), Some(1));
}

#[test]
fn checkpoint_header_is_readable_without_the_library() {
    let dir = TempDir::new().unwrap();
    let p: &Path = &dir.path().join("c.kte");
    Checkpoint::new(AnyEmbedder::Affine(AffineEmbedder::identity(3, 2)), 11, 4)
        .save(p)
        .unwrap();
    let bytes = std::fs::read(p).unwrap();
    assert_eq!(&bytes[..4], b"KTE1");
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 11);
    assert_eq!(bytes.len(), 36 + 8 * (3 * 2 + 2));
}
