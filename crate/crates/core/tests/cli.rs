use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use molpeco::cli::{read_embeddings, RunConfig};
use molpeco::synthetic::overfit_set;

fn molpeco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molpeco")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = molpeco(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Overfit set plus a small, fast configuration.
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        overfit_set(0).write_jsonl(dir.path().join("data.jsonl")).unwrap();
        let mut cfg = RunConfig::default();
        cfg.cleaning.min_count = 1;
        cfg.model.d = 8;
        cfg.model.p = 4;
        cfg.model.gcn_layers = 1;
        cfg.model.transformer_layers = 1;
        cfg.train.max_epochs = 3;
        cfg.train.batch_size = 8;
        cfg.split_fractions = [0.6, 0.2, 0.2];
        fs::write(dir.path().join("config.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn common(&self, out: &str) -> Vec<String> {
        vec![
            "--config".into(),
            self.s("config.json"),
            "--data".into(),
            self.s("data.jsonl"),
            "--out".into(),
            self.s(out),
        ]
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> String {
        let mut args: Vec<String> = vec![cmd.into()];
        args.extend(self.common(out));
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }

    /// featurize, split, train, eval, embed into `out`.
    fn pipeline(&self, out: &str) {
        self.run("featurize", out, &[]);
        self.run("split", out, &[]);
        let cache = self.s(&format!("{out}/features.mpec"));
        let split = self.s(&format!("{out}/split.json"));
        let ck = self.s(&format!("{out}/checkpoint.mpck"));
        let stdout = self.run("train", out, &["--cache", &cache, "--split", &split]);
        assert!(stdout.contains("validation macro AUROC"), "{stdout}");
        self.run("eval", out, &["--checkpoint", &ck, "--split", &split, "--part", "test"]);
        self.run("embed", out, &["--checkpoint", &ck]);
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn pipeline_outputs_are_reproducible_and_tagged() {
    let fx = Fixture::new();
    fx.pipeline("a");
    fx.pipeline("b");
    for name in [
        "features.mpec",
        "split.json",
        "split.json.meta.json",
        "checkpoint.mpck",
        "history.csv",
        "history.csv.meta.json",
        "config.json",
        "report.json",
        "report.csv",
        "report.csv.meta.json",
        "embeddings.csv",
        "embeddings.csv.meta.json",
    ] {
        assert_eq!(bytes(&fx.path("a").join(name)), bytes(&fx.path("b").join(name)), "{name} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&bytes(&fx.path("a/report.json"))).unwrap();
    let meta: serde_json::Value = serde_json::from_slice(&bytes(&fx.path("a/embeddings.csv.meta.json"))).unwrap();
    assert_eq!(report["config_hash"], meta["config_hash"]);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["threshold"], 0.5);
    let history = fs::read_to_string(fx.path("a/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_loss,val_auroc"));
    assert_eq!(history.lines().count(), 4);
    let csv = fs::read_to_string(fx.path("a/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 1);
}

#[test]
fn embeddings_cover_every_molecule() {
    let fx = Fixture::new();
    fx.run("train", "t", &[]);
    let ck = fx.s("t/checkpoint.mpck");
    fx.run("embed", "t", &["--checkpoint", &ck]);
    let rows = read_embeddings(fx.path("t/embeddings.csv")).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.vector.len() == 8));

    fx.run("embed", "part", &["--checkpoint", &ck, "--part", "val"]);
    let part = read_embeddings(fx.path("part/embeddings.csv")).unwrap();
    assert_eq!(part.len(), 4);
    for r in &part {
        let full = rows.iter().find(|x| x.id == r.id).unwrap();
        assert_eq!(full.vector, r.vector);
    }

    let query = rows[0].id.clone();
    let out = ok(&["retrieve", "--embeddings", &fx.s("t/embeddings.csv"), "--query", &query, "-k", "50"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "rank,id,similarity");
    assert_eq!(lines.len(), 1 + 19);
    assert!(!out.contains(&format!(",{query},")));
    let missing = molpeco(&["retrieve", "--embeddings", &fx.s("t/embeddings.csv"), "--query", "nope"]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn permuted_duplicate_embeds_identically() {
    let fx = Fixture::new();
    let ds = overfit_set(0);
    let mut mols = ds.molecules().to_vec();
    let mut twin = mols[3].permuted(&(0..mols[3].atoms.len()).rev().collect::<Vec<_>>());
    twin.id = "twin".into();
    mols.push(twin);
    molpeco::chemio::Dataset::new(mols).write_jsonl(fx.path("data.jsonl")).unwrap();
    fx.run("train", "t", &[]);
    fx.run("embed", "t", &["--checkpoint", &fx.s("t/checkpoint.mpck")]);
    let rows = read_embeddings(fx.path("t/embeddings.csv")).unwrap();
    let a = &rows.iter().find(|r| r.id == ds.molecules()[3].id).unwrap().vector;
    let b = &rows.iter().find(|r| r.id == "twin").unwrap().vector;
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn featurize_is_idempotent_and_reports_bad_geometry() {
    let fx = Fixture::new();
    fx.run("featurize", "one", &[]);
    fx.run("featurize", "two", &[]);
    assert_eq!(bytes(&fx.path("one/features.mpec")), bytes(&fx.path("two/features.mpec")));

    fs::write(
        fx.path("bad.jsonl"),
        "{\"id\":\"ok\",\"atoms\":[[\"C\",0,0,0],[\"O\",1.2,0,0]],\"labels\":[\"x\"]}\n\
         {\"id\":\"clash\",\"atoms\":[[\"C\",0,0,0],[\"C\",0,0,0]],\"labels\":[\"x\"]}\n",
    )
    .unwrap();
    let out =
        molpeco(&["featurize", "--config", &fx.s("config.json"), "--data", &fx.s("bad.jsonl"), "--out", &fx.s("bad")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clash"));
}

#[test]
fn two_molecule_file_gives_two_records() {
    let fx = Fixture::new();
    fs::write(
        fx.path("two.jsonl"),
        "{\"id\":\"a\",\"atoms\":[[\"C\",0,0,0],[\"O\",1.2,0,0]],\"labels\":[\"x\"]}\n\
         {\"id\":\"b\",\"atoms\":[[\"N\",0,0,0],[\"H\",1.0,0,0]],\"labels\":[]}\n",
    )
    .unwrap();
    ok(&[
        "featurize",
        "--config",
        &fx.s("config.json"),
        "--data",
        &fx.s("two.jsonl"),
        "--out",
        &fx.s("two"),
        "--variant",
        "mol-peco-asym",
        "--p",
        "3",
    ]);
    let (header, records) = molpeco::repr::cache::read_cache(fx.path("two/features.mpec")).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(header.variant, "mol-peco-asym");
    assert_eq!(header.p, 3);
    assert!(records.iter().all(|r| r.spectrum.is_some()));
}

#[test]
fn train_rejects_a_cache_from_other_settings() {
    let fx = Fixture::new();
    ok(&[
        "featurize",
        "--data",
        &fx.s("data.jsonl"),
        "--config",
        &fx.s("config.json"),
        "--out",
        &fx.s("c"),
        "--variant",
        "coulomb-gcn",
    ]);
    let mut args = vec!["train".to_string()];
    args.extend(fx.common("t"));
    args.extend(["--cache".into(), fx.s("c/features.mpec")]);
    let out = molpeco(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn adjacency_variant_trains_on_bonded_data() {
    let fx = Fixture::new();
    let out = fx.run("train", "adj", &["--variant", "adjacency-gcn", "--epochs", "2"]);
    assert!(out.contains("best epoch"));
}

#[test]
fn seed_repetition_gives_identical_checkpoints() {
    let fx = Fixture::new();
    fx.run("train", "s1", &["--seed", "5"]);
    fx.run("train", "s2", &["--seed", "5"]);
    fx.run("train", "s3", &["--seed", "6"]);
    let a = bytes(&fx.path("s1/checkpoint.mpck"));
    assert_eq!(a, bytes(&fx.path("s2/checkpoint.mpck")));
    assert_ne!(a, bytes(&fx.path("s3/checkpoint.mpck")));
}

#[test]
fn sweep_rows_follow_depths() {
    let fx = Fixture::new();
    let one = fx.run("sweep", "one", &["--depths", "1", "--epochs", "2"]);
    assert_eq!(one.lines().count(), 2);
    assert_eq!(
        one.lines().next(),
        Some("variant,transformer_layers,auroc,auprc,precision,recall,specificity,accuracy")
    );
    let fwd = fx.run("sweep", "fwd", &["--depths", "1,2", "--epochs", "2"]);
    let rev = fx.run("sweep", "rev", &["--depths", "2,1", "--epochs", "2"]);
    let mut a: Vec<&str> = fwd.lines().skip(1).collect();
    let mut b: Vec<&str> = rev.lines().skip(1).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert!(fx.path("one/sweep.csv.meta.json").exists());
}

#[test]
fn missing_inputs_are_usage_errors() {
    let fx = Fixture::new();
    assert_eq!(molpeco(&["train", "--out", &fx.s("x")]).status.code(), Some(2));
    assert_eq!(molpeco(&["eval", "--data", &fx.s("data.jsonl")]).status.code(), Some(2));
    assert_eq!(molpeco(&["split", "--config", &fx.s("nope.json")]).status.code(), Some(2));
}
