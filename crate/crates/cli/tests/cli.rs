use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sigma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigma"))
        .args(args)
        .output()
        .expect("run sigma")
}

fn ok(args: &[&str]) -> String {
    let out = sigma(args);
    assert!(
        out.status.success(),
        "sigma {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.cfg")
}

#[test]
fn rre_table_then_route() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.bin");
    ok(&[
        "rre",
        "table",
        "--domains",
        "2",
        "--layers",
        "1",
        "--experts",
        "3",
        "--vocab",
        "10",
        "--out",
        p(&table),
    ]);
    for token in 0..10 {
        let t = token.to_string();
        let out = ok(&[
            "rre",
            "route",
            "--table",
            p(&table),
            "--domain",
            "1",
            "--layer",
            "0",
            "--token",
            &t,
        ]);
        let expert: usize = out.trim().parse().unwrap();
        assert!((3..6).contains(&expert), "token {token} -> {expert}");
    }
    let out = sigma(&[
        "rre",
        "route",
        "--table",
        p(&table),
        "--domain",
        "1",
        "--layer",
        "0",
        "--token",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sigma(&["rre", "table", "--domains", "2"]).status.code(), Some(2));
    let out = sigma(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(sigma(&[]).status.code(), Some(2));
}

#[test]
fn malformed_config_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "model.hidden = 16\nadam.beta2 = lots\n").unwrap();
    let out = sigma(&["init", "--config", p(&cfg), "--out", p(&dir.path().join("ck"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("adam.beta2"));
}

#[test]
fn data_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("docs.txt");
    std::fs::write(&text, "ab\ncde\n").unwrap();
    let formatted = dir.path().join("docs.tok");
    ok(&[
        "data",
        "format",
        "--input",
        p(&text),
        "--kind",
        "code",
        "--sub-tag",
        "python",
        "--out",
        p(&formatted),
    ]);
    // PYTHON = 259, EOT = 256 in the byte tokenizer.
    assert_eq!(
        std::fs::read_to_string(&formatted).unwrap(),
        "259 97 98 256\n259 99 100 101 256\n"
    );

    let bad = sigma(&["data", "format", "--input", p(&text), "--kind", "bilingual"]);
    assert_eq!(bad.status.code(), Some(1));

    let packed = dir.path().join("packed.pgsi");
    let input = format!("2={}", p(&formatted));
    ok(&["data", "pack", "--input", &input, "--len", "4", "--out", p(&packed)]);
    let stats = ok(&["data", "stats", "--input", p(&packed)]);
    assert!(stats.contains("instances 2\n"), "{stats}");
    assert!(stats.contains("domain 2 2\n"), "{stats}");

    let padded = dir.path().join("padded.pgsi");
    ok(&["data", "pad", "--input", &input, "--len", "6", "--out", p(&padded)]);
    let stats = ok(&["data", "stats", "--input", p(&padded), "--pad", "261"]);
    assert!(stats.contains("pad_tokens 3\n"), "{stats}");
}

#[test]
fn commsim_csv() {
    let out = ok(&[
        "commsim",
        "volume",
        "--devices",
        "8",
        "--groups",
        "4",
        "--tokens",
        "100000",
        "--mode",
        "analytic",
    ]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("method,bytes_global,bytes_grouped,ratio"));
    let ratio: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((ratio - 4.0 / 7.0).abs() < 1e-6);

    let dir = tempfile::tempdir().unwrap();
    let shards = dir.path().join("shards.txt");
    std::fs::write(&shards, "3\n1\n1\n1\n").unwrap();
    let out = ok(&["commsim", "upload", "--shards", p(&shards), "--limit", "2"]);
    assert!(out.ends_with("# makespan,3\n"), "{out}");
    assert_eq!(
        sigma(&["commsim", "upload", "--shards", p(&shards), "--limit", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn train_is_reproducible_and_feeds_eval_and_extract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["train", "--config", p(&cfg), "--steps", "12", "--out", p(out)]);
    }
    for file in ["trace.csv", "params.bin", "manifest.json", "model.cfg", "routing.rret"] {
        let x = std::fs::read(a.join(file)).unwrap();
        assert_eq!(x, std::fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 13);

    let data = dir.path().join("eval.pgsi");
    ok(&[
        "data",
        "synth",
        "--domains",
        "3",
        "--vocab",
        "48",
        "--len",
        "64",
        "--per-domain",
        "2",
        "--out",
        p(&data),
    ]);
    let report = ok(&["eval", "--checkpoint", p(&a), "--data", p(&data)]);
    assert!(report.starts_with("loss "), "{report}");

    let sub = dir.path().join("sub");
    ok(&["extract", "--checkpoint", p(&a), "--domain", "1", "--out", p(&sub)]);
    ok(&["gradcheck", "--checkpoint", p(&sub), "--len", "5", "--max-coords", "10"]);
}

#[test]
fn stage_schedule_file_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let sched = dir.path().join("stages.txt");
    std::fs::write(&sched, "0..5:0\n5..10:0,9\n").unwrap();
    let out = sigma(&[
        "train",
        "--config",
        p(&bundled_config()),
        "--steps",
        "10",
        "--stage-schedule",
        p(&sched),
        "--out",
        p(&dir.path().join("ck")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain 9"));
}

#[test]
fn inherit_from_dense_donor() {
    let dir = tempfile::tempdir().unwrap();
    let donor_cfg = dir.path().join("donor.cfg");
    std::fs::write(
        &donor_cfg,
        "model.dense_layers = 3\nmodel.rre_layers = 0\nmodel.num_domains = 1\nmodel.vocab = 40\n",
    )
    .unwrap();
    let target_cfg = dir.path().join("target.cfg");
    std::fs::write(
        &target_cfg,
        "model.dense_layers = 1\nmodel.rre_layers = 2\nmodel.embedding_slots = 2\nmodel.domain_slots = 0,0,1\n",
    )
    .unwrap();
    let add = dir.path().join("add.txt");
    std::fs::write(&add, "#39\nnew\n").unwrap();
    let donor = dir.path().join("donor");
    ok(&["init", "--config", p(&donor_cfg), "--out", p(&donor)]);
    let vocab_out = dir.path().join("merged.txt");
    let out = ok(&[
        "inherit",
        "--donor",
        p(&donor),
        "--vocab-add",
        p(&add),
        "--config",
        p(&target_cfg),
        "--out",
        p(&dir.path().join("sparse")),
        "--vocab-out",
        p(&vocab_out),
    ]);
    assert!(out.starts_with("vocab 41 "), "{out}");
    assert_eq!(std::fs::read_to_string(&vocab_out).unwrap().lines().count(), 41);
}
