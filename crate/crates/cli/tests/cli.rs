use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
synth_count = 16
synth_per_scene = 2
crop_size = 16
conv_channels = 4,8
d_model = 16
heads = 2
layers = 1
freq_pairs = 4
coord_dim = 8
state_hidden = 32
state_dim = 16
head_hidden = 32
mag_hidden = 16
epochs = 2
bc_epochs = 2
batch_size = 4
threads = 1
";

fn trajcql(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajcql"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("TRAJCQL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = trajcql(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn full_run(root: &Path) -> Vec<u8> {
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = root.join("out");
    ok(&out, &["gen-data", "--config", cfg]);
    ok(&out, &["train", "--config", cfg]);
    let eval = ok(&out, &["eval", "--config", cfg]);
    assert!(eval.contains("cql") && eval.contains("straightline") && eval.contains("bc"), "{eval}");
    std::fs::read(out.join("reports/val/cql.csv")).unwrap()
}

#[test]
fn pipeline_is_deterministic_and_reports_parse() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = full_run(a.path());
    assert_eq!(first, full_run(b.path()));
    let rows = trajcql::metrics::parse_metrics_csv(std::str::from_utf8(&first).unwrap()).unwrap();
    assert!(!rows.is_empty());

    let out = a.path().join("out");
    let cfg = a.path().join("tiny.cfg");
    let cfg = cfg.to_str().unwrap();
    ok(&out, &["infer", "--config", cfg, "--split", "test"]);
    assert!(out.join("predictions/test.jsonl").exists());
    let q = ok(&out, &["qcurve", "--config", cfg]);
    assert!(q.contains("% of steps"), "{q}");
    let plots = ok(&out, &["plot"]);
    assert!(plots.lines().count() > 0);
    for p in plots.lines() {
        assert!(std::fs::read_to_string(p).unwrap().starts_with("<svg"));
    }
}

#[test]
fn show_config_reflects_flags() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["show-config", "--seed", "7", "--preset", "obs3pred6"]);
    assert!(text.contains("seed = 7"), "{text}");
    assert!(text.contains("t_pred = 6"), "{text}");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(trajcql(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(trajcql(dir.path(), &["show-config", "--preset", "obs9pred9"]).status.code(), Some(1));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nepochs = many\n").unwrap();
    let o = trajcql(dir.path(), &["show-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let missing = dir.path().join("missing.cfg");
    assert_eq!(trajcql(dir.path(), &["train", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // no corpus has been generated
    let o = trajcql(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.path().join("garbage.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = trajcql(dir.path(), &["eval", "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
