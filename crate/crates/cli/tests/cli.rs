use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMOKE_CONFIG: &str = r#"
seed = 3
epochs = 50
max_steps = 50
pool_size = 4
checkpoint_every = 25

[generator]
size = 64
base_filters = 4
max_filters = 8

[discriminator]
size = 64
base_filters = 4
max_filters = 8
stride_layers = 2
"#;

const TINY_CONFIG: &str = r#"
seed = 1
epochs = 1
max_steps = 6
pool_size = 2
checkpoint_every = 3

[generator]
size = 16
base_filters = 4
max_filters = 8

[discriminator]
size = 16
base_filters = 4
max_filters = 8
stride_layers = 1
"#;

fn tacgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacgap")).args(args).env("TACGAP_DETERMINISTIC", "1").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tacgap(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, classes: usize, count: usize, resolution: usize) -> PathBuf {
    let (c, n, r) = (classes.to_string(), count.to_string(), resolution.to_string());
    ok(&["dataset", "synth", "--classes", &c, "--count", &n, "--resolution", &r, "--seed", "5", "--out", p(dir)]);
    dir.join("manifest.json")
}

/// A 16 px dataset plus a 6-step run with checkpoints at steps 3 and 6.
fn tiny_run(root: &Path) -> (PathBuf, PathBuf) {
    let manifest = synth(&root.join("data"), 2, 10, 16);
    let cfg = root.join("tiny.toml");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let run = root.join("run");
    ok(&["train", "--config", p(&cfg), "--manifest", p(&manifest), "--out", p(&run), "--progress-every", "0"]);
    (manifest, run)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, out);
            } else {
                out.push(path);
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, &mut out);
    let mut rel: Vec<PathBuf> = out.iter().map(|f| f.strip_prefix(dir).unwrap().to_path_buf()).collect();
    rel.sort();
    rel
}

#[test]
fn synth_writes_loadable_manifest_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"), 4, 64, 16);
    let b = synth(&tmp.path().join("b"), 4, 64, 16);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 64);
    assert_eq!(manifest["classes"].as_array().unwrap().len(), 4);
    let (da, db) = (a.parent().unwrap(), b.parent().unwrap());
    let files = files_under(da);
    assert_eq!(files, files_under(db));
    for f in files.iter().filter(|f| f.file_name().unwrap() != "run.json") {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f:?} differs");
    }
    let run: Value = serde_json::from_str(&fs::read_to_string(da.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["deterministic"], Value::Bool(true));
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    let res = ok(&["--dry-run", "dataset", "synth", "--count", "8", "--out", p(&out)]);
    assert!(String::from_utf8_lossy(&res.stdout).contains("would generate 8"));
    assert!(!out.exists());

    let manifest = synth(&tmp.path().join("data"), 2, 8, 64);
    let run = tmp.path().join("run");
    ok(&["--dry-run", "train", "--manifest", p(&manifest), "--out", p(&run), "--max-steps", "3"]);
    assert!(!run.exists());
}

#[test]
fn bad_flags_and_configs_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tacgap(&["train"]).status.code(), Some(2));
    let out = tacgap(&["dataset", "synth", "--classes", "1", "--out", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let manifest = synth(&tmp.path().join("data"), 2, 4, 64);
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "epochs = 2\n[generator]\nbase_filterz = 4\n").unwrap();
    let out = tacgap(&["train", "--config", p(&cfg), "--manifest", p(&manifest), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("base_filterz"));

    fs::write(&cfg, "[optimizer]\nlr = -1.0\n").unwrap();
    let out = tacgap(&["train", "--config", p(&cfg), "--manifest", p(&manifest), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning rate"));
}

#[test]
fn smoke_training_writes_checkpoints_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 2, 8, 64);
    let cfg = tmp.path().join("smoke.toml");
    fs::write(&cfg, SMOKE_CONFIG).unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--config", p(&cfg), "--manifest", p(&manifest), "--out", p(&run), "--progress-every", "0"]);
    for f in ["checkpoint.safetensors", "checkpoint_000025.safetensors", "checkpoint_000050.safetensors", "log.csv", "config.toml", "run.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 51);
    assert!(fs::read_to_string(run.join("config.toml")).unwrap().contains("seed = 3"));
}

#[test]
fn resume_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, run) = tiny_run(tmp.path());
    let full = fs::read_to_string(run.join("log.csv")).unwrap();
    let cfg = tmp.path().join("tiny.toml");
    let ckpt = run.join("checkpoint_000003.safetensors");
    let out = ok(&["train", "--config", p(&cfg), "--manifest", p(&manifest), "--out", p(&run), "--resume", p(&ckpt), "--progress-every", "1"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let first = stderr.lines().find(|l| l.starts_with("step ")).unwrap();
    assert!(first.starts_with("step 4/6"), "{first}");
    assert_eq!(fs::read_to_string(run.join("log.csv")).unwrap(), full);
}

#[test]
fn identical_seeds_give_identical_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, ra) = tiny_run(a.path());
    let (_, rb) = tiny_run(b.path());
    assert_eq!(fs::read_to_string(ra.join("log.csv")).unwrap(), fs::read_to_string(rb.join("log.csv")).unwrap());
}

#[test]
fn adapt_keeps_names_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run) = tiny_run(tmp.path());
    let input = tmp.path().join("sims");
    fs::create_dir(&input).unwrap();
    for f in files_under(&tmp.path().join("data")).iter().filter(|f| f.to_str().unwrap().ends_with(".sim.png")).take(3) {
        fs::copy(tmp.path().join("data").join(f), input.join(f.file_name().unwrap())).unwrap();
    }
    let ckpt = run.join("checkpoint.safetensors");
    let (o1, o2) = (tmp.path().join("o1"), tmp.path().join("o2"));
    ok(&["adapt", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&o1)]);
    ok(&["adapt", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&o2)]);
    let pngs = |d: &Path| files_under(d).into_iter().filter(|f| f.extension().unwrap() == "png").collect::<Vec<_>>();
    assert_eq!(pngs(&o1), files_under(&input));
    for f in pngs(&o1) {
        assert_eq!(fs::read(o1.join(&f)).unwrap(), fs::read(o2.join(&f)).unwrap());
    }
}

#[test]
fn corrupt_checkpoint_is_an_integrity_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run) = tiny_run(tmp.path());
    let ckpt = run.join("checkpoint.safetensors");
    let mut bytes = fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 5] ^= 0x5a;
    fs::write(&ckpt, bytes).unwrap();
    let input = tmp.path().join("empty");
    fs::create_dir(&input).unwrap();
    let out = tacgap(&["adapt", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_writes_reports_whose_aggregate_is_the_row_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, run) = tiny_run(tmp.path());
    let ckpt = run.join("checkpoint.safetensors");
    let out = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(&out), "--split", "all"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    for key in ["ssim", "mae_percent", "sim_ssim", "sim_mae_percent"] {
        let mean = rows.iter().map(|r| r[key].as_f64().unwrap()).sum::<f64>() / rows.len() as f64;
        let agg = report["aggregate"][key].as_f64().unwrap();
        assert!((mean - agg).abs() <= 1e-12 * mean.abs().max(1.0), "{key}: {mean} vs {agg}");
    }
    let csv = fs::read_to_string(out.join("per_sample.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(files_under(&out.join("difference_maps")).len(), 10);
}

#[test]
fn eval_refuses_unpaired_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, run) = tiny_run(tmp.path());
    let mut json: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    for s in json["samples"].as_array_mut().unwrap() {
        s.as_object_mut().unwrap().remove("real");
    }
    fs::write(&manifest, serde_json::to_string(&json).unwrap()).unwrap();
    let ckpt = run.join("checkpoint.safetensors");
    let out = tacgap(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("e").exists());
}

#[test]
fn classify_needs_a_checkpoint_for_adapted_training() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 2, 10, 16);
    let out = tacgap(&["classify", "--source", "adapted", "--manifest", p(&manifest), "--out", p(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_writes_table_and_one_row_per_repeat() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, run) = tiny_run(tmp.path());
    let ckpt = run.join("checkpoint.safetensors");
    let out = tmp.path().join("cls");
    ok(&[
        "classify", "--source", "adapted", "--manifest", p(&manifest), "--checkpoint", p(&ckpt), "--repeats", "3", "--epochs",
        "2", "--out", p(&out),
    ]);
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split('|').map(str::trim).collect();
    assert_eq!(&header[..3], ["Model", "Sim", "Real"]);
    assert!(table.contains('±'));
    assert_eq!(fs::read_to_string(out.join("repeats.csv")).unwrap().lines().count(), 4);
    let result: Value = serde_json::from_str(&fs::read_to_string(out.join("transfer.json")).unwrap()).unwrap();
    assert_eq!(result["repeats"].as_array().unwrap().len(), 3);
    assert_eq!(result["source"], "adapted");
}
