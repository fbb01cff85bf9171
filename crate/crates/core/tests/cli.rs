use std::path::Path;
use std::process::{Command, Output};

use kscu_core::cli::{RunManifest, BASE_CKPT, UNLEARNED_CKPT};
use kscu_core::condmodel::checkpoint;
use kscu_core::config::ExperimentConfig;

fn kscu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kscu")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn keystep_table_prints_one_entry_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = kscu(&["keystep-table", "--start", "3", "--end", "5", "--len", "8", "--loop-n", "2", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "3\n4\n5\n3\n4\n5\n4\n5\n");
    assert_eq!(read(dir.path().join("keystep_histogram.csv")), "step,count\n3,2\n4,3\n5,3\n");
}

#[test]
fn keystep_preset_comes_from_the_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = kscu(&["keystep-table", "--task", "style", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    let steps: Vec<usize> = String::from_utf8(o.stdout).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(steps.len(), 500);
    assert_eq!(steps[..26], (25..=50).collect::<Vec<_>>()[..]);
}

#[test]
fn degenerate_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = kscu(&["keystep-table", "--start", "5", "--end", "5", "--len", "3", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    let m = read(RunManifest::path(dir.path(), "keystep-table"));
    assert!(m.contains("status = failed"));
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.seed = 1\n# comment\nunlearn.gamma = 2\n");
    let o = kscu(&["freq", "--config", &cfg, "--out", &dir.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 3") && err.contains("unlearn.gamma"), "{err}");
}

#[test]
fn zero_diffusion_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "spectra.g0 = 0\n");
    let o = kscu(&["freq", "--config", &cfg, "--out", &dir.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mmd_without_reference_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = kscu(&["eval", "--mmd", "--checkpoint", "nowhere.ckpt", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = kscu(&["unlearn", "--base", "nowhere.ckpt", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn freq_is_reproducible_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.seed = 4\nspectra.n_trials = 64\n");
    let run = |sub: &str, extra: &[&str]| {
        let out = dir.path().join(sub);
        let mut args = vec!["freq", "--config", &cfg, "--out"];
        let out_s = out.display().to_string();
        args.push(&out_s);
        args.extend_from_slice(extra);
        assert_eq!(kscu(&args).status.code(), Some(0));
        out
    };
    let (a, b, c) = (run("a", &[]), run("b", &[]), run("c", &["--seed", "5"]));
    assert_eq!(read(a.join("snr_curve.csv")), read(b.join("snr_curve.csv")));
    assert_ne!(read(a.join("snr_curve.csv")), read(c.join("snr_curve.csv")));

    let manifest = read(RunManifest::path(&c, "freq"));
    assert!(manifest.contains("status = complete"));
    assert!(manifest.contains("seed = 5"));
    assert!(manifest.contains("output = snr_curve.csv"));
    let echoed = RunManifest::read_config(&manifest).unwrap();
    let mut loaded = ExperimentConfig::load(Path::new(&cfg)).unwrap();
    loaded.seed = 5;
    assert_eq!(echoed, loaded);
}

#[test]
fn empty_table_leaves_the_checkpoint_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "base.iterations = 40\nunlearn.len = 0\n");
    let out = dir.path().display().to_string();
    assert_eq!(kscu(&["train-base", "--config", &cfg, "--out", &out]).status.code(), Some(0));
    assert_eq!(kscu(&["unlearn", "--config", &cfg, "--out", &out]).status.code(), Some(0));
    let base = checkpoint::load(&dir.path().join(BASE_CKPT)).unwrap();
    let unlearned = checkpoint::load(&dir.path().join(UNLEARNED_CKPT)).unwrap();
    assert_eq!(checkpoint::encode_blob(&base), checkpoint::encode_blob(&unlearned));
    assert_eq!(read(dir.path().join("train_log.csv")).lines().next(), Some("iteration,loss"));
    assert_eq!(read(dir.path().join("unlearn_log.csv")).lines().count(), 1, "header only for an empty table");
}

#[test]
fn checkpoint_dims_must_match_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let small = write_config(dir.path(), "base.iterations = 5\nmodel.hidden = 16\n");
    let out = dir.path().display().to_string();
    assert_eq!(kscu(&["train-base", "--config", &small, "--out", &out]).status.code(), Some(0));
    let o = kscu(&["unlearn", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
}
