use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
profile = desk
seeds = 7
data.train_subset = 120
data.test_subset = 60
data.train_per_sub = 8
data.test_per_sub = 4
fine.channels = 4
fine.fc = 16
coarse.channels1 = 2
coarse.channels2 = 4
coarse.fc = 16
train.fine.epochs = 2
train.coarse.epochs = 2
train.readout.epochs = 2
train.readout.decay_epochs =
rbm.hidden = 12
rbm.epochs = 3
rbm.decay_epochs =
bias.rbm.hidden = 12
bias.rbm.epochs = 3
bias.rbm.decay_epochs =
";

fn twopath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twopath")).args(args).env_remove("TWOPATH_DATA").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Self { dir }
    }

    fn cfg(&self) -> String {
        self.dir.path().join("tiny.cfg").display().to_string()
    }

    fn out(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        let cfg = self.cfg();
        let out = self.out(out);
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--config", &cfg, "--out", &out]);
        let o = twopath(&full);
        assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
        o
    }
}

/// The single run directory under `out`.
fn run_dir(out: &str) -> PathBuf {
    let mut dirs: Vec<PathBuf> =
        std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir() && !p.ends_with("cache")).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

fn find(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn gradcheck_passes_and_detects_an_injected_fault() {
    let ok = twopath(&["gradcheck", "--instances", "3"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert_eq!(stdout(&ok).lines().filter(|l| l.ends_with("PASS")).count(), 11);

    let bad = twopath(&["gradcheck", "--instances", "3", "--inject-fault", "dense"]);
    assert!(!bad.status.success());
    let failing: Vec<String> = stdout(&bad).lines().filter(|l| l.ends_with("FAIL")).map(String::from).collect();
    assert_eq!(failing.len(), 1);
    assert!(failing[0].starts_with("dense"));
}

#[test]
fn usage_errors_exit_with_status_two() {
    let o = twopath(&["train-coarse", "--imitate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--fine-ckpt"));
    assert_eq!(twopath(&["sweep"]).status.code(), Some(2));
    assert_eq!(twopath(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_config_and_missing_checkpoints_are_reported() {
    let ws = Workspace::new();
    let cfg = ws.cfg();
    let o = twopath(&["train-fine", "--config", &cfg, "--set", "fine.width=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fine.width"), "{}", stderr(&o));

    let out = ws.out("missing");
    let o = twopath(&[
        "train-rbm",
        "--task",
        "robustness",
        "--fine-ckpt",
        "nope-fine.tpck",
        "--coarse-ckpt",
        "nope-coarse.tpck",
        "--config",
        &cfg,
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope-fine.tpck") && stderr(&o).contains("train-fine"), "{}", stderr(&o));

    let o = twopath(&["sweep", "--figure", "9z", "--config", &cfg, "--out", &out]);
    assert!(stderr(&o).contains("unknown figure"), "{}", stderr(&o));
}

#[test]
fn train_fine_writes_one_loss_row_per_epoch() {
    let ws = Workspace::new();
    ws.run("a", &["train-fine", "--epochs", "3"]);
    let dir = run_dir(&ws.out("a"));
    let csv = std::fs::read_to_string(dir.join("train-fine-recognition-s7.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "experiment,seed,variable,value,metric,metric_value,wall_seconds");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.contains(",7,epoch,") && l.contains(",train_loss,") && l.ends_with(",0")));
    assert!(dir.join("fine-recognition-s7.tpck").exists());
    assert!(dir.join("config.txt").exists());
}

fn snapshot(dir: &Path) -> Vec<(std::ffi::OsString, Vec<u8>)> {
    let mut files: Vec<_> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap()).map(|e| (e.file_name(), std::fs::read(e.path()).unwrap())).collect();
    files.sort();
    files
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let ws = Workspace::new();
    let mut runs = Vec::new();
    for _ in 0..2 {
        ws.run("a", &["train-fine"]);
        let dir = run_dir(&ws.out("a"));
        let fine = find(&dir, "fine-recognition-s7.tpck");
        ws.run("a", &["train-coarse", "--imitate", "--fine-ckpt", &fine]);
        let coarse = find(&dir, "coarse-recognition-s7.tpck");
        ws.run("a", &["train-rbm", "--task", "robustness", "--fine-ckpt", &fine, "--coarse-ckpt", &coarse]);
        let rbm = find(&dir, "rbm-recognition-s7.tpck");
        let o = ws.run(
            "a",
            &[
                "eval",
                "--fine-ckpt",
                &fine,
                "--coarse-ckpt",
                &coarse,
                "--rbm-ckpt",
                &rbm,
                "--noise",
                "salt_pepper:0.3",
                "--steps",
                "2",
            ],
        );
        assert!(stdout(&o).contains("associated_t2"));
        runs.push(snapshot(&dir));
        std::fs::remove_dir_all(&dir).unwrap();
    }
    assert_eq!(runs[0].len(), 8);
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        assert_eq!(a.0, b.0);
        assert!(a.1 == b.1, "{:?} differs between reruns", a.0);
    }
}

#[test]
fn experiment_id_ignores_the_output_directory() {
    let ws = Workspace::new();
    ws.run("a", &["train-fine", "--epochs", "1"]);
    ws.run("b", &["train-fine", "--epochs", "1"]);
    assert_eq!(run_dir(&ws.out("a")).file_name(), run_dir(&ws.out("b")).file_name());
}

#[test]
fn bias_task_trains_memory_readout_and_mapping() {
    let ws = Workspace::new();
    ws.run("a", &["train-fine", "--task", "bias"]);
    let dir = run_dir(&ws.out("a"));
    let fine = find(&dir, "fine-bias-s7.tpck");
    ws.run("a", &["train-coarse", "--task", "bias"]);
    let coarse = find(&dir, "coarse-bias-s7.tpck");
    ws.run("a", &["train-rbm", "--task", "bias", "--fine-ckpt", &fine, "--coarse-ckpt", &coarse]);
    let mapping = std::fs::read_to_string(dir.join("subset-mapping.txt")).unwrap();
    assert_eq!(mapping.lines().count(), 25);
    let rbm = find(&dir, "rbm-bias-s7.tpck");
    let o = ws.run("a", &["eval", "--task", "bias", "--fine-ckpt", &fine, "--coarse-ckpt", &coarse, "--rbm-ckpt", &rbm]);
    for metric in ["fine:", "coarse:", "biased:", "oracle:", "retrieval:"] {
        assert!(stdout(&o).contains(metric), "{}", stdout(&o));
    }
}

#[test]
fn mismatched_checkpoints_are_rejected() {
    let ws = Workspace::new();
    ws.run("a", &["train-fine", "--task", "bias"]);
    let dir = run_dir(&ws.out("a"));
    let fine = find(&dir, "fine-bias-s7.tpck");
    let cfg = ws.cfg();
    let out = ws.out("a");
    let o = twopath(&["eval", "--fine-ckpt", &fine, "--config", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("classes"), "{}", stderr(&o));
}
