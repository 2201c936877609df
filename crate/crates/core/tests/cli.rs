use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use koopman_pg::diagnostics::gen_linear_data;
use koopman_pg::replay::{write_dump, Transition};
use koopman_pg::Matrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_koopman-pg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn koopman-pg")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const TINY: &str = "env=double_integrator\nepisodes=2\nhorizon=30\nbatch=16\nseed=5\n";

#[test]
fn train_writes_log_checkpoints_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.cfg", TINY);
    let out = dir.path().join("out");
    let o = run(&["train", "--config", &cfg, "--set", "gamma=0.95", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("samples_consumed=2160"), "{}", stdout(&o));

    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("# command=train"));
    assert!(manifest.contains("gamma=0.95"));
    for f in ["train_log.csv", "lift.ckpt", "critic.mlp", "actor.mlp"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next().unwrap(),
        "episode,step,iter,cost,neg_cost,L1,L3,L2,gnorm_f,gnorm_J,gnorm_mu,min_gnorm_f_sq,min_gnorm_mu_sq,samples_consumed"
    );
    assert_eq!(lines.count(), 60);

    // The manifest alone reproduces the run.
    let again = dir.path().join("again");
    let o = run(&["train", "--config", out.join("manifest.txt").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(log, fs::read_to_string(again.join("train_log.csv")).unwrap());

    let o = run(&["eval", "--checkpoint-dir", out.to_str().unwrap(), "--episodes", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("mean_step_cost="));
    assert!(text.contains("ratio_to_lqr="));
    assert!(out.join("eval_manifest.txt").exists());

    let o = run(&["report", "--log", out.join("train_log.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "45 iterations is below the report minimum");
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "gamma=0.9\nalpha_mu=1e-2\nalpha_J=5e-4\n");
    let o = run(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha_f > alpha_J > alpha_mu"));

    let cfg = write(dir.path(), "unknown.cfg", "# comment\nfoo=1\n");
    let o = run(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn gradcheck_passes_and_corruption_fails() {
    let o = run(&["gradcheck", "--trials", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for loss in ["L1", "L3", "L2"] {
        assert!(text.contains(&format!("{loss}_max_rel_error=")), "{text}");
    }
    assert!(text.contains("# command=gradcheck"));

    let o = run(&["gradcheck", "--trials", "5", "--corrupt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("passed=false"));
}

fn linear_dump(rows: usize) -> Vec<Transition> {
    let a0 = Matrix::from_rows(&[[0.9, 0.1], [-0.1, 0.9]]);
    let b0 = Matrix::from_rows(&[[0.0], [0.1]]);
    let batch = gen_linear_data(&a0, &b0, rows, 1.0, 11).unwrap();
    (0..rows)
        .map(|j| Transition {
            x: batch.states.column(j),
            u: batch.inputs.column(j),
            cost: batch.costs[j],
            x_next: batch.next_states.column(j),
        })
        .collect()
}

#[test]
fn sysid_rejects_short_dumps_and_malformed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "id.cfg", "batch=16\nlift_augment=true\nsysid_iters=50\n");
    let mut text = Vec::new();
    write_dump(&mut text, &linear_dump(15)).unwrap();
    let data = dir.path().join("short.csv");
    fs::write(&data, &text).unwrap();
    let o = run(&["sysid", "--data", data.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("15"), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = write(dir.path(), "bad.csv", "# n=2 m=1\n0.1,0.2,0.3,1.0,0.1,0.2\n0.1,zz,0.3,1.0,0.1,0.2\n");
    let o = run(&["sysid", "--data", &bad, "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sysid_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "id.cfg", "batch=16\nlift_augment=true\nsysid_iters=100\n");
    let mut text = Vec::new();
    write_dump(&mut text, &linear_dump(120)).unwrap();
    let data = dir.path().join("dump.csv");
    fs::write(&data, &text).unwrap();
    let a = run(&["sysid", "--data", data.to_str().unwrap(), "--config", &cfg]);
    let b = run(&["sysid", "--data", data.to_str().unwrap(), "--config", &cfg]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("holdout_one_step_error="));
}
