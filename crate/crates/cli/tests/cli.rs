use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "model.L=2",
    "arch.alpha=2",
    "sampler.N_s=64",
    "sampler.n_chains=4",
    "sr.eta=0.02",
    "sr.lambda=1e-3",
    "prune.p_r=0.2",
    "prune.I=5",
    "prune.j=5",
    "prune.k=3",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nqs-prune"));
    c.env_remove("NQS_THREADS").arg("--log-level").arg("warn");
    c
}

fn tiny_prune(dir: &Path, seed: u64) -> Output {
    let mut c = bin();
    c.arg("prune").arg("--seed").arg(seed.to_string()).arg("--output-dir").arg(dir);
    for kv in TINY {
        c.arg("--set").arg(kv);
    }
    c.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn resume(dir: &Path) -> Output {
    bin().arg("resume").arg("--from").arg(dir).output().unwrap()
}

#[test]
fn oracle_reports_analytic_toric_energy() {
    let o = bin().args(["oracle", "--model", "toric", "--L", "2"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["energy"], -8.0);
}

#[test]
fn oracle_refuses_oversized_lattice() {
    let o = bin().args(["oracle", "--model", "tfim", "--L", "5"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn invalid_configuration_exits_with_one() {
    let o = bin().args(["prune", "--preset", "fig3-4x4", "--set", "prune.p_r=2", "--set", "sampler.N_s=1000"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("prune.p_r") && err.contains("sampler.N_s"), "{err}");
    let o = bin().args(["prune", "--preset", "fig99"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_thread_variable_is_rejected() {
    let o = bin().env("NQS_THREADS", "many").args(["presets"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn presets_are_listed() {
    let o = bin().arg("presets").output().unwrap();
    let names = stdout(&o);
    assert!(names.lines().any(|l| l == "fig3-4x4"));
    assert!(names.lines().any(|l| l == "fig4-toric"));
}

#[test]
fn run_export_and_rerun_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = tiny_prune(&a, 7);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tiny_prune(&b, 7).status.success());
    let log_a = fs::read(a.join("metrics.jsonl")).unwrap();
    assert_eq!(log_a, fs::read(b.join("metrics.jsonl")).unwrap());
    assert!(a.join("config.txt").exists());
    assert!(a.join("checkpoints/iter_0005.nqsp").exists());

    let csv_path = tmp.path().join("curves.csv");
    let o = bin().arg("export").arg("--from").arg(&a).arg("--out").arg(&csv_path).output().unwrap();
    assert!(o.status.success());
    let text = fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,n,rho,E,var,stat_err,rel_err,abs_err_per_spin,m_x,m_z,fidelity"
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    // pre-trained network plus five pruning iterations
    assert_eq!(rows.len(), 6);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        let n: f64 = r[1].parse().unwrap();
        let rho: f64 = r[2].parse().unwrap();
        assert!((rho - n / 4.0).abs() < 1e-12);
        assert_eq!(r[10].is_empty(), i == 0);
    }

    // corrupt row is skipped and reported
    let mut damaged = log_a.clone();
    damaged.extend_from_slice(b"{\"v\":1,\"iter\n");
    fs::write(b.join("metrics.jsonl"), damaged).unwrap();
    let o = bin().arg("export").arg("--from").arg(&b).output().unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("skipped 1 corrupt rows"), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 7);
}

#[test]
fn empty_run_exports_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("metrics.jsonl"), "").unwrap();
    let o = bin().arg("export").arg("--from").arg(tmp.path()).output().unwrap();
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn resume_continues_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let cut = tmp.path().join("cut");
    assert!(tiny_prune(&full, 3).status.success());
    assert!(tiny_prune(&cut, 3).status.success());
    let reference = fs::read_to_string(full.join("metrics.jsonl")).unwrap();

    // interrupt after iteration 2: later rows and checkpoints never written,
    // and a row torn mid-write
    let kept: String = reference.lines().take(3).map(|l| format!("{l}\n")).collect();
    let torn = &reference.lines().nth(3).unwrap()[..30];
    fs::write(cut.join("metrics.jsonl"), format!("{kept}{torn}")).unwrap();
    fs::remove_file(cut.join("summary.json")).unwrap();
    for i in 3..=5 {
        fs::remove_file(cut.join(format!("checkpoints/iter_{i:04}.nqsp"))).unwrap();
    }
    let o = resume(&cut);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(cut.join("metrics.jsonl")).unwrap(), reference);
    for i in 1..=5 {
        let name = format!("checkpoints/iter_{i:04}.nqsp");
        assert_eq!(fs::read(full.join(&name)).unwrap(), fs::read(cut.join(&name)).unwrap());
    }

    // complete run: no-op
    let o = resume(&cut);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(cut.join("metrics.jsonl")).unwrap(), reference);
}

#[test]
fn resume_refuses_foreign_or_damaged_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert!(tiny_prune(&dir, 5).status.success());
    fs::remove_file(dir.join("summary.json")).unwrap();

    let config = fs::read_to_string(dir.join("config.txt")).unwrap();
    fs::write(dir.join("config.txt"), config.replace("sampler.seed=5", "sampler.seed=6")).unwrap();
    let o = resume(&dir);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("hash"));
    fs::write(dir.join("config.txt"), &config).unwrap();

    // a different configuration cannot be started in the same directory
    let o = tiny_prune(&dir, 9);
    assert_eq!(o.status.code(), Some(3));

    let ckpt = dir.join("checkpoints/iter_0005.nqsp");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[60] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    let o = resume(&dir);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));

    fs::remove_file(&ckpt).unwrap();
    let o = resume(&dir);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn ticket_and_observe_on_finished_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert!(tiny_prune(&dir, 2).status.success());
    let o = bin()
        .args(["ticket", "--variant", "theta-rand-m-imp", "--iteration", "3", "--steps", "4", "--from"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["variant"], "theta-rand-m-imp");
    assert_eq!(v["ticket"]["n"], v["imp"]["n"]);

    let o = bin()
        .args(["ticket", "--variant", "theta-init-m-imp", "--iteration", "9", "--from"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));

    let o = bin().arg("observe").arg("--checkpoint").arg(dir.join("checkpoints/iter_0002.nqsp")).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["E"].as_f64().unwrap().is_finite());
    assert!(v["rel_err"].as_f64().is_some());
}
