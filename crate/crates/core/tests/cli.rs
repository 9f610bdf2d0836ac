use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mvbsc::io::{read_labels, read_report, write_similarity_binary, write_similarity_csv};
use mvbsc::linalg::SymMatrix;
use mvbsc::model::{membership_m1, omega_simulation, sample_view};

fn mvbsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvbsc"))
        .arg("--output-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i:03}")).collect()
}

/// Writes three views of one block model with increasing noise.
fn write_views(dir: &Path, sigmas: &[f64]) -> Vec<String> {
    let z = membership_m1(60, 3, 11).unwrap();
    let om = omega_simulation(&z, 0.5, 1.0, 0.6).unwrap();
    let names = ids(60);
    sigmas
        .iter()
        .enumerate()
        .map(|(s, &sigma)| {
            let v = sample_view(&z, &om, sigma, (-1.0, 1.0), 1.0, 100 + s as u64).unwrap();
            let path = dir.join(format!("view{s}.csv"));
            write_similarity_csv(&path, &names, &v.w).unwrap();
            path.display().to_string()
        })
        .collect()
}

#[test]
fn cluster_single_tiny_view() {
    let dir = tempfile::tempdir().unwrap();
    let w = SymMatrix::from_upper_fn(4, |i, j| if (i < 2) == (j < 2) { 1.0 } else { 0.1 });
    let view = dir.path().join("tiny.mvbs");
    write_similarity_binary(&view, &ids(4), &w).unwrap();
    let out = mvbsc(
        dir.path(),
        &["cluster", "--view", view.to_str().unwrap(), "--k", "2", "--bandwidth-rule", "fixed:10"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report(&dir.path().join("mvbsc_report.json")).unwrap();
    assert_eq!(report.k, 2);
    assert_eq!(report.lambda, vec![1.0]);
    let (_, labels) = read_labels(&dir.path().join("mvbsc_labels.csv")).unwrap();
    assert_eq!(labels.labels(), &[0, 0, 1, 1]);
}

#[test]
fn fixed_weights_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let views = write_views(dir.path(), &[0.2, 0.3, 0.4]);
    let mut args = vec!["cluster", "--k", "3", "--weight-rule", "fixed:0.5,0.3,0.2", "--bandwidth-rule", "fixed:100"];
    for v in &views {
        args.extend(["--view", v.as_str()]);
    }
    let out = mvbsc(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report(&dir.path().join("mvbsc_report.json")).unwrap();
    assert_eq!(report.lambda, vec![0.5, 0.3, 0.2]);
}

#[test]
fn snr_weights_follow_noise_on_cli_views() {
    let dir = tempfile::tempdir().unwrap();
    let views = write_views(dir.path(), &[0.1, 0.3, 0.5]);
    let mut args = vec![
        "cluster", "--k", "3", "--weight-rule", "snr", "--delta", "10", "--alpha", "0.5", "--distance", "index:0.5",
    ];
    for v in &views {
        args.extend(["--view", v.as_str()]);
    }
    let out = mvbsc(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report(&dir.path().join("mvbsc_report.json")).unwrap();
    let l = &report.lambda;
    assert!(l[0] > l[1] && l[1] > l[2], "{l:?}");
    let s: Vec<f64> = report.diagnostics.iter().map(|d| d.sigma_hat).collect();
    assert!(s[0] < s[1] && s[1] < s[2], "{s:?}");
}

#[test]
fn evaluate_self_and_select_k() {
    let dir = tempfile::tempdir().unwrap();
    let views = write_views(dir.path(), &[0.0, 0.0]);
    let z = membership_m1(60, 3, 11).unwrap();
    let truth = dir.path().join("truth.csv");
    mvbsc::io::write_labels(&truth, &ids(60), &z).unwrap();

    let out = mvbsc(
        dir.path(),
        &["evaluate", "--labels", truth.to_str().unwrap(), "--reference", truth.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("nmi = 1\n") && stdout(&out).contains("accuracy = 1\n"), "{}", stdout(&out));
    let table = fs::read_to_string(dir.path().join("evaluation.csv")).unwrap();
    assert_eq!(table, "nmi,accuracy\n1.0,1.0\n");

    let mut args = vec![
        "select-k", "--reference", truth.to_str().unwrap(), "--k-center", "3", "--span", "0.4",
        "--bandwidth-rule", "fixed:1000",
    ];
    for v in &views {
        args.extend(["--view", v.as_str()]);
    }
    let out = mvbsc(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("chosen K = 3"), "{}", stdout(&out));
    let trace = fs::read_to_string(dir.path().join("select_k_trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "K,NMI");
    // K = 4 exceeds the rank of the noiseless views and is skipped.
    assert_eq!(lines.len(), 3, "{trace}");
    assert!(lines[1].starts_with("2,") && lines[2] == "3,1.0", "{trace}");
    let nmi2: f64 = lines[1][2..].parse().unwrap();
    assert!(nmi2 < 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Config: malformed arguments, unknown rule, missing alpha, unknown config key.
    assert_eq!(code(&mvbsc(d, &["cluster", "--k"])), 2);
    let views = write_views(d, &[0.2]);
    let out = mvbsc(d, &["cluster", "--view", &views[0], "--k", "3", "--weight-rule", "best"]);
    assert_eq!(code(&out), 2);
    let out = mvbsc(d, &["cluster", "--view", &views[0], "--k", "3", "--delta", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--alpha"));
    let cfg = d.join("bad.toml");
    fs::write(&cfg, "version = 1\n[data]\nmodels = [\"M1\"]\nn = 30\nks = [3]\nnoise = [\"low\"]\nreplications = 1\nbogus = 1\n[methods]\nnames = [\"KA\"]\n").unwrap();
    let out = mvbsc(d, &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    // Ingestion: missing file, NaN entry.
    let out = mvbsc(d, &["cluster", "--view", "nope.csv", "--k", "2", "--bandwidth-rule", "fixed:1"]);
    assert_eq!(code(&out), 3);
    let nan = d.join("nan.csv");
    fs::write(&nan, "a,b\n1,NaN\nNaN,1\n").unwrap();
    let out = mvbsc(d, &["cluster", "--view", nan.to_str().unwrap(), "--k", "1", "--bandwidth-rule", "fixed:1"]);
    assert_eq!(code(&out), 3);

    // Numerical: a view with no signal at all.
    let zero = d.join("zero.csv");
    fs::write(&zero, "a,b,c\n0,0,0\n0,0,0\n0,0,0\n").unwrap();
    let out = mvbsc(d, &["cluster", "--view", zero.to_str().unwrap(), "--k", "2", "--bandwidth-rule", "fixed:1"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(
        &cfg,
        r#"version = 1
[data]
models = ["M1", "M3"]
n = 80
ks = [8]
noise = ["high"]
replications = 4
seed = 5
[methods]
names = ["mvBSC_q", "KA", "singleW"]
[kmeans]
restarts = 5
[output]
name = "sim"
"#,
    )
    .unwrap();
    let run = |sub: &str, extra: &[&str]| {
        let out_dir = dir.path().join(sub);
        let mut args = vec!["simulate", "--config", cfg.to_str().unwrap()];
        args.extend(extra);
        let out = mvbsc(&out_dir, &args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "sim_replications.csv"), read(&b, "sim_replications.csv"));
    assert_eq!(read(&a, "sim_summary.csv"), read(&b, "sim_summary.csv"));
    assert!(!a.join("sim.checkpoint.jsonl").exists());

    let c = run("c", &["--stop-after", "2"]);
    assert!(c.join("sim.checkpoint.jsonl").exists());
    assert!(!c.join("sim_replications.csv").exists());
    run("c", &[]);
    assert_eq!(read(&a, "sim_replications.csv"), read(&c, "sim_replications.csv"));
    assert_eq!(read(&a, "sim_summary.csv"), read(&c, "sim_summary.csv"));

    let table = String::from_utf8(read(&a, "sim_replications.csv")).unwrap();
    assert!(table.starts_with("model,method,noise,k,replication,accuracy,nmi\n"));
    // 2 models x 4 replications x (mvBSC_q, KA, 2 single views, max).
    assert_eq!(table.lines().count(), 1 + 2 * 4 * 5);
    let summary = String::from_utf8(read(&a, "sim_summary.csv")).unwrap();
    assert!(summary.starts_with("model,noise,k,method,acc_mean,acc_sd,nmi_mean,nmi_sd,replications\n"));

    let d = run("d", &["--seed", "6"]);
    assert_ne!(read(&a, "sim_replications.csv"), read(&d, "sim_replications.csv"));
}
