use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_interp-lab"));
    cmd.env_remove("INTERP_LAB_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_run(out: &Path, threads: &str) -> Output {
    run(&[
        "run",
        "--setup",
        "s1",
        "--n",
        "12",
        "--trials",
        "3",
        "--seed",
        "9",
        "--gammas",
        "2,3,5",
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn theory_isotropic_table() {
    let out = run(&["theory", "isotropic", "--gamma", "2,30", "--sigma2", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "gamma,sigma2,kappa,m2,m,predicted_risk");
    let risk: f64 = rows[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((risk - 1.485017).abs() < 1e-5, "{risk}");
    let risk30: f64 = rows[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!((risk30 - 0.308752).abs() < 1e-5, "{risk30}");
}

#[test]
fn theory_rejects_subcritical_ratio() {
    let out = run(&["theory", "isotropic", "--gamma", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn theory_spiked_table() {
    let out = run(&[
        "theory",
        "spiked",
        "--n",
        "200",
        "--k-star",
        "5",
        "--lambda-head",
        "100",
        "--lambda-tail",
        "1",
        "--r2",
        "1600",
        "--sigma2",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("200,5,1600,8,"));
}

#[test]
fn run_writes_artifacts_and_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let oa = small_run(&a, "1");
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let ob = small_run(&b, "4");
    assert!(ob.status.success());
    let ca = fs::read(a.join("cells.csv")).unwrap();
    assert_eq!(ca, fs::read(b.join("cells.csv")).unwrap());
    let text = String::from_utf8(ca).unwrap();
    assert!(text.starts_with("setup,gamma,n,p,estimator,ensemble,mean_risk,std_risk,mean_linf,trials\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 2);
    for f in ["summary.json", "risk_vs_gamma.svg", "risk_vs_inv_log_gamma.svg"] {
        assert!(a.join(f).exists(), "{f}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            "# tiny run\nsetup = s1\nn = 10\ntrials = 5\ngammas = 2, 4, 6\nplots = false\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let res = run(&["run", "--config", cfg.to_str().unwrap(), "--trials", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("cells.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",2")));
    assert!(!out.join("risk_vs_gamma.svg").exists());
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        run(&["run", "--setup", "s1", "--trials", "0", "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["run", "--setup", "s7", "--out", out]).status.code(), Some(2));
    assert_eq!(
        run(&["run", "--setup", "s1", "--gammas", "4,2", "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["run", "--setup", "s1", "--n", "10"]).status.code(), Some(2));
    let env = bin()
        .env("INTERP_LAB_THREADS", "many")
        .args(["run", "--setup", "s1", "--n", "10", "--out", out])
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(2));
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("INTERP_LAB_THREADS", "2")
        .args([
            "run", "--setup", "s1", "--n", "10", "--trials", "1", "--gammas", "2,3,4", "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn exhausted_failure_budget_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.cfg");
    // No solver reaches a residual of 1e-300, so every trial fails twice.
    fs::write(&cfg, "setup=s1\nn=10\ntrials=2\ngammas=2,3,4\nfeas_tol=1e-300\n").unwrap();
    let out = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/cells.csv").exists());
}

#[test]
fn plot_renders_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(small_run(&out, "1").status.success());
    let svg = dir.path().join("cells.svg");
    let res = run(&[
        "plot",
        "--cells",
        out.join("cells.csv").to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "nope\n").unwrap();
    assert_eq!(
        run(&["plot", "--cells", bad.to_str().unwrap(), "--out", svg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}
