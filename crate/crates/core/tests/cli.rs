use std::process::{Command, Output};

use statrs::function::gamma::gamma;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ou-gauss"));
    c.env_clear();
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Lines that are not part of the `# key = value` echo.
fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn empty_argv_is_a_usage_error() {
    let o = run(&[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&run(&["constants", "--colour", "red"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&run(&["--help"])), 0);
    let o = run(&["--version"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("ou-gauss "));
}

#[test]
fn constants_json() {
    let o = run(&["constants", "--kernel", "fbm:H=0.6", "--theta", "1.0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let b = 0.6f64;
    let a = b * (2.0 * b - 1.0) * gamma(2.0 * b - 1.0);
    let s2 = (4.0 * b - 1.0) * (1.0 + gamma(3.0 - 4.0 * b) * gamma(4.0 * b - 1.0) / (gamma(2.0 * b) * gamma(2.0 - 2.0 * b)));
    assert!((v["beta"].as_f64().unwrap() - 0.6).abs() < 1e-15);
    assert!((v["c_beta"].as_f64().unwrap() - 0.12).abs() < 1e-12);
    assert!((v["a"].as_f64().unwrap() - a).abs() < 1e-12);
    assert!((v["a"].as_f64().unwrap() - 0.5509).abs() < 1e-4);
    assert!((v["sigma_beta2"].as_f64().unwrap() - s2).abs() < 1e-12);
    assert_eq!(v["gamma"].as_f64(), Some(0.5));
    assert_eq!(v["echo"]["kernel"], "fbm:H=0.6");
    assert!(v["version"].as_str().unwrap().starts_with("ou-gauss"));
}

#[test]
fn kernel_errors_are_usage_errors() {
    let o = run(&["constants", "--kernel", "fbm:H=0.4"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("beta"), "{}", stderr(&o));
    let o = run(&["constants", "--kernel", "fbm(0.6)"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("fbm:H=<h>"), "grammar not named: {}", stderr(&o));
}

#[test]
fn t_and_t_list_conflict() {
    assert_eq!(code(&run(&["constants", "--T", "10", "--T-list", "10,20"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.conf");
    std::fs::write(&cfg, "T = 10\nT-list = 10,20\n").unwrap();
    assert_eq!(code(&run(&["constants", "--config", cfg.to_str().unwrap()])), 2);
    // A flag in the higher layer settles the choice.
    assert_eq!(code(&run(&["constants", "--config", cfg.to_str().unwrap(), "--T", "5"])), 0);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.conf");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(code(&run(&["constants", "--config", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["constants", "--config", "/nonexistent/c.conf"])), 2);
}

#[test]
fn check_hypothesis_exit_codes() {
    let o = run(&["check-hypothesis", "--kernel", "subfbm:H=0.6"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["evaluated"], 50 * 49);
    // Unequal-beta mixtures cannot satisfy the hypothesis.
    let o = run(&["check-hypothesis", "--kernel", "mix:[1*fbm:H=0.6;1*fbm:H=0.7]"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unwritable_output_fails_with_code_1() {
    let o = run(&["simulate", "--T", "1", "--n", "8", "--out", "/nonexistent/dir/p.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/nonexistent/dir/p.csv"));
}

#[test]
fn precedence_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.conf");
    std::fs::write(&cfg, "# layered\ntheta = 2\nseed = 9\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let theta = |o: &Output| -> String {
        let v: serde_json::Value = serde_json::from_str(&stdout(o)).unwrap();
        v["echo"]["theta"].as_str().unwrap().to_string()
    };
    let file = run(&["constants", "--config", cfg]);
    assert_eq!(theta(&file), "2");
    let env = bin().args(["constants", "--config", cfg]).env("OU_GAUSS_THETA", "3").output().unwrap();
    assert_eq!(theta(&env), "3");
    let flag = bin()
        .args(["constants", "--config", cfg, "--theta", "4"])
        .env("OU_GAUSS_THETA", "3")
        .output()
        .unwrap();
    assert_eq!(theta(&flag), "4");
    let via_env = bin().args(["constants"]).env("OU_GAUSS_CONFIG", cfg).output().unwrap();
    assert_eq!(theta(&via_env), "2");
}

#[test]
fn csv_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let o = run(&[
        "simulate", "--kernel", "bifbm:H=0.9,K=0.7", "--theta", "0.5", "--T", "2", "--n", "16", "--seed", "11",
        "--out", first.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&first).unwrap();
    assert!(text.contains("# kernel = bifbm:H=0.9,K=0.7\n"));
    assert!(text.contains("# seed = 11\n"));
    let again = run(&["simulate", "--config", first.to_str().unwrap()]);
    assert_eq!(code(&again), 0);
    assert_eq!(stdout(&again), text);
}

#[test]
fn json_echo_round_trips() {
    let o = run(&["hilbert-norms", "--kernel", "subfbm:H=0.6", "--T-list", "1,2", "--n", "32", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = tempfile::tempdir().unwrap();
    let saved = dir.path().join("norms.json");
    std::fs::write(&saved, stdout(&o)).unwrap();
    let again = run(&["hilbert-norms", "--config", saved.to_str().unwrap()]);
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn hilbert_norms_columns() {
    let o = run(&["hilbert-norms", "--T", "2", "--n", "32", "--contraction"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines = data_lines(&text);
    assert_eq!(
        lines[0],
        "T,n,b_T,a,norm_fT_sq_over_2thetasigma2T,norm_hT_sq,contraction_over_T,alpha_T,converged_flag"
    );
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 9);
    assert_eq!(fields[1], "32");
    assert!(fields[6].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn estimate_from_file_matches_inline() {
    let dir = tempfile::tempdir().unwrap();
    let paths = dir.path().join("p.csv");
    let common = ["--kernel", "subfbm:H=0.6", "--T", "4", "--dt", "0.05", "--reps", "3", "--seed", "5"];
    let o = bin().arg("simulate").args(common).arg("--long").arg("--out").arg(&paths).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let from_file = bin()
        .args(["estimate", "--input", paths.to_str().unwrap(), "--config", paths.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&from_file), 0, "{}", stderr(&from_file));
    let inline = bin().arg("estimate").args(common).output().unwrap();
    let strip_seed = |t: &str| -> Vec<String> {
        data_lines(t)
            .iter()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(1);
                f.join(",")
            })
            .collect()
    };
    let a = strip_seed(&stdout(&from_file));
    let b = strip_seed(&stdout(&inline));
    assert_eq!(a.len(), 4);
    // Values pass through 17 significant digits, so compare numerically.
    for (x, y) in a.iter().zip(&b).skip(1) {
        for (u, v) in x.split(',').zip(y.split(',')) {
            match (u.parse::<f64>(), v.parse::<f64>()) {
                (Ok(u), Ok(v)) if u.is_nan() => assert!(v.is_nan()),
                (Ok(u), Ok(v)) => assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0), "{u} vs {v}"),
                _ => assert_eq!(u, v),
            }
        }
    }
}

#[test]
fn per_replication_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let o = run(&["simulate", "--T", "1", "--n", "8", "--reps", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for r in 0..2 {
        let f = dir.path().join(format!("p_rep{r}.csv"));
        let text = std::fs::read_to_string(&f).unwrap();
        assert_eq!(data_lines(&text).len(), 10);
    }
    // Several replications with nowhere to put them.
    assert_eq!(code(&run(&["simulate", "--T", "1", "--n", "8", "--reps", "2"])), 2);
}

#[test]
fn threads_do_not_change_results() {
    let args = ["estimate", "--T", "2", "--reps", "70", "--seed", "3"];
    let one = bin().args(args).args(["--threads", "1"]).output().unwrap();
    let four = bin().args(args).args(["--threads", "4"]).output().unwrap();
    assert_eq!(code(&one), 0);
    assert_eq!(stdout(&one), stdout(&four));
    let mc = ["mc-clt", "--T", "2", "--reps", "120", "--seed", "3", "--reproducible"];
    let one = bin().args(mc).args(["--threads", "1"]).output().unwrap();
    let three = bin().args(mc).args(["--threads", "3"]).output().unwrap();
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    assert_eq!(stdout(&one), stdout(&three));
}

#[test]
fn mc_records_match_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("r.csv");
    let o = run(&[
        "mc-clt", "--T", "2", "--reps", "100", "--seed", "8", "--records", rec.to_str().unwrap(), "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let est = run(&["estimate", "--T", "2", "--reps", "100", "--seed", "8", "--no-plugin"]);
    let text = std::fs::read_to_string(&rec).unwrap();
    assert_eq!(data_lines(&text), data_lines(&stdout(&est)));
}

#[test]
fn mc_rate_needs_geometric_horizons() {
    let o = run(&["mc-rate", "--T-list", "10,12,14,16", "--reps", "100"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("geometric"));
}

#[test]
fn budget_refuses_huge_runs() {
    let o = run(&["mc-clt", "--T", "400", "--reps", "100000"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("budget"));
}

#[test]
fn consistency_report() {
    let o = run(&["mc-consistency", "--kernel", "subfbm:H=0.6", "--checkpoints", "1,2", "--paths", "4", "--reproducible"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["runtime_seconds"], 0.0);
    assert_eq!(v["echo"]["paths"], "4");
}

#[test]
fn coarse_grid_warns() {
    let o = run(&["simulate", "--T", "1", "--n", "4"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
}
