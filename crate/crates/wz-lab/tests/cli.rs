//! End-to-end runs of the command-line interface, exercising exit codes,
//! output files, the config sidecar, and reproducibility contracts.

use std::fs;
use std::path::Path;

use wz_lab::cli;

fn wz(args: &[&str]) -> i32 {
    cli::run(args.iter().map(|s| s.to_string()))
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("missing {}: {e}", path.display()))
}

#[test]
fn simulate_writes_a_trajectory_and_its_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let code = wz(&[
        "wz-lab",
        "simulate",
        "--model",
        "cubic",
        "--x0",
        "0.5",
        "--L",
        "10",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let csv = read(&out);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,x_1");
    assert!(lines.last().unwrap().starts_with("# status="));

    let sidecar: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("config.json"))).unwrap();
    assert_eq!(sidecar["command"], "simulate");
    assert_eq!(sidecar["model"], "cubic");
    assert_eq!(sidecar["L"], 10);
    assert_eq!(sidecar["seed"], 1);
}

#[test]
fn skeleton_solves_on_the_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("skel.csv");
    let code = wz(&[
        "wz-lab",
        "skeleton",
        "--model",
        "cubic",
        "--h",
        "slope:1",
        "--n",
        "6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let csv = read(&out);
    // header + 2^6 + 1 states + footer
    assert_eq!(csv.lines().count(), 1 + 65 + 1);
    assert!(csv.ends_with("# status=completed\n"));
}

#[test]
fn lyapunov_audits_builtin_and_custom_functions() {
    let dir = tempfile::tempdir().unwrap();
    let code = wz(&[
        "wz-lab",
        "lyapunov",
        "--model",
        "cubic",
        "--samples",
        "1000",
        "--seed",
        "7",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let audit: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("audit.json"))).unwrap();
    let conditions = audit.as_object().unwrap();
    assert!(!conditions.is_empty());
    for (name, entry) in conditions {
        assert_eq!(entry["pass"], true, "condition {name} failed");
    }

    let custom = tempfile::tempdir().unwrap();
    let code = wz(&[
        "wz-lab",
        "lyapunov",
        "--model",
        "cubic",
        "--V",
        "x^2",
        "--theta",
        "1",
        "--eta",
        "4",
        "--samples",
        "1000",
        "--seed",
        "7",
        "--out-dir",
        custom.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let sidecar: serde_json::Value =
        serde_json::from_str(&read(&custom.path().join("config.json"))).unwrap();
    assert_eq!(sidecar["V"], "x^2");
    assert_eq!(sidecar["eta"], 4.0);
}

#[test]
fn wong_zakai_run_reproduces_from_its_sidecar() {
    let first = tempfile::tempdir().unwrap();
    let args = [
        "wz-lab",
        "wong-zakai",
        "--model",
        "cubic",
        "--levels",
        "2,4",
        "--delta",
        "0.25",
        "--M",
        "100",
        "--L",
        "8",
        "--seed",
        "11",
        "--out-dir",
        first.path().to_str().unwrap(),
    ];
    let code = wz(&args);
    assert!([0, 2, 3].contains(&code), "unexpected exit {code}");

    let report = read(&first.path().join("report.json"));
    let table = read(&first.path().join("report.csv"));
    let chart = read(&first.path().join("report.svg"));
    assert!(table.starts_with("n,delta,M,escaped,p_hat,ci_low,ci_high\n"));
    assert!(chart.starts_with("<svg"));

    let second = tempfile::tempdir().unwrap();
    let sidecar = first.path().join("config.json");
    let rerun = wz(&[
        "wz-lab",
        "wong-zakai",
        "--config",
        sidecar.to_str().unwrap(),
        "--out-dir",
        second.path().to_str().unwrap(),
    ]);
    assert_eq!(rerun, code);
    assert_eq!(read(&second.path().join("report.json")), report);
    assert_eq!(read(&second.path().join("report.csv")), table);
    assert_eq!(read(&second.path().join("report.svg")), chart);
}

#[test]
fn worker_count_does_not_change_report_bytes() {
    let run_with = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let code = wz(&[
            "wz-lab",
            "wong-zakai",
            "--model",
            "cubic",
            "--levels",
            "2,4",
            "--M",
            "100",
            "--L",
            "8",
            "--seed",
            "5",
            "--workers",
            workers,
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert!([0, 2, 3].contains(&code));
        read(&dir.path().join("report.json"))
    };
    assert_eq!(run_with("1"), run_with("2"));
}

#[test]
fn support_experiments_run_end_to_end() {
    let upper = tempfile::tempdir().unwrap();
    let code = wz(&[
        "wz-lab",
        "support-upper",
        "--model",
        "cubic",
        "--levels",
        "2,3",
        "--delta",
        "0.4",
        "--M",
        "100",
        "--L",
        "8",
        "--seed",
        "2",
        "--out-dir",
        upper.path().to_str().unwrap(),
    ]);
    assert!([0, 2, 3].contains(&code));
    assert!(upper.path().join("report.json").exists());
    assert!(upper.path().join("report.svg").exists());

    let lower = tempfile::tempdir().unwrap();
    let code = wz(&[
        "wz-lab",
        "support-lower",
        "--model",
        "cubic",
        "--levels",
        "2,3",
        "--epsilon",
        "0.5",
        "--M",
        "100",
        "--L",
        "8",
        "--h",
        "slope:1",
        "--seed",
        "2",
        "--out-dir",
        lower.path().to_str().unwrap(),
    ]);
    assert!([0, 2, 3].contains(&code));
    let sidecar: serde_json::Value =
        serde_json::from_str(&read(&lower.path().join("config.json"))).unwrap();
    assert_eq!(sidecar["command"], "support-lower");
    assert_eq!(sidecar["h"], "slope:1");
    assert_eq!(sidecar["epsilon"], 0.5);
}

#[test]
fn truncation_agrees_for_the_cubic_model() {
    let dir = tempfile::tempdir().unwrap();
    let code = wz(&[
        "wz-lab",
        "truncation",
        "--model",
        "cubic",
        "--variant",
        "shifted",
        "--h",
        "slope:0.5",
        "--radii",
        "1,2",
        "--n",
        "4",
        "--trials",
        "5",
        "--L",
        "10",
        "--seed",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let table = read(&dir.path().join("report.csv"));
    assert!(table.starts_with("radius,trials,covered,equality_failures\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn plot_recovers_exact_values_from_a_saved_report() {
    let dir = tempfile::tempdir().unwrap();
    let code = wz(&[
        "wz-lab",
        "wong-zakai",
        "--model",
        "cubic",
        "--levels",
        "2,3",
        "--M",
        "100",
        "--L",
        "8",
        "--seed",
        "9",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!([0, 2, 3].contains(&code));

    let report_path = dir.path().join("report.json");
    let svg_out = dir.path().join("redrawn.svg");
    let code = wz(&[
        "wz-lab",
        "plot",
        "--input",
        report_path.to_str().unwrap(),
        "--out",
        svg_out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let report: serde_json::Value = serde_json::from_str(&read(&report_path)).unwrap();
    let expected: Vec<f64> = report["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["p_hat"].as_f64().unwrap())
        .collect();
    let svg = read(&svg_out);
    let mut recovered = Vec::new();
    for chunk in svg.split("<text class=\"value\"").skip(1) {
        let inner = chunk.split('>').nth(1).unwrap();
        recovered.push(inner.split('<').next().unwrap().parse::<f64>().unwrap());
    }
    assert_eq!(recovered.len(), expected.len());
    for (a, b) in recovered.iter().zip(&expected) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn seed_env_var_fills_in_only_when_flags_are_absent() {
    let seed_of = |dir: &Path, extra: &[&str]| {
        let out = dir.join("traj.csv");
        let mut args = vec![
            "wz-lab",
            "simulate",
            "--model",
            "cubic",
            "--L",
            "6",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        assert_eq!(cli::run(args.iter().map(|s| s.to_string())), 0);
        let sidecar: serde_json::Value =
            serde_json::from_str(&read(&dir.join("config.json"))).unwrap();
        sidecar["seed"].as_u64().unwrap()
    };

    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("WZ_LAB_SEED", "99");
    assert_eq!(seed_of(dir.path(), &[]), 99);
    assert_eq!(seed_of(dir.path(), &["--seed", "5"]), 5);

    std::env::set_var("WZ_LAB_SEED", "not-a-seed");
    let out = dir.path().join("traj.csv");
    let code = wz(&[
        "wz-lab",
        "simulate",
        "--model",
        "cubic",
        "--L",
        "6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);

    std::env::remove_var("WZ_LAB_SEED");
    assert_eq!(seed_of(dir.path(), &[]), 42);
}

#[test]
fn validation_problems_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();

    // Unknown model.
    assert_eq!(
        wz(&["wz-lab", "simulate", "--model", "mystery", "--out-dir", out_dir]),
        1
    );
    // Bad sampling domain.
    assert_eq!(
        wz(&[
            "wz-lab", "lyapunov", "--model", "cubic", "--domain", "torus:3", "--out-dir", out_dir,
        ]),
        1
    );
    // Comparison level too close to the reference level.
    assert_eq!(
        wz(&[
            "wz-lab",
            "wong-zakai",
            "--model",
            "cubic",
            "--levels",
            "6",
            "--M",
            "100",
            "--L",
            "8",
            "--seed",
            "1",
            "--out-dir",
            out_dir,
        ]),
        1
    );

    // Malformed config file.
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ this is not json").unwrap();
    assert_eq!(
        wz(&["wz-lab", "simulate", "--config", broken.to_str().unwrap()]),
        1
    );

    // Config written for a different subcommand.
    let mismatched = dir.path().join("mismatched.json");
    fs::write(&mismatched, "{\"command\": \"simulate\", \"model\": \"cubic\"}").unwrap();
    assert_eq!(
        wz(&[
            "wz-lab",
            "wong-zakai",
            "--config",
            mismatched.to_str().unwrap(),
        ]),
        1
    );

    // Unknown key in a config file.
    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, "{\"command\": \"simulate\", \"modle\": \"cubic\"}").unwrap();
    assert_eq!(
        wz(&["wz-lab", "simulate", "--config", unknown.to_str().unwrap()]),
        1
    );
}
