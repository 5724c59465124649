use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssyk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssyk"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn run_with(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Output {
    fs::write(dir.join("run.cfg"), config).unwrap();
    let mut args = vec![command, "--config", "run.cfg"];
    args.extend_from_slice(extra);
    ssyk(dir, &args)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn zero_in_the_p_grid_is_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_with(tmp.path(), "gap-ratio", "p_grid = 1.0, 0.5, 0\nn_dis = 100\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("p_grid"), "{}", stderr(&out));
    assert!(!tmp.path().join("out").exists(), "validation happens before any output");
}

#[test]
fn single_point_grid_reports_no_crossing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_with(tmp.path(), "gap-ratio", "p_grid = 1.0\nn_dis = 100\n", &["--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("not found"));
    let csv = fs::read_to_string(tmp.path().join("o/gap_ratio.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "p,r_mean,r_stderr,n_dis");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/p2.json")).unwrap()).unwrap();
    assert!(report["p2"].is_null());
    assert!(tmp.path().join("o/run.json").exists());
}

#[test]
fn validation_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("sff", "times =\n", "times"),
        ("sff", "t_points = 0\n", "t_points"),
        ("sff", "times = 1, 0.5\n", "times"),
        ("charge", "n_sites = 6\nbogus = 1\n", "bogus"),
        ("charge", "j = -1\n", "`j`"),
        ("charge", "omega0 = 0\n", "omega0"),
        ("charge", "sparsity = 1.5\n", "sparsity"),
        ("efficiency", "n_sites = 7\nn_dis = 10\n", "n_sites"),
        ("efficiency", "n_sites = 12\n", "n_dis"),
        ("gap-ratio", "n_dis = 50\n", "n_dis"),
        ("gap-ratio", "p_grid = 0.5, 0.1\n", "p_grid"),
    ];
    for (command, config, key) in cases {
        let out = run_with(tmp.path(), command, config, &[]);
        assert_eq!(out.status.code(), Some(2), "{command}: {config:?}");
        assert!(stderr(&out).contains(key), "{command}: {config:?}: {}", stderr(&out));
    }
}

#[test]
fn charge_writes_both_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let config = "n_sites = 4\nn_dis = 6\nsparsity = 1, 0.5\ntau_max = 3\ntau_points = 4\n";
    let out = run_with(tmp.path(), "charge", config, &["--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let energy = fs::read_to_string(tmp.path().join("o/stored_energy_p0.5.csv")).unwrap();
    let mut lines = energy.lines();
    assert_eq!(lines.next(), Some("tau_c,E_mean,E_stderr"));
    assert_eq!(lines.next(), Some("0,0,0"));
    assert_eq!(lines.count(), 3);
    let pops = fs::read_to_string(tmp.path().join("o/populations_p1.csv")).unwrap();
    let rows: Vec<Vec<f64>> = pops
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(pops.lines().next(), Some("t,k,p_k"));
    assert_eq!(rows.len(), 4 * 5);
    for chunk in rows.chunks(5) {
        let total: f64 = chunk.iter().map(|r| r[2]).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let ks: Vec<f64> = chunk.iter().map(|r| r[1]).collect();
        assert_eq!(ks, [0.0, 2.0, 4.0, 6.0, 8.0]);
    }
}

#[test]
fn sidecar_records_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = "n_sites = 4\nn_dis = 8\nsparsity = 1, 0.2\ntau_points = 5\n";
    let out = run_with(tmp.path(), "efficiency", config, &["--out", "o", "--seed", "42"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/run.json")).unwrap()).unwrap();
    assert_eq!(sidecar["tool"], "ssyk");
    assert_eq!(sidecar["command"], "efficiency");
    assert_eq!(sidecar["master_seed"], 42);
    assert_eq!(sidecar["config"]["seed"], "42");
    assert_eq!(sidecar["config"]["j"], "1");
    assert_eq!(sidecar["config"]["averaging"], "average_of_ratios");
    assert!(sidecar["version"].is_string());
    assert!(sidecar["results"]["points"][0]["tau_star"].as_f64().unwrap() > 0.0);
    let csv = fs::read_to_string(tmp.path().join("o/efficiency.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("p,e_mean,e_stderr,n_excluded"));
    assert_eq!(csv.lines().count(), 3);

    // a sidecar only replays its own command
    let out = ssyk(tmp.path(), &["charge", "--config", "o/run.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resume_reproduces_an_interrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = "n_sites = 6\nn_dis = 30\nsparsity = 0.5\nt_points = 9\n";
    assert_eq!(run_with(dir, "sff", config, &["--out", "a"]).status.code(), Some(0));
    let reference = fs::read(dir.join("a/sff_p0.5.csv")).unwrap();

    // keep the header and ten records
    let checkpoint = dir.join("a/checkpoints/sff_p0.5.jsonl");
    let text = fs::read_to_string(&checkpoint).unwrap();
    let partial: String = text.lines().take(11).map(|l| format!("{l}\n")).collect();
    fs::write(&checkpoint, partial).unwrap();
    fs::remove_file(dir.join("a/sff_p0.5.csv")).unwrap();

    let out = ssyk(dir, &["sff", "--config", "a/run.json", "--out", "a", "--resume", "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(fs::read(dir.join("a/sff_p0.5.csv")).unwrap(), reference);
    assert_eq!(fs::read_to_string(&checkpoint).unwrap(), text);
}
