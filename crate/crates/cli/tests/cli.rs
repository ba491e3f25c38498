use std::path::Path;
use std::process::Command;

fn teeagg(config: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_teeagg"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn bench_run_writes_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[bench]\nn_users = 20\niterations = 2\n").unwrap();
    let out = dir.path().join("report");
    let stdout = teeagg(&cfg, &["bench", "run", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("geometric mean: enclave"));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 + 3);
    for f in ["sum", "svm", "lsf", "histogram"] {
        assert!(csv.contains(&format!("\n{f},enclave,")) && csv.contains(&format!("\n{f},plain,")));
    }
}

#[test]
fn taxi_run_writes_public_view_and_isolated_company_views() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[city]\nn_taxis = 120\nn_companies = 3\n[taxi]\nrefusing_companies = [2]\n").unwrap();
    let out = dir.path().join("taxi");
    let stdout = teeagg(&cfg, &["taxi", "run", "--rounds", "2", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("of 120 taxis authorized"));

    let zones = std::fs::read_to_string(out.join("public_zones.csv")).unwrap();
    let total: u64 = zones.lines().flat_map(|l| l.split(',')).map(|c| c.parse::<u64>().unwrap()).sum();
    let authorized: u64 = stdout.split_whitespace().next().unwrap().parse().unwrap();
    assert_eq!(total, authorized);
    assert_eq!(zones.lines().count(), 10);
    assert!(out.join("public_zones.pgm").exists());
    for c in 0..3 {
        let rows = std::fs::read_to_string(out.join(format!("company_{c}_positions.csv"))).unwrap();
        assert!(rows.lines().skip(1).all(|l| l.split(',').nth(1) == Some(&c.to_string())));
    }
    assert!(!out.join("global_positions.csv").exists());
    assert_eq!(std::fs::read_to_string(out.join("rounds.csv")).unwrap().lines().count(), 3);
}
