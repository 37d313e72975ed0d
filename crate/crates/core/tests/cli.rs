use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn edgechain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgechain"))
        .args(args)
        .env_remove("EDGECHAIN_SEED")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn records(stdout: &[u8]) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_reader(stdout);
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn stackelberg_two_miner_fixture() {
    let cfg = fixture("two_miners.toml");
    let out = edgechain(&["stackelberg", "--config", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = records(&out.stdout);
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let profit: f64 = row[6].parse().unwrap();
        let want = if &row[0] == "uniform" { 100.0 } else { 150.0 };
        assert!((profit - want).abs() < 1e-6, "{row:?}");
        assert_eq!(&row[7], "ok");
    }
    let dp: Vec<f64> = rows[2..].iter().map(|r| r[3].parse().unwrap()).collect();
    assert!((dp[0] - 50.0).abs() < 1e-6 && (dp[1] - 100.0).abs() < 1e-6, "{dp:?}");
}

#[test]
fn simulate_is_byte_identical() {
    let args = ["simulate", "--trials", "100000", "--seed", "42", "--quiet"];
    let a = edgechain(&args);
    let b = edgechain(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let mut seq = args.to_vec();
    seq.push("--sequential");
    assert_eq!(edgechain(&seq).stdout, a.stdout);
    let other = edgechain(&["simulate", "--trials", "100000", "--seed", "43", "--quiet"]);
    assert_ne!(other.stdout, a.stdout);
}

#[test]
fn seed_from_environment_is_lowest_priority() {
    let run = |env: &str, extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_edgechain"))
            .args(["simulate", "--trials", "5000", "--quiet"])
            .args(extra)
            .env("EDGECHAIN_SEED", env)
            .output()
            .unwrap()
            .stdout
    };
    let flagged = edgechain(&["simulate", "--trials", "5000", "--quiet", "--seed", "9"]).stdout;
    assert_eq!(run("9", &[]), flagged);
    assert_eq!(run("1", &["--seed", "9"]), flagged);
    assert_ne!(run("1", &[]), flagged);
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let out = edgechain(&["mine"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_config_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[market]\ndemand_min = 0\n");
    let out = edgechain(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("market.demand_min"));

    let cfg = write_config(dir.path(), "typo.toml", "[market]\nfixed_rewrd = 1\n");
    assert_eq!(edgechain(&["validate", "--config", &cfg]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(
        edgechain(&["validate", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn infeasible_market_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "zero.toml",
        "[market]\nfixed_reward = 0\nvariable_reward_rate = 0\n[miners]\nblock_sizes = [150, 175]\n",
    );
    let out = edgechain(&["stackelberg", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
    assert!(out.stdout.is_empty());
}

#[test]
fn non_convergence_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tight.toml",
        "[solver]\nmethod = \"best_response\"\nmax_iterations = 1\n[miners]\nblock_sizes = [150, 175, 200]\n",
    );
    let out = edgechain(&["nash", "--config", &cfg, "--prices", "100,200,300"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("converge"));
}

#[test]
fn nash_price_count_must_match() {
    let cfg = fixture("two_miners.toml");
    let out = edgechain(&["nash", "--config", cfg.to_str().unwrap(), "--prices", "1,2,3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_fixture_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = edgechain(&["validate", "--config", path.to_str().unwrap()]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&out.stderr)
        );
        seen += 1;
    }
    assert!(seen >= 3);
}

#[test]
fn nash_symmetric_fixture() {
    let cfg = fixture("symmetric.json");
    let out = edgechain(&["nash", "--config", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = records(&out.stdout);
    assert_eq!(rows.len(), 100);
    // x = (N-1) V / (N^2 p) with V = 14000, p = 100
    let want = 99.0 * 14000.0 / (100.0 * 100.0 * 100.0);
    for row in rows {
        let x: f64 = row[3].parse().unwrap();
        assert!((x - want).abs() < 1e-9, "{x}");
        assert_eq!(&row[6], "interior");
    }
}

#[test]
fn out_dir_and_json_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("three_miners.toml");
    let out_dir = dir.path().join("results");
    let od = out_dir.to_str().unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = edgechain(&["sweep", "--figure", "fig5a", "--config", cfg, "--out", od, "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let csv = std::fs::read_to_string(out_dir.join("fig5a.csv")).unwrap();
    assert!(csv.starts_with("R,miner_id,block_size,price,demand,utility,status\n"));
    assert_eq!(csv.lines().count(), 1 + 11 * 3);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("fig5a.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 42);
    assert_eq!(meta["figure"], "fig5a");
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));

    let out = edgechain(&[
        "price", "--scheme", "discrim", "--config", cfg, "--format", "json", "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    assert_eq!(rows[0]["scheme"], "discriminatory");
}

#[test]
fn sweep_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = edgechain(&[
            "sweep",
            "--figure",
            "fig5b",
            "--seed",
            "3",
            "--out",
            d.path().to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["fig5b.csv", "fig5b.meta.json"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
}
