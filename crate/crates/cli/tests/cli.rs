use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_voltheta"));
    c.env_remove("VOLTHETA_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL_SIMULATE: &str = r#"
seed = 5
paths = 40

[grid]
steps = 32

[kernel]
family = "riemann_liouville"
hurst = 0.3
"#;

#[test]
fn malformed_configs_exit_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax", "seed = 1\n[grid\nsteps = 4\n", "line"),
        ("unknown_key", "seed = 1\npaths = 4\ncolour = 3\n[grid]\nsteps = 8\n[kernel]\nfamily = \"constant\"\n", "colour"),
        ("missing_seed", "paths = 4\n[grid]\nsteps = 8\n[kernel]\nfamily = \"constant\"\n", "seed"),
        ("bad_hurst", "seed = 1\npaths = 4\n[grid]\nsteps = 8\n[kernel]\nfamily = \"riemann_liouville\"\nhurst = 1.5\n", "hurst"),
        ("unknown_metric", "seed = 1\npaths = 4\n[grid]\nsteps = 8\n[kernel]\nfamily = \"constant\"\n[thresholds]\nprice = { max = 1.0 }\n", "thresholds.price"),
        ("few_levels", "seed = 1\npaths = 4\n[grid]\nsteps = 32\n[kernel]\nfamily = \"constant\"\n[diagnose]\nfreeze_levels = [2, 3]\n", "freeze_levels"),
        ("wrong_command", "command = \"hedge\"\nseed = 1\npaths = 4\n[grid]\nsteps = 8\n[kernel]\nfamily = \"constant\"\n", "hedge"),
    ];
    for (name, text, needle) in cases {
        let cfg = write(tmp.path(), &format!("{name}.toml"), text);
        let out = tmp.path().join(format!("out_{name}"));
        let command = if name == "few_levels" { "diagnose" } else { "simulate" };
        let o = run(&[command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{name} wrote outputs");
    }
    let o = run(&["simulate", "--scenario", "no-such-scenario", "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn list_filters_the_catalog() {
    let all = String::from_utf8(run(&["list"]).stdout).unwrap();
    for name in ["linear-gaussian-mart", "singular-rate", "heston-hedge"] {
        assert!(all.contains(name), "{all}");
    }
    let o = run(&["list", "heston"]);
    assert_eq!(code(&o), 0);
    let heston = String::from_utf8(o.stdout).unwrap();
    assert!(heston.lines().count() >= 3 && heston.lines().count() < all.lines().count());
    assert!(heston.lines().all(|l| l.to_lowercase().contains("heston")));
    let o = run(&["list", "nothing-matches-this"]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap()).map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())).collect();
    v.sort();
    v
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let scenarios = [
        ("simulate", SMALL_SIMULATE.to_string()),
        (
            "simulate",
            "seed = 3\npaths = 20\n[grid]\nsteps = 40\n[model]\nmodel = \"heston\"\ns0 = 100.0\nv0 = 0.04\nhurst = 0.1\nmean_rev_rate = 1.0\nmean_rev_level = 0.05\nvol_of_vol = 0.3\ncorrelation = -0.7\n".into(),
        ),
        ("solve-linear", "seed = 4\npaths = 60\n[grid]\nsteps = 16\n[kernel]\nfamily = \"riemann_liouville\"\nhurst = 0.3\n[payoff]\nkind = \"call\"\nstrike = 0.1\nrunning = \"square\"\n".into()),
        ("solve-bsde", "seed = 6\npaths = 300\n[grid]\nsteps = 8\n[kernel]\nfamily = \"riemann_liouville\"\nhurst = 0.3\n[payoff]\nkind = \"call\"\nstrike = 0.1\n[bsde]\ncheck_paths = 30\n".into()),
        ("verify-ito", "seed = 8\npaths = 12\n[grid]\nsteps = 32\n[kernel]\nfamily = \"riemann_liouville\"\nhurst = 0.3\n[payoff]\nkind = \"power\"\nexponent = 3\n[ito]\nfactors = [4, 2, 1]\npairing = {}\n".into()),
        ("diagnose", "seed = 9\npaths = 200\n[grid]\nsteps = 64\n[kernel]\nfamily = \"riemann_liouville\"\nhurst = 0.3\n[diagnose]\nfreeze_levels = [2, 3, 4, 5]\nmoment_grids = [16, 32]\n".into()),
        (
            "hedge",
            "seed = 10\n[grid]\nsteps = 20\n[model]\nmodel = \"heston\"\ns0 = 100.0\nv0 = 0.04\nhurst = 0.1\nmean_rev_rate = 0.3\nmean_rev_level = 0.04\nvol_of_vol = 0.3\ncorrelation = -0.7\n[payoff]\nkind = \"call\"\nstrike = 100.0\n[nested]\ninner_paths = 24\n[hedge]\nrebalance_dates = [5, 10]\nouter_paths = 12\ninitial_price_paths = 200\n".into(),
        ),
        (
            "price",
            "seed = 11\n[grid]\nsteps = 32\n[model]\nmodel = \"bergomi\"\ns0 = 100.0\nv0 = 0.04\nhurst = 0.1\nvol_of_vol = 1.5\ncorrelation = -0.5\n[payoff]\nkind = \"put\"\nstrike = 95.0\n[nested]\ninner_paths = 500\n[price]\ncross_check = true\n".into(),
        ),
    ];
    for (k, (command, text)) in scenarios.iter().enumerate() {
        let cfg = write(tmp.path(), &format!("s{k}.toml"), text);
        let mut runs = Vec::new();
        for threads in ["1", "2", "8"] {
            let out = tmp.path().join(format!("s{k}_t{threads}"));
            let o = run(&[command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
            assert_eq!(code(&o), 0, "{command}: {}", String::from_utf8_lossy(&o.stderr));
            runs.push(files(&out));
        }
        assert!(runs[0].iter().any(|(n, _)| n.ends_with(".csv")), "{command} wrote no CSV");
        assert_eq!(runs[0], runs[1], "{command}: 1 vs 2 threads");
        assert_eq!(runs[0], runs[2], "{command}: 1 vs 8 threads");
    }
}

#[test]
fn manifest_hashes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", SMALL_SIMULATE);
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed-override", "77"]);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 77);
    assert_eq!(m["seed_overridden"], true);
    let config_hash: String = Sha256::digest(SMALL_SIMULATE.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["config_sha256"], config_hash);
    let listed = m["files"].as_array().unwrap();
    assert_eq!(listed.len() + 1, fs::read_dir(&out).unwrap().count());
    for f in listed {
        let bytes = fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
        let h: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"], h);
    }
    assert!(m["versions"]["voltheta"].is_string());
}

#[test]
fn output_directory_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let with_dir = format!("{SMALL_SIMULATE}\n[output]\ndir = \"{}\"\n", tmp.path().join("from_config").display());
    let cfg = write(tmp.path(), "sim.toml", &with_dir);
    let env_dir = tmp.path().join("from_env");
    let cli_dir = tmp.path().join("from_cli");

    let o = bin().args(["simulate", "--config", cfg.to_str().unwrap()]).current_dir(tmp.path()).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("from_config/manifest.json").exists());

    let o = bin().args(["simulate", "--config", cfg.to_str().unwrap()]).env("VOLTHETA_OUT", &env_dir).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_dir.join("manifest.json").exists());

    let o = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", cli_dir.to_str().unwrap()])
        .env("VOLTHETA_OUT", tmp.path().join("unused"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(cli_dir.join("manifest.json").exists());
    assert!(!tmp.path().join("unused").exists());
}

#[test]
fn threshold_and_numerical_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let failing = format!("{SMALL_SIMULATE}\n[thresholds]\nterminal_var = {{ min = 100.0 }}\n");
    let cfg = write(tmp.path(), "fail.toml", &failing);
    let out = tmp.path().join("fail");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], false);
    assert_eq!(m["thresholds"][0]["metric"], "terminal_var");

    // the work bound is checked inside the hedging module
    let text = "seed = 1\n[grid]\nsteps = 20\n[model]\nmodel = \"heston\"\ns0 = 100.0\nv0 = 0.04\nhurst = 0.1\nmean_rev_rate = 0.3\nmean_rev_level = 0.04\nvol_of_vol = 0.3\ncorrelation = -0.7\n[payoff]\nkind = \"call\"\nstrike = 100.0\n[hedge]\nrebalance_dates = [10]\nouter_paths = 10\ninitial_price_paths = 10\nmax_work = 1.0\n";
    let cfg = write(tmp.path(), "work.toml", text);
    let out = tmp.path().join("work");
    let o = run(&["hedge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn bundled_quick_scenarios_pass() {
    let tmp = tempfile::tempdir().unwrap();
    for (command, name) in [("verify-ito", "singular-rate"), ("simulate", "heston-transforms"), ("simulate", "rough-simulate")] {
        let out = tmp.path().join(name);
        let o = run(&[command, "--scenario", name, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    }
}
