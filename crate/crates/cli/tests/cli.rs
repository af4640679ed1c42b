use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gradfield_cli::heatmap::parse_ppm_header;
use gradfield_core::io::{read_dataset, read_surface};

const SMALL_GP: &str = r#"
seed = 11
simulate.n_full = 300
simulate.n_obs = 60
mcmc.iterations = 600
mcmc.burn_in = 200
mcmc.thin = 20
targets.nx = 6
targets.ny = 3
heatmap.scale = 3
"#;

fn gradfield(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gradfield"));
    c.current_dir(dir).args(args).env_remove("GRADFIELD_THREADS").env("RUST_LOG", "warn");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = gradfield(dir, args, &[]);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    (dir, cfg)
}

fn data_rows(path: &Path) -> usize {
    read_dataset(path).unwrap().len()
}

#[test]
fn simulate_writes_full_and_observed_sets() {
    let (dir, _) = setup("");
    ok(dir.path(), &["simulate", "--out", "o"]);
    assert_eq!(data_rows(&dir.path().join("o/full.csv")), 2000);
    assert_eq!(data_rows(&dir.path().join("o/obs.csv")), 200);
    // The subset consists of rows of the full realization.
    let full = std::fs::read_to_string(dir.path().join("o/full.csv")).unwrap();
    let obs = std::fs::read_to_string(dir.path().join("o/obs.csv")).unwrap();
    let rows: std::collections::HashSet<&str> = full.lines().collect();
    assert!(obs.lines().all(|l| rows.contains(l)));
}

#[test]
fn simulate_is_seeded() {
    let (dir, _) = setup("simulate.n_full = 200\nsimulate.n_obs = 20\n");
    let cfg = "run.toml";
    ok(dir.path(), &["simulate", "--config", cfg, "--seed", "5", "--out", "a"]);
    ok(dir.path(), &["simulate", "--config", cfg, "--seed", "5", "--out", "b", "--threads", "2"]);
    ok(dir.path(), &["simulate", "--config", cfg, "--seed", "6", "--out", "c"]);
    let read = |d: &str| std::fs::read(dir.path().join(d).join("full.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn subset_larger_than_realization_is_rejected() {
    let (dir, _) = setup("simulate.n_full = 10\nsimulate.n_obs = 20\n");
    let o = gradfield(dir.path(), &["simulate", "--config", "run.toml", "--out", "o"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_obs"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let (dir, _) = setup("mcmc.iteratons = 10\n");
    let o = gradfield(dir.path(), &["simulate", "--config", "run.toml"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("iteratons"));
}

#[test]
fn missing_inputs_are_named() {
    let (dir, _) = setup("data.path = \"nowhere/obs.csv\"\n");
    let o = gradfield(dir.path(), &["fit-gp", "--config", "run.toml", "--out", "o"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere/obs.csv"));
    let o = gradfield(dir.path(), &["fit-lgcp", "--out", "empty"], &[]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pattern.csv"));
}

#[test]
fn bad_thread_variable_is_an_error() {
    let (dir, _) = setup("");
    let o = gradfield(dir.path(), &["validate"], &[("GRADFIELD_THREADS", "many")]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("GRADFIELD_THREADS"));
}

#[test]
fn validate_passes_and_catches_a_sign_error() {
    let (dir, _) = setup("");
    let o = ok(dir.path(), &["validate", "--out", "v"]);
    assert!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count() >= 15);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("v/validate.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    for c in report["checks"].as_array().unwrap() {
        assert!(c["name"].is_string() && c["tolerance"].is_number() && c["measured"].is_number());
    }

    let o = gradfield(dir.path(), &["validate", "--out", "w", "--inject-sign-error"], &[]);
    assert!(!o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL kernel gradient vs finite differences"), "{stdout}");
}

#[test]
fn gp_pipeline_surfaces_and_images() {
    let cfg = format!("{SMALL_GP}directions = [[0.0, 2.0], [0.8508, -0.5255]]\n");
    let (dir, _) = setup(&cfg);
    for c in ["simulate", "fit-gp", "gradients", "sensitivity", "discrepancy"] {
        ok(dir.path(), &[c, "--config", "run.toml", "--out", "o"]);
    }
    let o = dir.path().join("o");
    // 20 retained draws × 18 targets.
    let draws = std::fs::read_to_string(o.join("gradient_draws.csv")).unwrap();
    assert_eq!(draws.lines().filter(|l| !l.starts_with('#')).count(), 1 + 20 * 18);

    let r1 = read_surface(&o.join("ratio_u1.csv")).unwrap();
    assert_eq!((r1.grid.nx, r1.grid.ny), (6, 3));
    assert!(r1.label.contains("u = (0, 1)"), "{}", r1.label);
    let r2 = read_surface(&o.join("ratio_u2.csv")).unwrap();
    assert!(r2.label.contains("u = (0.85"), "{}", r2.label);

    let disc = read_surface(&o.join("disc.csv")).unwrap();
    assert!(disc.values.iter().flatten().all(|v| (0.0..=2.0).contains(v)));

    for name in ["ratio_u1.ppm", "ratio_u2.ppm", "disc.ppm"] {
        let bytes = std::fs::read(o.join(name)).unwrap();
        let (w, h, off) = parse_ppm_header(&bytes).unwrap();
        assert_eq!((w, h), (18, 9), "{name}");
        assert_eq!(bytes.len() - off, w * h * 3);
    }
}

#[test]
fn targets_outside_the_data_are_rejected() {
    let cfg = format!("{SMALL_GP}targets.window = {{ s1_min = 8.0, s1_max = 12.0, s2_min = 0.0, s2_max = 1.0 }}\n");
    let (dir, _) = setup(&cfg);
    ok(dir.path(), &["simulate", "--config", "run.toml", "--out", "o"]);
    ok(dir.path(), &["fit-gp", "--config", "run.toml", "--out", "o"]);
    let o = gradfield(dir.path(), &["sensitivity", "--config", "run.toml", "--out", "o"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("target window"));
}

#[test]
fn zero_direction_is_rejected() {
    let (dir, _) = setup("directions = [[0.0, 0.0]]\n");
    let o = gradfield(dir.path(), &["simulate", "--config", "run.toml"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("direction"));
}

const SMALL_LGCP: &str = r#"
seed = 4
simulate.kind = "lgcp"
simulate.lgcp.n_covariate = 80
simulate.lgcp.beta0 = -3.6
lgcp.window = { s1_min = 0.0, s1_max = 60.0, s2_min = 0.0, s2_max = 60.0 }
lgcp.nx = 12
lgcp.ny = 12
lgcp.targets_nx = 5
lgcp.targets_ny = 5
lgcp.phi_z = 0.04
lgcp.covariate_iterations = 700
lgcp.field_thin = 2
priors.phi_x = { family = "uniform", lower = 0.01, upper = 1.0 }
mcmc.iterations = 700
mcmc.burn_in = 200
mcmc.thin = 10
surface.model = "lgcp"
directions = [[0.8508, -0.5255]]
"#;

#[test]
fn lgcp_pipeline_and_grid_mismatch() {
    let (dir, _) = setup(SMALL_LGCP);
    for c in ["simulate", "fit-lgcp", "sensitivity", "discrepancy"] {
        ok(dir.path(), &[c, "--config", "run.toml", "--out", "o"]);
    }
    let o = dir.path().join("o");
    let ratio = read_surface(&o.join("ratio_u1.csv")).unwrap();
    assert_eq!(ratio.grid.len(), 25);
    let disc = read_surface(&o.join("disc.csv")).unwrap();
    assert!(disc.values.iter().flatten().all(|v| (0.0..=2.0).contains(v)));
    // Every second retained draw has a field dump.
    let field = std::fs::read_to_string(o.join("lgcp_field.csv")).unwrap();
    assert_eq!(field.lines().filter(|l| !l.starts_with('#')).count(), 1 + 25 * 144);

    std::fs::write(dir.path().join("other.toml"), format!("{SMALL_LGCP}\nlgcp.nx = 10\n").replace("lgcp.nx = 12\n", "")).unwrap();
    let e = gradfield(dir.path(), &["sensitivity", "--config", "other.toml", "--out", "o"], &[]);
    assert!(!e.status.success());
    assert!(String::from_utf8_lossy(&e.stderr).contains("does not match"));
}
