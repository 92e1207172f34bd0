use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lyapfit::config::{RecipeConfig, SystemSpec};
use lyapfit::{io, ExperimentConfig};
use lyapfit_core::{BuiltinSystem, LibraryRecipe, LyapunovFunction, SparseModel};

fn lyapfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapfit")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// dx1 = -x1 + 0.5 x2, dx2 = -x2 with small libraries.
fn linear_experiment(dir: &Path) -> PathBuf {
    let recipe_f = RecipeConfig { n_states: 2, poly_degree: 1, include_trig: false };
    let lib_f = LibraryRecipe::from(recipe_f).build();
    let mut c = vec![0.0; 2 * lib_f.len()];
    let k = lib_f.len();
    c[lib_f.position_by_name("x1").unwrap()] = -1.0;
    c[lib_f.position_by_name("x2").unwrap()] = 0.5;
    c[k + lib_f.position_by_name("x2").unwrap()] = -1.0;
    let truth = SparseModel::new(lib_f, c).unwrap();
    let coef = dir.join("truth.csv");
    io::write_coefficients(&coef, &truth, None, None).unwrap();

    let mut cfg = ExperimentConfig::pendulum();
    cfg.name = "linear".into();
    cfg.system = SystemSpec::Custom { coefficients: coef };
    cfg.x0 = vec![1.0, -1.0];
    cfg.dt = 0.1;
    cfg.n_points = 25;
    cfg.libraries.dynamics = recipe_f;
    cfg.libraries.lyapunov = RecipeConfig { n_states: 2, poly_degree: 2, include_trig: false };
    cfg.problem.budget_f = 3;
    cfg.problem.budget_v = 2;
    cfg.problem.c_lb = -2.0;
    cfg.problem.c_ub = 2.0;
    cfg.problem.alpha1 = 0.05;
    cfg.solver.node_limit = 3000;
    cfg.verify.max_boxes = 20_000;
    cfg.reproduce.max_rounds = 2;
    let path = dir.join("linear.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn simulate_discover_and_replay_from_emitted_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_experiment(tmp.path());
    let data = tmp.path().join("data.csv");
    let out = lyapfit(&["simulate", "--config", p(&cfg), "--out", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(io::sidecar_path(&data).exists());

    let run1 = tmp.path().join("run1");
    let lp = tmp.path().join("problem.lp");
    let args = ["discover", "--config", p(&cfg), "--data", p(&data), "--out-dir", p(&run1), "--deterministic"];
    let out = lyapfit(&[&args[..], &["--export-lp", p(&lp)]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("status: gap_reached"), "{report}");
    assert!(std::fs::read_to_string(&lp).unwrap().contains("Binaries"));
    for f in ["config.toml", "dataset.csv", "coefficients.csv", "phase.csv", "error_grid.csv", "report.txt", "phase_error.svg"] {
        assert!(run1.join(f).exists(), "{f} missing");
    }

    let table = std::fs::read_to_string(run1.join("coefficients.csv")).unwrap();
    assert!(table.starts_with("# resolved configuration"));
    let loaded = ExperimentConfig::load(&cfg).unwrap();
    let lib_f = LibraryRecipe::from(loaded.libraries.dynamics).build();
    let lib_v = LibraryRecipe::from(loaded.libraries.lyapunov).build();
    let (model, v) = io::read_coefficients(&run1.join("coefficients.csv"), &lib_f, Some(&lib_v)).unwrap();
    assert_eq!(model.support(1e-8).len(), 3, "{model:?}");
    assert!(v.is_some());

    // The emitted configuration reproduces the table.
    let run2 = tmp.path().join("run2");
    let out = lyapfit(&["discover", "--config", p(&run1.join("config.toml")), "--data", p(&data), "--out-dir", p(&run2)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(table, std::fs::read_to_string(run2.join("coefficients.csv")).unwrap());
}

fn pendulum_energy_table(dir: &Path, flip: bool) -> PathBuf {
    let cfg = ExperimentConfig::pendulum();
    let lib_f = LibraryRecipe::from(cfg.libraries.dynamics).build();
    let lib_v = LibraryRecipe::from(cfg.libraries.lyapunov).build();
    let mut model = BuiltinSystem::Pendulum.true_model(&lib_f).unwrap();
    if flip {
        let c: Vec<f64> = model.coefficients().iter().map(|c| -c).collect();
        model = SparseModel::new(lib_f, c).unwrap();
    }
    let v = LyapunovFunction::pendulum_energy(&lib_v).unwrap();
    let path = dir.join(if flip { "flipped.csv" } else { "energy.csv" });
    io::write_coefficients(&path, &model, Some(&v), None).unwrap();
    path
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = pendulum_energy_table(tmp.path(), false);
    let out = lyapfit(&["verify", "--coefficients", p(&good)]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("interval: Certified"), "{text}");
    assert!(!text.contains("grid: Certified"));

    let bad = pendulum_energy_table(tmp.path(), true);
    let out = lyapfit(&["verify", "--coefficients", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Falsified"));
}

#[test]
fn metrics_of_the_truth_are_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let table = pendulum_energy_table(tmp.path(), false);
    let out = lyapfit(&["metrics", "--coefficients", p(&table), "--out-dir", p(tmp.path())]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success());
    assert!(text.contains("coefficient error 0.000000e0"), "{text}");
    assert!(text.contains("3 true positive, 0 false positive, 0 false negative"), "{text}");
    let grid = std::fs::read_to_string(tmp.path().join("error_grid.csv")).unwrap();
    assert_eq!(grid.lines().filter(|l| !l.starts_with('#')).count(), 1 + 50 * 50);
}

#[test]
fn ssr_baseline_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lyapfit(&["baseline", "--method", "ssr", "--out-dir", p(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(tmp.path().join("coefficients.csv")).unwrap();
    assert!(table.starts_with("# method: ssr"), "{table}");
    assert!(tmp.path().join("error_grid.csv").exists());
}

#[test]
fn bad_input_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "name = \"x\"\nunknown_key = 1\n").unwrap();
    let out = lyapfit(&["simulate", "--config", p(&cfg), "--out", p(&tmp.path().join("d.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = lyapfit(&["metrics", "--coefficients", "/nonexistent/table.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/table.csv"));
}

#[test]
fn cli_overrides_reach_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    let out = lyapfit(&["simulate", "--preset", "oscillator", "--sigma", "0.05", "--seed", "3", "--out", p(&data)]);
    assert!(out.status.success());
    let meta: io::DatasetMeta = toml::from_str(&std::fs::read_to_string(io::sidecar_path(&data)).unwrap()).unwrap();
    assert_eq!(meta.sigma, 0.05);
    assert_eq!(meta.seed, 3);
    assert_eq!(meta.records, 601);
}

#[test]
fn shipped_configs_match_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let p = ExperimentConfig::load(&root.join("pendulum.toml")).unwrap();
    let o = ExperimentConfig::load(&root.join("oscillator.toml")).unwrap();
    assert_eq!(p.to_toml(), ExperimentConfig::pendulum().to_toml());
    assert_eq!(o.to_toml(), ExperimentConfig::oscillator().to_toml());
}
