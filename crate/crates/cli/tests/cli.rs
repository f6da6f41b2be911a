use std::path::{Path, PathBuf};
use std::process::Command;

use elastodiel::torus::Field;
use elastodiel_cli::{run, Args};
use serde_json::Value;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn args(config: PathBuf, out: &Path) -> Args {
    Args {
        config,
        output_dir: Some(out.to_path_buf()),
        verbose: false,
        threads: 1,
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn tensor<'a>(doc: &'a Value, name: &str) -> &'a Value {
    doc["tensors"].as_array().unwrap().iter().find(|t| t["name"] == name).unwrap()
}

fn components(t: &Value) -> Vec<f64> {
    t["components"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
}

const HOMOGENEOUS: &str = r#"
subcommand = "cell"
dim = 2

[geometry]
kind = "inclusions"
inclusions = []

[[phases]]
permittivity = [[2.0, 0.5], [0.5, 1.5]]
elasticity = [1.0, 2.0]
electrostriction = [0.3, 0.1]

[charges]
families = [{ mode = "cosine", wavevector = [1, 0], amplitude = 1.0 }]

[solver]
resolution = 16
"#;

#[test]
fn cell_on_a_homogeneous_medium_returns_the_phase_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let outcome = run(&args(write_config(dir.path(), HOMOGENEOUS), &out));
    assert_eq!(outcome.exit_code, 0, "{:?}", outcome.error);
    let doc = json(&out.join("tensors.json"));
    let eps = components(tensor(&doc, "permittivity"));
    for (a, b) in eps.iter().zip([2.0, 0.5, 0.5, 1.5]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(components(tensor(&doc, "charge_coupling")).iter().all(|v| v.abs() < 1e-12));
    let l = components(tensor(&doc, "elasticity"));
    let m = components(tensor(&doc, "electrostriction"));
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for h in 0..2 {
                    let idx = ((i * 2 + j) * 2 + k) * 2 + h;
                    let iso = |lam: f64, mu: f64| lam * d(i, j) * d(k, h) + mu * (d(i, k) * d(j, h) + d(i, h) * d(j, k));
                    assert!((l[idx] - iso(1.0, 2.0)).abs() < 1e-12);
                    assert!((m[idx] - iso(0.3, 0.1)).abs() < 1e-12);
                }
            }
        }
    }
    assert!(components(tensor(&doc, "coupling_n[0]")).iter().all(|v| v.abs() < 1e-12));
    assert_eq!(doc["provenance"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(doc["certificates"]["max_cell_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn identical_configs_give_byte_identical_documents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), HOMOGENEOUS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&args(cfg.clone(), &a)).exit_code, 0);
    assert_eq!(run(&args(cfg, &b)).exit_code, 0);
    assert_eq!(
        std::fs::read(a.join("tensors.json")).unwrap(),
        std::fs::read(b.join("tensors.json")).unwrap()
    );
}

#[test]
fn missing_charge_section_under_enhance_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = HOMOGENEOUS
        .replace("subcommand = \"cell\"", "subcommand = \"enhance\"")
        .replace("[charges]\nfamilies = [{ mode = \"cosine\", wavevector = [1, 0], amplitude = 1.0 }]\n", "");
    let out = dir.path().join("out");
    let outcome = run(&args(write_config(dir.path(), &text), &out));
    assert_eq!(outcome.exit_code, 2);
    let err = outcome.error.unwrap();
    assert_eq!(err.error, "ConfigError");
    assert_eq!(err.section.as_deref(), Some("charges"));
    assert!(err.message.contains("charges"));
    let doc = json(&out.join("error.json"));
    assert_eq!(doc["section"], "charges");
    assert_eq!(doc["exit_code"], 2);
}

#[test]
fn invalid_numeric_ranges_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (from, to, section) in [
        ("resolution = 16", "resolution = 12", "solver"),
        ("resolution = 16", "resolution = 16\ntolerance = 2.0", "solver"),
        ("dim = 2", "dim = 4", "<root>"),
        ("permittivity = [[2.0, 0.5], [0.5, 1.5]]", "permittivity = [[2.0, 0.5]]", "phases[0]"),
    ] {
        let out = dir.path().join("out");
        let outcome = run(&args(write_config(dir.path(), &HOMOGENEOUS.replace(from, to)), &out));
        assert_eq!(outcome.exit_code, 2, "{to}");
        assert_eq!(outcome.error.unwrap().section.as_deref(), Some(section), "{to}");
    }
}

#[test]
fn unreadable_config_reports_without_panicking() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&args(dir.path().join("absent.toml"), &dir.path().join("out")));
    assert_eq!(outcome.exit_code, 2);
    assert_eq!(outcome.error.unwrap().error, "ConfigError");
}

#[test]
fn non_elliptic_phase_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = HOMOGENEOUS.replace("[[2.0, 0.5], [0.5, 1.5]]", "[[1.0, 2.0], [2.0, 1.0]]");
    let outcome = run(&args(write_config(dir.path(), &text), &dir.path().join("out")));
    assert_eq!(outcome.exit_code, 3);
    let err = outcome.error.unwrap();
    assert_eq!(err.error, "EllipticityError");
    assert_eq!(err.module, "microstructure");
}

const TWOSCALE: &str = r#"
subcommand = "macro"
dim = 2

[geometry]
kind = "inclusions"

[[geometry.inclusions]]
shape = { kind = "ball", center = [0.5, 0.5], radius = 0.25 }

[[phases]]
permittivity = 1.0
elasticity = [1.0, 1.0]
electrostriction = [0.5, 0.2]

[[phases]]
permittivity = 4.0
elasticity = [3.0, 2.0]
electrostriction = [1.0, 0.4]

[charges]
families = [{ mode = "shell-bump", inclusion = 0, inner = 1.05, outer = 1.6, amplitude = 20.0 }]

[study]
deltas = [0.5, 0.25]
exponents = [2.0, 4.0]

[solver]
resolution = 16

[macro]
cells = 16
boundary = { kind = "linear", slope = [1.0, 0.5] }
modulation = { mode = "passive", functions = [{ kind = "linear", offset = 1.0, slope = [0.5, 0.25] }] }
"#;

#[test]
fn two_scale_tables_do_not_depend_on_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWOSCALE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&args(cfg.clone(), &a)).exit_code, 0);
    let mut threaded = args(cfg, &b);
    threaded.threads = 2;
    threaded.verbose = true;
    assert_eq!(run(&threaded).exit_code, 0);
    for f in ["convergence.csv", "twoscale.json", "tensors.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(b.join("diagnostics.csv").exists());
    assert!(!a.join("diagnostics.csv").exists());
    let doc = json(&a.join("twoscale.json"));
    assert!(doc["caveat"].as_str().unwrap().contains("voxelized"));
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn fine_grid_above_the_cap_exits_with_the_resource_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWOSCALE.replace("[solver]\n", "[solver]\nmax_fine_2d = 32\n");
    let outcome = run(&args(write_config(dir.path(), &text), &dir.path().join("out")));
    assert_eq!(outcome.exit_code, 4);
    assert_eq!(outcome.error.unwrap().error, "MemoryBudgetError");
}

#[test]
fn macro_solve_writes_nodal_fields() {
    let dir = tempfile::tempdir().unwrap();
    let text = TWOSCALE.replace("deltas = [0.5, 0.25]\n", "") + "\n[output]\nfields = [\"potential\", \"displacement\", \"indicator\"]\nformat = \"binary\"\n";
    let out = dir.path().join("out");
    let outcome = run(&args(write_config(dir.path(), &text), &out));
    assert_eq!(outcome.exit_code, 0, "{:?}", outcome.error);
    let summary = json(&out.join("macro.json"));
    assert!(summary["scalar_residual"].as_f64().unwrap() < 1e-9);
    assert!(summary["elastic_residual"].as_f64().unwrap() < 1e-9);
    let potential = std::fs::read_to_string(out.join("fields/potential.csv")).unwrap();
    assert_eq!(potential.lines().count(), 17 * 17 + 1);
    assert!(potential.starts_with("x0,x1,phi"));
    let displacement = std::fs::read_to_string(out.join("fields/displacement.csv")).unwrap();
    assert!(displacement.starts_with("x0,x1,u0,u1"));
    let ind = Field::read_binary(std::fs::File::open(out.join("fields/indicator.bin")).unwrap()).unwrap();
    assert_eq!(ind.grid().n, 16);
}

#[test]
fn dilute_mismatch_column_strictly_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let text = "subcommand = \"dilute\"\ndim = 2\n\n[study]\nells = [4, 8, 16]\ncontrast = 5.0\neta = 0.5\nvoxels_per_radius = 16\n";
    let out = dir.path().join("out");
    let outcome = run(&args(write_config(dir.path(), text), &out));
    assert_eq!(outcome.exit_code, 0, "{:?}", outcome.error);
    let mut reader = csv::Reader::from_path(out.join("dilute.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "mismatch").unwrap();
    let mismatch: Vec<f64> = reader.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(mismatch.len(), 3);
    assert!(mismatch.windows(2).all(|w| w[1] < w[0]), "{mismatch:?}");
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), HOMOGENEOUS);
    let bin = env!("CARGO_BIN_EXE_elastodiel");
    let ok = Command::new(bin)
        .args(["--config", cfg.to_str().unwrap(), "--output-dir", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = write_config(dir.path(), "subcommand = \"cell\"\n");
    let fail = Command::new(bin)
        .args(["--config", bad.to_str().unwrap(), "--output-dir", dir.path().join("e").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(fail.status.code(), Some(2));
    let doc: Value = serde_json::from_slice(&fail.stderr).unwrap();
    assert_eq!(doc["error"], "ConfigError");
    let threads = Command::new(bin)
        .args(["--config", cfg.to_str().unwrap(), "--threads", "0"])
        .output()
        .unwrap();
    assert_ne!(threads.status.code(), Some(0));
}
