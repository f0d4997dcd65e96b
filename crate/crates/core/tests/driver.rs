use std::fs;
use std::path::Path;
use std::process::Command;

use ksflow::driver::{run, run_linear_oracle, RunConfig};
use ksflow::Error;

fn small_he() -> RunConfig {
    let mut config = RunConfig::builtin("he").unwrap();
    config.domain_lo = [-6.0; 3];
    config.domain_hi = [6.0; 3];
    config.cells = 6;
    config.prerefine = 3;
    config.maxrefine = 2;
    config.epsilon = 1e-6;
    config.deterministic = true;
    config.output_dir = None;
    config
}

/// Minimal legacy-VTK reader: points, tetra cells and the `rho` point scalars.
fn read_vtk(path: &Path) -> (Vec<[f64; 3]>, Vec<[usize; 4]>, Vec<f64>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# vtk DataFile Version 3.0"));
    lines.next();
    assert_eq!(lines.next().unwrap().trim(), "ASCII");
    assert_eq!(lines.next().unwrap().trim(), "DATASET UNSTRUCTURED_GRID");
    let mut tokens = text
        .lines()
        .skip(4)
        .flat_map(|l| l.split_whitespace())
        .collect::<Vec<_>>()
        .into_iter();
    assert_eq!(tokens.next(), Some("POINTS"));
    let n_points: usize = tokens.next().unwrap().parse().unwrap();
    assert_eq!(tokens.next(), Some("double"));
    let next_f64 = |t: &mut std::vec::IntoIter<&str>| t.next().unwrap().parse::<f64>().unwrap();
    let points: Vec<[f64; 3]> = (0..n_points)
        .map(|_| [next_f64(&mut tokens), next_f64(&mut tokens), next_f64(&mut tokens)])
        .collect();
    assert_eq!(tokens.next(), Some("CELLS"));
    let n_cells: usize = tokens.next().unwrap().parse().unwrap();
    let size: usize = tokens.next().unwrap().parse().unwrap();
    assert_eq!(size, 5 * n_cells);
    let cells: Vec<[usize; 4]> = (0..n_cells)
        .map(|_| {
            assert_eq!(tokens.next(), Some("4"));
            let mut c = [0; 4];
            for v in &mut c {
                *v = tokens.next().unwrap().parse().unwrap();
            }
            c
        })
        .collect();
    assert_eq!(tokens.next(), Some("CELL_TYPES"));
    assert_eq!(tokens.next().unwrap().parse::<usize>().unwrap(), n_cells);
    for _ in 0..n_cells {
        assert_eq!(tokens.next(), Some("10"));
    }
    assert_eq!(tokens.next(), Some("POINT_DATA"));
    assert_eq!(tokens.next().unwrap().parse::<usize>().unwrap(), n_points);
    assert_eq!(tokens.next(), Some("SCALARS"));
    assert_eq!(tokens.next(), Some("rho"));
    assert_eq!(tokens.next(), Some("double"));
    let mut rest: Vec<&str> = tokens.collect();
    if rest.first() == Some(&"1") {
        rest.remove(0);
    }
    assert_eq!(&rest[..2], &["LOOKUP_TABLE", "default"]);
    let rho: Vec<f64> = rest[2..].iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(rho.len(), n_points);
    (points, cells, rho)
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_he();
    config.export_density = true;
    config.export_indicator = true;
    config.output_dir = Some(dir.path().to_path_buf());
    let report = run(&config);
    assert!(report.error.is_none(), "{:?}", report.error);
    assert_eq!(report.exit_code(), 0);

    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,t,dt,E_total,E_kin,E_ext,E_har,E_xc,E_nuc,grad_norm,gram_err,level"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), report.history.len());
    for row in &rows {
        assert_eq!(row.len(), 12);
        let parts = row[4] + row[5] + row[6] + row[7] + row[8];
        assert!((parts - row[3]).abs() < 1e-12 * row[3].abs());
    }

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for key in ["levels", "final_energy", "termination", "config_echo", "version"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    assert_eq!(summary["termination"], "converged");
    assert_eq!(summary["levels"].as_array().unwrap().len(), 3);

    for k in 0..3 {
        assert!(dir.path().join(format!("density_{k}.vtk")).exists());
        let csv = fs::read_to_string(dir.path().join(format!("indicator_{k}.csv"))).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "tet,cx,cy,cz,eta");
    }

    let (points, cells, rho) = read_vtk(&dir.path().join("density_final.vtk"));
    let mesh = report.final_mesh.as_ref().unwrap();
    assert_eq!(points.len(), mesh.n_vertices());
    assert_eq!(cells.len(), mesh.n_tets());
    assert_eq!(cells[0], mesh.tets()[0]);
    let density = report.final_density.as_ref().unwrap();
    for (a, b) in rho.iter().zip(density) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
    }
    assert!(density.iter().all(|&r| r >= 0.0));
}

#[test]
fn level_energies_do_not_increase() {
    for name in ["he", "h2", "lih"] {
        let mut config = small_he();
        let shipped = RunConfig::builtin(name).unwrap();
        config.nuclei = shipped.nuclei;
        config.occupations = shipped.occupations;
        config.hartree = shipped.hartree;
        let report = run(&config);
        assert!(report.error.is_none(), "{name}: {:?}", report.error);
        let energies: Vec<f64> = report.summary.levels.iter().map(|l| l.energy.total).collect();
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{name}: {energies:?}");
        }
    }
}

#[test]
fn deterministic_runs_are_identical() {
    let mut config = small_he();
    config.maxrefine = 1;
    config.init = ksflow::driver::InitialGuess::Random;
    config.seed = 17;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    config.output_dir = Some(a.path().to_path_buf());
    run(&config);
    config.output_dir = Some(b.path().to_path_buf());
    run(&config);
    let read = |d: &Path| fs::read(d.join("summary.json")).unwrap();
    let (sa, sb) = (read(a.path()), read(b.path()));
    // the echoed output directories differ; everything else must match byte for byte
    let strip = |s: &[u8]| {
        String::from_utf8(s.to_vec())
            .unwrap()
            .lines()
            .filter(|l| !l.contains("output_dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&sa), strip(&sb));
    assert_eq!(
        fs::read(a.path().join("history.csv")).unwrap(),
        fs::read(b.path().join("history.csv")).unwrap()
    );
}

#[test]
fn maxrefine_zero_gives_one_level() {
    let mut config = small_he();
    config.maxrefine = 0;
    let report = run(&config);
    assert_eq!(report.summary.levels.len(), 1);
    assert_eq!(report.summary.final_energy, Some(report.summary.levels[0].energy.total));
}

#[test]
fn aborted_run_records_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_he();
    config.max_halvings = 0;
    config.dt_init = Some(1e6);
    config.dt_max = 1e6;
    config.output_dir = Some(dir.path().to_path_buf());
    let report = run(&config);
    assert!(matches!(report.error, Some(Error::FlowStalled { .. })), "{:?}", report.error);
    assert_eq!(report.exit_code(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["termination"], "flow-stalled");
    assert!(dir.path().join("history.csv").exists());
}

#[test]
fn budget_exhaustion_is_reported() {
    let mut config = small_he();
    config.max_steps = 3;
    let report = run(&config);
    assert!(report.error.is_none());
    assert_eq!(report.summary.termination, "budget-exhausted");
    assert_eq!(report.exit_code(), 2);
}

#[test]
fn oracle_rejects_unsupported_configs() {
    assert!(matches!(run_linear_oracle(&small_he()), Err(Error::Config(_))));
    let mut config = RunConfig::builtin("harmonic").unwrap();
    config.cells = 3;
    config.occupations = vec![2.0; 8];
    let result = run_linear_oracle(&config);
    assert!(matches!(result, Err(Error::OracleSizeCap(_))), "{result:?}");
    config.cells = 40;
    config.occupations = vec![2.0];
    assert!(matches!(run_linear_oracle(&config), Err(Error::OracleSizeCap(_))));
}

#[test]
fn cli_runs_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("tiny.conf");
    fs::write(
        &conf,
        "name = tiny\nnucleus = 0, 0, 0, 2\norbitals = 1\ndomain_lo = -6\ndomain_hi = 6\ncells = 6\nprerefine = 2\nmaxrefine = 3\nhartree = zero\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_ksflow"))
        .args(["run", "--config"])
        .arg(&conf)
        .args(["--maxrefine", "1", "--indicator-mode", "zz", "--deterministic", "--export-density", "--output"])
        .arg(&out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join("density_final.vtk").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["levels"].as_array().unwrap().len(), 2);
    assert_eq!(summary["config_echo"]["indicator"], "zz");

    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "name = bad\ntheta = 1.5\nnucleus = 0, 0, 0, 1\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_ksflow"))
        .args(["run", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}
