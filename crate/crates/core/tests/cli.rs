//! End-to-end runs of the `lbgk-hydro` binary and the file formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lbgk_hydro::cli_io::{
    decode_snapshot, read_csv, read_field_snapshot, write_csv, write_field_snapshot, Cell, CONFIG_FILE,
};
use lbgk_hydro::spectral::{Grid2D, RealField2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbgk-hydro"))
        .args(args)
        .env("LBGK_HYDRO_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_lattice_prints_residual_table() {
    let o = bin(&["validate-lattice", "d2q9", "--tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("residual"));
    assert!(out.contains("d2q9: isotropic"));
}

#[test]
fn validate_lattice_reads_files_and_reports_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    // D2Q9 with the rest weight nudged.
    let text = lbgk_hydro::lattice::d2q9()
        .to_string()
        .replacen("4.444444444444444e-1", "4.5e-1", 1);
    fs::write(&path, text).unwrap();
    let o = bin(&["validate-lattice", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("NOT isotropic"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(bin(&["converge", "--bogus"]).status.code(), Some(2));
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(bin(&["validate-lattice", "d9q2"]).status.code(), Some(2));
    let o = bin(&["converge", "--eps", "0.1,0.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("decreasing"));
    let o = bin(&["run-ns", "--nu", "zero"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`nu`"));
    let o = bin(&["converge", "--density", "lumpy"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`density`"));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn tg_validate_reports_error() {
    let o = bin(&["tg-validate", "--n", "16", "--t-final", "0.1", "--dt", "0.01"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let value: f64 = out.rsplit(':').next().unwrap().trim().parse().unwrap();
    assert!(value < 1e-10);
}

fn list(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn run_ns_writes_series_snapshots_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ns");
    let o = bin(&[
        "run-ns",
        "--n",
        "16",
        "--t-final",
        "0.2",
        "--dt",
        "0.05",
        "--output-every",
        "2",
        "--snapshot-every",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        list(&out),
        [
            "config.txt",
            "ns_series.csv",
            "omega_t0.1.lbf",
            "omega_t0.2.lbf",
            "omega_t0.lbf"
        ]
    );
    let (header, rows) = read_csv(&out.join("ns_series.csv")).unwrap();
    assert_eq!(
        header,
        [
            "time",
            "enstrophy",
            "palinstrophy",
            "energy",
            "mean_vorticity",
            "enstrophy_law_residual"
        ]
    );
    assert_eq!(rows.len(), 3);
    let (t, field) = read_field_snapshot(&out.join("omega_t0.2.lbf")).unwrap();
    assert_eq!(t, 0.2);
    assert_eq!(field.grid().n(), 16);

    // Re-running from the recorded config reproduces every byte.
    let again = dir.path().join("again");
    let o = bin(&[
        "run-ns",
        "--config",
        out.join(CONFIG_FILE).to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["ns_series.csv", "omega_t0.2.lbf"] {
        assert_eq!(
            fs::read(out.join(name)).unwrap(),
            fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ns.cfg");
    fs::write(&cfg, "# small run\nn = 16\nt-final = 0.1\ndt = 0.05\nnu = 1\n").unwrap();
    let out = dir.path().join("run");
    let o = bin(&[
        "run-ns",
        "--config",
        cfg.to_str().unwrap(),
        "--nu",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let written = fs::read_to_string(out.join(CONFIG_FILE)).unwrap();
    assert!(written.contains("nu = 0.5\n"));
    assert!(written.contains("n = 16\n"));

    fs::write(&cfg, "unknown-key = 3\n").unwrap();
    assert_eq!(
        bin(&["run-ns", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn run_lbgk_writes_distributions_and_vorticity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lbgk");
    let o = bin(&[
        "run-lbgk",
        "--n",
        "16",
        "--eps",
        "0.5",
        "--nu",
        "0.01",
        "--t-final",
        "0.002",
        "--lattice",
        "d2q7",
        "--output-every",
        "5",
        "--snapshot-every",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let names = list(&out);
    assert!(names.contains(&"lbgk_series.csv".to_string()));
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("g") && n.ends_with(".lbf"))
            .count(),
        14
    );
    assert_eq!(names.iter().filter(|n| n.starts_with("omega_eps_t")).count(), 2);
    let (header, rows) = read_csv(&out.join("lbgk_series.csv")).unwrap();
    assert_eq!(header, ["time", "mass", "l2_rho", "l2_u", "weighted_g_norm"]);
    let mass: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(mass.iter().all(|m| (m - mass[0]).abs() < 1e-12));
}

#[test]
fn converge_writes_rows_and_fit_footer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conv");
    let o = bin(&[
        "converge",
        "--n",
        "16",
        "--nu",
        "0.01",
        "--t-final",
        "0.002",
        "--eps",
        "0.8,0.6,0.4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = read_csv(&out.join("convergence.csv")).unwrap();
    assert_eq!(header, ["epsilon", "rel_error", "dt_used", "steps"]);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.8);
    let footer: Vec<&str> = rows[3..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(footer, ["fit_prefactor", "fit_exponent", "fit_r2"]);
    for r in &rows[..3] {
        let dt: f64 = r[2].parse().unwrap();
        let steps: f64 = r[3].parse().unwrap();
        assert!((dt * steps - 0.002).abs() < 1e-15);
    }
    assert!(stdout(&o).contains("fit:"));
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = Grid2D::new(24).unwrap();
    let values = (0..grid.len()).map(|_| rng.gen_range(-1e3..1e3)).collect();
    let field = RealField2D::new(grid, values).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.lbf");
    write_field_snapshot(&path, &field, 1.5).unwrap();
    let (t, back) = read_field_snapshot(&path).unwrap();
    assert_eq!(t, 1.5);
    let bits = |f: &RealField2D| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&field));
}

#[test]
fn corrupt_snapshots_are_format_errors() {
    let grid = Grid2D::new(8).unwrap();
    let bytes = lbgk_hydro::cli_io::encode_snapshot(&RealField2D::zeros(grid), 0.0);
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let truncated = &bytes[..bytes.len() - 1];
    for b in [&bad_magic[..], truncated, &bytes[..10]] {
        match decode_snapshot(b) {
            Err(lbgk_hydro::Error::Format(_)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
    let missing = read_field_snapshot(Path::new("/nonexistent/x.lbf")).unwrap_err();
    assert!(missing.to_string().contains("/nonexistent/x.lbf"));
}

#[test]
fn csv_rows_parse_back_to_the_same_doubles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let rows = vec![
        vec![Cell::Float(0.1), Cell::Float(1.0458e-8)],
        vec![Cell::Float(1.0 / 3.0), Cell::Int(7)],
    ];
    write_csv(&path, &["a", "b"], &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    let (_, back) = read_csv(&path).unwrap();
    assert_eq!(back[0][0].parse::<f64>().unwrap(), 0.1);
    assert_eq!(back[0][1].parse::<f64>().unwrap(), 1.0458e-8);
    assert_eq!(back[1][0].parse::<f64>().unwrap(), 1.0 / 3.0);
    assert_eq!(back[1][1], "7");
}
