use std::path::Path;
use std::process::Command;

use hwflow::io::{self, read_table, BundleOptions};
use hwflow::model::Term;
use hwflow::scenarios::{preset_constant, preset_perturbation};
use hwflow::{run, Error, RunOptions};
use proptest::prelude::*;

const EXE: &str = env!("CARGO_BIN_EXE_hwflow");

fn hwflow(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(EXE).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_file_round_trip(
        a in 0.0f64..0.5,
        b in 0.0f64..0.5,
        tau in 0.0f64..5.0,
        t_final in 0.1f64..100.0,
        safety in 0.01f64..1.0,
        amp in -0.1f64..0.1,
    ) {
        let mut s = preset_constant(&[a, b]).unwrap();
        s.model.classes[0].tau = tau;
        s.discretization.t_final = t_final;
        s.discretization.cfl_safety = safety;
        if let hwflow::model::Profile::Analytic { terms } = &mut s.initial.0[1] {
            terms.push(Term::Gaussian { amplitude: amp, center: 1.0, steepness: 30.0 });
        }
        let text = io::scenario_to_toml(&s).unwrap();
        let back = io::parse_scenario_str(&text).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn bundle_values_survive_csv() {
    let mut s = preset_perturbation(0.6).unwrap();
    s.discretization.dx = 0.02;
    s.discretization.t_final = 2.0;
    let vs = s.validate().unwrap();
    let options = RunOptions {
        snapshot_times: Some(vec![0.0, 1.0, 2.0]),
        ..RunOptions::default()
    };
    let traj = run(&vs, &options, &mut []).unwrap();
    for gzip in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        let opts = BundleOptions { gzip, stride: 1, entropy_seed: None };
        let paths = io::write_bundle(&vs, &traj, dir.path(), &opts).unwrap();
        let (header, rows) = read_table(&paths.snapshots).unwrap();
        assert_eq!(header, ["t", "x", "rho_1", "rho_2", "r"]);
        let n = vs.grid.n_cells;
        assert_eq!(rows.len(), traj.snapshots.len() * n);
        for (k, snap) in traj.snapshots.iter().enumerate() {
            for j in 0..n {
                let row = &rows[k * n + j];
                assert_eq!(row[0], snap.t);
                assert_eq!(row[1], vs.grid.center(j));
                assert_eq!(row[2], snap.rho[0][j]);
                assert_eq!(row[3], snap.rho[1][j]);
                assert_eq!(row[4], snap.rho[0][j] + snap.rho[1][j]);
            }
        }
        let (dh, drows) = read_table(&paths.diagnostics).unwrap();
        assert_eq!(dh.len(), 1 + 2 + 2 + 3);
        assert_eq!(drows.len(), traj.diagnostics.len());
        for (row, d) in drows.iter().zip(&traj.diagnostics) {
            assert_eq!(row[1], d.l1[0]);
            assert_eq!(row[5], d.tv_total);
        }
        let scen = io::parse_scenario(&paths.scenario).unwrap();
        assert_eq!(scen.scenario, vs.scenario);
        let meta: toml::Value = toml::from_str(&std::fs::read_to_string(&paths.metadata).unwrap()).unwrap();
        assert_eq!(meta["run"]["n_cells"].as_integer(), Some(n as i64));
        let raw = std::fs::read(&paths.snapshots).unwrap();
        if !gzip {
            assert!(!raw.contains(&b'\r'));
        } else {
            assert_eq!(&raw[..2], &[0x1f, 0x8b]);
        }
    }
}

#[test]
fn empty_trajectory_writes_headers_only() {
    let mut s = preset_constant(&[0.3, 0.4]).unwrap();
    s.discretization.dx = 0.05;
    s.discretization.t_final = 0.5;
    let vs = s.validate().unwrap();
    let mut traj = run(&vs, &RunOptions::default(), &mut []).unwrap();
    traj.snapshots.clear();
    traj.diagnostics.clear();
    let dir = tempfile::tempdir().unwrap();
    let paths = io::write_bundle(&vs, &traj, dir.path(), &BundleOptions::default()).unwrap();
    for p in [&paths.snapshots, &paths.diagnostics] {
        let (header, rows) = read_table(p).unwrap();
        assert!(!header.is_empty());
        assert!(rows.is_empty());
    }
}

#[test]
fn malformed_files_are_distinguished() {
    assert!(matches!(io::parse_scenario_str("[scenario\nname ="), Err(Error::Parse(_))));
    assert!(matches!(
        io::parse_scenario_str("[scenario]\npreset = { name = \"overtaking\", extra = 1 }"),
        Err(Error::Schema(_))
    ));
    assert!(matches!(io::parse_scenario(Path::new("/nonexistent/x.toml")), Err(Error::Io(_))));
}

#[test]
fn cli_exit_codes() {
    assert_eq!(hwflow(&["presets"]).0, 0);
    assert_eq!(hwflow(&[]).0, 1);
    assert_eq!(hwflow(&["run", "--preset", "overtaking", "--bogus"]).0, 1);
    assert_eq!(hwflow(&["check", "--preset", "overtaking"]).0, 0);
    let (code, _, err) = hwflow(&["check", "--preset", "overtaking", "--dt", "0.005"]);
    assert_eq!(code, 2, "{err}");
    assert_eq!(hwflow(&["check", "--preset", "perturbation", "--p", "1.0"]).0, 2);
    assert_eq!(hwflow(&["check", "--config", "/nonexistent/file.toml"]).0, 3);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model\n").unwrap();
    assert_eq!(hwflow(&["check", "--config", bad.to_str().unwrap()]).0, 2);
}

#[test]
fn cli_run_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bundle");
    let (code, _, err) = hwflow(&[
        "run", "--preset", "overtaking", "--dx", "0.02", "--T", "3", "--out", out.to_str().unwrap(), "--snapshot-times", "1,2",
    ]);
    assert_eq!(code, 0, "{err}");
    let (_, rows) = read_table(&out.join("snapshots.csv")).unwrap();
    assert_eq!(rows.len(), 4 * 100);
    let emitted = dir.path().join("emitted.toml");
    let (code, text, err) = hwflow(&["check", "--preset", "overtaking", "--emit-config"]);
    assert_eq!(code, 0, "{err}");
    std::fs::write(&emitted, text).unwrap();
    let (code, _, err) = hwflow(&["check", "--config", emitted.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn cli_penetration_sweep_has_a_row_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = hwflow(&[
        "sweep", "penetration", "--p", "0:1:0.1", "--dx", "0.02", "--T", "2", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let mut reader = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (p, j, lags) = (col("p"), col("j"), col("delay_steps"));
    let rows: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 11);
    for (k, row) in rows.iter().enumerate() {
        assert!((row[p].parse::<f64>().unwrap() - k as f64 / 10.0).abs() < 1e-15);
        assert!(row[j].parse::<f64>().unwrap() > 0.0);
        assert_eq!(row[lags].split(';').count(), 2);
    }
    assert!(dir.path().join("sweep.toml").is_file());
    assert!(dir.path().join("runs").is_dir());
}
