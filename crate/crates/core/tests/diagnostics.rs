use hwflow::diagnostics::j_functional;
use hwflow::harness::{stability_experiment, StabilityPerturbation};
use hwflow::scenarios::{perturbation_support, preset_delay_convergence, preset_perturbation};
use hwflow::{run, RunOptions};

#[test]
fn gaussian_mass_matches_closed_form() {
    let s = preset_delay_convergence(1.0).unwrap();
    let vs = s.validate().unwrap();
    // (4/9) sqrt(pi/100) (erf(17.5) + erf(2.5)) / 2 with erf(2.5) = 0.999593047982555
    let exact = 4.0 / 9.0 * (std::f64::consts::PI / 100.0).sqrt() * (1.0 + 0.999593047982555) / 2.0;
    for class in &vs.initial_cells {
        let mass: f64 = class.iter().sum::<f64>() * vs.grid.dx;
        assert!((mass - exact).abs() < 1e-10, "{mass} vs {exact}");
    }
}

#[test]
fn perturbation_profile_values() {
    let (a, b) = perturbation_support();
    assert_eq!(a, 0.15);
    assert!((b - (3.0 * std::f64::consts::PI + 1.0) / 20.0).abs() < 1e-15);
    let s = preset_perturbation(0.4).unwrap();
    let theta = |x: f64| ((80.0 / 3.0 * x - 10.0).cos() - (40.0 / 3.0 * x - 5.0).cos()) / 30.0;
    for x in [0.2, 0.3, 0.5] {
        let hv = s.initial.0[0].value(x).unwrap();
        let av = s.initial.0[1].value(x).unwrap();
        assert!((av - (0.85 * 0.4 + 0.85 * theta(x))).abs() < 1e-14);
        assert!((hv + av - 0.85).abs() < 1e-14);
    }
    assert_eq!(s.initial.0[1].value(0.9).unwrap(), 0.85 * 0.4);
}

#[test]
fn j_is_left_endpoint_sum_of_total_variation() {
    let mut s = preset_perturbation(0.4).unwrap();
    s.discretization.dx = 0.02;
    s.discretization.t_final = 3.0;
    let vs = s.validate().unwrap();
    let options = RunOptions {
        snapshot_stride: Some(1),
        ..RunOptions::default()
    };
    let traj = run(&vs, &options, &mut []).unwrap();
    assert_eq!(traj.snapshots.len(), traj.meta.n_steps + 1);
    let tv = |r: &[f64]| (0..r.len()).map(|j| (r[(j + 1) % r.len()] - r[j]).abs()).sum::<f64>();
    let expected: f64 = traj.snapshots[..traj.meta.n_steps]
        .iter()
        .map(|snap| tv(&snap.total_density()))
        .sum::<f64>()
        * traj.meta.dt;
    let j = j_functional(&traj).unwrap();
    assert!(!j.approximate);
    assert!((j.value - expected).abs() <= 1e-12 * expected, "{} vs {expected}", j.value);
}

#[test]
fn small_bump_stays_small() {
    let mut s = preset_perturbation(0.4).unwrap();
    s.discretization.dx = 0.02;
    s.discretization.t_final = 5.0;
    let bump = StabilityPerturbation::DensityBump { class: 1, size: 1e-3 };
    let result = stability_experiment(&s, &bump, 10).unwrap();
    assert_eq!(result.rows.len(), 11);
    let first = &result.rows[0];
    assert!((first.distance.unwrap() - 2e-3).abs() < 1e-12);
    assert!((first.ratio.unwrap() - 1.0).abs() < 1e-9);
    for row in &result.rows {
        let ratio = row.ratio.unwrap();
        assert!(ratio.is_finite() && ratio < 10.0, "ratio {ratio}");
    }

    let none = StabilityPerturbation::DensityBump { class: 1, size: 0.0 };
    let result = stability_experiment(&s, &none, 4).unwrap();
    for row in &result.rows {
        assert_eq!(row.distance, Some(0.0));
        assert_eq!(row.ratio, None);
    }
}
