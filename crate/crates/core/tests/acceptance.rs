//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hwflow::diagnostics::{entropy_tol, kappa_sample_set, l1_norm, EntropyMonitor};
use hwflow::discretization::Discrete;
use hwflow::harness::{delay_sweep, penetration_sweep, perturbation_sweep, refinement_study, Overrides};
use hwflow::model::{Coupling, SaturationLaw, Scenario, SpeedLaw};
use hwflow::scenarios::*;
use hwflow::solver::{run, run_steps, Observer, RunOptions, Simulation, StepView};
use hwflow::Result;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::MIN, f64::max)
}

fn criterion_1() -> Outcome {
    let vs = preset_overtaking(true).validate().unwrap();
    let traj = run(&vs, &RunOptions::default(), &mut []).unwrap();
    let drift = max_of(&traj.extremes.max_l1_drift);
    ensure(
        drift < 1e-12,
        format!("{} steps, max relative L1 drift {drift:.3e} (< 1e-12)", traj.meta.n_steps),
    )
}

fn criterion_2() -> Outcome {
    let vs = preset_overtaking(true).validate().unwrap();
    let sat = run(&vs, &RunOptions::default(), &mut []).unwrap();
    let sup = max_of(&sat.extremes.sup_density);
    let vs = preset_overtaking(false).validate().unwrap();
    let free = run(&vs, &RunOptions::default(), &mut []).unwrap();
    let peak = max_of(&free.final_snapshot().rho[0]);
    ensure(
        sup <= 1.0 + 1e-12 && peak > 1.0,
        format!("saturated sup rho = {sup:.15}, unsaturated max rho_1(30) = {peak:.6}"),
    )
}

fn criterion_3() -> Outcome {
    let vs = preset_invariant_domain(Coupling::TotalDensity).validate().unwrap();
    let total = run(&vs, &RunOptions::default(), &mut []).unwrap();
    let vs = preset_invariant_domain(Coupling::PerClass).validate().unwrap();
    let per = run(&vs, &RunOptions::default(), &mut []).unwrap();
    let sup_total = total.extremes.sup_total;
    let r30 = max_of(&per.final_snapshot().total_density());
    ensure(
        sup_total <= 1.0 + 1e-12 && r30 > 1.0,
        format!("total-density sup r = {sup_total:.15}, per-class max r(30) = {r30:.6}"),
    )
}

fn criterion_4() -> Outcome {
    let vs = preset_overtaking(true).validate().unwrap();
    let n_steps = Discrete::build(&vs).unwrap().time.n_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let steps: Vec<usize> = rand::seq::index::sample(&mut rng, n_steps, 50).into_vec();
    let kappas = kappa_sample_set(7, 1.0);
    let mut worst = f64::MIN;
    let mut violations = 0;
    let mut checked = 0;
    for &kappa in &kappas {
        let mut monitor = EntropyMonitor::new(vec![kappa], Some(steps.clone()));
        run(&vs, &RunOptions::default(), &mut [&mut monitor]).unwrap();
        checked = monitor.checked_steps;
        worst = worst.max(monitor.report.max_residual - entropy_tol(kappa));
        if monitor.report.max_residual > entropy_tol(kappa) {
            violations += 1;
        }
    }
    ensure(
        violations == 0 && checked == 50,
        format!(
            "{checked} steps x {} levels, max(residual - tol) = {worst:.3e}",
            kappas.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let sweep = delay_sweep(&DELAY_SWEEP_TAUS, &Overrides::default()).unwrap();
    let d: Vec<f64> = sweep.rows.iter().map(|r| r.distance.unwrap()).collect();
    let vs = preset_delay_convergence(0.0).unwrap().validate().unwrap();
    let r0: f64 = vs.initial_cells.iter().map(|c| l1_norm(c, vs.grid.dx)).sum();
    // rows follow [5, 4, 3, 2, 1, 0]
    let decreasing = d[..5].windows(2).all(|w| w[0] > w[1]);
    let at_one = d[4] / r0;
    ensure(
        decreasing && at_one < 0.1,
        format!("distances {}, d(1)/|r0|_1 = {at_one:.4}", sci(&d)),
    )
}

fn criterion_6() -> Outcome {
    let ps = penetration_grid();
    let o = Overrides::default();
    let tri = penetration_sweep(&ps, SpeedFamily::Triangular, &[2.0, 2.5], &o).unwrap();
    let green = penetration_sweep(&[0.0], SpeedFamily::Greenshields, &[2.5], &o).unwrap();
    let j = |tau: f64, p: f64| {
        tri.rows
            .iter()
            .find(|r| r.param("tau_h") == Some(tau) && r.param("p") == Some(p))
            .and_then(|r| r.j)
            .unwrap()
    };
    let curve: Vec<f64> = ps.iter().map(|&p| j(2.5, p)).collect();
    let (k_min, _) = curve
        .iter()
        .enumerate()
        .fold((0, f64::MAX), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    let p_star = ps[k_min];
    let a = (0.6..=0.9).contains(&p_star);
    let rel = (j(2.0, 1.0) - j(2.5, 1.0)).abs() / j(2.5, 1.0);
    let b = rel <= 1e-12;
    let c = j(2.5, 0.0) > j(2.0, 0.0);
    let green0 = green.rows[0].j.unwrap();
    let d = j(2.5, 0.0) > green0;
    ensure(
        a && b && c && d,
        format!(
            "(a) argmin p = {p_star} [{a}] (b) rel diff at p=1 {rel:.1e} [{b}] (c) J0(2.5) = {:.4} vs J0(2.0) = {:.4} [{c}] (d) triangular J0 {:.4} vs Greenshields {green0:.4} [{d}]; J(p) = {curve:.4?}",
            j(2.5, 0.0),
            j(2.0, 0.0),
            j(2.5, 0.0)
        ),
    )
}

fn criterion_7() -> Outcome {
    let sweep = perturbation_sweep(&PERTURBATION_PS, &Overrides::default()).unwrap();
    let tv: Vec<f64> = sweep.rows.iter().map(|r| r.final_tv).collect();
    ensure(
        tv.windows(2).all(|w| w[0] > w[1]),
        format!("TV(r(30)) over p = {PERTURBATION_PS:?}: {}", sci(&tv)),
    )
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let s = preset_delay_convergence(0.0).unwrap();
    let r = refinement_study(&s, &[0.02, 0.01, 0.005, 0.0025]).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let errors: Vec<f64> = r.rows.iter().filter_map(|row| row.error).collect();
    let eocs: Vec<f64> = r.rows.iter().filter_map(|row| row.eoc).collect();
    let finest = *eocs.last().unwrap();
    ensure(
        (0.6..=1.3).contains(&finest) && elapsed < 120.0,
        format!("errors {}, EOC {eocs:.3?}, finest {finest:.3}, {elapsed:.1} s", sci(&errors)),
    )
}

struct ConstantCheck {
    values: Vec<f64>,
    worst: f64,
    steps: usize,
}

impl Observer for ConstantCheck {
    fn observe(&mut self, view: &StepView<'_>) -> Result<()> {
        for (c, &v) in view.after.rho.iter().zip(&self.values) {
            for &x in c {
                self.worst = self.worst.max((x - v).abs());
            }
        }
        self.steps += 1;
        Ok(())
    }
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    let mut steps = 0;
    for values in [vec![0.3, 0.4], vec![0.0, 0.7], vec![0.95, 0.05]] {
        let vs = preset_constant(&values).unwrap().validate().unwrap();
        let mut check = ConstantCheck {
            values: values.clone(),
            worst: 0.0,
            steps: 0,
        };
        run_steps(&vs, &RunOptions::default(), &mut [&mut check], Some(10_000)).unwrap();
        worst = worst.max(check.worst);
        steps = check.steps;
    }
    ensure(
        worst <= 1e-14 && steps == 10_000,
        format!("{steps} steps, max deviation {worst:.3e}"),
    )
}

/// Direct transcription of one step from the initial state, periodic ring,
/// constant kernels, Greenshields speeds, exponential saturation.
fn oracle_step(s: &Scenario, rho: &[Vec<f64>], dx: f64, lambda: f64) -> Vec<Vec<f64>> {
    let n = rho[0].len();
    let r0: Vec<f64> = (0..n).map(|j| rho.iter().map(|c| c[j]).sum()).collect();
    let mut out = Vec::new();
    for (i, class) in s.model.classes.iter().enumerate() {
        let length = class.kernel.length();
        let cells = (length / dx).round() as usize;
        // cell averages of the constant kernel 1/L on [0, L)
        let w: Vec<f64> = (0..cells)
            .map(|k| ((k + 1) as f64 * dx / length - k as f64 * dx / length) / dx)
            .collect();
        let (vmax, rmax) = match class.speed {
            SpeedLaw::Greenshields { v_max, r_max } => (v_max, r_max),
            _ => unreachable!(),
        };
        let a = match class.saturation {
            SaturationLaw::Exponential { steepness, .. } => steepness,
            SaturationLaw::None => unreachable!(),
        };
        let f = |x: f64| if x >= 1.0 { 0.0 } else { 1.0 - (a * (x - 1.0)).exp() };
        // history is the initial total density for every lag
        let vel: Vec<f64> = (0..=n)
            .map(|j| {
                let conv: f64 = (0..cells).map(|k| w[k] * r0[(j + k) % n]).sum::<f64>() * dx;
                vmax * (1.0 - conv / rmax)
            })
            .collect();
        let u = &rho[i];
        let flux: Vec<f64> = (0..n).map(|j| u[j] * f(u[(j + 1) % n]) * vel[j + 1]).collect();
        out.push(
            (0..n)
                .map(|j| u[j] - lambda * (flux[j] - flux[(j + n - 1) % n]))
                .collect(),
        );
    }
    out
}

fn criterion_10() -> Outcome {
    let s = preset_overtaking(true);
    let vs = s.validate().unwrap();
    let mut sim = Simulation::new(&vs).unwrap();
    let lambda = sim.discrete().time.lambda;
    let expected_lambda = 30.0 / sim.discrete().time.n_steps as f64 / 0.005;
    sim.step().unwrap();
    let expected = oracle_step(&s, &vs.initial_cells, vs.grid.dx, expected_lambda);
    let mut worst = 0.0f64;
    for (a, b) in sim.state().rho.iter().zip(&expected) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(
        worst <= 1e-14 && (lambda - expected_lambda).abs() < 1e-15,
        format!("max |solver - oracle| = {worst:.3e}"),
    )
}

fn criterion_11() -> Outcome {
    let mut all = vec![
        preset_overtaking(true),
        preset_overtaking(false),
        preset_invariant_domain(Coupling::PerClass),
        preset_invariant_domain(Coupling::TotalDensity),
        preset_constant(&[0.3, 0.4]).unwrap(),
    ];
    all.extend(DELAY_SWEEP_TAUS.iter().map(|&t| preset_delay_convergence(t).unwrap()));
    for p in penetration_grid() {
        for tau in TAU_H_VALUES {
            for family in [SpeedFamily::Greenshields, SpeedFamily::Triangular] {
                all.push(preset_av_penetration(p, family, tau).unwrap());
            }
        }
    }
    all.extend(PERTURBATION_PS.iter().map(|&p| preset_perturbation(p).unwrap()));
    let mut worst = 0.0f64;
    for s in &all {
        let d = Discrete::build(&s.validate().unwrap()).unwrap();
        worst = worst.max(d.time.lambda / d.time.cfl_bound);
    }
    let exe = env!("CARGO_BIN_EXE_hwflow");
    let forced = Command::new(exe)
        .args(["check", "--preset", "overtaking", "--dt", "0.005"])
        .output()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forced.toml");
    let mut s = preset_overtaking(true);
    s.discretization.dt = Some(0.01);
    std::fs::write(&path, hwflow::io::scenario_to_toml(&s).unwrap()).unwrap();
    let from_file = Command::new(exe)
        .args(["check", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    let codes = (forced.status.code(), from_file.status.code());
    ensure(
        worst <= 1.0 && codes == (Some(2), Some(2)),
        format!(
            "{} presets, max lambda/bound = {worst:.4}; forced-dt check exit codes {codes:?}",
            all.len()
        ),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 11] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (k, check) in criteria {
        if only.is_some_and(|o| o != k) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {k} ({secs:.1} s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {k} ({secs:.1} s): {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
