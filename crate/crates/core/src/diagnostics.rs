//! Norms, total variation, discrete entropy residuals, the oscillation
//! functional `J` and distances between trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Boundary, Coupling, ModelSpec};
use crate::solver::{SimState, StepView, Trajectory, VelocityField};

/// Fixed entropy levels checked on every sampled step.
pub const FIXED_KAPPAS: [f64; 7] = [-0.1, 0.0, 0.25, 0.5, 0.75, 1.0, 1.1];
pub const RANDOM_KAPPAS: usize = 10;

/// Tolerance on the entropy inequality at level `kappa`.
pub fn entropy_tol(kappa: f64) -> f64 {
    1e-10 * (1.0 + kappa.abs())
}

/// `dx * sum |field_j|`.
pub fn l1_norm(field: &[f64], dx: f64) -> f64 {
    dx * field.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn linf_norm(field: &[f64]) -> f64 {
    field.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `sum_j |field_{j+1} - field_j|`, with the wrap-around jump on periodic
/// domains. Jumps to the vacuum outside a zero-extended domain are reported
/// by [`boundary_jumps`] instead.
pub fn total_variation(field: &[f64], boundary: Boundary) -> f64 {
    let interior: f64 = field.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    match (boundary, field.first(), field.last()) {
        (Boundary::Periodic, Some(first), Some(last)) if field.len() > 1 => {
            interior + (first - last).abs()
        }
        _ => interior,
    }
}

/// `|field_0| + |field_{n-1}|`: the jumps to the zero ghost cells.
pub fn boundary_jumps(field: &[f64]) -> f64 {
    match (field.first(), field.last()) {
        (Some(a), Some(b)) => a.abs() + b.abs(),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub l1: Vec<f64>,
    pub linf: Vec<f64>,
    pub tv_total: f64,
    /// Cumulative count of clamped cells.
    pub clamp_count: usize,
    pub entropy_max_residual: Option<f64>,
}

impl StepDiagnostics {
    pub fn from_state(
        state: &SimState,
        dx: f64,
        tv_total: f64,
        clamp_count: usize,
        entropy_max_residual: Option<f64>,
    ) -> Self {
        StepDiagnostics {
            step: state.step,
            t: state.t,
            l1: state.rho.iter().map(|c| l1_norm(c, dx)).collect(),
            linf: state.rho.iter().map(|c| linf_norm(c)).collect(),
            tv_total,
            clamp_count,
            entropy_max_residual,
        }
    }
}

/// Worst entropy residual found over a set of cells, classes and levels.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// Level attaining `max_residual`.
    pub kappa: f64,
    pub max_residual: f64,
    /// Cells whose residual exceeded [`entropy_tol`].
    pub violation_cells: usize,
    pub evaluations: usize,
}

impl EntropyReport {
    pub fn empty() -> Self {
        EntropyReport {
            kappa: f64::NAN,
            max_residual: f64::NEG_INFINITY,
            violation_cells: 0,
            evaluations: 0,
        }
    }

    pub fn merge(&mut self, other: &EntropyReport) {
        if other.max_residual > self.max_residual {
            self.max_residual = other.max_residual;
            self.kappa = other.kappa;
        }
        self.violation_cells += other.violation_cells;
        self.evaluations += other.evaluations;
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Left-hand side of the discrete entropy inequality for every class and
/// cell of the transition `before -> after`:
///
/// `|u^{n+1}_j - k| - |u_j - k| + lambda (F^k_{j+1/2} - F^k_{j-1/2})
///  + lambda sgn(u^{n+1}_j - k) k f(k) (V_{j+1} - V_j)`
///
/// with `F^k_{j+1/2} = G(u_j max k, u_{j+1} max k) - G(u_j min k, u_{j+1} min k)`
/// and `G_{j+1/2}(a, b) = a f(b) V_{j+1}`. Non-positive up to rounding for
/// a monotone step.
pub fn entropy_residual(
    model: &ModelSpec,
    before: &SimState,
    after: &SimState,
    velocities: &[VelocityField],
    kappa: f64,
    lambda: f64,
) -> Result<(Vec<Vec<f64>>, EntropyReport)> {
    if model.coupling != Coupling::PerClass {
        return Err(Error::CouplingUnsupported);
    }
    let tol = entropy_tol(kappa);
    let mut report = EntropyReport {
        kappa,
        max_residual: f64::NEG_INFINITY,
        violation_cells: 0,
        evaluations: 0,
    };
    let mut fields = Vec::with_capacity(model.n_classes());
    for (i, class) in model.classes.iter().enumerate() {
        let f = |x: f64| class.saturation.evaluate(x);
        let u = &before.rho[i];
        let next = &after.rho[i];
        let vel = &velocities[i];
        let n = u.len();
        let cell = |j: isize| -> f64 {
            if (0..n as isize).contains(&j) {
                u[j as usize]
            } else {
                match model.boundary {
                    Boundary::Periodic => u[j.rem_euclid(n as isize) as usize],
                    Boundary::ZeroExtension => 0.0,
                }
            }
        };
        // interface flux F^k_{j+1/2}, j in -1..n, velocity V_{j+1}
        let flux_k = |j: isize| -> f64 {
            let (a, b) = (cell(j), cell(j + 1));
            let v = vel.at((j + 1) as usize);
            a.max(kappa) * f(b.max(kappa)) * v - a.min(kappa) * f(b.min(kappa)) * v
        };
        let kfk = kappa * f(kappa);
        let mut field = Vec::with_capacity(n);
        for j in 0..n {
            let ji = j as isize;
            let res = (next[j] - kappa).abs() - (u[j] - kappa).abs()
                + lambda * (flux_k(ji) - flux_k(ji - 1))
                + lambda * sgn(next[j] - kappa) * kfk * (vel.at(j + 1) - vel.at(j));
            if res > report.max_residual {
                report.max_residual = res;
            }
            if res > tol {
                report.violation_cells += 1;
            }
            report.evaluations += 1;
            field.push(res);
        }
        fields.push(field);
    }
    Ok((fields, report))
}

pub fn entropy_residual_many(view: &StepView<'_>, kappas: &[f64]) -> Result<EntropyReport> {
    let mut total = EntropyReport::empty();
    for &kappa in kappas {
        let (_, report) = entropy_residual(
            view.model,
            view.before,
            view.after,
            view.velocities,
            kappa,
            view.lambda,
        )?;
        total.merge(&report);
    }
    Ok(total)
}

/// The fixed levels plus [`RANDOM_KAPPAS`] uniform draws in `[0, max_r]`.
pub fn kappa_sample_set(seed: u64, max_r: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kappas = FIXED_KAPPAS.to_vec();
    kappas.extend((0..RANDOM_KAPPAS).map(|_| rng.random_range(0.0..=max_r)));
    kappas
}

/// Observer that evaluates the entropy inequality on selected transitions.
pub struct EntropyMonitor {
    kappas: Vec<f64>,
    steps: Option<std::collections::BTreeSet<usize>>,
    pub report: EntropyReport,
    pub checked_steps: usize,
}

impl EntropyMonitor {
    /// `steps` lists the `n` of transitions `n -> n+1` to check; `None`
    /// checks every observed transition.
    pub fn new(kappas: Vec<f64>, steps: Option<Vec<usize>>) -> Self {
        EntropyMonitor {
            kappas,
            steps: steps.map(|s| s.into_iter().collect()),
            report: EntropyReport::empty(),
            checked_steps: 0,
        }
    }
}

impl crate::solver::Observer for EntropyMonitor {
    fn observe(&mut self, view: &StepView<'_>) -> Result<()> {
        if let Some(steps) = &self.steps {
            if !steps.contains(&view.before.step) {
                return Ok(());
            }
        }
        let report = entropy_residual_many(view, &self.kappas)?;
        self.report.merge(&report);
        self.checked_steps += 1;
        Ok(())
    }
}

/// Value of the oscillation functional and whether it was subsampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JValue {
    pub value: f64,
    pub approximate: bool,
}

/// `J = int_0^T TV(r(t)) dt`, left-endpoint rule over the stored series.
pub fn j_functional(traj: &Trajectory) -> Result<JValue> {
    if traj.tv_series.is_empty() {
        return Err(Error::MissingTvSeries);
    }
    let stride = traj.tv_stride.max(1);
    let n_steps = traj.meta.n_steps;
    let sum: f64 = traj
        .tv_series
        .iter()
        .enumerate()
        .take_while(|(k, _)| k * stride < n_steps)
        .map(|(_, tv)| tv)
        .sum();
    Ok(JValue {
        value: sum * traj.meta.dt * stride as f64,
        approximate: stride > 1,
    })
}

/// `sum_i dx sum_j |a_ij - b_ij|` at the snapshots nearest `t`.
pub fn l1_distance(a: &Trajectory, b: &Trajectory, t: f64) -> Result<f64> {
    let (ga, gb) = (&a.meta.grid, &b.meta.grid);
    if ga.n_cells != gb.n_cells || ga.dx != gb.dx || ga.x_min != gb.x_min {
        return Err(Error::GridMismatch(format!(
            "{} cells of {} vs {} cells of {}",
            ga.n_cells, ga.dx, gb.n_cells, gb.dx
        )));
    }
    let sa = a.snapshot_near(t).ok_or_else(|| Error::GridMismatch("no snapshots".into()))?;
    let sb = b.snapshot_near(t).ok_or_else(|| Error::GridMismatch("no snapshots".into()))?;
    if sa.rho.len() != sb.rho.len() {
        return Err(Error::GridMismatch("different number of classes".into()));
    }
    let tol = a.meta.dt.max(b.meta.dt);
    if (sa.t - sb.t).abs() > tol {
        return Err(Error::GridMismatch(format!(
            "nearest snapshots at t = {} and t = {}",
            sa.t, sb.t
        )));
    }
    Ok(snapshot_distance(&sa.rho, &sb.rho, ga.dx))
}

pub fn snapshot_distance(a: &[Vec<f64>], b: &[Vec<f64>], dx: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| dx * x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum()
}

/// Largest `||rho_i(t2) - rho_i(t1)||_1 / (t2 - t1)` over consecutive
/// snapshot pairs, per class.
pub fn l1_lipschitz_constants(traj: &Trajectory) -> Vec<f64> {
    let dx = traj.meta.grid.dx;
    let m = traj.snapshots.first().map_or(0, |s| s.rho.len());
    let mut out = vec![0.0f64; m];
    for pair in traj.snapshots.windows(2) {
        let dt = pair[1].t - pair[0].t;
        if dt <= 0.0 {
            continue;
        }
        for (i, slot) in out.iter_mut().enumerate() {
            let d = dx
                * pair[0].rho[i]
                    .iter()
                    .zip(&pair[1].rho[i])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            *slot = slot.max(d / dt);
        }
    }
    out
}
