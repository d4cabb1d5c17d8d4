//! Time marching of the Hilliges-Weidlich scheme.
//!
//! Each step reads the level-`n` densities plus, per class, the total
//! density `h_i` steps in the past (kept in a [`HistoryRing`]), and writes a
//! fresh level-`n+1` state. Fluxes are assembled once per interface so the
//! update telescopes and mass is conserved on periodic domains.

use std::collections::BTreeSet;
use std::time::Instant;

use crate::diagnostics::{self, EntropyReport, StepDiagnostics};
use crate::discretization::{Discrete, DiscreteKernel, Grid, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{Boundary, Coupling, ModelSpec, SaturationLaw, SpeedLaw, ValidatedScenario};

/// Values in `[-BOUND_TOL, 0)` are clamped to zero; anything further out of
/// range aborts the run.
pub const BOUND_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub step: usize,
    pub t: f64,
    /// `rho[i][j]`: class `i`, cell `j`.
    pub rho: Vec<Vec<f64>>,
}

impl SimState {
    pub fn total_density(&self) -> Vec<f64> {
        total_density(&self.rho)
    }

    pub fn n_cells(&self) -> usize {
        self.rho.first().map_or(0, Vec::len)
    }
}

pub fn total_density(rho: &[Vec<f64>]) -> Vec<f64> {
    let mut r = rho[0].clone();
    for class in &rho[1..] {
        for (acc, v) in r.iter_mut().zip(class) {
            *acc += v;
        }
    }
    r
}

/// Past total-density fields; slot `l` holds `r^{n-l}`.
#[derive(Debug, Clone)]
pub struct HistoryRing {
    slots: Vec<Vec<f64>>,
    head: usize,
}

impl HistoryRing {
    /// Every slot starts as `r^0` (constant backward extension).
    pub fn new(r0: &[f64], max_lag: usize) -> Self {
        HistoryRing {
            slots: vec![r0.to_vec(); max_lag + 1],
            head: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    pub fn get(&self, lag: usize) -> &[f64] {
        assert!(lag < self.slots.len(), "lag {lag} beyond ring depth {}", self.slots.len());
        let depth = self.slots.len();
        &self.slots[(self.head + depth - lag) % depth]
    }

    /// Pushes `r^{n+1}`, dropping the oldest slot.
    pub fn push(&mut self, r: &[f64]) {
        let depth = self.slots.len();
        self.head = (self.head + 1) % depth;
        self.slots[self.head].copy_from_slice(r);
    }
}

/// Velocities `V_{i,j}` for `j = 0..n_cells`, plus the value just past the
/// right edge needed by the last interface flux.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub values: Vec<f64>,
    pub ghost_right: f64,
}

impl VelocityField {
    /// `V_j` for `j` in `0..=n_cells`.
    #[inline]
    pub fn at(&self, j: usize) -> f64 {
        if j < self.values.len() {
            self.values[j]
        } else {
            self.ghost_right
        }
    }
}

/// `V_j = v(dx sum_k omega^k r_{j+k})`, wrapping periodically or reading
/// zeros past the right edge.
pub fn convolved_velocity(
    r: &[f64],
    kernel: &DiscreteKernel,
    speed: &SpeedLaw,
    boundary: Boundary,
) -> Result<VelocityField> {
    let n = r.len();
    let support = kernel.support_cells();
    if boundary == Boundary::Periodic && support > n {
        return Err(Error::KernelWiderThanDomain {
            support,
            n_cells: n,
        });
    }
    let mut ext = Vec::with_capacity(n + support);
    ext.extend_from_slice(r);
    match boundary {
        Boundary::Periodic => ext.extend_from_slice(&r[..support]),
        Boundary::ZeroExtension => ext.resize(n + support, 0.0),
    }
    let dx = kernel.dx;
    let values: Vec<f64> = (0..n)
        .map(|j| {
            let window = &ext[j..j + support];
            let conv: f64 = kernel.weights.iter().zip(window).map(|(w, r)| w * r).sum();
            speed.evaluate((dx * conv).max(0.0))
        })
        .collect();
    let ghost_right = match boundary {
        Boundary::Periodic => values[0],
        Boundary::ZeroExtension => speed.evaluate(0.0),
    };
    Ok(VelocityField {
        values,
        ghost_right,
    })
}

/// Where the delayed velocity argument is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistoryMode {
    #[default]
    Ring,
    /// Uses the current total density directly; only valid without delays.
    Bypass,
}

pub struct StepOutput {
    pub next: SimState,
    pub velocities: Vec<VelocityField>,
    pub clamp_count: usize,
}

/// Static inputs of a step.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub model: &'a ModelSpec,
    pub kernels: &'a [DiscreteKernel],
    pub time: &'a TimeGrid,
}

/// Saturation argument `s_{j}` for class `i`: own density or total density.
#[inline]
fn saturation_arg(coupling: Coupling, rho_i: &[f64], r: &[f64], j: usize) -> f64 {
    match coupling {
        Coupling::PerClass => rho_i[j],
        Coupling::TotalDensity => r[j],
    }
}

/// Computes the per-class velocity fields at the delayed levels.
pub fn delayed_velocities(
    ctx: StepContext<'_>,
    state: &SimState,
    history: &HistoryRing,
    mode: HistoryMode,
) -> Result<Vec<VelocityField>> {
    let current = match mode {
        HistoryMode::Bypass => Some(state.total_density()),
        HistoryMode::Ring => None,
    };
    ctx.model
        .classes
        .iter()
        .zip(ctx.kernels)
        .zip(&ctx.time.delay_steps)
        .map(|((class, kernel), &h)| {
            let r = match &current {
                Some(r) => r.as_slice(),
                None => history.get(h),
            };
            convolved_velocity(r, kernel, &class.speed, ctx.model.boundary)
        })
        .collect()
}

/// One step of the scheme
/// `rho_j^{n+1} = rho_j - lambda (F_{j+1/2} - F_{j-1/2})`,
/// `F_{j+1/2} = rho_j f(s_{j+1}) V_{j+1}`.
pub fn hw_step(
    ctx: StepContext<'_>,
    state: &SimState,
    history: &HistoryRing,
    mode: HistoryMode,
) -> Result<StepOutput> {
    let velocities = delayed_velocities(ctx, state, history, mode)?;
    let n = state.n_cells();
    let lambda = ctx.time.lambda;
    let boundary = ctx.model.boundary;
    let coupling = ctx.model.coupling;
    let r = match coupling {
        Coupling::TotalDensity => state.total_density(),
        Coupling::PerClass => Vec::new(),
    };
    let mut next = Vec::with_capacity(state.rho.len());
    let mut clamp_count = 0;
    let mut flux = vec![0.0; n];
    for (i, (class, vel)) in ctx.model.classes.iter().zip(&velocities).enumerate() {
        let rho = &state.rho[i];
        let sat = &class.saturation;
        for j in 0..n {
            let s_next = if j + 1 < n {
                saturation_arg(coupling, rho, &r, j + 1)
            } else {
                match boundary {
                    Boundary::Periodic => saturation_arg(coupling, rho, &r, 0),
                    Boundary::ZeroExtension => 0.0,
                }
            };
            flux[j] = rho[j] * sat.evaluate(s_next) * vel.at(j + 1);
        }
        let upper = match sat {
            SaturationLaw::None => f64::INFINITY,
            SaturationLaw::Exponential { .. } => class.max_density + BOUND_TOL,
        };
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let left = if j > 0 {
                flux[j - 1]
            } else {
                match boundary {
                    Boundary::Periodic => flux[n - 1],
                    Boundary::ZeroExtension => 0.0,
                }
            };
            let mut value = rho[j] - lambda * (flux[j] - left);
            if !(value >= -BOUND_TOL && value <= upper) {
                return Err(Error::BoundViolation {
                    step: state.step,
                    class: i,
                    cell: j,
                    value,
                    max_density: class.max_density,
                });
            }
            if value < 0.0 {
                value = 0.0;
                clamp_count += 1;
            }
            out.push(value);
        }
        next.push(out);
    }
    if coupling == Coupling::TotalDensity
        && ctx
            .model
            .classes
            .iter()
            .all(|c| c.saturation != SaturationLaw::None)
    {
        let r_max = ctx.model.classes[0].max_density;
        let total = total_density(&next);
        if let Some((j, &v)) = total
            .iter()
            .enumerate()
            .find(|(_, &v)| v > r_max + BOUND_TOL)
        {
            return Err(Error::BoundViolation {
                step: state.step,
                class: ctx.model.n_classes(),
                cell: j,
                value: v,
                max_density: r_max,
            });
        }
    }
    Ok(StepOutput {
        next: SimState {
            step: state.step + 1,
            t: ctx.time.time(state.step + 1),
            rho: next,
        },
        velocities,
        clamp_count,
    })
}

/// A stepping simulation owning its state and history.
pub struct Simulation {
    model: ModelSpec,
    discrete: Discrete,
    state: SimState,
    history: HistoryRing,
    mode: HistoryMode,
    clamp_total: usize,
}

/// Result of [`Simulation::step`]: the previous state and the velocities
/// used for the transition.
pub struct Transition {
    pub before: SimState,
    pub velocities: Vec<VelocityField>,
    pub clamp_count: usize,
}

impl Simulation {
    pub fn new(vs: &ValidatedScenario) -> Result<Self> {
        let discrete = Discrete::build(vs)?;
        Self::with_discrete(vs, discrete, HistoryMode::Ring)
    }

    pub fn with_discrete(vs: &ValidatedScenario, discrete: Discrete, mode: HistoryMode) -> Result<Self> {
        let model = vs.model().clone();
        if model.boundary == Boundary::Periodic {
            for k in &discrete.kernels {
                if k.support_cells() > discrete.grid.n_cells {
                    return Err(Error::KernelWiderThanDomain {
                        support: k.support_cells(),
                        n_cells: discrete.grid.n_cells,
                    });
                }
            }
        }
        if mode == HistoryMode::Bypass && discrete.time.max_delay_steps() > 0 {
            return Err(Error::invalid("history", "bypass mode requires zero delays"));
        }
        let state = SimState {
            step: 0,
            t: 0.0,
            rho: vs.initial_cells.clone(),
        };
        let history = HistoryRing::new(&state.total_density(), discrete.time.max_delay_steps());
        Ok(Simulation {
            model,
            discrete,
            state,
            history,
            mode,
            clamp_total: 0,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn discrete(&self) -> &Discrete {
        &self.discrete
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn history(&self) -> &HistoryRing {
        &self.history
    }

    pub fn clamp_total(&self) -> usize {
        self.clamp_total
    }

    pub fn context(&self) -> StepContext<'_> {
        StepContext {
            model: &self.model,
            kernels: &self.discrete.kernels,
            time: &self.discrete.time,
        }
    }

    pub fn step(&mut self) -> Result<Transition> {
        let out = hw_step(self.context(), &self.state, &self.history, self.mode)?;
        let before = std::mem::replace(&mut self.state, out.next);
        self.history.push(&self.state.total_density());
        self.clamp_total += out.clamp_count;
        Ok(Transition {
            before,
            velocities: out.velocities,
            clamp_count: out.clamp_count,
        })
    }
}

/// What an observer sees after each observed transition `n -> n+1`.
pub struct StepView<'a> {
    pub model: &'a ModelSpec,
    pub grid: &'a Grid,
    pub lambda: f64,
    pub before: &'a SimState,
    pub after: &'a SimState,
    pub velocities: &'a [VelocityField],
}

pub trait Observer {
    fn observe(&mut self, view: &StepView<'_>) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Observer and diagnostics cadence in steps.
    pub stride: usize,
    /// Snapshot times, resolved to the nearest step. `None` means `{0, T}`.
    pub snapshot_times: Option<Vec<f64>>,
    /// Additionally dump a snapshot every this many steps.
    pub snapshot_stride: Option<usize>,
    /// Entropy levels evaluated at diagnostics rows.
    pub entropy_kappas: Option<Vec<f64>>,
    /// Evaluate entropy residuals only on every this many diagnostics rows.
    pub entropy_stride: usize,
    pub history: HistoryMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stride: 1,
            snapshot_times: None,
            snapshot_stride: None,
            entropy_kappas: None,
            entropy_stride: 1,
            history: HistoryMode::Ring,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub rho: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn total_density(&self) -> Vec<f64> {
        total_density(&self.rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub scenario: String,
    pub grid: Grid,
    pub dt: f64,
    pub lambda: f64,
    pub n_steps: usize,
    pub delay_steps: Vec<usize>,
    pub cfl_bound: f64,
    pub wall_time_s: f64,
}

/// Extremes and drifts tracked over every step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunExtremes {
    pub l1_initial: Vec<f64>,
    /// `max_n |l1^n - l1^0| / l1^0`, per class.
    pub max_l1_drift: Vec<f64>,
    pub sup_density: Vec<f64>,
    pub inf_density: Vec<f64>,
    pub sup_total: f64,
    pub sup_tv: f64,
    pub clamp_total: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub meta: RunMetadata,
    pub boundary: Boundary,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// `TV(r^n)` for `n = 0, tv_stride, 2 tv_stride, ...`.
    pub tv_series: Vec<f64>,
    pub tv_stride: usize,
    pub extremes: RunExtremes,
    pub entropy: Option<EntropyReport>,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory always holds the initial state")
    }

    /// Snapshot whose step is nearest to `t`.
    pub fn snapshot_near(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().min_by(|a, b| {
            (a.t - t)
                .abs()
                .partial_cmp(&(b.t - t).abs())
                .expect("finite times")
        })
    }
}

fn resolve_step(t: f64, time: &TimeGrid) -> Result<usize> {
    let t_final = time.t_final();
    if !(t >= 0.0 && t <= t_final * (1.0 + 1e-12)) {
        return Err(Error::OutputTimeOutOfRange { time: t, t_final });
    }
    Ok(((t / time.dt).round() as usize).min(time.n_steps))
}

/// Runs `n_steps` of the planned grid (or fewer if `max_steps` is given),
/// calling observers every `stride` steps.
pub fn run_steps(
    vs: &ValidatedScenario,
    options: &RunOptions,
    observers: &mut [&mut dyn Observer],
    max_steps: Option<usize>,
) -> Result<Trajectory> {
    let started = Instant::now();
    let discrete = Discrete::build(vs)?;
    let mut sim = Simulation::with_discrete(vs, discrete, options.history)?;
    let time = sim.discrete().time.clone();
    let grid = sim.discrete().grid;
    let n_steps = max_steps.map_or(time.n_steps, |m| m.min(time.n_steps));
    let stride = options.stride.max(1);
    let boundary = sim.model().boundary;

    let mut snapshot_steps = BTreeSet::new();
    match &options.snapshot_times {
        Some(times) => {
            for &t in times {
                snapshot_steps.insert(resolve_step(t, &time)?);
            }
        }
        None => {
            snapshot_steps.insert(0);
            snapshot_steps.insert(time.n_steps);
        }
    }
    if let Some(k) = options.snapshot_stride {
        snapshot_steps.extend((0..=n_steps).step_by(k.max(1)));
    }
    // the initial state is always recorded; steps past a truncated horizon are dropped
    snapshot_steps.insert(0);
    snapshot_steps.retain(|&s| s <= n_steps);

    let dx = grid.dx;
    let initial = sim.state().clone();
    let l1_initial: Vec<f64> = initial.rho.iter().map(|c| diagnostics::l1_norm(c, dx)).collect();
    let mut extremes = RunExtremes {
        max_l1_drift: vec![0.0; l1_initial.len()],
        sup_density: initial.rho.iter().map(|c| c.iter().copied().fold(f64::MIN, f64::max)).collect(),
        inf_density: initial.rho.iter().map(|c| c.iter().copied().fold(f64::MAX, f64::min)).collect(),
        sup_total: 0.0,
        sup_tv: 0.0,
        clamp_total: 0,
        l1_initial,
    };
    let mut snapshots = Vec::new();
    let mut diag_rows = Vec::new();
    let mut tv_series = Vec::with_capacity(n_steps + 1);
    let mut entropy_summary = options.entropy_kappas.as_ref().map(|_| EntropyReport::empty());

    let record = |state: &SimState,
                  extremes: &mut RunExtremes,
                  tv_series: &mut Vec<f64>,
                  clamp_total: usize|
     -> (Vec<f64>, f64) {
        let r = state.total_density();
        let tv = diagnostics::total_variation(&r, boundary);
        tv_series.push(tv);
        extremes.sup_tv = extremes.sup_tv.max(tv);
        extremes.sup_total = extremes.sup_total.max(r.iter().copied().fold(f64::MIN, f64::max));
        for (i, c) in state.rho.iter().enumerate() {
            let l1 = diagnostics::l1_norm(c, dx);
            let base = extremes.l1_initial[i];
            let drift = if base > 0.0 { (l1 - base).abs() / base } else { l1 };
            extremes.max_l1_drift[i] = extremes.max_l1_drift[i].max(drift);
            for &v in c {
                extremes.sup_density[i] = extremes.sup_density[i].max(v);
                extremes.inf_density[i] = extremes.inf_density[i].min(v);
            }
        }
        extremes.clamp_total = clamp_total;
        (r, tv)
    };

    let (_, tv0) = record(&initial, &mut extremes, &mut tv_series, 0);
    diag_rows.push(StepDiagnostics::from_state(&initial, dx, tv0, 0, None));
    if snapshot_steps.contains(&0) {
        snapshots.push(Snapshot {
            step: 0,
            t: 0.0,
            rho: initial.rho.clone(),
        });
    }

    for n in 0..n_steps {
        let transition = sim.step()?;
        let after = sim.state();
        let (_, tv) = record(after, &mut extremes, &mut tv_series, sim.clamp_total());
        let observed = (n + 1) % stride == 0 || n + 1 == n_steps;
        if observed {
            let view = StepView {
                model: sim.model(),
                grid: &grid,
                lambda: time.lambda,
                before: &transition.before,
                after,
                velocities: &transition.velocities,
            };
            for obs in observers.iter_mut() {
                obs.observe(&view)?;
            }
            let entropy = match (&options.entropy_kappas, entropy_summary.as_mut()) {
                (Some(kappas), Some(summary))
                    if view.model.coupling == Coupling::PerClass
                        && ((n + 1) / stride) % options.entropy_stride.max(1) == 0 =>
                {
                    let report = diagnostics::entropy_residual_many(&view, kappas)?;
                    summary.merge(&report);
                    Some(report.max_residual)
                }
                _ => None,
            };
            diag_rows.push(StepDiagnostics::from_state(
                after,
                dx,
                tv,
                sim.clamp_total(),
                entropy,
            ));
        }
        if snapshot_steps.contains(&(n + 1)) {
            snapshots.push(Snapshot {
                step: n + 1,
                t: after.t,
                rho: after.rho.clone(),
            });
        }
    }
    if sim.model().coupling != Coupling::PerClass {
        entropy_summary = None;
    }

    Ok(Trajectory {
        meta: RunMetadata {
            scenario: vs.scenario.name.clone(),
            grid,
            dt: time.dt,
            lambda: time.lambda,
            n_steps,
            delay_steps: time.delay_steps.clone(),
            cfl_bound: time.cfl_bound,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        boundary,
        snapshots,
        diagnostics: diag_rows,
        tv_series,
        tv_stride: 1,
        extremes,
        entropy: entropy_summary,
    })
}

pub fn run(
    vs: &ValidatedScenario,
    options: &RunOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    run_steps(vs, options, observers, None)
}
