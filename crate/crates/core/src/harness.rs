//! Multi-run studies: vanishing-delay and penetration sweeps, grid
//! refinement and perturbation stability.
//!
//! Runs of a study execute in parallel. Rows come back in the order of the
//! parameter list. When runs are compared with each other they share one
//! time step aligned to every delay that occurs, falling back to
//! independent planning if no common step exists.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, j_functional, snapshot_distance};
use crate::discretization::{cfl_bound, plan_time_grid, Grid};
use crate::error::{Error, Result};
use crate::model::{Profile, Scenario, Term, ValidatedScenario};
use crate::scenarios::{PresetRef, preset_av_penetration, preset_delay_convergence, preset_perturbation, SpeedFamily};
use crate::solver::{run, RunOptions, Trajectory};

/// Command-line style overrides applied to every scenario of a study.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl_safety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) {
        let d = &mut s.discretization;
        if let Some(dx) = self.dx {
            d.dx = dx;
        }
        if let Some(t) = self.t_final {
            d.t_final = t;
        }
        if let Some(c) = self.cfl_safety {
            d.cfl_safety = c;
        }
        if self.dt.is_some() {
            d.dt = self.dt;
        }
    }
}

/// One row of a study table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepRow {
    pub params: Vec<(String, f64)>,
    /// Time of the row for time-resolved studies.
    pub t: Option<f64>,
    pub dx: f64,
    pub dt: f64,
    pub lambda: f64,
    pub n_steps: usize,
    pub delay_steps: Vec<usize>,
    pub wall_time_s: f64,
    pub j: Option<f64>,
    pub final_tv: f64,
    pub distance: Option<f64>,
    pub error: Option<f64>,
    pub eoc: Option<f64>,
    pub ratio: Option<f64>,
    pub sup_density: Vec<f64>,
    pub inf_density: Vec<f64>,
    pub sup_total: f64,
    /// Final-time class densities and the grid they live on.
    pub final_profile: Option<(Grid, Vec<Vec<f64>>)>,
}

impl SweepRow {
    fn from_run(params: Vec<(String, f64)>, traj: &Trajectory) -> Self {
        let last = traj.final_snapshot();
        SweepRow {
            params,
            t: None,
            dx: traj.meta.grid.dx,
            dt: traj.meta.dt,
            lambda: traj.meta.lambda,
            n_steps: traj.meta.n_steps,
            delay_steps: traj.meta.delay_steps.clone(),
            wall_time_s: traj.meta.wall_time_s,
            j: None,
            final_tv: *traj.tv_series.last().unwrap_or(&0.0),
            distance: None,
            error: None,
            eoc: None,
            ratio: None,
            sup_density: traj.extremes.sup_density.clone(),
            inf_density: traj.extremes.inf_density.clone(),
            sup_total: traj.extremes.sup_total,
            final_profile: Some((traj.meta.grid, last.rho.clone())),
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub study: String,
    pub rows: Vec<SweepRow>,
    /// Whether all runs used one common time step.
    pub shared_dt: bool,
}

impl SweepResult {
    pub fn column(&self, f: impl Fn(&SweepRow) -> Option<f64>) -> Vec<Option<f64>> {
        self.rows.iter().map(f).collect()
    }
}

/// Largest `dt = T / n` that respects every scenario's CFL bound and aligns
/// every delay of every scenario. Scenarios must share `dx`, `T` and the
/// CFL safety factor.
pub fn shared_time_step(scenarios: &[Scenario]) -> Result<Option<f64>> {
    let Some(first) = scenarios.first() else {
        return Ok(None);
    };
    let d0 = &first.discretization;
    if d0.dt.is_some() {
        return Ok(None);
    }
    let mut bound = f64::INFINITY;
    let mut delays = Vec::new();
    for s in scenarios {
        let d = &s.discretization;
        if d.dx != d0.dx || d.t_final != d0.t_final || d.cfl_safety != d0.cfl_safety || d.dt.is_some() {
            return Ok(None);
        }
        s.model.validate()?;
        bound = bound.min(cfl_bound(&s.model, d.dx)?);
        for tau in s.model.delays() {
            if !delays.contains(&tau) {
                delays.push(tau);
            }
        }
    }
    match plan_time_grid(d0.t_final, d0.dx, bound, d0.cfl_safety, &delays) {
        Ok(tg) => Ok(Some(tg.dt)),
        Err(Error::DelayAlignmentFailure { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn share_time_step(scenarios: &mut [Scenario]) -> Result<bool> {
    match shared_time_step(scenarios)? {
        Some(dt) => {
            for s in scenarios.iter_mut() {
                s.discretization.dt = Some(dt);
            }
            Ok(true)
        }
        None => Ok(false),
    }
}

fn run_all(scenarios: &[Scenario], options: &RunOptions) -> Result<Vec<(ValidatedScenario, Trajectory)>> {
    scenarios
        .par_iter()
        .map(|s| {
            let vs = s.validate()?;
            let traj = run(&vs, options, &mut [])?;
            Ok((vs, traj))
        })
        .collect()
}

/// Runs the vanishing-delay preset for every `tau1` and measures the final
/// L1 distance to the undelayed run.
pub fn delay_sweep(taus: &[f64], overrides: &Overrides) -> Result<SweepResult> {
    if taus.is_empty() {
        return Err(Error::invalid("taus", "empty list"));
    }
    let Some(reference) = taus.iter().position(|&t| t == 0.0) else {
        return Err(Error::invalid("taus", "must contain 0 as the reference delay"));
    };
    let mut scenarios = taus
        .iter()
        .map(|&tau| {
            let mut s = preset_delay_convergence(tau)?;
            overrides.apply(&mut s);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let shared = share_time_step(&mut scenarios)?;
    let runs = run_all(&scenarios, &RunOptions::default())?;
    let reference = &runs[reference].1;
    let t_final = reference.final_snapshot().t;
    let rows = taus
        .iter()
        .zip(&runs)
        .map(|(&tau, (_, traj))| {
            let mut row = SweepRow::from_run(vec![("tau1".into(), tau)], traj);
            row.distance = Some(diagnostics::l1_distance(traj, reference, t_final)?);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        study: "delay".into(),
        rows,
        shared_dt: shared,
    })
}

/// Tabulates `J` over the grid of penetration rates and human delays.
/// Rows are ordered by `tau_h`, then by `p`.
pub fn penetration_sweep(
    ps: &[f64],
    family: SpeedFamily,
    tau_hs: &[f64],
    overrides: &Overrides,
) -> Result<SweepResult> {
    if ps.is_empty() || tau_hs.is_empty() {
        return Err(Error::invalid("p", "empty parameter list"));
    }
    let mut params = Vec::new();
    let mut scenarios = Vec::new();
    for &tau_h in tau_hs {
        for &p in ps {
            let mut s = preset_av_penetration(p, family, tau_h)?;
            overrides.apply(&mut s);
            scenarios.push(s);
            params.push(vec![("p".to_string(), p), ("tau_h".to_string(), tau_h)]);
        }
    }
    let shared = share_time_step(&mut scenarios)?;
    let runs = run_all(&scenarios, &RunOptions::default())?;
    let rows = params
        .into_iter()
        .zip(&runs)
        .map(|(params, (_, traj))| {
            let mut row = SweepRow::from_run(params, traj);
            row.j = Some(j_functional(traj)?.value);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        study: "penetration".into(),
        rows,
        shared_dt: shared,
    })
}

/// Final total variation of the perturbation preset over penetration rates.
pub fn perturbation_sweep(ps: &[f64], overrides: &Overrides) -> Result<SweepResult> {
    if ps.is_empty() {
        return Err(Error::invalid("p", "empty parameter list"));
    }
    let scenarios = ps
        .iter()
        .map(|&p| {
            let mut s = preset_perturbation(p)?;
            overrides.apply(&mut s);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = run_all(&scenarios, &RunOptions::default())?;
    let rows = ps
        .iter()
        .zip(&runs)
        .map(|(&p, (_, traj))| {
            let mut row = SweepRow::from_run(vec![("p".into(), p)], traj);
            row.j = Some(j_functional(traj)?.value);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        study: "perturbation".into(),
        rows,
        shared_dt: false,
    })
}

/// Averages cell pairs of a field on the twice finer grid.
pub fn restrict(fine: &[f64]) -> Vec<f64> {
    fine.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// Self-convergence: `e_k = ||rho^{dx_k} - R rho^{dx_{k+1}}||_1` at the final
/// time and `EOC_k = log2(e_k / e_{k+1})`.
pub fn refinement_study(scenario: &Scenario, dx_list: &[f64]) -> Result<SweepResult> {
    if dx_list.len() < 2 {
        return Err(Error::NonNestedGrids("need at least two grids".into()));
    }
    for w in dx_list.windows(2) {
        if !(w[0] > w[1]) || (w[0] / w[1] - 2.0).abs() > 1e-12 {
            return Err(Error::NonNestedGrids(format!("{} -> {} is not a halving", w[0], w[1])));
        }
    }
    let scenarios: Vec<Scenario> = dx_list
        .iter()
        .map(|&dx| {
            let mut s = scenario.clone();
            s.discretization.dx = dx;
            s.discretization.dt = None;
            s
        })
        .collect();
    let runs = run_all(&scenarios, &RunOptions::default())?;
    let mut rows: Vec<SweepRow> = dx_list
        .iter()
        .zip(&runs)
        .map(|(&dx, (_, traj))| SweepRow::from_run(vec![("dx".into(), dx)], traj))
        .collect();
    let errors: Vec<f64> = runs
        .windows(2)
        .map(|pair| {
            let coarse = &pair[0].1.final_snapshot().rho;
            let fine: Vec<Vec<f64>> = pair[1].1.final_snapshot().rho.iter().map(|c| restrict(c)).collect();
            snapshot_distance(coarse, &fine, pair[0].1.meta.grid.dx)
        })
        .collect();
    for (k, &e) in errors.iter().enumerate() {
        rows[k].error = Some(e);
        if let Some(&next) = errors.get(k + 1) {
            let eoc = (e / next).log2();
            rows[k].eoc = eoc.is_finite().then_some(eoc);
        }
    }
    Ok(SweepResult {
        study: "refine".into(),
        rows,
        shared_dt: false,
    })
}

/// What the stability study changes between the two runs.
#[derive(Debug, Clone, PartialEq)]
pub enum StabilityPerturbation {
    /// Adds a constant `size` to the initial density of `class`.
    DensityBump { class: usize, size: f64 },
    /// Replaces the delays.
    Delays(Vec<f64>),
}

fn perturb(s: &Scenario, p: &StabilityPerturbation) -> Result<Scenario> {
    let mut out = s.clone();
    match p {
        StabilityPerturbation::DensityBump { class, size } => {
            let profile = out
                .initial
                .0
                .get_mut(*class)
                .ok_or_else(|| Error::invalid("class", format!("no class {class}")))?;
            match profile {
                Profile::Analytic { terms } => terms.push(Term::Constant { value: *size }),
                Profile::Cells { values } => values.iter_mut().for_each(|v| *v += size),
            }
        }
        StabilityPerturbation::Delays(taus) => {
            if taus.len() != out.model.classes.len() {
                return Err(Error::invalid("delays", "one delay per class"));
            }
            for (c, &tau) in out.model.classes.iter_mut().zip(taus) {
                c.tau = tau;
            }
        }
    }
    out.name = format!("{}-perturbed", s.name);
    Ok(out)
}

/// Runs `scenario` and a perturbed copy and records
/// `||rho(t) - sigma(t)||_1` and its ratio to the size of the perturbation
/// at `samples + 1` evenly spaced times.
pub fn stability_experiment(
    scenario: &Scenario,
    perturbation: &StabilityPerturbation,
    samples: usize,
) -> Result<SweepResult> {
    let mut pair = vec![scenario.clone(), perturb(scenario, perturbation)?];
    let shared = share_time_step(&mut pair)?;
    let t_final = scenario.discretization.t_final;
    let samples = samples.max(1);
    let times: Vec<f64> = (0..=samples).map(|k| t_final * k as f64 / samples as f64).collect();
    let options = RunOptions {
        snapshot_times: Some(times.clone()),
        ..RunOptions::default()
    };
    let runs = run_all(&pair, &options)?;
    let (base_vs, base) = &runs[0];
    let (pert_vs, pert) = &runs[1];
    let delta = match perturbation {
        StabilityPerturbation::DensityBump { .. } => {
            snapshot_distance(&base_vs.initial_cells, &pert_vs.initial_cells, base.meta.grid.dx)
        }
        StabilityPerturbation::Delays(taus) => scenario
            .model
            .classes
            .iter()
            .zip(taus)
            .map(|(c, t)| (c.tau - t).abs())
            .sum(),
    };
    let label = match perturbation {
        StabilityPerturbation::DensityBump { .. } => "delta",
        StabilityPerturbation::Delays(_) => "delay_change",
    };
    let rows = times
        .iter()
        .map(|&t| {
            let distance = diagnostics::l1_distance(base, pert, t)?;
            let mut row = SweepRow::from_run(vec![(label.into(), delta)], pert);
            row.t = base.snapshot_near(t).map(|s| s.t);
            row.distance = Some(distance);
            row.ratio = (delta > 0.0).then(|| distance / delta);
            row.final_profile = None;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        study: "stability".into(),
        rows,
        shared_dt: shared,
    })
}

/// A complete study description, as echoed into sweep bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    Delay {
        taus: Vec<f64>,
        #[serde(default)]
        overrides: Overrides,
    },
    Penetration {
        ps: Vec<f64>,
        speed: SpeedFamily,
        tau_h: Vec<f64>,
        #[serde(default)]
        overrides: Overrides,
    },
    Perturbation {
        ps: Vec<f64>,
        #[serde(default)]
        overrides: Overrides,
    },
    Refine {
        preset: PresetRef,
        dx: Vec<f64>,
        #[serde(default)]
        overrides: Overrides,
    },
    Stability {
        preset: PresetRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bump: Option<(usize, f64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delays: Option<Vec<f64>>,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        overrides: Overrides,
    },
}

fn default_samples() -> usize {
    30
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    match spec {
        SweepSpec::Delay { taus, overrides } => delay_sweep(taus, overrides),
        SweepSpec::Penetration {
            ps,
            speed,
            tau_h,
            overrides,
        } => penetration_sweep(ps, *speed, tau_h, overrides),
        SweepSpec::Perturbation { ps, overrides } => perturbation_sweep(ps, overrides),
        SweepSpec::Refine { preset, dx, overrides } => {
            let mut s = preset.build()?;
            overrides.apply(&mut s);
            refinement_study(&s, dx)
        }
        SweepSpec::Stability {
            preset,
            bump,
            delays,
            samples,
            overrides,
        } => {
            let mut s = preset.build()?;
            overrides.apply(&mut s);
            let perturbation = match (bump, delays) {
                (Some((class, size)), None) => StabilityPerturbation::DensityBump {
                    class: *class,
                    size: *size,
                },
                (None, Some(taus)) => StabilityPerturbation::Delays(taus.clone()),
                _ => {
                    return Err(Error::invalid(
                        "stability",
                        "give exactly one of a density bump or a delay change",
                    ))
                }
            };
            stability_experiment(&s, &perturbation, *samples)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{preset_constant, preset_overtaking};

    fn short() -> Overrides {
        Overrides {
            t_final: Some(1.0),
            ..Overrides::default()
        }
    }

    #[test]
    fn delay_sweep_needs_reference() {
        assert!(delay_sweep(&[1.0], &short()).is_err());
        assert!(delay_sweep(&[], &short()).is_err());
    }

    #[test]
    fn single_reference_row() {
        let r = delay_sweep(&[0.0], &short()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].distance, Some(0.0));
    }

    #[test]
    fn repeated_delay_gives_identical_rows() {
        let r = delay_sweep(&[0.5, 0.5, 0.0], &short()).unwrap();
        assert!(r.shared_dt);
        let (a, b) = (&r.rows[0], &r.rows[1]);
        assert_eq!(a.distance, b.distance);
        assert_eq!(a.final_profile, b.final_profile);
        assert!(a.distance.unwrap() > 0.0);
    }

    #[test]
    fn permuted_parameters_permute_rows() {
        let a = delay_sweep(&[0.5, 0.0, 0.25], &short()).unwrap();
        let b = delay_sweep(&[0.25, 0.5, 0.0], &short()).unwrap();
        assert_eq!(a.rows[0], b.rows[1].clone_with_time(a.rows[0].wall_time_s));
        assert_eq!(a.rows[2], b.rows[0].clone_with_time(a.rows[2].wall_time_s));
    }

    impl SweepRow {
        fn clone_with_time(&self, wall: f64) -> SweepRow {
            SweepRow {
                wall_time_s: wall,
                ..self.clone()
            }
        }
    }

    #[test]
    fn refinement_rejects_non_nested() {
        let s = preset_constant(&[0.2, 0.3]).unwrap();
        assert!(matches!(
            refinement_study(&s, &[0.01, 0.01]),
            Err(Error::NonNestedGrids(_))
        ));
        assert!(matches!(
            refinement_study(&s, &[0.02, 0.005]),
            Err(Error::NonNestedGrids(_))
        ));
    }

    #[test]
    fn constant_state_has_zero_refinement_error() {
        let mut s = preset_constant(&[0.2, 0.3]).unwrap();
        s.discretization.t_final = 1.0;
        let r = refinement_study(&s, &[0.02, 0.01, 0.005]).unwrap();
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows[..2] {
            assert!(row.error.unwrap() < 1e-14);
        }
    }

    #[test]
    fn restriction_preserves_mass() {
        let fine = [0.1, 0.3, 0.5, 0.7];
        assert_eq!(restrict(&fine), vec![0.2, 0.6]);
    }

    #[test]
    fn zero_perturbation_is_exact() {
        let mut s = preset_overtaking(true);
        s.discretization.t_final = 1.0;
        let r = stability_experiment(&s, &StabilityPerturbation::DensityBump { class: 0, size: 0.0 }, 4).unwrap();
        assert_eq!(r.rows.len(), 5);
        for row in &r.rows {
            assert_eq!(row.distance, Some(0.0));
            assert_eq!(row.ratio, None);
        }
    }

    #[test]
    fn small_bump_has_finite_ratio() {
        let mut s = preset_overtaking(true);
        s.discretization.t_final = 2.0;
        let r = stability_experiment(&s, &StabilityPerturbation::DensityBump { class: 0, size: 1e-3 }, 4)
            .unwrap();
        let delta = r.rows[0].param("delta").unwrap();
        assert!((delta - 2e-3).abs() < 1e-12);
        assert!((r.rows[0].ratio.unwrap() - 1.0).abs() < 1e-9);
        assert!(r.rows.iter().all(|row| row.ratio.unwrap().is_finite()));
    }

    #[test]
    fn penetration_rows_cover_grid() {
        let o = Overrides {
            t_final: Some(0.5),
            ..Overrides::default()
        };
        let r = penetration_sweep(&[0.0, 1.0], SpeedFamily::Triangular, &[2.0, 2.5], &o).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.shared_dt);
        assert_eq!(r.rows[1].j, r.rows[3].j);
        assert_eq!(r.rows[2].param("tau_h"), Some(2.5));
    }
}
