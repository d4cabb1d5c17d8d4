//! Domain types: vehicle classes, speed and saturation laws, look-ahead
//! kernels, initial data and whole scenarios.
//!
//! Everything here is plain data plus validation. Closed-form evaluation of
//! the laws lives on the types so the solver and the tests share a single
//! definition.

use serde::{Deserialize, Serialize};
use libm::{erf, erfc};

use crate::discretization::{Discretization, Grid};
use crate::error::{Error, Result};

/// Tolerance used when checking initial data against density bounds.
pub const DENSITY_TOL: f64 = 1e-12;

/// Largest admissible `1 - f(0)` for a saturation law.
pub const SATURATION_AT_ZERO_TOL: f64 = 1e-9;

/// Mean speed as a function of the (convolved) total density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedLaw {
    /// `V (1 - r / R)`, clamped to zero above `R`.
    Greenshields { v_max: f64, r_max: f64 },
    /// Constant `V` up to `rho_c`, then linear decay to zero at `R`.
    Triangular { v_max: f64, rho_c: f64, r_max: f64 },
}

impl SpeedLaw {
    #[inline]
    pub fn evaluate(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0, "speed law evaluated at negative density {r}");
        match *self {
            SpeedLaw::Greenshields { v_max, r_max } => {
                if r >= r_max {
                    0.0
                } else {
                    v_max * (1.0 - r / r_max)
                }
            }
            SpeedLaw::Triangular {
                v_max,
                rho_c,
                r_max,
            } => {
                if r <= rho_c {
                    v_max
                } else if r >= r_max {
                    0.0
                } else {
                    v_max / (rho_c - r_max) * (r - r_max)
                }
            }
        }
    }

    pub fn v_max(&self) -> f64 {
        match *self {
            SpeedLaw::Greenshields { v_max, .. } | SpeedLaw::Triangular { v_max, .. } => v_max,
        }
    }

    pub fn r_max(&self) -> f64 {
        match *self {
            SpeedLaw::Greenshields { r_max, .. } | SpeedLaw::Triangular { r_max, .. } => r_max,
        }
    }

    /// Lipschitz constant `sup |v'|`.
    pub fn derivative_bound(&self) -> f64 {
        match *self {
            SpeedLaw::Greenshields { v_max, r_max } => v_max / r_max,
            SpeedLaw::Triangular {
                v_max,
                rho_c,
                r_max,
            } => v_max / (r_max - rho_c),
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let v_max = self.v_max();
        let r_max = self.r_max();
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(Error::invalid(format!("{field}.v_max"), "must be finite and > 0"));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::invalid(format!("{field}.r_max"), "must be finite and > 0"));
        }
        if let SpeedLaw::Triangular { rho_c, .. } = *self {
            if !(rho_c.is_finite() && (0.0..r_max).contains(&rho_c)) {
                return Err(Error::invalid(format!("{field}.rho_c"), "must lie in [0, r_max)"));
            }
        }
        Ok(())
    }
}

/// Free-space factor multiplying the flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum SaturationLaw {
    /// `f == 1`; no maximum principle.
    None,
    /// `1 - exp(a (rho - R))` on `[0, R)`.
    Exponential { steepness: f64, r_max: f64 },
}

impl SaturationLaw {
    #[inline]
    pub fn evaluate(&self, rho: f64) -> f64 {
        match *self {
            SaturationLaw::None => 1.0,
            SaturationLaw::Exponential { steepness, r_max } => {
                if rho < 0.0 {
                    1.0
                } else if rho >= r_max {
                    0.0
                } else {
                    -(steepness * (rho - r_max)).exp_m1()
                }
            }
        }
    }

    pub fn derivative_bound(&self) -> f64 {
        match *self {
            SaturationLaw::None => 0.0,
            SaturationLaw::Exponential { steepness, .. } => steepness,
        }
    }

    /// Density at which the factor vanishes, if any.
    pub fn r_max(&self) -> Option<f64> {
        match *self {
            SaturationLaw::None => None,
            SaturationLaw::Exponential { r_max, .. } => Some(r_max),
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        if let SaturationLaw::Exponential { steepness, r_max } = *self {
            if !(steepness.is_finite() && steepness > 0.0) {
                return Err(Error::invalid(format!("{field}.steepness"), "must be finite and > 0"));
            }
            if !(r_max.is_finite() && r_max > 0.0) {
                return Err(Error::invalid(format!("{field}.r_max"), "must be finite and > 0"));
            }
            let gap = 1.0 - self.evaluate(0.0);
            if gap > SATURATION_AT_ZERO_TOL {
                return Err(Error::invalid(
                    format!("{field}.steepness"),
                    format!("f(0) = 1 - {gap:e}; steepness * r_max too small"),
                ));
            }
        }
        Ok(())
    }
}

fn unit_mass() -> f64 {
    1.0
}

/// Downstream look-ahead kernel supported on `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelShape {
    Constant {
        length: f64,
        #[serde(default = "unit_mass")]
        mass: f64,
    },
    LinearDecreasing {
        length: f64,
        #[serde(default = "unit_mass")]
        mass: f64,
    },
}

impl KernelShape {
    pub fn constant(length: f64) -> Self {
        KernelShape::Constant { length, mass: 1.0 }
    }

    pub fn linear_decreasing(length: f64) -> Self {
        KernelShape::LinearDecreasing { length, mass: 1.0 }
    }

    pub fn length(&self) -> f64 {
        match *self {
            KernelShape::Constant { length, .. } | KernelShape::LinearDecreasing { length, .. } => {
                length
            }
        }
    }

    pub fn mass(&self) -> f64 {
        match *self {
            KernelShape::Constant { mass, .. } | KernelShape::LinearDecreasing { mass, .. } => mass,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let l = self.length();
        if !(0.0..=l).contains(&x) {
            return 0.0;
        }
        match *self {
            KernelShape::Constant { mass, .. } => mass / l,
            KernelShape::LinearDecreasing { mass, .. } => mass * 2.0 / l * (1.0 - x / l),
        }
    }

    /// `int_0^x omega`, constant beyond the support.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let l = self.length();
        let x = x.clamp(0.0, l);
        match *self {
            KernelShape::Constant { mass, .. } => mass * x / l,
            KernelShape::LinearDecreasing { mass, .. } => mass * (2.0 / l) * (x - x * x / (2.0 * l)),
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let l = self.length();
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::invalid(format!("{field}.length"), "must be finite and > 0"));
        }
        let m = self.mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::invalid(format!("{field}.mass"), "must be finite and > 0"));
        }
        Ok(())
    }
}

/// One vehicle population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub max_density: f64,
    pub speed: SpeedLaw,
    pub saturation: SaturationLaw,
    pub kernel: KernelShape,
    /// Reaction time.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `f_i` evaluated on the class's own density.
    PerClass,
    /// `f_i` evaluated on the total density; keeps the simplex invariant.
    TotalDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    /// Vacuum ghost cells on both sides.
    ZeroExtension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub classes: Vec<ClassSpec>,
    pub coupling: Coupling,
    pub boundary: Boundary,
    pub domain: (f64, f64),
}

impl ModelSpec {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn domain_length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn delays(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.tau).collect()
    }

    /// Common maximal density under total-density coupling.
    pub fn common_max_density(&self) -> Option<f64> {
        let first = self.classes.first()?.max_density;
        self.classes
            .iter()
            .all(|c| c.max_density == first)
            .then_some(first)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("model.classes", "at least one class is required"));
        }
        let (x_min, x_max) = self.domain;
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::invalid("model.domain", "need finite x_min < x_max"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            let field = format!("model.classes[{i}]");
            if !(c.max_density.is_finite() && c.max_density > 0.0) {
                return Err(Error::invalid(format!("{field}.max_density"), "must be finite and > 0"));
            }
            if !(c.tau.is_finite() && c.tau >= 0.0) {
                return Err(Error::invalid(format!("{field}.tau"), "must be finite and >= 0"));
            }
            c.speed.validate(&format!("{field}.speed"))?;
            c.saturation.validate(&format!("{field}.saturation"))?;
            c.kernel.validate(&format!("{field}.kernel"))?;
            if c.speed.r_max() != c.max_density {
                return Err(Error::invalid(
                    format!("{field}.speed.r_max"),
                    format!("must equal max_density = {}", c.max_density),
                ));
            }
            if let Some(r) = c.saturation.r_max() {
                if r != c.max_density {
                    return Err(Error::invalid(
                        format!("{field}.saturation.r_max"),
                        format!("must equal max_density = {}", c.max_density),
                    ));
                }
            }
        }
        if self.coupling == Coupling::TotalDensity && self.common_max_density().is_none() {
            return Err(Error::MixedMaxDensity(
                self.classes.iter().map(|c| c.max_density).collect(),
            ));
        }
        Ok(())
    }
}

/// Closed-form building block of an initial profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "term", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    Constant { value: f64 },
    /// `amplitude * exp(-steepness (x - center)^2)`.
    Gaussian {
        amplitude: f64,
        center: f64,
        steepness: f64,
    },
    /// `amplitude * cos(frequency x + phase)` on `support`, zero elsewhere.
    Cosine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        support: (f64, f64),
    },
}

impl Term {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Term::Constant { value } => value,
            Term::Gaussian {
                amplitude,
                center,
                steepness,
            } => amplitude * (-steepness * (x - center).powi(2)).exp(),
            Term::Cosine {
                amplitude,
                frequency,
                phase,
                support: (a, b),
            } => {
                if (a..=b).contains(&x) {
                    amplitude * (frequency * x + phase).cos()
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact mean over `[a, b]`.
    pub fn cell_average(&self, a: f64, b: f64) -> f64 {
        let width = b - a;
        match *self {
            Term::Constant { value } => value,
            Term::Gaussian {
                amplitude,
                center,
                steepness,
            } => {
                let s = steepness.sqrt();
                let (lo, hi) = (s * (a - center), s * (b - center));
                // erfc keeps relative accuracy in the tails
                let diff = if lo >= 0.0 {
                    erfc(lo) - erfc(hi)
                } else if hi <= 0.0 {
                    erfc(-hi) - erfc(-lo)
                } else {
                    erf(hi) - erf(lo)
                };
                amplitude * 0.5 * (std::f64::consts::PI / steepness).sqrt() * diff.max(0.0) / width
            }
            Term::Cosine {
                amplitude,
                frequency,
                phase,
                support: (s0, s1),
            } => {
                let lo = a.max(s0);
                let hi = b.min(s1);
                if hi <= lo {
                    return 0.0;
                }
                amplitude * ((frequency * hi + phase).sin() - (frequency * lo + phase).sin())
                    / (frequency * width)
            }
        }
    }
}

/// Initial density of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// Sum of closed-form terms, projected by exact cell averages.
    Analytic { terms: Vec<Term> },
    /// Explicit cell averages; length must match the grid.
    Cells { values: Vec<f64> },
}

impl Profile {
    pub fn analytic(terms: Vec<Term>) -> Self {
        Profile::Analytic { terms }
    }

    pub fn value(&self, x: f64) -> Option<f64> {
        match self {
            Profile::Analytic { terms } => Some(terms.iter().map(|t| t.value(x)).sum()),
            Profile::Cells { .. } => None,
        }
    }

    pub fn project(&self, grid: &Grid, field: &str) -> Result<Vec<f64>> {
        match self {
            Profile::Analytic { terms } => Ok((0..grid.n_cells)
                .map(|j| {
                    let (a, b) = grid.cell_bounds(j);
                    terms.iter().map(|t| t.cell_average(a, b)).sum()
                })
                .collect()),
            Profile::Cells { values } => {
                if values.len() != grid.n_cells {
                    return Err(Error::invalid(
                        field,
                        format!("{} cell values for a {}-cell grid", values.len(), grid.n_cells),
                    ));
                }
                Ok(values.clone())
            }
        }
    }
}

/// One profile per class, in class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InitialData(pub Vec<Profile>);

/// Checks the initial data against the model and returns its cell averages.
pub fn validate_model(spec: &ModelSpec, ic: &InitialData, grid: &Grid) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if ic.0.len() != spec.n_classes() {
        return Err(Error::invalid(
            "scenario.initial",
            format!("{} profiles for {} classes", ic.0.len(), spec.n_classes()),
        ));
    }
    let mut cells = Vec::with_capacity(spec.n_classes());
    for (i, (profile, class)) in ic.0.iter().zip(&spec.classes).enumerate() {
        let values = profile.project(grid, &format!("scenario.initial[{i}]"))?;
        for (j, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < -DENSITY_TOL || v > class.max_density + DENSITY_TOL {
                return Err(Error::InvalidDensityRange {
                    class: i,
                    cell: j,
                    value: v,
                    max_density: class.max_density,
                });
            }
        }
        cells.push(values.into_iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
    }
    if spec.coupling == Coupling::TotalDensity {
        let r_max = spec.classes[0].max_density;
        for j in 0..grid.n_cells {
            let total: f64 = cells.iter().map(|c| c[j]).sum();
            if total > r_max + DENSITY_TOL {
                return Err(Error::SimplexViolation {
                    cell: j,
                    total,
                    max_density: r_max,
                });
            }
        }
    }
    Ok(cells)
}

/// A complete run description: model, initial data and discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub initial: InitialData,
    pub discretization: Discretization,
}

/// A scenario whose invariants have been checked, with its projected
/// initial data.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    pub scenario: Scenario,
    pub grid: Grid,
    pub initial_cells: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn validate(&self) -> Result<ValidatedScenario> {
        self.model.validate()?;
        self.discretization.validate()?;
        let grid = Grid::new(self.model.domain.0, self.model.domain.1, self.discretization.dx)?;
        let initial_cells = validate_model(&self.model, &self.initial, &grid)?;
        Ok(ValidatedScenario {
            scenario: self.clone(),
            grid,
            initial_cells,
        })
    }
}

impl ValidatedScenario {
    pub fn model(&self) -> &ModelSpec {
        &self.scenario.model
    }
}
