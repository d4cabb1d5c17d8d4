//! Named presets for the ring-road experiments: overtaking with and without
//! saturation, per-class versus total-density saturation, vanishing delay,
//! autonomous-vehicle penetration and perturbation dampening.
//!
//! All presets live on a periodic ring `[0, 2]` with `dx = 0.005`, unit
//! maximal densities and horizon `T = 30`.

use serde::{Deserialize, Serialize};

use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::model::{
    Boundary, ClassSpec, Coupling, InitialData, KernelShape, ModelSpec, Profile, SaturationLaw,
    Scenario, SpeedLaw, Term,
};

pub const RING: (f64, f64) = (0.0, 2.0);
pub const DX: f64 = 5e-3;
pub const T_FINAL: f64 = 30.0;
pub const V_MAX: f64 = 0.04;
pub const SATURATION_STEEPNESS: f64 = 50.0;
pub const HV_CRITICAL: f64 = 0.4;
pub const AV_CRITICAL: f64 = 0.6;
pub const HV_LOOK_AHEAD: f64 = 0.1;
pub const AV_LOOK_AHEAD: f64 = 0.2;
pub const HV_DELAY_PENETRATION: f64 = 2.5;
pub const HV_DELAY_PERTURBATION: f64 = 2.0;
pub const PERTURBATION_BASE: f64 = 0.85;

/// Delays of the vanishing-delay study.
pub const DELAY_SWEEP_TAUS: [f64; 6] = [5.0, 4.0, 3.0, 2.0, 1.0, 0.0];
/// Human-driver delays of the penetration study.
pub const TAU_H_VALUES: [f64; 6] = [2.0, 2.1, 2.2, 2.3, 2.4, 2.5];
/// Penetration rates of the perturbation study.
pub const PERTURBATION_PS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// `p = 0, 0.1, ..., 1`.
pub fn penetration_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedFamily {
    Greenshields,
    Triangular,
}

impl std::str::FromStr for SpeedFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greenshields" => Ok(SpeedFamily::Greenshields),
            "triangular" => Ok(SpeedFamily::Triangular),
            other => Err(Error::invalid("speed", format!("unknown speed family `{other}`"))),
        }
    }
}

fn exp_saturation() -> SaturationLaw {
    SaturationLaw::Exponential {
        steepness: SATURATION_STEEPNESS,
        r_max: 1.0,
    }
}

fn greenshields(v_max: f64) -> SpeedLaw {
    SpeedLaw::Greenshields { v_max, r_max: 1.0 }
}

fn speed_for(family: SpeedFamily, rho_c: f64) -> SpeedLaw {
    match family {
        SpeedFamily::Greenshields => greenshields(V_MAX),
        SpeedFamily::Triangular => SpeedLaw::Triangular {
            v_max: V_MAX,
            rho_c,
            r_max: 1.0,
        },
    }
}

fn class(name: &str, speed: SpeedLaw, saturation: SaturationLaw, kernel: KernelShape, tau: f64) -> ClassSpec {
    ClassSpec {
        name: name.into(),
        max_density: 1.0,
        speed,
        saturation,
        kernel,
        tau,
    }
}

fn ring_model(classes: Vec<ClassSpec>) -> ModelSpec {
    ModelSpec {
        classes,
        coupling: Coupling::PerClass,
        boundary: Boundary::Periodic,
        domain: RING,
    }
}

fn bump(amplitude: f64, center: f64) -> Profile {
    Profile::analytic(vec![Term::Gaussian {
        amplitude,
        center,
        steepness: 100.0,
    }])
}

fn check_tau(tau: f64, field: &str) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite and >= 0"))
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::PenetrationOutOfRange(p))
    }
}

/// Fast class behind a slow one on the ring, so that overtaking happens.
pub fn preset_overtaking(with_saturation: bool) -> Scenario {
    let sat = if with_saturation {
        exp_saturation()
    } else {
        SaturationLaw::None
    };
    Scenario {
        name: if with_saturation {
            "overtaking".into()
        } else {
            "overtaking-no-saturation".into()
        },
        model: ring_model(vec![
            class("fast", greenshields(0.04), sat, KernelShape::constant(0.1), 2.5),
            class("slow", greenshields(0.015), sat, KernelShape::constant(0.1), 2.5),
        ]),
        initial: InitialData(vec![bump(8.0 / 9.0, 0.25), bump(8.0 / 9.0, 0.9)]),
        discretization: Discretization::new(DX, T_FINAL),
    }
}

/// Overtaking data with saturation on the class density or on the total.
pub fn preset_invariant_domain(coupling: Coupling) -> Scenario {
    let mut s = preset_overtaking(true);
    s.model.coupling = coupling;
    s.name = match coupling {
        Coupling::PerClass => "invariant-domain-per-class".into(),
        Coupling::TotalDensity => "invariant-domain-total-density".into(),
    };
    s
}

/// Two identical classes sharing one bump, only the first delayed.
pub fn preset_delay_convergence(tau1: f64) -> Result<Scenario> {
    check_tau(tau1, "tau1")?;
    let sat = exp_saturation();
    Ok(Scenario {
        name: format!("delay-convergence-tau1-{tau1}"),
        model: ring_model(vec![
            class("delayed", greenshields(V_MAX), sat, KernelShape::constant(0.1), tau1),
            class("instant", greenshields(V_MAX), sat, KernelShape::constant(0.1), 0.0),
        ]),
        initial: InitialData(vec![bump(4.0 / 9.0, 0.25), bump(4.0 / 9.0, 0.25)]),
        discretization: Discretization::new(DX, T_FINAL),
    })
}

fn hv_class(family: SpeedFamily, tau_h: f64) -> ClassSpec {
    class(
        "human",
        speed_for(family, HV_CRITICAL),
        exp_saturation(),
        KernelShape::linear_decreasing(HV_LOOK_AHEAD),
        tau_h,
    )
}

fn av_class(family: SpeedFamily) -> ClassSpec {
    class(
        "autonomous",
        speed_for(family, AV_CRITICAL),
        exp_saturation(),
        KernelShape::constant(AV_LOOK_AHEAD),
        0.0,
    )
}

/// A fraction `p` of the bump is autonomous (no delay, long constant
/// kernel), the rest human-driven (delay `tau_h`, short decreasing kernel).
pub fn preset_av_penetration(p: f64, family: SpeedFamily, tau_h: f64) -> Result<Scenario> {
    check_p(p)?;
    check_tau(tau_h, "tau_h")?;
    let amp = 8.0 / 9.0;
    Ok(Scenario {
        name: format!("av-penetration-{}-p{p}-tauh{tau_h}", family_name(family)),
        model: ring_model(vec![hv_class(family, tau_h), av_class(family)]),
        initial: InitialData(vec![bump((1.0 - p) * amp, 0.25), bump(p * amp, 0.25)]),
        discretization: Discretization::new(DX, T_FINAL),
    })
}

fn family_name(f: SpeedFamily) -> &'static str {
    match f {
        SpeedFamily::Greenshields => "greenshields",
        SpeedFamily::Triangular => "triangular",
    }
}

/// Support of the perturbation `theta`.
pub fn perturbation_support() -> (f64, f64) {
    (3.0 / 20.0, (3.0 * std::f64::consts::PI + 1.0) / 20.0)
}

/// `theta = (1/30) [cos(20 (4x/3 - 1/2)) - cos(10 (4x/3 - 1/2))]` on its
/// support, written as `scale * theta` cosine terms.
pub fn perturbation_terms(scale: f64) -> [Term; 2] {
    let support = perturbation_support();
    [
        Term::Cosine {
            amplitude: scale / 30.0,
            frequency: 80.0 / 3.0,
            phase: -10.0,
            support,
        },
        Term::Cosine {
            amplitude: -scale / 30.0,
            frequency: 40.0 / 3.0,
            phase: -5.0,
            support,
        },
    ]
}

fn theta_range() -> (f64, f64) {
    let (a, b) = perturbation_support();
    let terms = perturbation_terms(1.0);
    let n = 20_000;
    (0..=n)
        .map(|k| a + (b - a) * k as f64 / n as f64)
        .map(|x| terms.iter().map(|t| t.value(x)).sum::<f64>())
        .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Constant total density `0.85` split by `p + theta(x)` between the
/// classes, triangular speeds and human delay `2.0`.
pub fn preset_perturbation(p: f64) -> Result<Scenario> {
    let (lo, hi) = theta_range();
    if !(p + lo >= 0.0 && p + hi <= 1.0) {
        return Err(Error::PenetrationOutOfRange(p));
    }
    let base = PERTURBATION_BASE;
    let mut human = vec![Term::Constant {
        value: base * (1.0 - p),
    }];
    human.extend(perturbation_terms(-base));
    let mut auto = vec![Term::Constant { value: base * p }];
    auto.extend(perturbation_terms(base));
    Ok(Scenario {
        name: format!("perturbation-p{p}"),
        model: ring_model(vec![
            hv_class(SpeedFamily::Triangular, HV_DELAY_PERTURBATION),
            av_class(SpeedFamily::Triangular),
        ]),
        initial: InitialData(vec![Profile::analytic(human), Profile::analytic(auto)]),
        discretization: Discretization::new(DX, T_FINAL),
    })
}

/// Spatially constant classes; a fixed point of the scheme.
pub fn preset_constant(values: &[f64]) -> Result<Scenario> {
    if values.is_empty() {
        return Err(Error::invalid("values", "at least one class"));
    }
    let sat = exp_saturation();
    Ok(Scenario {
        name: "constant".into(),
        model: ring_model(
            values
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let tau = if i == 0 { 2.5 } else { 0.0 };
                    class(&format!("class{i}"), greenshields(V_MAX), sat, KernelShape::constant(0.1), tau)
                })
                .collect(),
        ),
        initial: InitialData(
            values
                .iter()
                .map(|&value| Profile::analytic(vec![Term::Constant { value }]))
                .collect(),
        ),
        discretization: Discretization::new(DX, T_FINAL),
    })
}

fn yes() -> bool {
    true
}

fn default_constant_values() -> Vec<f64> {
    vec![0.3, 0.4]
}

/// A preset addressed by name with its parameters, as written in scenario
/// files (`[scenario.preset]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PresetRef {
    Overtaking {
        #[serde(default = "yes")]
        saturation: bool,
    },
    InvariantDomain {
        coupling: Coupling,
    },
    DelayConvergence {
        tau1: f64,
    },
    AvPenetration {
        p: f64,
        speed: SpeedFamily,
        #[serde(default = "default_tau_h")]
        tau_h: f64,
    },
    Perturbation {
        p: f64,
    },
    Constant {
        #[serde(default = "default_constant_values")]
        values: Vec<f64>,
    },
}

fn default_tau_h() -> f64 {
    HV_DELAY_PENETRATION
}

impl PresetRef {
    pub fn build(&self) -> Result<Scenario> {
        match self {
            PresetRef::Overtaking { saturation } => Ok(preset_overtaking(*saturation)),
            PresetRef::InvariantDomain { coupling } => Ok(preset_invariant_domain(*coupling)),
            PresetRef::DelayConvergence { tau1 } => preset_delay_convergence(*tau1),
            PresetRef::AvPenetration { p, speed, tau_h } => preset_av_penetration(*p, *speed, *tau_h),
            PresetRef::Perturbation { p } => preset_perturbation(*p),
            PresetRef::Constant { values } => preset_constant(values),
        }
    }
}

/// `(name, description)` of every preset.
pub const PRESETS: [(&str, &str); 6] = [
    ("overtaking", "fast class overtakes a slow one; --no-saturation drops f"),
    ("invariant-domain", "overtaking data with --coupling per-class|total-density"),
    ("delay-convergence", "two identical classes, first delayed by --tau1"),
    ("av-penetration", "AV share --p, --speed greenshields|triangular, --tau-h"),
    ("perturbation", "constant 0.85 split by --p plus a localized perturbation"),
    ("constant", "spatially constant classes (fixed point)"),
];
