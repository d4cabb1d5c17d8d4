//! Command-line front end. Exit codes: 0 success, 1 usage, 2 validation,
//! 3 runtime.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::diagnostics::kappa_sample_set;
use crate::discretization::Discrete;
use crate::error::{Error, Result};
use crate::harness::{run_sweep, Overrides, SweepSpec};
use crate::io::{self, BundleOptions};
use crate::model::{Coupling, Scenario};
use crate::scenarios::{self, PresetRef, SpeedFamily, PRESETS};
use crate::solver::{run, RunOptions};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "hwflow", version, about = "Multi-class non-local traffic flow with reaction delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write a result bundle.
    Run(RunArgs),
    /// Validate a scenario and print the planned time grid.
    Check(CheckArgs),
    /// Run a multi-run study.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// List the built-in presets.
    Presets,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CouplingArg {
    PerClass,
    TotalDensity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpeedArg {
    Greenshields,
    Triangular,
}

impl From<SpeedArg> for SpeedFamily {
    fn from(s: SpeedArg) -> Self {
        match s {
            SpeedArg::Greenshields => SpeedFamily::Greenshields,
            SpeedArg::Triangular => SpeedFamily::Triangular,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct DiscretizationArgs {
    /// Cell width.
    #[arg(long)]
    dx: Option<f64>,
    /// Final time.
    #[arg(long = "T", value_name = "T")]
    t_final: Option<f64>,
    /// Fraction of the CFL bound used when planning dt.
    #[arg(long)]
    cfl_safety: Option<f64>,
    /// Force a time step (still checked against the CFL bound).
    #[arg(long)]
    dt: Option<f64>,
}

impl DiscretizationArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            dx: self.dx,
            t_final: self.t_final,
            cfl_safety: self.cfl_safety,
            dt: self.dt,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct PresetOptions {
    /// Drop the saturation factor (overtaking).
    #[arg(long)]
    no_saturation: bool,
    /// Saturation coupling (invariant-domain).
    #[arg(long, value_enum)]
    coupling: Option<CouplingArg>,
    /// Delay of the first class (delay-convergence).
    #[arg(long)]
    tau1: Option<f64>,
    /// Autonomous share (av-penetration, perturbation).
    #[arg(long)]
    p: Option<f64>,
    /// Speed law family (av-penetration).
    #[arg(long, value_enum)]
    speed: Option<SpeedArg>,
    /// Human-driver delay (av-penetration).
    #[arg(long)]
    tau_h: Option<f64>,
    /// Class densities, comma separated (constant).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

fn preset_ref(name: &str, o: &PresetOptions) -> Result<PresetRef> {
    let p = o.p;
    Ok(match name {
        "overtaking" => PresetRef::Overtaking {
            saturation: !o.no_saturation,
        },
        "invariant-domain" => PresetRef::InvariantDomain {
            coupling: match o.coupling.unwrap_or(CouplingArg::TotalDensity) {
                CouplingArg::PerClass => Coupling::PerClass,
                CouplingArg::TotalDensity => Coupling::TotalDensity,
            },
        },
        "delay-convergence" => PresetRef::DelayConvergence {
            tau1: o.tau1.unwrap_or(0.0),
        },
        "av-penetration" => PresetRef::AvPenetration {
            p: p.unwrap_or(0.0),
            speed: o.speed.map_or(SpeedFamily::Triangular, Into::into),
            tau_h: o.tau_h.unwrap_or(scenarios::HV_DELAY_PENETRATION),
        },
        "perturbation" => PresetRef::Perturbation { p: p.unwrap_or(0.4) },
        "constant" => PresetRef::Constant {
            values: o.values.clone().unwrap_or_else(|| vec![0.3, 0.4]),
        },
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

#[derive(Args, Debug, Clone)]
struct Source {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see `presets`).
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    options: PresetOptions,
    #[command(flatten)]
    discretization: DiscretizationArgs,
}

impl Source {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = match (&self.config, &self.preset) {
            (Some(path), _) => io::load_scenario(path)?,
            (None, Some(name)) => preset_ref(name, &self.options)?.build()?,
            (None, None) => unreachable!("clap requires a source"),
        };
        self.discretization.overrides().apply(&mut s);
        Ok(s)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Extra snapshot times, comma separated (0 and T are always written).
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, default_value = "hwflow-out")]
    out: PathBuf,
    /// Write snapshots and diagnostics every this many steps.
    #[arg(long)]
    stride: Option<usize>,
    /// Seed of the random entropy levels.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate entropy residuals on every this many diagnostics rows.
    #[arg(long, default_value_t = 50)]
    entropy_stride: usize,
    /// Gzip the CSV files.
    #[arg(long)]
    gzip: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    source: Source,
    /// Print the scenario in inline file form.
    #[arg(long)]
    emit_config: bool,
}

#[derive(Args, Debug, Clone)]
struct SweepOutput {
    #[command(flatten)]
    discretization: DiscretizationArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Gzip the CSV files.
    #[arg(long)]
    gzip: bool,
}

#[derive(Subcommand, Debug)]
enum SweepCommand {
    /// Distance to the undelayed run over first-class delays.
    Delay {
        /// Delays as a list `5,4,3` or a range `0:5:1`.
        #[arg(long, default_value = "5,4,3,2,1,0")]
        tau: String,
        #[command(flatten)]
        output: SweepOutput,
    },
    /// Oscillation functional over penetration rates and human delays.
    Penetration {
        #[arg(long, value_enum, default_value = "triangular")]
        speed: SpeedArg,
        /// Penetration rates as a list or a range `0:1:0.1`.
        #[arg(long, default_value = "0:1:0.1")]
        p: String,
        /// Human delays as a list or a range.
        #[arg(long, default_value = "2.5")]
        tau_h: String,
        #[command(flatten)]
        output: SweepOutput,
    },
    /// Final total variation of the perturbation preset over penetration rates.
    Perturbation {
        #[arg(long, default_value = "0.2,0.4,0.6,0.8")]
        p: String,
        #[command(flatten)]
        output: SweepOutput,
    },
    /// Self-convergence over halved grids.
    Refine {
        #[arg(long, default_value = "delay-convergence")]
        preset: String,
        #[command(flatten)]
        options: PresetOptions,
        /// Cell widths, coarse to fine.
        #[arg(long, default_value = "0.02,0.01,0.005,0.0025")]
        dx_list: String,
        #[command(flatten)]
        output: SweepOutput,
    },
    /// Distance between a run and a perturbed copy over time.
    Stability {
        #[arg(long, default_value = "overtaking")]
        preset: String,
        #[command(flatten)]
        options: PresetOptions,
        /// Constant added to one class's initial density.
        #[arg(long, conflicts_with = "delays")]
        bump: Option<f64>,
        /// Class receiving the bump.
        #[arg(long, default_value_t = 0)]
        class: usize,
        /// Replacement delays, one per class.
        #[arg(long, value_delimiter = ',')]
        delays: Option<Vec<f64>>,
        /// Number of sampling intervals over [0, T].
        #[arg(long, default_value_t = 30)]
        samples: usize,
        #[command(flatten)]
        output: SweepOutput,
    },
}

/// Parses `a,b,c` or an inclusive range `start:stop:step`.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::invalid("list", format!("cannot parse `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (a, b, step) = (v[0], v[1], v[2]);
        if !(step > 0.0 && b >= a) {
            return Err(bad());
        }
        let n = ((b - a) / step).round() as usize;
        if ((a + n as f64 * step) - b).abs() > 1e-9 * step.max(b.abs()) {
            return Err(Error::invalid("list", format!("`{text}` does not end on its stop value")));
        }
        if n == 0 {
            return Ok(vec![a]);
        }
        return Ok((0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect());
    }
    if parts.len() != 1 {
        return Err(bad());
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn cmd_presets() {
    for (name, about) in PRESETS {
        println!("{name:<18} {about}");
    }
}

fn cmd_check(args: &CheckArgs) -> Result<()> {
    let s = args.source.scenario()?;
    let vs = s.validate()?;
    let d = Discrete::build(&vs)?;
    if args.emit_config {
        print!("{}", io::scenario_to_toml(&s)?);
        return Ok(());
    }
    println!("scenario    {}", s.name);
    println!("cells       {}", vs.grid.n_cells);
    println!("dx          {}", vs.grid.dx);
    println!("dt          {}", d.time.dt);
    println!("steps       {}", d.time.n_steps);
    println!("lambda      {}", d.time.lambda);
    println!("cfl_bound   {}", d.time.cfl_bound);
    println!("delay_steps {:?}", d.time.delay_steps);
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let s = args.source.scenario()?;
    let vs = s.validate()?;
    let t_final = s.discretization.t_final;
    let snapshot_times = args.snapshot_times.as_ref().map(|extra| {
        let mut times = vec![0.0, t_final];
        times.extend(extra);
        times
    });
    let max_r = s
        .model
        .classes
        .iter()
        .map(|c| c.max_density)
        .fold(0.0, f64::max);
    let entropy = (s.model.coupling == Coupling::PerClass).then(|| kappa_sample_set(args.seed, max_r));
    let options = RunOptions {
        stride: args.stride.unwrap_or(1),
        snapshot_times,
        snapshot_stride: args.stride,
        entropy_kappas: entropy,
        entropy_stride: args.entropy_stride,
        ..RunOptions::default()
    };
    let traj = run(&vs, &options, &mut [])?;
    let paths = io::write_bundle(
        &vs,
        &traj,
        &args.out,
        &BundleOptions {
            gzip: args.gzip,
            stride: options.stride,
            entropy_seed: Some(args.seed),
        },
    )?;
    println!(
        "{}: {} steps of dt = {}, wall time {:.2} s, bundle in {}",
        s.name,
        traj.meta.n_steps,
        traj.meta.dt,
        traj.meta.wall_time_s,
        paths.metadata.parent().unwrap_or(&args.out).display()
    );
    Ok(())
}

fn cmd_sweep(cmd: &SweepCommand) -> Result<()> {
    let (spec, output) = match cmd {
        SweepCommand::Delay { tau, output } => (
            SweepSpec::Delay {
                taus: parse_list(tau)?,
                overrides: output.discretization.overrides(),
            },
            output,
        ),
        SweepCommand::Penetration { speed, p, tau_h, output } => (
            SweepSpec::Penetration {
                ps: parse_list(p)?,
                speed: (*speed).into(),
                tau_h: parse_list(tau_h)?,
                overrides: output.discretization.overrides(),
            },
            output,
        ),
        SweepCommand::Perturbation { p, output } => (
            SweepSpec::Perturbation {
                ps: parse_list(p)?,
                overrides: output.discretization.overrides(),
            },
            output,
        ),
        SweepCommand::Refine {
            preset,
            options,
            dx_list,
            output,
        } => (
            SweepSpec::Refine {
                preset: preset_ref(preset, options)?,
                dx: parse_list(dx_list)?,
                overrides: output.discretization.overrides(),
            },
            output,
        ),
        SweepCommand::Stability {
            preset,
            options,
            bump,
            class,
            delays,
            samples,
            output,
        } => (
            SweepSpec::Stability {
                preset: preset_ref(preset, options)?,
                bump: match (bump, delays) {
                    (Some(size), _) => Some((*class, *size)),
                    (None, None) => Some((*class, 1e-3)),
                    (None, Some(_)) => None,
                },
                delays: delays.clone(),
                samples: *samples,
                overrides: output.discretization.overrides(),
            },
            output,
        ),
    };
    let result = run_sweep(&spec)?;
    let study = result.study.clone();
    let dir = output
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("hwflow-sweep-{study}")));
    let summary = io::write_sweep(&spec, &result, &dir, output.gzip)?;
    println!("{study}: {} rows written to {}", result.rows.len(), summary.display());
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Presets => {
            cmd_presets();
            Ok(())
        }
        Command::Check(args) => cmd_check(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(cmd) => cmd_sweep(cmd),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
