//! Scenario files (TOML) and result bundles (CSV plus TOML metadata).
//!
//! Floating-point values in CSV files use `{:.16e}`, i.e. 17 significant
//! digits, so that parsing a file gives back the exact in-memory values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::diagnostics::j_functional;
use crate::discretization::{Discretization, Grid};
use crate::error::{Error, Result};
use crate::harness::{SweepResult, SweepSpec};
use crate::model::{InitialData, ModelSpec, Scenario, ValidatedScenario};
use crate::scenarios::PresetRef;
use crate::solver::Trajectory;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preset: Option<PresetRef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    scenario: Header,
    model: Option<ModelSpec>,
    initial: Option<InitialData>,
    discretization: Option<Discretization>,
}

#[derive(Serialize)]
struct ConfigOut<'a> {
    scenario: Header,
    model: &'a ModelSpec,
    initial: &'a InitialData,
    discretization: &'a Discretization,
}

/// Parses a scenario file without validating the model.
///
/// A file either names a preset under `[scenario]` (optionally replacing
/// its `[discretization]`) or spells out `[model]`, `[[initial]]` and
/// `[discretization]` in full.
pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let value: toml::Value = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
    let file = ConfigFile::deserialize(value).map_err(|e| Error::Schema(e.message().to_string()))?;
    match file.scenario.preset {
        Some(preset) => {
            if file.model.is_some() || file.initial.is_some() {
                return Err(Error::Schema(
                    "`scenario.preset` excludes inline `model` and `initial`".into(),
                ));
            }
            let mut s = preset.build()?;
            if let Some(name) = file.scenario.name {
                s.name = name;
            }
            if let Some(d) = file.discretization {
                s.discretization = d;
            }
            Ok(s)
        }
        None => {
            let missing = |key: &str| Error::Schema(format!("missing table `{key}`"));
            Ok(Scenario {
                name: file.scenario.name.unwrap_or_else(|| "scenario".into()),
                model: file.model.ok_or_else(|| missing("model"))?,
                initial: file.initial.ok_or_else(|| missing("initial"))?,
                discretization: file.discretization.ok_or_else(|| missing("discretization"))?,
            })
        }
    }
}

/// Parses a bare preset table such as `name = "overtaking"`.
pub fn parse_preset_str(text: &str) -> Result<PresetRef> {
    let value: toml::Value = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
    PresetRef::deserialize(value).map_err(|e| Error::Schema(e.message().to_string()))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario_str(&std::fs::read_to_string(path)?)
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<ValidatedScenario> {
    load_scenario(path)?.validate()
}

/// Inline form of a scenario; parses back to an identical value.
pub fn scenario_to_toml(s: &Scenario) -> Result<String> {
    let out = ConfigOut {
        scenario: Header {
            name: Some(s.name.clone()),
            preset: None,
        },
        model: &s.model,
        initial: &s.initial,
        discretization: &s.discretization,
    };
    toml::to_string(&out).map_err(|e| Error::Schema(e.to_string()))
}

/// Formats with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

enum Sink {
    Plain(BufWriter<File>),
    Gzip(GzEncoder<BufWriter<File>>),
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self {
            Sink::Plain(w) => w.write(buf),
            Sink::Gzip(w) => w.write(buf),
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match self {
            Sink::Plain(w) => w.flush(),
            Sink::Gzip(w) => w.flush(),
        }
    }
}

impl Sink {
    fn finish(self) -> std::io::Result<()> {
        match self {
            Sink::Plain(mut w) => w.flush(),
            Sink::Gzip(w) => w.finish()?.flush(),
        }
    }
}

fn csv_path(dir: &Path, stem: &str, gzip: bool) -> PathBuf {
    dir.join(if gzip {
        format!("{stem}.csv.gz")
    } else {
        format!("{stem}.csv")
    })
}

fn write_csv(path: &Path, gzip: bool, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let sink = if gzip {
        Sink::Gzip(GzEncoder::new(file, Compression::default()))
    } else {
        Sink::Plain(file)
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    let sink = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    sink.finish()?;
    Ok(())
}

/// Header and rows of a numeric CSV file (`.csv` or `.csv.gz`); empty
/// fields read as NaN.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = BufReader::new(File::open(path)?);
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|field| {
                if field.is_empty() {
                    Ok(f64::NAN)
                } else {
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("`{field}` in {} is not a number", path.display())))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn class_columns(prefix: &str, m: usize) -> impl Iterator<Item = String> + '_ {
    (1..=m).map(move |i| format!("{prefix}_{i}"))
}

fn profile_table(grid: &Grid, rho: &[Vec<f64>], t: Option<f64>) -> (Vec<String>, Vec<Vec<String>>) {
    let m = rho.len();
    let mut header: Vec<String> = t.iter().map(|_| "t".to_string()).collect();
    header.push("x".into());
    header.extend(class_columns("rho", m));
    header.push("r".into());
    let rows = (0..grid.n_cells)
        .map(|j| {
            let mut row: Vec<String> = t.iter().map(|&t| num(t)).collect();
            row.push(num(grid.center(j)));
            let mut r = 0.0;
            for c in rho {
                row.push(num(c[j]));
                r += c[j];
            }
            row.push(num(r));
            row
        })
        .collect();
    (header, rows)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BundleOptions {
    pub gzip: bool,
    pub stride: usize,
    pub entropy_seed: Option<u64>,
}

#[derive(Serialize)]
struct RunInfo {
    version: &'static str,
    scenario: String,
    n_classes: usize,
    n_cells: usize,
    x_min: f64,
    x_max: f64,
    dx: f64,
    dt: f64,
    lambda: f64,
    n_steps: usize,
    delay_steps: Vec<usize>,
    cfl_bound: f64,
    cfl_safety: f64,
    stride: usize,
    snapshot_times: Vec<f64>,
    wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    entropy_seed: Option<u64>,
}

#[derive(Serialize)]
struct Summary {
    l1_initial: Vec<f64>,
    max_l1_drift: Vec<f64>,
    sup_density: Vec<f64>,
    inf_density: Vec<f64>,
    sup_total: f64,
    sup_tv: f64,
    final_tv: f64,
    clamp_total: usize,
    j: f64,
    j_approximate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    entropy_max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entropy_violation_cells: Option<usize>,
}

#[derive(Serialize)]
struct Metadata<'a> {
    run: RunInfo,
    summary: Summary,
    scenario: &'a Scenario,
}

/// Files of a written bundle.
#[derive(Debug, Clone)]
pub struct BundlePaths {
    pub metadata: PathBuf,
    pub scenario: PathBuf,
    pub snapshots: PathBuf,
    pub diagnostics: PathBuf,
}

/// Writes `metadata.toml`, `scenario.toml`, `snapshots.csv` and
/// `diagnostics.csv` into `dir`.
pub fn write_bundle(vs: &ValidatedScenario, traj: &Trajectory, dir: &Path, opts: &BundleOptions) -> Result<BundlePaths> {
    std::fs::create_dir_all(dir)?;
    let m = vs.scenario.model.n_classes();
    let grid = traj.meta.grid;

    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend(class_columns("rho", m));
    header.push("r".into());
    let snapshots = csv_path(dir, "snapshots", opts.gzip);
    write_csv(
        &snapshots,
        opts.gzip,
        &header,
        traj.snapshots.iter().flat_map(|s| profile_table(&grid, &s.rho, Some(s.t)).1),
    )?;

    let mut header = vec!["t".to_string()];
    header.extend(class_columns("l1", m));
    header.extend(class_columns("linf", m));
    header.extend(["tv_r", "entropy_max_residual", "clamp_count"].map(String::from));
    let diagnostics = csv_path(dir, "diagnostics", opts.gzip);
    write_csv(
        &diagnostics,
        opts.gzip,
        &header,
        traj.diagnostics.iter().map(|d| {
            let mut row = vec![num(d.t)];
            row.extend(d.l1.iter().map(|&v| num(v)));
            row.extend(d.linf.iter().map(|&v| num(v)));
            row.push(num(d.tv_total));
            row.push(d.entropy_max_residual.map(num).unwrap_or_default());
            row.push(d.clamp_count.to_string());
            row
        }),
    )?;

    let j = j_functional(traj)?;
    let meta = Metadata {
        run: RunInfo {
            version: VERSION,
            scenario: vs.scenario.name.clone(),
            n_classes: m,
            n_cells: grid.n_cells,
            x_min: grid.x_min,
            x_max: grid.x_max,
            dx: grid.dx,
            dt: traj.meta.dt,
            lambda: traj.meta.lambda,
            n_steps: traj.meta.n_steps,
            delay_steps: traj.meta.delay_steps.clone(),
            cfl_bound: traj.meta.cfl_bound,
            cfl_safety: vs.scenario.discretization.cfl_safety,
            stride: opts.stride.max(1),
            snapshot_times: traj.snapshots.iter().map(|s| s.t).collect(),
            wall_time_s: traj.meta.wall_time_s,
            entropy_seed: opts.entropy_seed,
        },
        summary: Summary {
            l1_initial: traj.extremes.l1_initial.clone(),
            max_l1_drift: traj.extremes.max_l1_drift.clone(),
            sup_density: traj.extremes.sup_density.clone(),
            inf_density: traj.extremes.inf_density.clone(),
            sup_total: traj.extremes.sup_total,
            sup_tv: traj.extremes.sup_tv,
            final_tv: *traj.tv_series.last().unwrap_or(&0.0),
            clamp_total: traj.extremes.clamp_total,
            j: j.value,
            j_approximate: j.approximate,
            entropy_max_residual: traj.entropy.as_ref().map(|e| e.max_residual),
            entropy_violation_cells: traj.entropy.as_ref().map(|e| e.violation_cells),
        },
        scenario: &vs.scenario,
    };
    let metadata = dir.join("metadata.toml");
    std::fs::write(&metadata, toml::to_string(&meta).map_err(|e| Error::Schema(e.to_string()))?)?;
    let scenario = dir.join("scenario.toml");
    std::fs::write(&scenario, scenario_to_toml(&vs.scenario)?)?;
    Ok(BundlePaths {
        metadata,
        scenario,
        snapshots,
        diagnostics,
    })
}

#[derive(Serialize)]
struct SweepEcho<'a> {
    version: &'static str,
    shared_dt: bool,
    spec: &'a SweepSpec,
}

/// Writes `sweep.toml` (the study description), `summary.csv` (one row per
/// run) and `runs/run_KKK.csv` final profiles into `dir`.
pub fn write_sweep(spec: &SweepSpec, result: &SweepResult, dir: &Path, gzip: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let echo = SweepEcho {
        version: VERSION,
        shared_dt: result.shared_dt,
        spec,
    };
    std::fs::write(
        dir.join("sweep.toml"),
        toml::to_string(&echo).map_err(|e| Error::Schema(e.to_string()))?,
    )?;
    let summary = csv_path(dir, "summary", gzip);
    let Some(first) = result.rows.first() else {
        write_csv(&summary, gzip, &[], std::iter::empty())?;
        return Ok(summary);
    };
    let m = first.sup_density.len();
    let mut header: Vec<String> = first.params.iter().map(|(k, _)| k.clone()).collect();
    let timed = first.t.is_some();
    if timed {
        header.push("t".into());
    }
    header.extend(
        [
            "dx", "dt", "lambda", "n_steps", "delay_steps", "wall_time_s", "j", "final_tv", "distance", "error",
            "eoc", "ratio",
        ]
        .map(String::from),
    );
    header.extend(class_columns("sup_rho", m));
    header.extend(class_columns("inf_rho", m));
    header.push("sup_r".into());
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    write_csv(
        &summary,
        gzip,
        &header,
        result.rows.iter().map(|row| {
            let mut out: Vec<String> = row.params.iter().map(|&(_, v)| num(v)).collect();
            if timed {
                out.push(opt(row.t));
            }
            out.extend([
                num(row.dx),
                num(row.dt),
                num(row.lambda),
                row.n_steps.to_string(),
                row.delay_steps.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(";"),
                num(row.wall_time_s),
                opt(row.j),
                num(row.final_tv),
                opt(row.distance),
                opt(row.error),
                opt(row.eoc),
                opt(row.ratio),
            ]);
            out.extend(row.sup_density.iter().map(|&v| num(v)));
            out.extend(row.inf_density.iter().map(|&v| num(v)));
            out.push(num(row.sup_total));
            out
        }),
    )?;
    let runs = dir.join("runs");
    for (k, row) in result.rows.iter().enumerate() {
        if let Some((grid, rho)) = &row.final_profile {
            std::fs::create_dir_all(&runs)?;
            let (header, rows) = profile_table(grid, rho, None);
            write_csv(&csv_path(&runs, &format!("run_{k:03}"), gzip), gzip, &header, rows.into_iter())?;
        }
    }
    Ok(summary)
}
