//! Configuration, decay fits, run persistence and the subcommand pipelines
//! behind the `ahflow` binary.
//!
//! Run directory layout:
//!
//! ```text
//! config.snapshot        parsed configuration, every key echoed
//! metric_t<t>.csv        x, A, B per snapshot
//! diagnostics.csv        one row per record, 17 significant digits
//! reports/*.json         fits, condition B, residual reports (per-point data in reports/*.csv)
//! summary.json           termination, fits, condition B, acceptance flags, thresholds
//! ```

pub mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{parse_config, Background, DiagnosticsSettings, GridSettings, InitialRecipe, RunConfig, SweepSettings};

use crate::error::{Error, Result};
use crate::fit::{exponential_rate_fit, power_law_fit, FitFlag, PowerFit, RateFit, MIN_FIT_SAMPLES};
use crate::flow::{conformal_drift, run, run_with_background, DiagnosticsRecord, FlowMode, FlowTrajectory, Snapshot, Termination};
use crate::geometry::{curvature_closed_form, fmt17, CrossSection, DerivativeDepth, WarpedMetric};
use crate::grid::{GridRecord, RadialGrid, ScalarField};
use crate::initial_data::{
    build_glued_candidate, einstein_filling, random_perturbation, validate_initial, BoundaryData, GlueRecipe,
    ValidationOptions,
};
use crate::verify::{condition_b_report, defining_function_checks, evolution_residuals, ConditionBReport, ResidualReport};

/// Series values at or below this are numerical noise; fits on them are refused.
pub const NOISE_FLOOR: f64 = 1e-10;
/// Conformal drift at or below this is roundoff.
pub const DRIFT_FLOOR: f64 = 1e-13;
/// Relative slack allowed in the monotonicity check.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Exponential decay rate `λ₁` of `sup‖h‖` over a time window.
pub fn decay_fit_time(t: &[f64], v: &[f64], window: (f64, f64)) -> RateFit {
    let inside: Vec<f64> = t
        .iter()
        .zip(v)
        .filter(|(s, _)| **s >= window.0 && **s <= window.1)
        .map(|(_, x)| *x)
        .collect();
    if inside.len() >= MIN_FIT_SAMPLES && inside.iter().all(|x| *x <= NOISE_FLOOR) {
        return RateFit {
            rate: None,
            residual: 0.0,
            samples: inside.len(),
            confidence: 0.0,
            flag: Some(FitFlag::BelowNoiseFloor),
        };
    }
    exponential_rate_fit(t, v, window)
}

/// Power-law exponent of a positive radial field over a radius window.
pub fn decay_fit_space(x: &[f64], f: &[f64], window: (f64, f64)) -> PowerFit {
    power_law_fit(x, f, window, NOISE_FLOOR)
}

// ---------------------------------------------------------------------------
// metric files

/// Sidecar of a metric CSV: everything needed to rebuild the metric.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricManifest {
    pub n: usize,
    pub cross_section: CrossSection,
    pub t: f64,
    pub grid: GridRecord,
    pub recipe: Option<InitialRecipe>,
    pub csv: String,
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn metric_csv(m: &WarpedMetric<f64>) -> String {
    let mut out = String::from("x,A,B\n");
    for i in 0..m.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt17(m.x()[i]),
            fmt17(m.a.values()[i]),
            fmt17(m.b.values()[i])
        ));
    }
    out
}

/// Writes `<stem>.csv` and its `<stem>.json` manifest.
pub fn save_metric(m: &WarpedMetric<f64>, path: &Path, recipe: Option<&InitialRecipe>) -> Result<()> {
    let csv = path.with_extension("csv");
    write_file(&csv, metric_csv(m))?;
    let manifest = MetricManifest {
        n: m.n,
        cross_section: m.cross_section,
        t: m.time,
        grid: m.grid().record(),
        recipe: recipe.cloned(),
        csv: csv.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    write_file(&path.with_extension("json"), to_json(&manifest))
}

fn parse_table(text: &str, path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("{}: non-numeric entry", path.display()),
            })?;
        if row.len() != columns {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("{}: expected {columns} columns, found {}", path.display(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a metric CSV; the manifest next to it supplies `n` and the
/// cross-section, else `fallback` does.
pub fn load_metric(path: &Path, fallback: (usize, CrossSection)) -> Result<(WarpedMetric<f64>, Option<MetricManifest>)> {
    let csv = path.with_extension("csv");
    let rows = parse_table(&read_file(&csv)?, &csv, 3)?;
    let manifest_path = path.with_extension("json");
    let manifest: Option<MetricManifest> = if manifest_path.exists() {
        Some(serde_json::from_str(&read_file(&manifest_path)?).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", manifest_path.display()),
        })?)
    } else {
        None
    };
    let points: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let grid = match &manifest {
        Some(m) if m.grid.points == points => RadialGrid::from_record(&m.grid)?,
        _ => RadialGrid::from_points(points)?,
    };
    let grid = Arc::new(grid);
    let (n, cs) = manifest.as_ref().map(|m| (m.n, m.cross_section)).unwrap_or(fallback);
    let mut metric = WarpedMetric::new(
        n,
        cs,
        ScalarField::new(grid.clone(), rows.iter().map(|r| r[1]).collect())?,
        ScalarField::new(grid, rows.iter().map(|r| r[2]).collect())?,
    )?;
    metric.time = manifest.as_ref().map(|m| m.t).unwrap_or(0.0);
    Ok((metric, manifest))
}

// ---------------------------------------------------------------------------
// initial data

fn glue_parts(recipe: &InitialRecipe) -> Option<(GlueRecipe, f64)> {
    match recipe {
        InitialRecipe::Glued { k, nu1, amplitude, remainder } => Some((
            GlueRecipe {
                k: *k,
                nu1: *nu1,
                remainder: *remainder,
            },
            1.0 + amplitude,
        )),
        _ => None,
    }
}

fn einstein_background(m: &WarpedMetric<f64>, recipe: &InitialRecipe) -> Result<WarpedMetric<f64>> {
    match recipe {
        InitialRecipe::Glued { .. } => {
            let (glue, scale) = glue_parts(recipe).expect("glued");
            einstein_filling(m.grid().clone(), m.n, m.cross_section, scale, &glue)
        }
        InitialRecipe::Hyperbolic | InitialRecipe::Perturbed { .. } => {
            WarpedMetric::einstein(m.grid().clone(), m.n, m.cross_section)
        }
        InitialRecipe::File { .. } => Err(Error::Validation(vec![
            "flow.background: einstein needs a metric file whose manifest records its recipe".into(),
        ])),
    }
}

/// The initial metric of `cfg`, its generating recipe, and the DeTurck
/// background when one other than the initial metric is requested.
pub fn build_initial(cfg: &RunConfig) -> Result<(WarpedMetric<f64>, InitialRecipe, Option<WarpedMetric<f64>>)> {
    let grid = || -> Result<Arc<RadialGrid<f64>>> { Ok(Arc::new(RadialGrid::build(cfg.grid.n, cfg.grid.x_max, cfg.grid.stretch)?)) };
    let (m, recipe) = match &cfg.initial {
        InitialRecipe::Hyperbolic => (WarpedMetric::einstein(grid()?, cfg.n, cfg.cross_section)?, cfg.initial.clone()),
        InitialRecipe::Perturbed { amplitude } => (
            random_perturbation(grid()?, cfg.n, cfg.cross_section, *amplitude, cfg.seed)?,
            cfg.initial.clone(),
        ),
        InitialRecipe::Glued { .. } => {
            let (glue, scale) = glue_parts(&cfg.initial).expect("glued");
            let base = WarpedMetric::einstein(grid()?, cfg.n, cfg.cross_section)?;
            let boundary = BoundaryData::new(cfg.cross_section, scale)?;
            (build_glued_candidate(&base, &boundary, &glue)?, cfg.initial.clone())
        }
        InitialRecipe::File { path } => {
            let (m, manifest) = load_metric(path, (cfg.n, cfg.cross_section))?;
            let recipe = manifest.and_then(|mf| mf.recipe).unwrap_or_else(|| cfg.initial.clone());
            (m, recipe)
        }
    };
    let background = match cfg.background {
        Background::Initial => None,
        Background::Einstein => Some(einstein_background(&m, &recipe)?),
    };
    Ok((m, recipe, background))
}

// ---------------------------------------------------------------------------
// summary

/// Thresholds every acceptance flag is judged against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub transient: f64,
    pub monotone_slack: f64,
    pub decay_ratio: f64,
    pub drift_slope_margin: f64,
    pub boundary_motion: f64,
    pub monitor_factor: f64,
    pub noise_floor: f64,
    pub drift_floor: f64,
    pub converge_tol: Option<f64>,
    pub space_window: (f64, f64),
    pub time_window: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub initial_sup_h: f64,
    pub final_sup_h: f64,
    pub decay_ratio: f64,
    /// Largest relative increase of `sup‖h‖` between records after the transient.
    pub max_increase_after_transient: f64,
    /// Largest change of the extrapolated boundary values `(A(0), B(0))`.
    pub boundary_motion: f64,
    /// `max_t e^{λ₁t} W(t) / W(0)` with `W = sup x^{−γ}‖h‖`.
    pub monitor_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceFlags {
    pub monotone_after_transient: bool,
    pub decay_ratio_below: bool,
    pub lambda1_positive: bool,
    pub drift_slope_at_least: bool,
    pub boundary_preserved: bool,
    pub weighted_monitor_bounded: bool,
    /// A converged run ended at or below its tolerance (vacuous otherwise).
    pub convergence_bookkeeping: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub termination: Termination,
    pub final_time: f64,
    pub records: usize,
    pub lambda1_fit: RateFit,
    pub gamma_fit: PowerFit,
    pub drift_slope: PowerFit,
    pub condition_b: Option<ConditionBReport>,
    pub measurements: Measurements,
    pub thresholds: Thresholds,
    pub acceptance_flags: AcceptanceFlags,
    pub warnings: Vec<String>,
}

/// Top-level keys of `summary.json`.
pub const SUMMARY_KEYS: [&str; 11] = [
    "termination",
    "final_time",
    "records",
    "lambda1_fit",
    "gamma_fit",
    "drift_slope",
    "condition_b",
    "measurements",
    "thresholds",
    "acceptance_flags",
    "warnings",
];

/// Checks a parsed `summary.json` against the documented schema.
pub fn validate_summary(v: &Value) -> Result<Summary> {
    let obj = v.as_object().ok_or_else(|| Error::Validation(vec!["summary is not an object".into()]))?;
    let mut errs: Vec<String> = SUMMARY_KEYS
        .iter()
        .filter(|k| !obj.contains_key(**k))
        .map(|k| format!("missing key {k}"))
        .collect();
    errs.extend(obj.keys().filter(|k| !SUMMARY_KEYS.contains(&k.as_str())).map(|k| format!("unexpected key {k}")));
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    serde_json::from_value(v.clone()).map_err(|e| Error::Validation(vec![e.to_string()]))
}

/// Derives fits, measurements and flags from a finished run. `metrics`
/// are the snapshots in time order; the first is the initial metric.
pub fn summarize(
    cfg: &RunConfig,
    records: &[DiagnosticsRecord],
    metrics: &[WarpedMetric<f64>],
    termination: Termination,
) -> Result<Summary> {
    let first = metrics.first().ok_or_else(|| Error::InsufficientSnapshots("run has no snapshots".into()))?;
    let last = metrics.last().expect("nonempty");
    let rec0 = records.first().ok_or_else(|| Error::InsufficientSnapshots("run has no records".into()))?;
    let rec_end = records.last().expect("nonempty");
    let d = &cfg.diagnostics;
    let space_window = cfg.space_window();
    let time_window = (d.transient, f64::INFINITY);

    let (ts, hs): (Vec<f64>, Vec<f64>) = records.iter().map(|r| (r.t, r.sup_h)).unzip();
    let lambda1_fit = decay_fit_time(&ts, &hs, time_window);
    let x: Vec<f64> = first.x().to_vec();
    let h0 = curvature_closed_form(first, cfg.flow.accuracy, DerivativeDepth::None)?;
    let gamma_fit = decay_fit_space(&x, h0.h_norm.values(), space_window);
    let drift = conformal_drift(last, first);
    let drift_slope = power_law_fit(&x, &drift, space_window, DRIFT_FLOOR);
    let condition_b = condition_b_report(first).ok();

    let after: Vec<&DiagnosticsRecord> = records.iter().filter(|r| r.t >= d.transient).collect();
    let max_increase = after
        .windows(2)
        .map(|w| (w[1].sup_h - w[0].sup_h) / w[0].sup_h.max(f64::MIN_POSITIVE))
        .fold(f64::NEG_INFINITY, f64::max);
    let (a0, b0) = first.boundary_values();
    let boundary_motion = metrics
        .iter()
        .map(|m| {
            let (a, b) = m.boundary_values();
            (a - a0).abs().max((b - b0).abs())
        })
        .fold(0.0, f64::max);
    let lambda1 = lambda1_fit.rate.filter(|_| lambda1_fit.flag.is_none());
    let monitor_ratio = lambda1.map(|l| {
        records
            .iter()
            .map(|r| r.weighted_sup * (l * r.t).exp())
            .fold(0.0, f64::max)
            / rec0.weighted_sup.max(f64::MIN_POSITIVE)
    });
    let decay_ratio = rec_end.sup_h / rec0.sup_h.max(f64::MIN_POSITIVE);

    let thresholds = Thresholds {
        transient: d.transient,
        monotone_slack: MONOTONE_SLACK,
        decay_ratio: 0.1,
        drift_slope_margin: 0.3,
        boundary_motion: 1e-6,
        monitor_factor: 2.0,
        noise_floor: NOISE_FLOOR,
        drift_floor: DRIFT_FLOOR,
        converge_tol: cfg.flow.converge_tol,
        space_window,
        time_window: (d.transient, rec_end.t),
    };
    let flags = AcceptanceFlags {
        monotone_after_transient: after.len() >= 2 && max_increase <= MONOTONE_SLACK,
        decay_ratio_below: decay_ratio < thresholds.decay_ratio,
        lambda1_positive: lambda1.is_some_and(|l| l > 0.0),
        drift_slope_at_least: drift_slope.exponent.is_some_and(|s| s >= d.gamma - thresholds.drift_slope_margin),
        boundary_preserved: boundary_motion < thresholds.boundary_motion,
        weighted_monitor_bounded: monitor_ratio.is_some_and(|r| r <= thresholds.monitor_factor),
        convergence_bookkeeping: termination != Termination::Converged
            || cfg.flow.converge_tol.is_some_and(|tol| rec_end.sup_h <= tol),
    };
    Ok(Summary {
        termination,
        final_time: rec_end.t,
        records: records.len(),
        lambda1_fit,
        gamma_fit,
        drift_slope,
        condition_b,
        measurements: Measurements {
            initial_sup_h: rec0.sup_h,
            final_sup_h: rec_end.sup_h,
            decay_ratio,
            max_increase_after_transient: if after.len() >= 2 { max_increase } else { 0.0 },
            boundary_motion,
            monitor_ratio,
        },
        thresholds,
        acceptance_flags: flags,
        warnings: cfg.warnings.clone(),
    })
}

// ---------------------------------------------------------------------------
// emission

pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = DiagnosticsRecord::COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let row: Vec<String> = r.values().iter().map(|v| fmt17(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = read_file(path)?;
    let header = text.lines().next().unwrap_or("");
    if header != DiagnosticsRecord::COLUMNS.join(",") {
        return Err(Error::Parse {
            line: 1,
            message: format!("{}: unexpected header '{header}'", path.display()),
        });
    }
    parse_table(&text, path, DiagnosticsRecord::COLUMNS.len())?
        .iter()
        .map(|r| DiagnosticsRecord::from_values(r))
        .collect()
}

fn snapshot_name(t: f64) -> String {
    format!("metric_t{t:.9}")
}

/// JSON body of a residual report whose per-point data live in `csv`.
fn residual_json(r: &ResidualReport, csv: &str) -> Value {
    json!({
        "identity": r.identity,
        "sup": r.sup,
        "l2": r.l2,
        "slope": r.slope,
        "pass": r.pass,
        "points": r.x.len(),
        "csv": csv,
    })
}

fn write_residual(dir: &Path, r: &ResidualReport) -> Result<Value> {
    let csv = format!("{}.csv", r.identity);
    let mut buf = Vec::new();
    r.write_csv(&mut buf).map_err(|e| Error::io(dir.join(&csv), e))?;
    write_file(&dir.join("reports").join(&csv), buf)?;
    Ok(residual_json(r, &format!("reports/{csv}")))
}

/// Writes the run directory; byte-identical for identical inputs.
pub fn emit_outputs(traj: &FlowTrajectory<f64>, summary: &Summary, cfg: &RunConfig, recipe: &InitialRecipe, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("reports")).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.snapshot"), cfg.to_text())?;
    let mut files = Vec::new();
    for s in &traj.snapshots {
        let name = format!("{}.csv", snapshot_name(s.t()));
        write_file(&dir.join(&name), metric_csv(&s.metric))?;
        files.push(json!({ "t": s.t(), "csv": name }));
    }
    write_file(&dir.join("diagnostics.csv"), diagnostics_csv(&traj.records))?;

    let first = traj.initial();
    let trajectory = json!({
        "n": first.n,
        "cross_section": first.cross_section,
        "mode": traj.config.mode,
        "termination": traj.termination,
        "steps": traj.steps,
        "rejected_steps": traj.rejected_steps,
        "recipe": recipe,
        "grid": first.grid().record(),
        "snapshots": files,
        "dt_history": traj.records.iter().map(|r| [r.t, r.dt]).collect::<Vec<_>>(),
    });
    write_file(&dir.join("reports/trajectory.json"), to_json(&trajectory))?;
    write_file(
        &dir.join("reports/fits.json"),
        to_json(&json!({
            "lambda1_fit": summary.lambda1_fit,
            "gamma_fit": summary.gamma_fit,
            "drift_slope": summary.drift_slope,
        })),
    )?;
    let drift = ResidualReport::new("conformal-drift", first.x().to_vec(), conformal_drift(traj.last(), first));
    let drift_json = write_residual(dir, &drift)?;
    write_file(&dir.join("reports/drift.json"), to_json(&drift_json))?;
    if let Some(cb) = &summary.condition_b {
        write_file(&dir.join("reports/condition_b.json"), to_json(cb))?;
    }
    if let Ok(v) = validate_initial(first, cfg.diagnostics.gamma, cfg.diagnostics.epsilon, &ValidationOptions::default()) {
        write_file(&dir.join("reports/validation.json"), to_json(&v))?;
    }
    write_file(&dir.join("summary.json"), to_json(summary))
}

/// Outcome of one simulation.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
}

impl RunOutcome {
    /// Blow-up and instability are numerical failures.
    pub fn failed(&self) -> bool {
        matches!(self.summary.termination, Termination::BlowUp | Termination::Instability)
    }
}

/// Builds the initial data, runs the flow and writes the run directory.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let (m, recipe, background) = build_initial(cfg)?;
    let traj = match &background {
        Some(bg) => run_with_background(&m, bg, &cfg.flow)?,
        None => run(&m, &cfg.flow)?,
    };
    let metrics: Vec<WarpedMetric<f64>> = traj.snapshots.iter().map(|s| s.metric.clone()).collect();
    let summary = summarize(cfg, &traj.records, &metrics, traj.termination)?;
    emit_outputs(&traj, &summary, cfg, &recipe, &cfg.output)?;
    Ok(RunOutcome {
        dir: cfg.output.clone(),
        summary,
    })
}

/// Writes the initial metric of `cfg` to `<output>/initial.{csv,json}`.
pub fn make_initial(cfg: &RunConfig) -> Result<PathBuf> {
    let (m, recipe, _) = build_initial(cfg)?;
    let path = cfg.output.join("initial.csv");
    save_metric(&m, &path, Some(&recipe))?;
    Ok(path)
}

/// A run directory read back from disk.
pub struct StoredRun {
    pub config: RunConfig,
    pub records: Vec<DiagnosticsRecord>,
    pub trajectory: FlowTrajectory<f64>,
    pub recipe: Option<InitialRecipe>,
}

pub fn load_run(dir: &Path) -> Result<StoredRun> {
    let config = parse_config(&read_file(&dir.join("config.snapshot"))?)?;
    let records = read_diagnostics(&dir.join("diagnostics.csv"))?;
    let tpath = dir.join("reports/trajectory.json");
    let tj: Value = serde_json::from_str(&read_file(&tpath)?).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", tpath.display()),
    })?;
    let bad = |what: &str| Error::Parse {
        line: 0,
        message: format!("{}: {what}", tpath.display()),
    };
    let n = tj["n"].as_u64().ok_or_else(|| bad("missing n"))? as usize;
    let cs: CrossSection = serde_json::from_value(tj["cross_section"].clone()).map_err(|_| bad("bad cross_section"))?;
    let termination: Termination = serde_json::from_value(tj["termination"].clone()).map_err(|_| bad("bad termination"))?;
    let recipe: Option<InitialRecipe> = serde_json::from_value(tj["recipe"].clone()).ok();
    let mut snapshots = Vec::new();
    for s in tj["snapshots"].as_array().ok_or_else(|| bad("missing snapshots"))? {
        let file = s["csv"].as_str().ok_or_else(|| bad("snapshot without csv"))?;
        let (mut metric, _) = load_metric(&dir.join(file), (n, cs))?;
        metric.time = s["t"].as_f64().ok_or_else(|| bad("snapshot without t"))?;
        let bundle = curvature_closed_form(&metric, config.flow.accuracy, DerivativeDepth::None)?;
        snapshots.push(Snapshot { metric, bundle });
    }
    let trajectory = FlowTrajectory {
        config: config.flow.clone(),
        snapshots,
        records: records.clone(),
        termination,
        steps: tj["steps"].as_u64().unwrap_or(0) as usize,
        rejected_steps: tj["rejected_steps"].as_u64().unwrap_or(0) as usize,
    };
    Ok(StoredRun {
        config,
        records,
        trajectory,
        recipe,
    })
}

/// Re-derives the summary from a stored run and writes `reports/report.json`.
pub fn report(dir: &Path) -> Result<Summary> {
    let stored = load_run(dir)?;
    let metrics: Vec<WarpedMetric<f64>> = stored.trajectory.snapshots.iter().map(|s| s.metric.clone()).collect();
    let summary = summarize(&stored.config, &stored.records, &metrics, stored.trajectory.termination)?;
    write_file(&dir.join("reports/report.json"), to_json(&summary))?;
    Ok(summary)
}

/// Runs the verification suites on a metric file or a run directory and
/// writes `verify.json` next to the results.
pub fn verify(cfg: &RunConfig, target: &Path) -> Result<Value> {
    if target.is_dir() {
        let stored = load_run(target)?;
        let traj = &stored.trajectory;
        let window = stored.config.space_window();
        let mut out = serde_json::Map::new();
        out.insert("target".into(), json!("trajectory"));
        match defining_function_checks(traj, window) {
            Ok(df) => {
                out.insert(
                    "defining_function".into(),
                    json!({
                        "delta": df.delta,
                        "c_laplacian": df.c_laplacian,
                        "c_gradient": df.c_gradient,
                        "laplacian_slope": df.laplacian_slope,
                        "laplacian": write_residual(target, &df.laplacian)?,
                        "gradient": write_residual(target, &df.gradient)?,
                    }),
                );
            }
            Err(e) => {
                out.insert("defining_function".into(), json!({ "error": e.to_string() }));
            }
        }
        let evo = if traj.config.mode == FlowMode::Nrf {
            match evolution_residuals(traj, window) {
                Ok(reps) => Value::Array(reps.iter().map(|r| write_residual(target, r)).collect::<Result<_>>()?),
                Err(e) => json!({ "error": e.to_string() }),
            }
        } else {
            json!({ "skipped": format!("evolution identities need a pure-NRF trajectory, mode is {}", traj.config.mode.name()) })
        };
        out.insert("evolution_residuals".into(), evo);
        let cb = match condition_b_report(traj.last()) {
            Ok(cb) => serde_json::to_value(cb).expect("json"),
            Err(e) => json!({ "error": e.to_string() }),
        };
        out.insert("condition_b".into(), cb);
        let v = Value::Object(out);
        write_file(&target.join("reports/verify.json"), to_json(&v))?;
        Ok(v)
    } else {
        let (m, manifest) = load_metric(target, (cfg.n, cfg.cross_section))?;
        let validation = validate_initial(&m, cfg.diagnostics.gamma, cfg.diagnostics.epsilon, &ValidationOptions::default())?;
        let cb = condition_b_report(&m)?;
        let bundle = curvature_closed_form(&m, cfg.flow.accuracy, DerivativeDepth::None)?;
        let v = json!({
            "target": "metric",
            "file": target.display().to_string(),
            "recipe": manifest.and_then(|mf| mf.recipe),
            "validate_initial": validation,
            "condition_b": cb,
            "sup_h": bundle.sup_h(),
        });
        let out = target.with_file_name("verify.json");
        write_file(&out, to_json(&v))?;
        Ok(v)
    }
}

/// One simulation per `(amplitude, γ)` pair, concurrently, each in its own
/// subdirectory of `cfg.output` with seed `cfg.seed + index`.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<Result<RunOutcome>>> {
    if !matches!(cfg.initial, InitialRecipe::Perturbed { .. } | InitialRecipe::Glued { .. }) {
        return Err(Error::Validation(vec![format!(
            "initial.recipe: sweep varies the amplitude, which needs perturbed or glued data, not {}",
            cfg.initial.name()
        )]));
    }
    let mut jobs = Vec::new();
    for &amp in &cfg.sweep.amplitudes {
        for &gamma in &cfg.sweep.gammas {
            let mut c = cfg.clone();
            match &mut c.initial {
                InitialRecipe::Perturbed { amplitude } | InitialRecipe::Glued { amplitude, .. } => *amplitude = amp,
                _ => unreachable!(),
            }
            c.diagnostics.gamma = gamma;
            c.flow.gamma = gamma;
            c.seed = cfg.seed + jobs.len() as u64;
            c.output = cfg.output.join(format!("amp{amp:e}_gamma{gamma}"));
            jobs.push(c);
        }
    }
    let outcomes: Vec<Result<RunOutcome>> = jobs.par_iter().map(simulate).collect();
    let index: Vec<Value> = jobs
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| {
            json!({
                "dir": c.output.display().to_string(),
                "seed": c.seed,
                "gamma": c.diagnostics.gamma,
                "status": match o {
                    Ok(r) => serde_json::to_value(r.summary.termination).expect("json"),
                    Err(e) => json!(e.to_string()),
                },
            })
        })
        .collect();
    write_file(&cfg.output.join("sweep.json"), to_json(&index))?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_rate() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let v: Vec<f64> = t.iter().map(|s| (-2.0 * s).exp()).collect();
        let fit = decay_fit_time(&t, &v, (0.0, 10.0));
        assert!((fit.rate.unwrap() - 2.0).abs() < 1e-6);
        assert!(fit.flag.is_none());
    }

    #[test]
    fn constant_series_is_non_decaying() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let fit = decay_fit_time(&t, &[0.3; 20], (0.0, 100.0));
        assert_eq!(fit.flag, Some(FitFlag::NonDecaying));
    }

    #[test]
    fn noise_level_series_is_refused() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let v: Vec<f64> = t.iter().map(|s| 1e-14 * (1.0 + 0.1 * s.sin())).collect();
        assert_eq!(decay_fit_time(&t, &v, (0.0, 100.0)).flag, Some(FitFlag::BelowNoiseFloor));
        assert_eq!(decay_fit_space(&t[1..], &v[1..], (0.5, 100.0)).flag, Some(FitFlag::BelowNoiseFloor));
    }

    #[test]
    fn exact_power_law_in_space() {
        let x: Vec<f64> = (1..=64).map(|i| i as f64 / 64.0).collect();
        let f: Vec<f64> = x.iter().map(|v| v.powi(4)).collect();
        assert!((decay_fit_space(&x, &f, (0.01, 1.0)).exponent.unwrap() - 4.0).abs() < 1e-12);
        let alt: Vec<f64> = x.iter().map(|v| (10.0 * v).sin()).collect();
        assert_eq!(decay_fit_space(&x, &alt, (0.01, 1.0)).flag, Some(FitFlag::SignChange));
    }
}
