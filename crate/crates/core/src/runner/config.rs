//! Flat `key = value` run configuration with dotted keys.
//!
//! ```text
//! # comment
//! n = 5
//! grid.N = 512
//! initial.recipe = glued
//! flow.mode = nrf-deturck
//! diagnostics.gamma = 2.5
//! ```
//!
//! Every key has a default; [`RunConfig::to_text`] echoes the complete
//! parsed configuration in the same format.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowMode, InnerBoundary, StepPolicy};
use crate::geometry::CrossSection;
use crate::grid::Accuracy;
use crate::initial_data::{gamma_window, Remainder};

pub const MIN_DIMENSION: usize = 4;
pub const MAX_DIMENSION: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub n: usize,
    pub x_max: f64,
    pub stretch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "recipe")]
pub enum InitialRecipe {
    Hyperbolic,
    /// Hyperbolic space with a seeded smooth perturbation of size `amplitude`.
    Perturbed { amplitude: f64 },
    /// Order-`k` expansion of the boundary metric `(1 + amplitude) σ` glued
    /// onto hyperbolic space between `ν₁` and `2ν₁`.
    Glued { k: usize, nu1: f64, amplitude: f64, remainder: Remainder },
    File { path: PathBuf },
}

impl InitialRecipe {
    pub fn name(&self) -> &'static str {
        match self {
            InitialRecipe::Hyperbolic => "hyperbolic",
            InitialRecipe::Perturbed { .. } => "perturbed",
            InitialRecipe::Glued { .. } => "glued",
            InitialRecipe::File { .. } => "file",
        }
    }
}

/// DeTurck background for the gauged flow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    #[default]
    Initial,
    /// The exact Einstein metric with the initial data's conformal infinity.
    Einstein,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSettings {
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    /// Records before this time are the initial transient.
    pub transient: f64,
    /// Radius window for the spatial fits; derived from the recipe when absent.
    pub space_window: Option<(f64, f64)>,
    pub convergence_study: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub amplitudes: Vec<f64>,
    pub gammas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub cross_section: CrossSection,
    pub grid: GridSettings,
    pub initial: InitialRecipe,
    pub flow: FlowConfig,
    pub background: Background,
    pub diagnostics: DiagnosticsSettings,
    pub output: PathBuf,
    pub seed: u64,
    pub sweep: SweepSettings,
    /// Accepted but noteworthy settings, e.g. `γ` outside the admissible window.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 5,
            cross_section: CrossSection::Sphere,
            grid: GridSettings {
                n: 256,
                x_max: 1.0,
                stretch: 1.0,
            },
            initial: InitialRecipe::Hyperbolic,
            flow: FlowConfig::default(),
            background: Background::Initial,
            diagnostics: DiagnosticsSettings {
                gamma: 2.5,
                alpha: 4.5,
                epsilon: 1.0,
                transient: 0.2,
                space_window: None,
                convergence_study: false,
            },
            output: PathBuf::from("run"),
            seed: 1,
            sweep: SweepSettings {
                amplitudes: vec![1e-3, 1e-2],
                gammas: vec![2.2, 2.5],
            },
            warnings: Vec::new(),
        }
    }
}

/// Keys in echo order.
const KEYS: &[&str] = &[
    "n",
    "cross_section",
    "seed",
    "output",
    "grid.N",
    "grid.x_max",
    "grid.stretch",
    "initial.recipe",
    "initial.k",
    "initial.nu1",
    "initial.amplitude",
    "initial.remainder",
    "initial.file",
    "flow.mode",
    "flow.T",
    "flow.dt",
    "flow.safety",
    "flow.accuracy",
    "flow.inner",
    "flow.background",
    "flow.record_every",
    "flow.snapshot_every",
    "flow.snapshot_times",
    "flow.converge_tol",
    "flow.blowup",
    "flow.max_steps",
    "diagnostics.gamma",
    "diagnostics.alpha",
    "diagnostics.epsilon",
    "diagnostics.probe",
    "diagnostics.transient",
    "diagnostics.space_window",
    "diagnostics.convergence_study",
    "sweep.amplitudes",
    "sweep.gammas",
];

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Radius window for spatial fits: inside the glue region for glued
    /// data, otherwise `[x_max/100, x_max/4]`.
    pub fn space_window(&self) -> (f64, f64) {
        if let Some(w) = self.diagnostics.space_window {
            return w;
        }
        match &self.initial {
            InitialRecipe::Glued { nu1, .. } => (0.05 * nu1, 0.75 * nu1),
            _ => (self.grid.x_max / 100.0, self.grid.x_max / 4.0),
        }
    }

    /// The complete configuration in the input format.
    pub fn to_text(&self) -> String {
        let (k, nu1, amp, rem, file) = match &self.initial {
            InitialRecipe::Glued { k, nu1, amplitude, remainder } => (*k, *nu1, *amplitude, *remainder, String::new()),
            InitialRecipe::Perturbed { amplitude } => (2, 0.2, *amplitude, Remainder::Truncated, String::new()),
            InitialRecipe::File { path } => (2, 0.2, 0.0, Remainder::Truncated, path.display().to_string()),
            InitialRecipe::Hyperbolic => (2, 0.2, 0.0, Remainder::Truncated, String::new()),
        };
        let f = &self.flow;
        let (dt, safety) = match f.dt {
            StepPolicy::Fixed(dt) => (format!("{dt:?}"), 0.5),
            StepPolicy::Cfl { safety } => ("cfl".to_string(), safety),
        };
        let d = &self.diagnostics;
        let values: Vec<String> = vec![
            self.n.to_string(),
            self.cross_section.name().into(),
            self.seed.to_string(),
            self.output.display().to_string(),
            self.grid.n.to_string(),
            format!("{:?}", self.grid.x_max),
            format!("{:?}", self.grid.stretch),
            self.initial.name().into(),
            k.to_string(),
            format!("{nu1:?}"),
            format!("{amp:?}"),
            rem.name().into(),
            file,
            f.mode.name().into(),
            format!("{:?}", f.t_final),
            dt,
            format!("{safety:?}"),
            f.accuracy.order().to_string(),
            match f.inner {
                InnerBoundary::Frozen => "frozen",
                InnerBoundary::Hyperbolic => "hyperbolic",
            }
            .into(),
            match self.background {
                Background::Initial => "initial",
                Background::Einstein => "einstein",
            }
            .into(),
            f.record_every.to_string(),
            f.snapshot_every.to_string(),
            list(&f.snapshot_times),
            f.converge_tol.map(|v| format!("{v:?}")).unwrap_or_else(|| "none".into()),
            format!("{:?}", f.blowup),
            f.max_steps.to_string(),
            format!("{:?}", d.gamma),
            format!("{:?}", d.alpha),
            format!("{:?}", d.epsilon),
            f.probe.to_string(),
            format!("{:?}", d.transient),
            d.space_window.map(|(a, b)| list(&[a, b])).unwrap_or_else(|| "auto".into()),
            d.convergence_study.to_string(),
            list(&self.sweep.amplitudes),
            list(&self.sweep.gammas),
        ];
        let mut out = String::new();
        for (key, v) in KEYS.iter().zip(values) {
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }
}

/// Raw `key → (value, line)` pairs.
fn tokenize(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    let mut problems = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            problems.push((line, format!("expected 'key = value', found '{body}'")));
            continue;
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            problems.push((line, "empty key".to_string()));
            continue;
        }
        if let Some((_, _, first)) = out.iter().find(|(k2, _, _)| *k2 == key) {
            problems.push((line, format!("duplicate key '{key}' (first set on line {first})")));
            continue;
        }
        out.push((key, v.trim().to_string(), line));
    }
    match problems.first() {
        None => Ok(out),
        Some(&(line, _)) => Err(Error::Parse {
            line,
            message: problems
                .iter()
                .map(|(l, m)| format!("line {l}: {m}"))
                .collect::<Vec<_>>()
                .join("; "),
        }),
    }
}

/// Collects typed values and every violation with its key path.
struct Reader {
    entries: Vec<(String, String, usize)>,
    errors: Vec<String>,
}

impl Reader {
    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, l)| (v.as_str(), *l))
    }

    fn get<V: std::str::FromStr>(&mut self, key: &str, default: V) -> V {
        match self.raw(key) {
            None => default,
            Some((v, line)) => match v.parse::<V>() {
                Ok(x) => x,
                Err(_) => {
                    self.errors.push(format!("{key} (line {line}): cannot parse '{v}'"));
                    default
                }
            },
        }
    }

    fn with<V>(&mut self, key: &str, default: V, parse: impl Fn(&str) -> Result<V>) -> V {
        match self.raw(key) {
            None => default,
            Some((v, line)) => match parse(v) {
                Ok(x) => x,
                Err(e) => {
                    self.errors.push(format!("{key} (line {line}): {e}"));
                    default
                }
            },
        }
    }

    fn floats(&mut self, key: &str, default: Vec<f64>) -> Vec<f64> {
        self.with(key, default, |v| {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::invalid(format!("'{}' is not a number", s.trim()))))
                .collect()
        })
    }

    fn check(&mut self, ok: bool, key: &str, msg: impl FnOnce() -> String) {
        if !ok {
            let line = self.raw(key).map(|(_, l)| format!(" (line {l})")).unwrap_or_default();
            self.errors.push(format!("{key}{line}: {}", msg()));
        }
    }
}

/// Parses and validates a configuration. Syntax problems are a
/// [`Error::Parse`]; every semantic problem is collected into one
/// [`Error::Validation`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let entries = tokenize(text)?;
    let mut r = Reader {
        entries,
        errors: Vec::new(),
    };
    let unknown: Vec<String> = r
        .entries
        .iter()
        .filter(|(k, _, _)| !KEYS.contains(&k.as_str()))
        .map(|(k, _, l)| format!("{k} (line {l}): unknown key"))
        .collect();
    r.errors.extend(unknown);

    let def = RunConfig::default();
    let mut cfg = RunConfig::default();
    cfg.n = r.get("n", def.n);
    cfg.cross_section = r.with("cross_section", def.cross_section, CrossSection::parse);
    cfg.seed = r.get("seed", def.seed);
    cfg.output = PathBuf::from(r.get("output", def.output.display().to_string()));
    cfg.grid = GridSettings {
        n: r.get("grid.N", def.grid.n),
        x_max: r.get("grid.x_max", def.grid.x_max),
        stretch: r.get("grid.stretch", def.grid.stretch),
    };

    let recipe: String = r.get("initial.recipe", "hyperbolic".to_string());
    let k: usize = r.get("initial.k", 2);
    let nu1: f64 = r.get("initial.nu1", 0.2);
    let amplitude: f64 = r.get("initial.amplitude", 0.0);
    let remainder = r.with("initial.remainder", Remainder::Truncated, Remainder::parse);
    let file: String = r.get("initial.file", String::new());
    cfg.initial = match recipe.as_str() {
        "hyperbolic" => InitialRecipe::Hyperbolic,
        "perturbed" => InitialRecipe::Perturbed { amplitude },
        "glued" => InitialRecipe::Glued { k, nu1, amplitude, remainder },
        "file" => {
            r.check(!file.is_empty(), "initial.file", || "required when initial.recipe = file".into());
            InitialRecipe::File { path: PathBuf::from(file) }
        }
        other => {
            r.check(false, "initial.recipe", || {
                format!("unknown recipe '{other}' (expected hyperbolic, perturbed, glued or file)")
            });
            InitialRecipe::Hyperbolic
        }
    };
    if let InitialRecipe::Glued { k, nu1, amplitude, .. } = &cfg.initial {
        r.check(*k == 0 || *k == 2, "initial.k", || format!("{k} must be 0 or 2"));
        r.check(*k + 3 <= cfg.n, "initial.k", || format!("{k} exceeds n − 3"));
        r.check(*nu1 > 0.0 && 2.0 * nu1 <= cfg.grid.x_max / 2.0, "initial.nu1", || {
            format!("{nu1} must lie in (0, x_max/4]")
        });
        r.check(*amplitude > -1.0, "initial.amplitude", || format!("{amplitude} must exceed −1"));
    }

    let f = &mut cfg.flow;
    f.mode = r.with("flow.mode", def.flow.mode, FlowMode::parse);
    f.t_final = r.get("flow.T", def.flow.t_final);
    let safety: f64 = r.get("flow.safety", 0.5);
    f.dt = r.with("flow.dt", StepPolicy::Cfl { safety }, |v| {
        if v == "cfl" {
            Ok(StepPolicy::Cfl { safety })
        } else {
            v.parse::<f64>()
                .map(StepPolicy::Fixed)
                .map_err(|_| Error::invalid(format!("'{v}' is neither 'cfl' nor a step size")))
        }
    });
    f.accuracy = r.with("flow.accuracy", def.flow.accuracy, |v| {
        Accuracy::from_order(v.parse().map_err(|_| Error::invalid(format!("'{v}' is not an order")))?)
    });
    f.inner = r.with("flow.inner", def.flow.inner, |v| match v {
        "frozen" => Ok(InnerBoundary::Frozen),
        "hyperbolic" => Ok(InnerBoundary::Hyperbolic),
        other => Err(Error::invalid(format!("unknown inner boundary '{other}' (expected frozen or hyperbolic)"))),
    });
    cfg.background = r.with("flow.background", def.background, |v| match v {
        "initial" => Ok(Background::Initial),
        "einstein" => Ok(Background::Einstein),
        other => Err(Error::invalid(format!("unknown background '{other}' (expected initial or einstein)"))),
    });
    f.record_every = r.get("flow.record_every", def.flow.record_every);
    f.snapshot_every = r.get("flow.snapshot_every", def.flow.snapshot_every);
    f.snapshot_times = r.floats("flow.snapshot_times", Vec::new());
    f.converge_tol = r.with("flow.converge_tol", None, |v| {
        if v == "none" {
            Ok(None)
        } else {
            v.parse::<f64>().map(Some).map_err(|_| Error::invalid(format!("'{v}' is not a number")))
        }
    });
    f.blowup = r.get("flow.blowup", def.flow.blowup);
    f.max_steps = r.get("flow.max_steps", def.flow.max_steps);
    f.gamma = r.get("diagnostics.gamma", def.diagnostics.gamma);
    f.probe = r.get("diagnostics.probe", def.flow.probe);
    if let Err(Error::Validation(v)) = f.validate() {
        r.errors.extend(v);
    }

    let d = &mut cfg.diagnostics;
    d.gamma = cfg.flow.gamma;
    d.alpha = r.get("diagnostics.alpha", def.diagnostics.alpha);
    d.epsilon = r.get("diagnostics.epsilon", def.diagnostics.epsilon);
    d.transient = r.get("diagnostics.transient", def.diagnostics.transient);
    d.convergence_study = r.get("diagnostics.convergence_study", false);
    d.space_window = r.with("diagnostics.space_window", None, |v| {
        if v == "auto" {
            return Ok(None);
        }
        let p: Vec<f64> = v.split(',').filter_map(|s| s.trim().parse().ok()).collect();
        match p[..] {
            [a, b] if a > 0.0 && b > a => Ok(Some((a, b))),
            _ => Err(Error::invalid(format!("'{v}' is not 'lo, hi' with 0 < lo < hi"))),
        }
    });
    cfg.sweep.amplitudes = r.floats("sweep.amplitudes", def.sweep.amplitudes.clone());
    cfg.sweep.gammas = r.floats("sweep.gammas", def.sweep.gammas.clone());

    let n = cfg.n;
    r.check((MIN_DIMENSION..=MAX_DIMENSION).contains(&n), "n", || {
        format!("{n} outside the supported range [{MIN_DIMENSION}, {MAX_DIMENSION}]")
    });
    let g = &cfg.grid;
    r.check(g.n >= 16, "grid.N", || format!("{} must be at least 16", g.n));
    r.check(g.x_max > 0.0 && g.x_max <= 1.9, "grid.x_max", || format!("{} must lie in (0, 1.9]", g.x_max));
    r.check((1.0..=20.0).contains(&g.stretch), "grid.stretch", || format!("{} must lie in [1, 20]", g.stretch));
    let gamma = cfg.diagnostics.gamma;
    r.check(gamma > 0.0, "diagnostics.gamma", || format!("{gamma} must be positive"));
    r.check(cfg.diagnostics.alpha > 0.0, "diagnostics.alpha", || "must be positive".into());
    r.check(cfg.diagnostics.transient >= 0.0, "diagnostics.transient", || "must be non-negative".into());
    if !r.errors.is_empty() {
        return Err(Error::Validation(r.errors));
    }

    let half = (n as f64 - 1.0) / 2.0;
    let window = gamma_window(n, half * half);
    if !(gamma > window.0 && gamma < window.1) {
        cfg.warnings.push(format!(
            "diagnostics.gamma = {gamma} lies outside the admissible window ({:.4}, {:.4}) for n = {n}",
            window.0, window.1
        ));
    }
    if cfg.diagnostics.convergence_study && n < 5 {
        cfg.warnings.push(format!("convergence study declared with n = {n}; the convergence theory needs n ≥ 5"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("n = 5\ninitial.recipe = hyperbolic\nflow.T = 1\n").unwrap();
        assert_eq!(cfg.n, 5);
        assert_eq!(cfg.initial, InitialRecipe::Hyperbolic);
        assert_eq!(cfg.flow.t_final, 1.0);
        assert_eq!(cfg.grid.n, 256);
        assert!(cfg.warnings.is_empty(), "{:?}", cfg.warnings);
    }

    #[test]
    fn dimension_outside_range_cites_it() {
        match parse_config("n = 3\n") {
            Err(Error::Validation(v)) => assert!(v.iter().any(|m| m.contains("n (line 1)") && m.contains("[4, 8]")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_outside_window_warns() {
        let cfg = parse_config("n = 5\ndiagnostics.gamma = 3.5\n").unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        assert!(cfg.warnings[0].contains("3.4142"), "{:?}", cfg.warnings);
        assert!(parse_config("n = 5\ndiagnostics.gamma = 3.4\n").unwrap().warnings.is_empty());
    }

    #[test]
    fn every_violation_is_reported() {
        let text = "n = 9\ngrid.N = 4\nflow.mode = fast\nbogus.key = 1\nflow.T = -1\n";
        match parse_config(text) {
            Err(Error::Validation(v)) => {
                for key in ["n (line 1)", "grid.N (line 2)", "flow.mode (line 3)", "bogus.key (line 4)", "flow.T"] {
                    assert!(v.iter().any(|m| m.starts_with(key)), "{key} missing from {v:?}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        match parse_config("n = 5\n\nthis line is broken\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_config("n = 5\nn = 6\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("line 1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn echo_round_trips() {
        let text = "n = 6\ninitial.recipe = glued\ninitial.k = 2\ninitial.amplitude = 0.01\nflow.converge_tol = 1e-4\n\
                    flow.snapshot_times = 0.1, 0.2\nflow.background = einstein\ndiagnostics.space_window = 0.01, 0.15\n";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_text(), cfg.to_text());
    }
}
