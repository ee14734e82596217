//! Method-of-lines integration of the normalized Ricci flow on the barred
//! coefficients of `g = x⁻² (A dx² + B σ)`.
//!
//! With frame eigenvalues `(h_rad, h_tan)` of `h = Ric + (n−1) g`,
//!
//! ```text
//! ∂_t A = −2 A h_rad,   ∂_t B = −2 B h_tan          (NRF)
//! ∂_t A = −2 A Ric_rad, ∂_t B = −2 B Ric_tan        (RF)
//! ```
//!
//! The DeTurck variant adds `L_W g` with `W^x = g^{ij}(Γ^x_{ij} − Γ̃^x_{ij})`:
//!
//! ```text
//! ∂_t A += W (A_x − 2A/x) + 2 A W_x,   ∂_t B += W (B_x − 2B/x)
//! ```
//!
//! which supplies the `x² A_xx / A` term the radial equation lacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{curvature_closed_form, sectional_at, CurvatureBundle, DerivativeDepth, RadialData, WarpedMetric};
use crate::grid::{cumulative_integral, lagrange_eval, Accuracy};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    Nrf,
    Rf,
    NrfDeturck,
}

impl FlowMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nrf" => Ok(FlowMode::Nrf),
            "rf" => Ok(FlowMode::Rf),
            "nrf-deturck" => Ok(FlowMode::NrfDeturck),
            other => Err(Error::invalid(format!(
                "unknown flow mode '{other}' (expected nrf, rf or nrf-deturck)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowMode::Nrf => "nrf",
            FlowMode::Rf => "rf",
            FlowMode::NrfDeturck => "nrf-deturck",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    Fixed(f64),
    Cfl { safety: f64 },
}

/// Data imposed at `x = x_max`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerBoundary {
    #[default]
    Frozen,
    Hyperbolic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub mode: FlowMode,
    pub t_final: f64,
    pub dt: StepPolicy,
    pub inner: InnerBoundary,
    pub accuracy: Accuracy,
    /// Snapshot every this many steps (0: only explicit times and the ends).
    pub snapshot_every: usize,
    /// Times the integrator lands on exactly and snapshots.
    pub snapshot_times: Vec<f64>,
    /// Diagnostics record every this many steps.
    pub record_every: usize,
    /// Stop once `sup ‖h‖` falls below this.
    pub converge_tol: Option<f64>,
    /// `sup ‖h‖` beyond this counts as blow-up.
    pub blowup: f64,
    pub max_steps: usize,
    /// Decay order used by the weighted monitor.
    pub gamma: f64,
    /// Number of smallest radii probed for conformal drift.
    pub probe: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            mode: FlowMode::NrfDeturck,
            t_final: 1.0,
            dt: StepPolicy::Cfl { safety: 0.5 },
            inner: InnerBoundary::Frozen,
            accuracy: Accuracy::Fourth,
            snapshot_every: 0,
            snapshot_times: Vec::new(),
            record_every: 100,
            converge_tol: None,
            blowup: 1e3,
            max_steps: 50_000_000,
            gamma: 2.5,
            probe: 5,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            errs.push(format!("flow.T = {} must be positive", self.t_final));
        }
        match self.dt {
            StepPolicy::Fixed(dt) if !(dt > 0.0) => errs.push(format!("flow.dt = {dt} must be positive")),
            StepPolicy::Cfl { safety } if !(safety > 0.0 && safety <= 1.0) => {
                errs.push(format!("flow.safety = {safety} outside (0, 1]"))
            }
            _ => {}
        }
        if self.record_every == 0 {
            errs.push("flow.record_every must be at least 1".into());
        }
        if self.probe == 0 {
            errs.push("diagnostics.probe must be at least 1".into());
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0)) {
            errs.push("flow.snapshot_times must be non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// One time slice of monitored quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub sup_h: f64,
    pub int_h2: f64,
    /// `sup_x x^{−γ} ‖h‖`.
    pub weighted_sup: f64,
    /// `sup_{x ≤ probe} ‖x² g(t) − x² g(0)‖_{ḡ(0)}`.
    pub drift: f64,
    pub sup_grad_rm: f64,
    /// `√t sup ‖∇²Rm‖`.
    pub shi_second: f64,
    pub min_sectional: f64,
    pub max_sectional: f64,
    pub dt: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 10] = [
        "t",
        "sup_h",
        "int_h2",
        "weighted_sup",
        "drift",
        "sup_grad_rm",
        "shi_second",
        "min_sectional",
        "max_sectional",
        "dt",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.t,
            self.sup_h,
            self.int_h2,
            self.weighted_sup,
            self.drift,
            self.sup_grad_rm,
            self.shi_second,
            self.min_sectional,
            self.max_sectional,
            self.dt,
        ]
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 10 {
            return Err(Error::invalid(format!("diagnostics row has {} columns, expected 10", v.len())));
        }
        Ok(Self {
            t: v[0],
            sup_h: v[1],
            int_h2: v[2],
            weighted_sup: v[3],
            drift: v[4],
            sup_grad_rm: v[5],
            shi_second: v[6],
            min_sectional: v[7],
            max_sectional: v[8],
            dt: v[9],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ReachedT,
    Converged,
    BlowUp,
    Instability,
}

#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    pub metric: WarpedMetric<T>,
    pub bundle: CurvatureBundle<T>,
}

impl<T: Real> Snapshot<T> {
    pub fn t(&self) -> f64 {
        self.metric.time.as_f64()
    }
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory<T> {
    pub config: FlowConfig,
    pub snapshots: Vec<Snapshot<T>>,
    pub records: Vec<DiagnosticsRecord>,
    pub termination: Termination,
    pub steps: usize,
    pub rejected_steps: usize,
}

impl<T: Real> FlowTrajectory<T> {
    pub fn initial(&self) -> &WarpedMetric<T> {
        &self.snapshots[0].metric
    }

    pub fn last(&self) -> &WarpedMetric<T> {
        &self.snapshots[self.snapshots.len() - 1].metric
    }

    /// `(A, B)` at time `t`: an exact snapshot when one lands within
    /// `1e-12`, otherwise cubic interpolation across the four nearest
    /// snapshots whose span must not exceed `max_gap`.
    pub fn state_at(&self, t: f64, max_gap: f64) -> Result<(Vec<T>, Vec<T>)> {
        if let Some(s) = self.snapshots.iter().find(|s| (s.t() - t).abs() < 1e-12) {
            return Ok((s.metric.a.values().to_vec(), s.metric.b.values().to_vec()));
        }
        if self.snapshots.len() < 4 {
            return Err(Error::InsufficientSnapshots(format!(
                "{} snapshots cannot be interpolated to t = {t}",
                self.snapshots.len()
            )));
        }
        let times: Vec<f64> = self.snapshots.iter().map(|s| s.t()).collect();
        if t < times[0] || t > times[times.len() - 1] {
            return Err(Error::InsufficientSnapshots(format!("t = {t} outside the trajectory")));
        }
        let k = times.partition_point(|&s| s < t);
        let lo = k.saturating_sub(2).min(times.len() - 4);
        let span = times[lo + 3] - times[lo];
        if span > max_gap {
            return Err(Error::InsufficientSnapshots(format!(
                "snapshot span {span:e} around t = {t} exceeds {max_gap:e}"
            )));
        }
        let nodes: Vec<T> = times[lo..lo + 4].iter().map(|v| T::lit(*v)).collect();
        let len = self.snapshots[0].metric.len();
        let mut a = Vec::with_capacity(len);
        let mut b = Vec::with_capacity(len);
        for i in 0..len {
            let av: Vec<T> = self.snapshots[lo..lo + 4].iter().map(|s| s.metric.a.values()[i]).collect();
            let bv: Vec<T> = self.snapshots[lo..lo + 4].iter().map(|s| s.metric.b.values()[i]).collect();
            a.push(lagrange_eval(&nodes, &av, T::lit(t)));
            b.push(lagrange_eval(&nodes, &bv, T::lit(t)));
        }
        Ok((a, b))
    }

    pub fn sup_h_history(&self) -> (Vec<f64>, Vec<f64>) {
        self.records.iter().map(|r| (r.t, r.sup_h)).unzip()
    }
}

/// DeTurck vector field and the induced right-hand-side corrections.
#[derive(Clone, Debug)]
pub struct DeturckTerm<T> {
    pub w: Vec<T>,
    pub da: Vec<T>,
    pub db: Vec<T>,
}

/// `W^x = g^{ij}(Γ^x_{ij}[g] − Γ^x_{ij}[g̃])` and `L_W g` in barred form.
pub fn deturck_correction<T: Real>(state: &WarpedMetric<T>, background: &WarpedMetric<T>, accuracy: Accuracy) -> Result<DeturckTerm<T>> {
    let grid = state.grid();
    let d2 = grid.operator(2, accuracy)?;
    let rd = state.radial_data(accuracy)?;
    let axx = d2.apply(&rd.a);
    let bg = BackgroundTerms::new(state.x(), &background.radial_data(accuracy)?, d2);
    Ok(deturck_from(state.x(), state.m(), &rd, &axx, &bg))
}

/// The background enters `W` only through `G = Ã_x/(2Ã)` and
/// `F = (B̃_x − 2B̃/x)/Ã`; these and their derivatives are fixed.
struct BackgroundTerms<T> {
    g: Vec<T>,
    gx: Vec<T>,
    f: Vec<T>,
    fx: Vec<T>,
}

impl<T: Real> BackgroundTerms<T> {
    // Derivatives taken analytically: `F` carries `1/x`, which the stencils
    // resolve poorly next to `x_0`.
    fn new(x: &[T], bg: &RadialData<T>, d2: &crate::grid::DiffOperator<T>) -> Self {
        let two = T::lit(2.0);
        let axx = d2.apply(&bg.a);
        let len = x.len();
        let (mut g, mut gx, mut f, mut fx) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        for i in 0..len {
            let (a, ax, b, bx, bxx, xi) = (bg.a[i], bg.ax[i], bg.b[i], bg.bx[i], bg.bxx[i], x[i]);
            let fi = (bx - two * b / xi) / a;
            g.push(ax / (two * a));
            gx.push(axx[i] / (two * a) - ax * ax / (two * a * a));
            f.push(fi);
            fx.push((bxx - two * bx / xi + two * b / (xi * xi)) / a - fi * ax / a);
        }
        Self { g, gx, f, fx }
    }
}

// W = u Y + (m/2) v F with u = x²/A, v = x²/B and
// Y = A_x/(2A) − G − (m/2)(B_x/B − 2/x). W_x is expanded by hand so that the
// second derivatives come from the compact operator: a centered first
// derivative applied twice does not see the sawtooth mode.
fn deturck_from<T: Real>(x: &[T], m: usize, rd: &RadialData<T>, axx: &[T], bg: &BackgroundTerms<T>) -> DeturckTerm<T> {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let hm = half * T::count(m);
    let len = x.len();
    let mut w = Vec::with_capacity(len);
    let mut da = Vec::with_capacity(len);
    let mut db = Vec::with_capacity(len);
    for i in 0..len {
        let xi = x[i];
        let x2 = xi * xi;
        let (a, ax, b, bx, bxx) = (rd.a[i], rd.ax[i], rd.b[i], rd.bx[i], rd.bxx[i]);
        let u = x2 / a;
        let ux = two * xi / a - x2 * ax / (a * a);
        let v = x2 / b;
        let vx = two * xi / b - x2 * bx / (b * b);
        let y = half * ax / a - bg.g[i] - hm * (bx / b - two / xi);
        let yx = half * axx[i] / a - half * ax * ax / (a * a) - bg.gx[i] - hm * (bxx / b - bx * bx / (b * b) + two / x2);
        let wi = u * y + hm * v * bg.f[i];
        let wx = ux * y + u * yx + hm * (vx * bg.f[i] + v * bg.fx[i]);
        w.push(wi);
        da.push(wi * (ax - two * a / xi) + two * a * wx);
        db.push(wi * (bx - two * b / xi));
    }
    DeturckTerm { w, da, db }
}

/// Largest explicit step: `safety · min Δx² A / (2 x² k)` with the stencil
/// constant `k` (1 for second order, 4/3 for fourth).
pub fn cfl_limit<T: Real>(state: &WarpedMetric<T>, accuracy: Accuracy, safety: f64) -> f64 {
    let k = match accuracy {
        Accuracy::Second => 1.0,
        Accuracy::Fourth => 4.0 / 3.0,
    };
    let g = state.grid();
    (0..state.len())
        .map(|i| {
            let dx = g.local_spacing(i).as_f64();
            let x = g.points()[i].as_f64();
            dx * dx * state.a.values()[i].as_f64() / (2.0 * x * x * k)
        })
        .fold(f64::INFINITY, f64::min)
        * safety
}

/// The flow operator bound to a reference state: DeTurck background and
/// boundary data are taken from it.
pub struct Flow<T: Real> {
    config: FlowConfig,
    reference: WarpedMetric<T>,
    background: Option<BackgroundTerms<T>>,
    /// Reference values at the two Dirichlet rows, `(A, B)` at `x_0` and `x_max`.
    ends: [(T, T); 2],
}

impl<T: Real> Flow<T> {
    pub fn new(reference: &WarpedMetric<T>, config: &FlowConfig) -> Result<Self> {
        Self::build(reference, None, config)
    }

    /// Like [`Flow::new`], but the DeTurck term is taken against
    /// `background` instead of the reference state.
    pub fn with_background(reference: &WarpedMetric<T>, background: &WarpedMetric<T>, config: &FlowConfig) -> Result<Self> {
        if background.x() != reference.x() || background.n != reference.n || background.cross_section != reference.cross_section {
            return Err(Error::invalid("DeTurck background must share grid, dimension and cross-section with the state"));
        }
        if config.mode != FlowMode::NrfDeturck {
            return Err(Error::ModeMismatch(format!("a background needs mode nrf-deturck, got {}", config.mode.name())));
        }
        Self::build(reference, Some(background), config)
    }

    fn build(reference: &WarpedMetric<T>, background: Option<&WarpedMetric<T>>, config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut reference = reference.clone();
        let last = reference.len() - 1;
        if config.inner == InnerBoundary::Hyperbolic {
            let x = reference.x()[last];
            let mut a = reference.a.values().to_vec();
            let mut b = reference.b.values().to_vec();
            a[last] = T::one();
            b[last] = reference.cross_section.einstein_warping(x);
            let t = reference.time;
            reference = reference.with_values(a, b)?;
            reference.time = t;
        }
        let background = match config.mode {
            FlowMode::NrfDeturck => {
                let bg = background.unwrap_or(&reference).radial_data(config.accuracy)?;
                Some(BackgroundTerms::new(reference.x(), &bg, reference.grid().operator(2, config.accuracy)?))
            }
            _ => None,
        };
        let (a, b) = (reference.a.values(), reference.b.values());
        let ends = [(a[0], b[0]), (a[last], b[last])];
        Ok(Self {
            config: config.clone(),
            reference,
            background,
            ends,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn reference(&self) -> &WarpedMetric<T> {
        &self.reference
    }

    /// `(∂_t A, ∂_t B)` at the given coefficients.
    pub fn rhs(&self, a: &[T], b: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let grid = self.reference.grid();
        let acc = self.config.accuracy;
        let d1 = grid.operator(1, acc)?;
        let d2 = grid.operator(2, acc)?;
        let rd = RadialData {
            a: a.to_vec(),
            ax: d1.apply(a),
            b: b.to_vec(),
            bx: d1.apply(b),
            bxx: d2.apply(b),
        };
        let x = grid.points();
        let kappa = self.reference.kappa();
        let m = self.reference.m();
        let mf = T::count(m);
        let off = if self.config.mode == FlowMode::Rf {
            T::zero()
        } else {
            T::count(m)
        };
        let two = T::lit(2.0);
        let len = x.len();
        let mut da = Vec::with_capacity(len);
        let mut db = Vec::with_capacity(len);
        for i in 0..len {
            let s = sectional_at(x[i], kappa, &rd, i);
            let er = mf * s.k_rad + off;
            let et = s.k_rad + (mf - T::one()) * s.k_tan + off;
            da.push(-two * a[i] * er);
            db.push(-two * b[i] * et);
        }
        if let Some(bg) = &self.background {
            let corr = deturck_from(x, m, &rd, &d2.apply(a), bg);
            for i in 0..len {
                da[i] += corr.da[i];
                db[i] += corr.db[i];
            }
        }
        // Dirichlet rows: frozen, or the exact scaling of RF
        let rate = if self.config.mode == FlowMode::Rf {
            T::count(2 * m)
        } else {
            T::zero()
        };
        for (row, (ea, eb)) in [0, len - 1].into_iter().zip(self.ends) {
            da[row] = rate * ea;
            db[row] = rate * eb;
        }
        Ok((da, db))
    }

    /// One classical Runge–Kutta step. Nonpositive stages reject the step.
    pub fn step(&self, state: &WarpedMetric<T>, dt: T) -> Result<WarpedMetric<T>> {
        let t = state.time;
        if dt == T::zero() {
            return Ok(state.clone());
        }
        let a0 = state.a.values();
        let b0 = state.b.values();
        let len = a0.len();
        let check = |a: &[T], b: &[T]| -> Result<()> {
            for (va, vb) in a.iter().zip(b) {
                if !va.is_finite() || !vb.is_finite() {
                    return Err(Error::NanDetected { t: t.as_f64() });
                }
                if !(*va > T::zero() && *vb > T::zero()) {
                    return Err(Error::StepRejected {
                        t: t.as_f64(),
                        reason: "metric coefficient lost positivity".into(),
                    });
                }
            }
            Ok(())
        };
        let axpy = |base: &[T], k: &[T], s: T| -> Vec<T> { base.iter().zip(k).map(|(u, v)| *u + s * *v).collect() };
        let half = dt / T::lit(2.0);
        let (ka1, kb1) = self.rhs(a0, b0)?;
        let (a1, b1) = (axpy(a0, &ka1, half), axpy(b0, &kb1, half));
        check(&a1, &b1)?;
        let (ka2, kb2) = self.rhs(&a1, &b1)?;
        let (a2, b2) = (axpy(a0, &ka2, half), axpy(b0, &kb2, half));
        check(&a2, &b2)?;
        let (ka3, kb3) = self.rhs(&a2, &b2)?;
        let (a3, b3) = (axpy(a0, &ka3, dt), axpy(b0, &kb3, dt));
        check(&a3, &b3)?;
        let (ka4, kb4) = self.rhs(&a3, &b3)?;
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        let mut a = Vec::with_capacity(len);
        let mut b = Vec::with_capacity(len);
        for i in 0..len {
            a.push(a0[i] + sixth * (ka1[i] + two * ka2[i] + two * ka3[i] + ka4[i]));
            b.push(b0[i] + sixth * (kb1[i] + two * kb2[i] + two * kb3[i] + kb4[i]));
        }
        check(&a, &b)?;
        let mut out = state.with_values(a, b)?;
        out.time = t + dt;
        Ok(out)
    }

    /// Monitored quantities of one state.
    pub fn record(&self, state: &WarpedMetric<T>, bundle: &CurvatureBundle<T>, dt: f64) -> DiagnosticsRecord {
        diagnostics_record(state, &self.reference, bundle, self.config.gamma, self.config.probe, dt)
    }
}

/// Cross-section volume used by `∫ dv`: the unit sphere's area, otherwise
/// one unit of `σ`-volume.
fn cross_section_volume(m: &WarpedMetric<impl Real>) -> f64 {
    use crate::geometry::CrossSection;
    match m.cross_section {
        CrossSection::Sphere => {
            // area of the unit (n−1)-sphere, 2 π^{n/2} / Γ(n/2)
            let k = m.n as f64;
            let mut gamma = if m.n % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
            let mut z = if m.n % 2 == 0 { 1.0 } else { 0.5 };
            while z < k / 2.0 - 1e-9 {
                gamma *= z;
                z += 1.0;
            }
            2.0 * std::f64::consts::PI.powf(k / 2.0) / gamma
        }
        _ => 1.0,
    }
}

/// Diagnostics of `state` relative to the initial metric `initial`.
pub fn diagnostics_record<T: Real>(
    state: &WarpedMetric<T>,
    initial: &WarpedMetric<T>,
    bundle: &CurvatureBundle<T>,
    gamma: f64,
    probe: usize,
    dt: f64,
) -> DiagnosticsRecord {
    let x = state.x();
    let h = bundle.h_norm.values();
    let m = state.m();
    let sup = |v: &[T]| v.iter().fold(0.0f64, |acc, s| acc.max(s.as_f64().abs()));
    let dens: Vec<T> = (0..x.len())
        .map(|i| {
            let (a, b) = (state.a.values()[i], state.b.values()[i]);
            h[i] * h[i] * x[i].powi(-(state.n as i32)) * (a * b.powi(m as i32)).sqrt()
        })
        .collect();
    let int_h2 = cumulative_integral(state.grid(), &dens)
        .last()
        .map(|v| v.as_f64())
        .unwrap_or(0.0)
        * cross_section_volume(state);
    let weighted_sup = x
        .iter()
        .zip(h)
        .fold(0.0f64, |acc, (xi, hi)| acc.max(hi.as_f64() * xi.as_f64().powf(-gamma)));
    let drift_field = conformal_drift(state, initial);
    let drift = drift_field[..probe.min(drift_field.len())]
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v));
    let t = state.time.as_f64();
    let (kmin, kmax) = bundle.sectional_range();
    DiagnosticsRecord {
        t,
        sup_h: sup(h),
        int_h2,
        weighted_sup,
        drift,
        sup_grad_rm: bundle.drm_norm.as_ref().map(|f| sup(f.values())).unwrap_or(f64::NAN),
        shi_second: bundle
            .ddrm_norm
            .as_ref()
            .map(|f| t.sqrt() * sup(f.values()))
            .unwrap_or(f64::NAN),
        min_sectional: kmin.as_f64(),
        max_sectional: kmax.as_f64(),
        dt,
    }
}

/// Pointwise `‖x² g(t) − x² g(0)‖_{ḡ(0)} = √((δA/A₀)² + m (δB/B₀)²)`.
pub fn conformal_drift<T: Real>(state: &WarpedMetric<T>, initial: &WarpedMetric<T>) -> Vec<f64> {
    let mf = state.m() as f64;
    (0..state.len())
        .map(|i| {
            let a0 = initial.a.values()[i].as_f64();
            let b0 = initial.b.values()[i].as_f64();
            let da = (state.a.values()[i].as_f64() - a0) / a0;
            let db = (state.b.values()[i].as_f64() - b0) / b0;
            (da * da + mf * db * db).sqrt()
        })
        .collect()
}

/// A single step with `state` as its own reference.
pub fn step<T: Real>(state: &WarpedMetric<T>, dt: T, config: &FlowConfig) -> Result<WarpedMetric<T>> {
    Flow::new(state, config)?.step(state, dt)
}

const MAX_HALVINGS: usize = 12;

/// Integrates from `initial` to `config.t_final`, landing exactly on the
/// requested snapshot times.
pub fn run<T: Real>(initial: &WarpedMetric<T>, config: &FlowConfig) -> Result<FlowTrajectory<T>> {
    run_flow(Flow::new(initial, config)?)
}

/// [`run`] with the DeTurck term taken against a fixed `background`.
pub fn run_with_background<T: Real>(
    initial: &WarpedMetric<T>,
    background: &WarpedMetric<T>,
    config: &FlowConfig,
) -> Result<FlowTrajectory<T>> {
    run_flow(Flow::with_background(initial, background, config)?)
}

fn run_flow<T: Real>(flow: Flow<T>) -> Result<FlowTrajectory<T>> {
    let config = flow.config().clone();
    let config = &config;
    let acc = config.accuracy;
    let t_end = config.t_final;
    let mut targets: Vec<f64> = config
        .snapshot_times
        .iter()
        .copied()
        .filter(|t| *t > 0.0 && *t < t_end)
        .collect();
    targets.push(t_end);
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let mut state = flow.reference().clone();
    state.time = T::zero();
    let bundle0 = curvature_closed_form(&state, acc, DerivativeDepth::Second)?;
    let mut records = vec![flow.record(&state, &bundle0, 0.0)];
    let mut snapshots = vec![Snapshot {
        metric: state.clone(),
        bundle: bundle0,
    }];
    let mut termination = Termination::ReachedT;
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut next_target = 0usize;
    let mut last_dt = 0.0f64;

    'outer: while next_target < targets.len() {
        if steps >= config.max_steps {
            termination = Termination::Instability;
            break;
        }
        let t = state.time.as_f64();
        let mut dt = match config.dt {
            StepPolicy::Fixed(dt) => dt,
            StepPolicy::Cfl { safety } => cfl_limit(&state, acc, safety),
        };
        let target = targets[next_target];
        let mut landing = false;
        if t + dt >= target - 1e-12 * target.max(1.0) {
            dt = target - t;
            landing = true;
        }
        let mut attempt = 0;
        let next = loop {
            match flow.step(&state, T::lit(dt)) {
                Ok(s) => break s,
                Err(Error::StepRejected { .. }) if attempt < MAX_HALVINGS => {
                    rejected += 1;
                    attempt += 1;
                    dt /= 2.0;
                    landing = false;
                }
                Err(Error::StepRejected { .. }) => {
                    termination = Termination::Instability;
                    break 'outer;
                }
                Err(Error::NanDetected { .. }) => {
                    termination = Termination::BlowUp;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        };
        state = next;
        if landing {
            state.time = T::lit(target);
        }
        steps += 1;
        last_dt = dt;

        let snap_due = landing || (config.snapshot_every > 0 && steps % config.snapshot_every == 0);
        let record_due = snap_due || steps % config.record_every == 0;
        if record_due {
            let bundle = curvature_closed_form(&state, acc, DerivativeDepth::Second)?;
            let rec = flow.record(&state, &bundle, dt);
            let sup_h = rec.sup_h;
            records.push(rec);
            if snap_due {
                snapshots.push(Snapshot {
                    metric: state.clone(),
                    bundle,
                });
            }
            if !sup_h.is_finite() {
                termination = Termination::BlowUp;
                break;
            }
            if sup_h > config.blowup {
                termination = Termination::BlowUp;
                break;
            }
            if let Some(tol) = config.converge_tol {
                if sup_h < tol {
                    termination = Termination::Converged;
                    break;
                }
            }
        }
        if landing {
            next_target += 1;
        }
    }
    // make sure the final state is both recorded and snapshotted
    if snapshots.last().map(|s| s.metric.time) != Some(state.time) {
        if let Ok(bundle) = curvature_closed_form(&state, acc, DerivativeDepth::Second) {
            if records.last().map(|r| r.t) != Some(state.time.as_f64()) {
                records.push(flow.record(&state, &bundle, last_dt));
            }
            snapshots.push(Snapshot {
                metric: state.clone(),
                bundle,
            });
        }
    }
    Ok(FlowTrajectory {
        config: config.clone(),
        snapshots,
        records,
        termination,
        steps,
        rejected_steps: rejected,
    })
}

/// RF time corresponding to NRF time `t`: `s = (e^{2(n−1)t} − 1) / (2(n−1))`.
pub fn rf_time(n: usize, t: f64) -> f64 {
    let c = 2.0 * (n as f64 - 1.0);
    (c * t).exp_m1() / c
}

#[derive(Clone, Debug, Serialize)]
pub struct ReparamReport {
    pub probe_times: Vec<f64>,
    pub rf_times: Vec<f64>,
    /// `sup_x ‖g^N(t) − e^{−2(n−1)t} g^R(s(t))‖_{g^N(t)}` per probe time.
    pub differences: Vec<f64>,
    pub sup_difference: f64,
}

/// Runs NRF and RF from `initial` and compares them through the explicit
/// reparameterization at each probe time.
pub fn rf_nrf_reparam_check<T: Real>(
    initial: &WarpedMetric<T>,
    probe_times: &[f64],
    nrf: &FlowConfig,
    rf: &FlowConfig,
) -> Result<ReparamReport> {
    if nrf.mode != FlowMode::Nrf || rf.mode != FlowMode::Rf {
        return Err(Error::ModeMismatch("reparameterization check needs an nrf and an rf configuration".into()));
    }
    let n = initial.n;
    let t_max = probe_times.iter().copied().fold(0.0, f64::max);
    let rf_times: Vec<f64> = probe_times.iter().map(|t| rf_time(n, *t)).collect();
    let mut nc = nrf.clone();
    nc.t_final = t_max.max(f64::MIN_POSITIVE);
    nc.snapshot_times = probe_times.to_vec();
    nc.converge_tol = None;
    let mut rc = rf.clone();
    rc.t_final = rf_time(n, t_max).max(f64::MIN_POSITIVE);
    rc.snapshot_times = rf_times.clone();
    rc.converge_tol = None;
    let (tn, tr) = rayon::join(|| run(initial, &nc), || run(initial, &rc));
    let (tn, tr) = (tn?, tr?);
    for (traj, name) in [(&tn, "nrf"), (&tr, "rf")] {
        if traj.termination != Termination::ReachedT {
            return Err(Error::InsufficientSnapshots(format!(
                "{name} run ended early ({:?})",
                traj.termination
            )));
        }
    }
    let mf = initial.m() as f64;
    let mut differences = Vec::with_capacity(probe_times.len());
    for (&t, &s) in probe_times.iter().zip(&rf_times) {
        let (an, bn) = tn.state_at(t, f64::INFINITY)?;
        let (ar, br) = tr.state_at(s, f64::INFINITY)?;
        let scale = (-2.0 * (n as f64 - 1.0) * t).exp();
        let d = an
            .iter()
            .zip(&bn)
            .zip(ar.iter().zip(&br))
            .map(|((a, b), (ra, rb))| {
                let (a, b) = (a.as_f64(), b.as_f64());
                let da = (a - scale * ra.as_f64()) / a;
                let db = (b - scale * rb.as_f64()) / b;
                (da * da + mf * db * db).sqrt()
            })
            .fold(0.0f64, f64::max);
        differences.push(d);
    }
    let sup_difference = differences.iter().copied().fold(0.0, f64::max);
    Ok(ReparamReport {
        probe_times: probe_times.to_vec(),
        rf_times,
        differences,
        sup_difference,
    })
}
