//! Warped-product asymptotically hyperbolic metrics
//! `g = x⁻² (A dx² + B σ)` and their curvature.
//!
//! All curvature quantities are reported in the orthonormal frame
//! `e_0 = (x/√A) ∂_x`, `e_α = (x/√B) E_α` (with `E_α` σ-orthonormal), so a
//! symmetric invariant 2-tensor is described by its radial and tangential
//! eigenvalues. In proper radial distance `s` the metric is `ds² + f² σ` with
//! `f = √B / x`, and everything follows from `H = f'/f`:
//!
//! ```text
//! K_rad = −(H' + H²),   K_tan = κ x²/B − H²
//! Ric_rad = m K_rad,    Ric_tan = K_rad + (m−1) K_tan
//! ```

mod oracle;
mod volume;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{lagrange_eval, Accuracy, RadialGrid, ScalarField};
use crate::scalar::Real;
use crate::tensor::{riemann, Frame, IsoTensor};

pub use oracle::{compare_bundles, curvature_fd_oracle, derivative_edge_rows, BundleComparison, FieldDifference};
pub(crate) use volume::proper_coordinate;
pub use volume::{
    radial_distance, unit_ball_volume_proxy, weighted_volume, VolumeProxy, WeightedVolume,
};

/// Einstein cross-section `σ` with `Ric(σ) = κ (n−2) σ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossSection {
    Sphere,
    Torus,
    Hyperbolic,
}

impl CrossSection {
    pub fn kappa(self) -> i32 {
        match self {
            CrossSection::Sphere => 1,
            CrossSection::Torus => 0,
            CrossSection::Hyperbolic => -1,
        }
    }

    pub fn kappa_t<T: Real>(self) -> T {
        T::lit(self.kappa() as f64)
    }

    pub fn name(self) -> &'static str {
        match self {
            CrossSection::Sphere => "sphere",
            CrossSection::Torus => "torus",
            CrossSection::Hyperbolic => "hyperbolic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sphere" => Ok(CrossSection::Sphere),
            "torus" => Ok(CrossSection::Torus),
            "hyperbolic" => Ok(CrossSection::Hyperbolic),
            other => Err(Error::invalid(format!(
                "unknown cross-section '{other}' (expected sphere, torus or hyperbolic)"
            ))),
        }
    }

    /// Einstein warping `B = (1 − κ x²/4)²`, giving constant curvature −1.
    pub fn einstein_warping<T: Real>(self, x: T) -> T {
        let q = T::one() - self.kappa_t::<T>() * x * x / T::lit(4.0);
        q * q
    }
}

/// The state `g = x⁻² (A dx² + B σ)` on a radial grid.
#[derive(Clone, Debug)]
pub struct WarpedMetric<T> {
    pub n: usize,
    pub cross_section: CrossSection,
    pub a: ScalarField<T>,
    pub b: ScalarField<T>,
    pub time: T,
}

pub fn check_dimension(n: usize) -> Result<()> {
    if !(4..=8).contains(&n) {
        return Err(Error::invalid(format!("dimension n = {n} outside supported range [4, 8]")));
    }
    Ok(())
}

fn check_positive<T: Real>(field: &'static str, f: &ScalarField<T>) -> Result<()> {
    for (x, v) in f.grid().points().iter().zip(f.values()) {
        if !(*v > T::zero()) {
            return Err(Error::NonpositiveMetric {
                field,
                x: x.as_f64(),
                value: v.as_f64(),
            });
        }
    }
    Ok(())
}

impl<T: Real> WarpedMetric<T> {
    pub fn new(n: usize, cross_section: CrossSection, a: ScalarField<T>, b: ScalarField<T>) -> Result<Self> {
        check_dimension(n)?;
        if !Arc::ptr_eq(a.grid(), b.grid()) && a.grid().points() != b.grid().points() {
            return Err(Error::invalid("A and B live on different grids"));
        }
        check_positive("A", &a)?;
        check_positive("B", &b)?;
        Ok(Self {
            n,
            cross_section,
            a,
            b,
            time: T::zero(),
        })
    }

    /// Hyperbolic space written over the given cross-section.
    pub fn einstein(grid: Arc<RadialGrid<T>>, n: usize, cross_section: CrossSection) -> Result<Self> {
        let a = ScalarField::constant(grid.clone(), T::one());
        let b = ScalarField::from_fn(grid, |x| cross_section.einstein_warping(x))?;
        Self::new(n, cross_section, a, b)
    }

    /// Same dimension and cross-section, new coefficient values.
    pub fn with_values(&self, a: Vec<T>, b: Vec<T>) -> Result<Self> {
        let grid = self.grid().clone();
        let mut out = Self::new(
            self.n,
            self.cross_section,
            ScalarField::new(grid.clone(), a)?,
            ScalarField::new(grid, b)?,
        )?;
        out.time = self.time;
        Ok(out)
    }

    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        self.a.grid()
    }

    pub fn x(&self) -> &[T] {
        self.a.grid().points()
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Cross-section dimension `m = n − 1`.
    pub fn m(&self) -> usize {
        self.n - 1
    }

    pub fn kappa(&self) -> T {
        self.cross_section.kappa_t()
    }

    /// Boundary limits `(A(0), B(0))` by quadratic extrapolation from the
    /// three smallest radii.
    pub fn boundary_values(&self) -> (T, T) {
        let x = &self.x()[..3];
        (
            lagrange_eval(x, &self.a.values()[..3], T::zero()),
            lagrange_eval(x, &self.b.values()[..3], T::zero()),
        )
    }

    /// Radial coefficient data `(A, A_x, B, B_x, B_xx)` with direct stencils.
    pub fn radial_data(&self, accuracy: Accuracy) -> Result<RadialData<T>> {
        let grid = self.grid();
        let d1 = grid.operator(1, accuracy)?;
        let d2 = grid.operator(2, accuracy)?;
        Ok(RadialData {
            a: self.a.values().to_vec(),
            ax: d1.apply(self.a.values()),
            b: self.b.values().to_vec(),
            bx: d1.apply(self.b.values()),
            bxx: d2.apply(self.b.values()),
        })
    }

    /// `H = f'/f` and `dx/ds` from radial data.
    pub fn frame_data(&self, rd: &RadialData<T>) -> (Vec<T>, Vec<T>) {
        let half = T::lit(0.5);
        let mut h = Vec::with_capacity(self.len());
        let mut e = Vec::with_capacity(self.len());
        for (i, &x) in self.x().iter().enumerate() {
            let sa = rd.a[i].sqrt();
            h.push((half * x * rd.bx[i] / rd.b[i] - T::one()) / sa);
            e.push(x / sa);
        }
        (h, e)
    }

    pub fn frame(&self, accuracy: Accuracy) -> Result<Frame<'_, T>> {
        let rd = self.radial_data(accuracy)?;
        let (h, dx_ds) = self.frame_data(&rd);
        Ok(Frame {
            grid: self.grid().as_ref(),
            dx_ds,
            h,
            m: self.m(),
            accuracy,
        })
    }

    /// Frame Ricci eigenvalues `(Ric_rad, Ric_tan)`; the flow right-hand side.
    pub fn ricci(&self, accuracy: Accuracy) -> Result<(Vec<T>, Vec<T>)> {
        let rd = self.radial_data(accuracy)?;
        let mf = T::count(self.m());
        let mut rr = Vec::with_capacity(self.len());
        let mut rt = Vec::with_capacity(self.len());
        for (i, &x) in self.x().iter().enumerate() {
            let s = sectional_at(x, self.kappa(), &rd, i);
            rr.push(mf * s.k_rad);
            rt.push(s.k_rad + (mf - T::one()) * s.k_tan);
        }
        Ok((rr, rt))
    }

    /// Frame eigenvalues of `h = Ric + (n−1) g`.
    pub fn pinching(&self, accuracy: Accuracy) -> Result<(Vec<T>, Vec<T>)> {
        let (mut rr, mut rt) = self.ricci(accuracy)?;
        let off = T::count(self.n - 1);
        rr.iter_mut().chain(rt.iter_mut()).for_each(|v| *v += off);
        Ok((rr, rt))
    }
}

/// Radial coefficients and the derivatives curvature depends on. `A_xx`
/// never enters: the radial equation of the flow is only weakly parabolic.
#[derive(Clone, Debug)]
pub struct RadialData<T> {
    pub a: Vec<T>,
    pub ax: Vec<T>,
    pub b: Vec<T>,
    pub bx: Vec<T>,
    pub bxx: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Sectional<T> {
    pub k_rad: T,
    pub k_tan: T,
}

pub(crate) fn sectional_at<T: Real>(x: T, kappa: T, rd: &RadialData<T>, i: usize) -> Sectional<T> {
    let half = T::lit(0.5);
    let (a, ax, b, bx, bxx) = (rd.a[i], rd.ax[i], rd.b[i], rd.bx[i], rd.bxx[i]);
    let sa = a.sqrt();
    let u = half * x * bx / b - T::one();
    let h = u / sa;
    let ux = half * bx / b + half * x * bxx / b - half * x * bx * bx / (b * b);
    let hx = ux / sa - half * u * ax / (a * sa);
    let hs = x / sa * hx;
    Sectional {
        k_rad: -(hs + h * h),
        k_tan: kappa * x * x / b - h * h,
    }
}

/// Which covariant-derivative norms to assemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DerivativeDepth {
    None,
    First,
    #[default]
    Second,
}

/// Curvature of one metric state; tensor data in frame components.
#[derive(Clone, Debug)]
pub struct CurvatureBundle<T> {
    pub n: usize,
    /// Coordinate Christoffels `Γ^x_xx`, `Γ^x_{αβ} / σ_{αβ}`, `Γ^α_{xα}`.
    pub gamma_xxx: ScalarField<T>,
    pub gamma_xss: ScalarField<T>,
    pub gamma_sxs: ScalarField<T>,
    pub k_rad: ScalarField<T>,
    pub k_tan: ScalarField<T>,
    pub ric_rad: ScalarField<T>,
    pub ric_tan: ScalarField<T>,
    pub scalar: ScalarField<T>,
    pub h_rad: ScalarField<T>,
    pub h_tan: ScalarField<T>,
    pub rm_norm: ScalarField<T>,
    pub h_norm: ScalarField<T>,
    pub dh_norm: Option<ScalarField<T>>,
    pub drm_norm: Option<ScalarField<T>>,
    pub ddh_norm: Option<ScalarField<T>>,
    pub ddrm_norm: Option<ScalarField<T>>,
}

/// `‖Rm‖²` for frame sectional curvatures.
pub fn riemann_norm_sq<T: Real>(k_rad: T, k_tan: T, m: usize) -> T {
    let mf = T::count(m);
    T::lit(4.0) * (mf * k_rad * k_rad + mf * (mf - T::one()) / T::lit(2.0) * k_tan * k_tan)
}

/// `‖h‖²` from its frame eigenvalues.
pub fn pinching_norm_sq<T: Real>(h_rad: T, h_tan: T, m: usize) -> T {
    h_rad * h_rad + T::count(m) * h_tan * h_tan
}

/// Closed-form warped-product curvature.
pub fn curvature_closed_form<T: Real>(
    m: &WarpedMetric<T>,
    accuracy: Accuracy,
    depth: DerivativeDepth,
) -> Result<CurvatureBundle<T>> {
    check_positive("A", &m.a)?;
    check_positive("B", &m.b)?;
    let grid = m.grid().clone();
    let rd = m.radial_data(accuracy)?;
    let dim = m.m();
    let mf = T::count(dim);
    let off = T::count(m.n - 1);
    let half = T::lit(0.5);
    let len = m.len();

    let mut cols: [Vec<T>; 12] = Default::default();
    for (i, &x) in m.x().iter().enumerate() {
        let s = sectional_at(x, m.kappa(), &rd, i);
        let (a, ax, b, bx) = (rd.a[i], rd.ax[i], rd.b[i], rd.bx[i]);
        let ric_rad = mf * s.k_rad;
        let ric_tan = s.k_rad + (mf - T::one()) * s.k_tan;
        let h_rad = ric_rad + off;
        let h_tan = ric_tan + off;
        // F = B/x², F_x = B_x/x² − 2B/x³
        let fx = bx / (x * x) - T::lit(2.0) * b / (x * x * x);
        let row = [
            half * ax / a - T::one() / x,
            -half * x * x * fx / a,
            half * bx / b - T::one() / x,
            s.k_rad,
            s.k_tan,
            ric_rad,
            ric_tan,
            T::lit(2.0) * mf * s.k_rad + mf * (mf - T::one()) * s.k_tan,
            h_rad,
            h_tan,
            riemann_norm_sq(s.k_rad, s.k_tan, dim).sqrt(),
            pinching_norm_sq(h_rad, h_tan, dim).sqrt(),
        ];
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }

    let mut bundle = {
        let mut it = cols.into_iter().map(|v| ScalarField::new(grid.clone(), v));
        let mut next = || it.next().expect("column count");
        CurvatureBundle {
            n: m.n,
            gamma_xxx: next()?,
            gamma_xss: next()?,
            gamma_sxs: next()?,
            k_rad: next()?,
            k_tan: next()?,
            ric_rad: next()?,
            ric_tan: next()?,
            scalar: next()?,
            h_rad: next()?,
            h_tan: next()?,
            rm_norm: next()?,
            h_norm: next()?,
            dh_norm: None,
            drm_norm: None,
            ddh_norm: None,
            ddrm_norm: None,
        }
    };

    if depth != DerivativeDepth::None {
        let (h, dx_ds) = m.frame_data(&rd);
        let frame = Frame {
            grid: grid.as_ref(),
            dx_ds,
            h,
            m: dim,
            accuracy,
        };
        let ht = IsoTensor::diagonal2(bundle.h_rad.values(), bundle.h_tan.values(), dim);
        let rm = riemann(bundle.k_rad.values(), bundle.k_tan.values(), dim);
        let dh = ht.covariant_derivative(&frame)?;
        let drm = rm.covariant_derivative(&frame)?;
        let field = |t: &IsoTensor<T>| ScalarField::new(grid.clone(), t.norm());
        bundle.dh_norm = Some(field(&dh)?);
        bundle.drm_norm = Some(field(&drm)?);
        if depth == DerivativeDepth::Second {
            bundle.ddh_norm = Some(field(&dh.covariant_derivative(&frame)?)?);
            bundle.ddrm_norm = Some(field(&drm.covariant_derivative(&frame)?)?);
        }
    }
    debug_assert_eq!(bundle.h_norm.len(), len);
    Ok(bundle)
}

/// Sup/inf summary of one bundle column.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldSummary {
    pub sup: f64,
    pub x_sup: f64,
    pub inf: f64,
    pub x_inf: f64,
    /// False for derivative norms, whose end rows use one-sided stencils twice.
    pub full_confidence: bool,
}

impl<T: Real> CurvatureBundle<T> {
    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        self.k_rad.grid()
    }

    /// Named columns in serialization order.
    pub fn columns(&self) -> Vec<(&'static str, &ScalarField<T>)> {
        let mut cols = vec![
            ("gamma_x_xx", &self.gamma_xxx),
            ("gamma_x_ss", &self.gamma_xss),
            ("gamma_s_xs", &self.gamma_sxs),
            ("k_rad", &self.k_rad),
            ("k_tan", &self.k_tan),
            ("ric_rad", &self.ric_rad),
            ("ric_tan", &self.ric_tan),
            ("scalar", &self.scalar),
            ("h_rad", &self.h_rad),
            ("h_tan", &self.h_tan),
            ("norm_rm", &self.rm_norm),
            ("norm_h", &self.h_norm),
        ];
        for (name, f) in [
            ("norm_grad_h", &self.dh_norm),
            ("norm_grad_rm", &self.drm_norm),
            ("norm_grad2_h", &self.ddh_norm),
            ("norm_grad2_rm", &self.ddrm_norm),
        ] {
            if let Some(f) = f {
                cols.push((name, f));
            }
        }
        cols
    }

    /// Recomputes `‖h‖²` from `Ric` and the metric, as an invariant check.
    pub fn h_norm_from_ricci(&self) -> Vec<T> {
        let off = T::count(self.n - 1);
        self.ric_rad
            .values()
            .iter()
            .zip(self.ric_tan.values())
            .map(|(r, t)| pinching_norm_sq(*r + off, *t + off, self.n - 1))
            .collect()
    }

    pub fn sup_h(&self) -> T {
        crate::scalar::sup_abs(self.h_norm.values())
    }

    /// Sectional curvature extremes `(min, max)` over the grid.
    pub fn sectional_range(&self) -> (T, T) {
        let all = self.k_rad.values().iter().chain(self.k_tan.values());
        all.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    pub fn summaries(&self) -> Vec<(&'static str, FieldSummary)> {
        let x = self.grid().points();
        let ghosts = self.grid().boundary_ghosts;
        self.columns()
            .into_iter()
            .map(|(name, f)| {
                let (mut isup, mut iinf) = (0, 0);
                for (i, v) in f.values().iter().enumerate() {
                    if *v > f.values()[isup] {
                        isup = i;
                    }
                    if *v < f.values()[iinf] {
                        iinf = i;
                    }
                }
                let deriv = name.starts_with("norm_grad");
                let edge = |i: usize| i < ghosts || i + ghosts >= x.len();
                (
                    name,
                    FieldSummary {
                        sup: f.values()[isup].as_f64(),
                        x_sup: x[isup].as_f64(),
                        inf: f.values()[iinf].as_f64(),
                        x_inf: x[iinf].as_f64(),
                        full_confidence: !(deriv && (edge(isup) || edge(iinf))),
                    },
                )
            })
            .collect()
    }

    /// One row per grid point, one column per field, 17 significant digits.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let cols = self.columns();
        let header: Vec<&str> = std::iter::once("x").chain(cols.iter().map(|c| c.0)).collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, x) in self.grid().points().iter().enumerate() {
            write!(w, "{}", fmt17(x.as_f64()))?;
            for (_, f) in &cols {
                write!(w, ",{}", fmt17(f.values()[i].as_f64()))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar of summaries.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(&csv, e))?;
        std::fs::write(&csv, buf).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let map: serde_json::Map<String, serde_json::Value> = self
            .summaries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::to_value(v).expect("summary serializes")))
            .collect();
        let body = serde_json::to_string_pretty(&serde_json::json!({
            "n": self.n,
            "csv": format!("{stem}.csv"),
            "fields": map,
        }))
        .expect("json");
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))
    }
}

/// Decimal text with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::sup_abs;

    fn grid(n: usize, stretch: f64) -> Arc<RadialGrid<f64>> {
        Arc::new(RadialGrid::build(n, 1.0, stretch).unwrap())
    }

    #[test]
    fn hyperbolic_is_einstein_for_every_cross_section() {
        for cs in [CrossSection::Sphere, CrossSection::Torus, CrossSection::Hyperbolic] {
            let m = WarpedMetric::einstein(grid(128, 4.0), 5, cs).unwrap();
            let b = curvature_closed_form(&m, Accuracy::Fourth, DerivativeDepth::Second).unwrap();
            for v in b.k_rad.values().iter().chain(b.k_tan.values()) {
                assert!((v + 1.0).abs() < 1e-9, "{cs:?}: {v}");
            }
            assert!(sup_abs(b.h_norm.values()) < 1e-8);
            assert!(sup_abs(b.drm_norm.as_ref().unwrap().values()) < 1e-7);
            assert!(b.rm_norm.values().iter().all(|v| (v - 40f64.sqrt()).abs() < 1e-8));
            assert!(b.scalar.values().iter().all(|v| (v + 20.0).abs() < 1e-8));
        }
    }

    #[test]
    fn constant_warping_gives_expected_sectionals() {
        let g = grid(64, 1.0);
        let c = 2.0;
        let a = ScalarField::constant(g.clone(), 1.0);
        let b = ScalarField::constant(g.clone(), c);
        let m = WarpedMetric::new(5, CrossSection::Sphere, a, b).unwrap();
        let bun = curvature_closed_form(&m, Accuracy::Second, DerivativeDepth::None).unwrap();
        for (x, (kr, kt)) in g.points().iter().zip(bun.k_rad.values().iter().zip(bun.k_tan.values())) {
            assert!((kr + 1.0).abs() < 1e-12);
            assert!((kt - (x * x / c - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_warping_is_not_einstein() {
        let g = grid(128, 4.0);
        let base = WarpedMetric::einstein(g.clone(), 5, CrossSection::Sphere).unwrap();
        let delta = 1e-2;
        let m = base
            .with_values(base.a.values().to_vec(), base.b.values().iter().map(|v| v * (1.0 + delta)).collect())
            .unwrap();
        let b = curvature_closed_form(&m, Accuracy::Fourth, DerivativeDepth::None).unwrap();
        let s = b.sup_h();
        assert!(s > 0.1 * delta && s < 100.0 * delta, "sup h = {s}");
    }

    #[test]
    fn pinching_norm_matches_ricci_components() {
        let g = grid(64, 4.0);
        let a = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.1 * x * x).unwrap();
        let b = ScalarField::from_fn(g.clone(), |x| (1.0 - x * x / 4.0).powi(2) + 0.05 * x.powi(3)).unwrap();
        let m = WarpedMetric::new(6, CrossSection::Sphere, a, b).unwrap();
        let bun = curvature_closed_form(&m, Accuracy::Fourth, DerivativeDepth::None).unwrap();
        for (n2, n) in bun.h_norm_from_ricci().iter().zip(bun.h_norm.values()) {
            assert!((n2 - n * n).abs() < 1e-12 * (1.0 + n2));
        }
    }

    #[test]
    fn rejects_nonpositive_coefficients() {
        let g = grid(32, 1.0);
        let a = ScalarField::constant(g.clone(), 1.0);
        let b = ScalarField::from_fn(g, |x| 0.5 - x).unwrap();
        assert!(matches!(
            WarpedMetric::new(5, CrossSection::Sphere, a, b),
            Err(Error::NonpositiveMetric { field: "B", .. })
        ));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = WarpedMetric::einstein(grid(32, 2.0), 5, CrossSection::Sphere).unwrap();
        let b = curvature_closed_form(&m, Accuracy::Second, DerivativeDepth::First).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 33);
        assert!(lines[0].starts_with("x,gamma_x_xx"));
        assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            /// Pulling back by x -> c x leaves sectional curvatures unchanged.
            #[test]
            fn scaling_coherence(c in 0.5f64..0.9, p in -0.2f64..0.2, q in -0.2f64..0.2) {
                let af = |x: f64| 1.0 + p * x * x;
                let bf = |x: f64| (1.0 - x * x / 4.0).powi(2) * (1.0 + q * x * x);
                let g = grid(400, 1.0);
                let m1 = WarpedMetric::new(
                    5, CrossSection::Sphere,
                    ScalarField::from_fn(g.clone(), af).unwrap(),
                    ScalarField::from_fn(g.clone(), bf).unwrap(),
                ).unwrap();
                let m2 = WarpedMetric::new(
                    5, CrossSection::Sphere,
                    ScalarField::from_fn(g.clone(), |x| af(c * x)).unwrap(),
                    ScalarField::from_fn(g.clone(), |x| bf(c * x) / (c * c)).unwrap(),
                ).unwrap();
                let b1 = curvature_closed_form(&m1, Accuracy::Fourth, DerivativeDepth::None).unwrap();
                let b2 = curvature_closed_form(&m2, Accuracy::Fourth, DerivativeDepth::None).unwrap();
                for (i, &x) in g.points().iter().enumerate().skip(20).step_by(37) {
                    let xs = c * x;
                    let interp = |f: &ScalarField<f64>| crate::grid::interpolate(&g, f.values(), xs);
                    prop_assert!((b2.k_rad.values()[i] - interp(&b1.k_rad)).abs() < 1e-6);
                    prop_assert!((b2.k_tan.values()[i] - interp(&b1.k_tan)).abs() < 1e-6);
                    prop_assert!((b2.scalar.values()[i] - interp(&b1.scalar)).abs() < 1e-5);
                }
            }
        }
    }
}
