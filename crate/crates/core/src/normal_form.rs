//! Geodesic (Fermi) gauge `g = r⁻² (dr² + g_r)` and the curvature formulas
//! written in it.
//!
//! With `g_r = b(r) σ` every tensor in the general formulas is a multiple of
//! `σ`, so the contractions become scalar:
//!
//! ```text
//! ḡ^{αβ} ḡ'_{αβ}                    = m b'/b
//! ḡ^{αβ} ḡ^{γδ} ḡ'_{αδ} ḡ'_{γβ}     = m (b'/b)²
//! ḡ^{αβ} ḡ''_{αβ}                   = m b''/b
//! ḡ^{γδ} ḡ'_{αδ} ḡ'_{βγ}            = (b'²/b) σ_{αβ}
//! Ric_{αβ}(g_r) = Ric(σ)            = κ (n−2) σ_{αβ}
//! R̄_{αγβδ}(g_r)                     = κ b (σ_{αβ}σ_{γδ} − σ_{αδ}σ_{γβ})
//! ∇̄_α ḡ'_{γδ}                       = 0   (b' depends on r only)
//! ```
//!
//! In the `h_{αβ}` formula the term `½ r⁻¹ ḡ^{γδ} ḡ'_{γδ} g_{αβ}` is read with
//! the compactified metric `ḡ_{αβ}`; with the physical `g_{αβ}` hyperbolic
//! space would not be Einstein.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{fmt17, CrossSection, WarpedMetric};
use crate::grid::{cumulative_integral, diff, lagrange_eval, Accuracy, RadialGrid, ScalarField};
use crate::scalar::{sup_abs, Real};

/// A metric in geodesic gauge, `g_r = b(r) σ`.
#[derive(Clone, Debug)]
pub struct NormalFormMetric<T> {
    pub n: usize,
    pub cross_section: CrossSection,
    /// The input grid; `r.values()[i]` is the defining function at `x_i`.
    pub x_grid: Arc<RadialGrid<T>>,
    pub r: ScalarField<T>,
    /// `b`, `b'`, `b''` on the grid of `r` values.
    pub b: ScalarField<T>,
    pub b_r: ScalarField<T>,
    pub b_rr: ScalarField<T>,
    /// Boundary metric `ĝ = b(0) σ`.
    pub b0: T,
    /// `sup | ‖dr‖²_{r²g} − 1 |` measured with finite differences.
    pub gauge_residual: T,
}

impl<T: Real> NormalFormMetric<T> {
    pub fn r_grid(&self) -> &Arc<RadialGrid<T>> {
        self.b.grid()
    }

    pub fn m(&self) -> usize {
        self.n - 1
    }

    /// Gauge-map table `x, r, b, b', b''`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "x,r,b,b_r,b_rr")?;
        for i in 0..self.r.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt17(self.x_grid.points()[i].as_f64()),
                fmt17(self.r.values()[i].as_f64()),
                fmt17(self.b.values()[i].as_f64()),
                fmt17(self.b_r.values()[i].as_f64()),
                fmt17(self.b_rr.values()[i].as_f64()),
            )?;
        }
        Ok(())
    }
}

/// Maximum tolerated deviation of `A(0)` from 1; beyond it the metric is
/// not asymptotically hyperbolic and no geodesic defining function exists.
const BOUNDARY_A_TOLERANCE: f64 = 1e-3;

/// Geodesic defining function `r` with `ln(r/x) = ∫₀ˣ (√A − 1)/ξ dξ`, so
/// that `A dx²/x² = dr²/r²` and `r/x → 1` at the boundary; then
/// `b = B r²/x²`.
pub fn to_normal_form<T: Real>(m: &WarpedMetric<T>, accuracy: Accuracy) -> Result<NormalFormMetric<T>> {
    let grid = m.grid().clone();
    let x = grid.points();
    let len = x.len();
    let (a0, b0_in) = m.boundary_values();
    if !(b0_in.as_f64() > 1e-8) {
        return Err(Error::GaugeFailure(format!(
            "B does not extend to a positive boundary limit (extrapolated B(0) = {:e})",
            b0_in.as_f64()
        )));
    }
    if (a0.as_f64() - 1.0).abs() > BOUNDARY_A_TOLERANCE {
        return Err(Error::GaugeFailure(format!(
            "A(0) = {:.6} differs from 1: not asymptotically hyperbolic",
            a0.as_f64()
        )));
    }

    let q: Vec<T> = x
        .iter()
        .zip(m.a.values())
        .map(|(xi, a)| (a.sqrt() - T::one()) / *xi)
        .collect();
    // ∫₀^{x₀} q by Simpson with q(0), q(x₀/2) extrapolated from the first nodes
    let nodes = &x[..4];
    let qv = &q[..4];
    let head = x[0] / T::lit(6.0)
        * (lagrange_eval(nodes, qv, T::zero())
            + T::lit(4.0) * lagrange_eval(nodes, qv, x[0] / T::lit(2.0))
            + q[0]);
    let tail = cumulative_integral(&grid, &q);
    let r: Vec<T> = (0..len).map(|i| x[i] * (head + tail[i]).exp()).collect();
    if r.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GaugeFailure("defining function lost monotonicity".into()));
    }
    let b: Vec<T> = (0..len)
        .map(|i| m.b.values()[i] * r[i] * r[i] / (x[i] * x[i]))
        .collect();

    let r_grid = Arc::new(RadialGrid::from_points(r.clone())?);
    let b_r = diff(&r_grid, &b, 1, accuracy)?;
    let b_rr = diff(&r_grid, &b, 2, accuracy)?;
    let b0 = lagrange_eval(&r[..3], &b[..3], T::zero());

    let r_x = diff(&grid, &r, 1, accuracy)?;
    let gauge_residual = (0..len)
        .map(|i| {
            let v = x[i] * x[i] / m.a.values()[i] * r_x[i] * r_x[i] / (r[i] * r[i]);
            (v - T::one()).abs()
        })
        .fold(T::zero(), T::max);

    Ok(NormalFormMetric {
        n: m.n,
        cross_section: m.cross_section,
        x_grid: grid.clone(),
        r: ScalarField::new(grid, r)?,
        b: ScalarField::new(r_grid.clone(), b)?,
        b_r: ScalarField::new(r_grid.clone(), b_r)?,
        b_rr: ScalarField::new(r_grid, b_rr)?,
        b0,
        gauge_residual,
    })
}

/// Inverse gauge map: the warped metric with `A ≡ 1` on the `r` grid.
pub fn from_normal_form<T: Real>(nf: &NormalFormMetric<T>) -> Result<WarpedMetric<T>> {
    let g = nf.r_grid().clone();
    WarpedMetric::new(
        nf.n,
        nf.cross_section,
        ScalarField::constant(g.clone(), T::one()),
        ScalarField::new(g, nf.b.values().to_vec())?,
    )
}

/// Coordinate components of `h` in Fermi coordinates: `h_nn`, `h_nα`
/// (a single field: all tangential directions agree) and the coefficient
/// of `σ_{αβ}` in `h_{αβ}`.
#[derive(Clone, Debug)]
pub struct PinchingNormalForm<T> {
    pub h_nn: Vec<T>,
    pub h_na: Vec<T>,
    pub h_ab: Vec<T>,
}

impl<T: Real> PinchingNormalForm<T> {
    /// Frame eigenvalues `(h_rad, h_tan)`: `g_nn = r⁻²`, `g_{αβ} = r⁻² b σ`.
    pub fn frame(&self, nf: &NormalFormMetric<T>) -> (Vec<T>, Vec<T>) {
        let r = nf.r.values();
        let b = nf.b.values();
        let rad = (0..r.len()).map(|i| r[i] * r[i] * self.h_nn[i]).collect();
        let tan = (0..r.len()).map(|i| r[i] * r[i] * self.h_ab[i] / b[i]).collect();
        (rad, tan)
    }

    /// `‖h‖_g` pointwise.
    pub fn norm(&self, nf: &NormalFormMetric<T>) -> Vec<T> {
        let (rad, tan) = self.frame(nf);
        let mf = T::count(nf.m());
        rad.iter()
            .zip(&tan)
            .map(|(p, q)| (*p * *p + mf * *q * *q).sqrt())
            .collect()
    }
}

pub fn pinching_normal_form<T: Real>(nf: &NormalFormMetric<T>) -> PinchingNormalForm<T> {
    let n = T::count(nf.n);
    let mf = T::count(nf.m());
    let kappa = nf.cross_section.kappa_t::<T>();
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let r = nf.r.values();
    let len = r.len();
    let mut out = PinchingNormalForm {
        h_nn: Vec::with_capacity(len),
        h_na: Vec::with_capacity(len),
        h_ab: Vec::with_capacity(len),
    };
    for i in 0..len {
        let (ri, b, b1, b2) = (r[i], nf.b.values()[i], nf.b_r.values()[i], nf.b_rr.values()[i]);
        let tr1 = mf * b1 / b; // ḡ^{αβ} ḡ'_{αβ}
        let tr11 = mf * (b1 / b) * (b1 / b); // ḡ^{αβ} ḡ^{γδ} ḡ'_{αδ} ḡ'_{γβ}
        let tr2 = mf * b2 / b; // ḡ^{αβ} ḡ''_{αβ}
        out.h_nn.push(half / ri * tr1 + quarter * tr11 - half * tr2);

        // ∇̄_α ḡ'_{γδ} = (∂_α b') σ_{γδ} with ∂_α b' = 0
        let tangential_db1 = T::zero();
        out.h_na.push(half * mf / b * (-tangential_db1 + tangential_db1));

        let ric_cross = kappa * (n - T::lit(2.0));
        out.h_ab.push(
            -half * b2 + (n / T::lit(2.0) - T::one()) / ri * b1 + half / ri * tr1 * b
                - quarter * tr1 * b1
                + half * b1 * b1 / b
                + ric_cross,
        );
    }
    out
}

/// Curvature components in Fermi coordinates: the coefficient of `σ_{αβ}` in
/// `R_{nαnβ}`, of `(σ_{αβ}σ_{γδ} − σ_{αδ}σ_{γβ})` in `R_{αγβδ}`, and the
/// resulting sectional curvatures.
#[derive(Clone, Debug)]
pub struct RiemannNormalForm<T> {
    pub r_nanb: Vec<T>,
    pub r_agbd: Vec<T>,
    pub k_rad: Vec<T>,
    pub k_tan: Vec<T>,
}

impl<T: Real> RiemannNormalForm<T> {
    /// `sup |K + 1|` over both plane types at each point.
    pub fn deviation_from_hyperbolic(&self) -> Vec<T> {
        self.k_rad
            .iter()
            .zip(&self.k_tan)
            .map(|(p, q)| (*p + T::one()).abs().max((*q + T::one()).abs()))
            .collect()
    }

    /// Frame Ricci eigenvalues obtained by contracting the Riemann components.
    pub fn ricci_frame(&self, m: usize) -> (Vec<T>, Vec<T>) {
        let mf = T::count(m);
        let rad = self.k_rad.iter().map(|k| mf * *k).collect();
        let tan = self
            .k_rad
            .iter()
            .zip(&self.k_tan)
            .map(|(kr, kt)| *kr + (mf - T::one()) * *kt)
            .collect();
        (rad, tan)
    }
}

pub fn riemann_normal_form<T: Real>(nf: &NormalFormMetric<T>) -> RiemannNormalForm<T> {
    let kappa = nf.cross_section.kappa_t::<T>();
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let r = nf.r.values();
    let len = r.len();
    let mut out = RiemannNormalForm {
        r_nanb: Vec::with_capacity(len),
        r_agbd: Vec::with_capacity(len),
        k_rad: Vec::with_capacity(len),
        k_tan: Vec::with_capacity(len),
    };
    for i in 0..len {
        let (ri, b, b1, b2) = (r[i], nf.b.values()[i], nf.b_r.values()[i], nf.b_rr.values()[i]);
        let r2 = ri * ri;
        let r3 = r2 * ri;
        let r4 = r2 * r2;
        let rn = -b / r4 + half * b1 / r3 + quarter * b1 * b1 / (b * r2) - half * b2 / r2;
        // the r⁻³ bracket contributes 2 b b' to the antisymmetrized product
        let rt = -b * b / r4 - quarter * b1 * b1 / r2 + b * b1 / r3 + kappa * b / r2;
        out.r_nanb.push(rn);
        out.r_agbd.push(rt);
        out.k_rad.push(rn * r4 / b);
        out.k_tan.push(rt * r4 / (b * b));
    }
    out
}

/// Coordinate Ricci components `(R_nn, coefficient of σ in R_{αβ})` from
/// the Riemann components: `R_nn = g^{αβ} R_{nαnβ}`,
/// `R_{αβ} = g^{nn} R_{nαnβ} + g^{γδ} R_{αγβδ}`.
pub fn ricci_from_riemann<T: Real>(nf: &NormalFormMetric<T>, rm: &RiemannNormalForm<T>) -> (Vec<T>, Vec<T>) {
    let mf = T::count(nf.m());
    let r = nf.r.values();
    let b = nf.b.values();
    let nn = (0..r.len()).map(|i| mf * r[i] * r[i] / b[i] * rm.r_nanb[i]).collect();
    let ab = (0..r.len())
        .map(|i| r[i] * r[i] * rm.r_nanb[i] + (mf - T::one()) * r[i] * r[i] / b[i] * rm.r_agbd[i])
        .collect();
    (nn, ab)
}

/// `h` minus `(n−1) g` in coordinates: the Ricci tensor implied by
/// [`pinching_normal_form`].
pub fn ricci_from_pinching<T: Real>(nf: &NormalFormMetric<T>, h: &PinchingNormalForm<T>) -> (Vec<T>, Vec<T>) {
    let off = T::count(nf.n - 1);
    let r = nf.r.values();
    let b = nf.b.values();
    let nn = (0..r.len()).map(|i| h.h_nn[i] - off / (r[i] * r[i])).collect();
    let ab = (0..r.len()).map(|i| h.h_ab[i] - off * b[i] / (r[i] * r[i])).collect();
    (nn, ab)
}

/// `sup |a − b| / max(sup |b|, 1)`.
pub fn relative_sup<T: Real>(a: &[T], b: &[T]) -> T {
    crate::scalar::sup_diff(a, b) / sup_abs(b).max(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{curvature_closed_form, DerivativeDepth};

    fn grid(n: usize) -> Arc<RadialGrid<f64>> {
        Arc::new(RadialGrid::build(n, 1.0, 4.0).unwrap())
    }

    fn from_b(g: Arc<RadialGrid<f64>>, n: usize, cs: CrossSection, b: impl Fn(f64) -> f64) -> WarpedMetric<f64> {
        WarpedMetric::new(
            n,
            cs,
            ScalarField::constant(g.clone(), 1.0),
            ScalarField::from_fn(g, b).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hyperbolic_is_already_normal() {
        let m = WarpedMetric::einstein(grid(256), 5, CrossSection::Sphere).unwrap();
        let nf = to_normal_form(&m, Accuracy::Fourth).unwrap();
        assert!(crate::scalar::sup_diff(nf.r.values(), m.x()) < 1e-14);
        for (r, b) in nf.r.values().iter().zip(nf.b.values()) {
            assert!((b - (1.0 - r * r / 4.0).powi(2)).abs() < 1e-13);
        }
        assert!(nf.gauge_residual < 1e-10);
        assert!((nf.b0 - 1.0).abs() < 1e-10);
        let h = pinching_normal_form(&nf);
        assert!(sup_abs(&h.h_nn) < 1e-8 && sup_abs(&h.h_ab) < 1e-8);
        assert!(h.h_na.iter().all(|v| *v == 0.0));
        let rm = riemann_normal_form(&nf);
        for (p, q) in rm.k_rad.iter().zip(&rm.k_tan) {
            assert!((p + 1.0).abs() < 1e-9 && (q + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn radial_perturbation_changes_gauge_but_not_invariants() {
        let g = grid(512);
        let a = ScalarField::from_fn(g.clone(), |x| 1.0 + 0.01 * x * x).unwrap();
        let b = ScalarField::from_fn(g.clone(), |x| (1.0 - x * x / 4.0).powi(2)).unwrap();
        let m = WarpedMetric::new(5, CrossSection::Sphere, a, b).unwrap();
        let nf = to_normal_form(&m, Accuracy::Fourth).unwrap();
        assert!(crate::scalar::sup_diff(nf.r.values(), m.x()) > 1e-4);
        assert!(nf.gauge_residual < 1e-6, "{}", nf.gauge_residual);
        let direct = curvature_closed_form(&m, Accuracy::Fourth, DerivativeDepth::None).unwrap();
        let rm = riemann_normal_form(&nf);
        let mf = 4.0;
        let scalar: Vec<f64> = rm
            .k_rad
            .iter()
            .zip(&rm.k_tan)
            .map(|(kr, kt)| 2.0 * mf * kr + mf * (mf - 1.0) * kt)
            .collect();
        assert!(relative_sup(&scalar, direct.scalar.values()) < 1e-5);
    }

    #[test]
    fn degenerate_boundary_is_rejected() {
        let m = from_b(grid(64), 5, CrossSection::Sphere, |x| x * x + 1e-12);
        assert!(matches!(to_normal_form(&m, Accuracy::Fourth), Err(Error::GaugeFailure(_))));
        let g = grid(64);
        let m = WarpedMetric::new(
            5,
            CrossSection::Sphere,
            ScalarField::constant(g.clone(), 2.0),
            ScalarField::constant(g, 1.0),
        )
        .unwrap();
        assert!(matches!(to_normal_form(&m, Accuracy::Fourth), Err(Error::GaugeFailure(_))));
    }

    #[test]
    fn flat_truncation_matches_hand_evaluation() {
        // b ≡ 1, κ = 1, n = 5: h_nn = 0, h_αβ = Ric(σ) coefficient = 3
        let m = from_b(grid(64), 5, CrossSection::Sphere, |_| 1.0);
        let nf = to_normal_form(&m, Accuracy::Fourth).unwrap();
        let h = pinching_normal_form(&nf);
        assert!(sup_abs(&h.h_nn) < 1e-9);
        assert!(h.h_ab.iter().all(|v| (v - 3.0).abs() < 1e-9));
        let (_, tan) = h.frame(&nf);
        for (t, r) in tan.iter().zip(nf.r.values()) {
            assert!((t - 3.0 * r * r).abs() < 1e-9);
        }
    }

    #[test]
    fn contraction_identity_is_algebraic() {
        for cs in [CrossSection::Sphere, CrossSection::Torus, CrossSection::Hyperbolic] {
            let m = from_b(grid(128), 6, cs, |r| 1.0 - 0.5 * r * r + 0.01 * r.powi(4) + 0.003 * r.powi(3));
            let nf = to_normal_form(&m, Accuracy::Fourth).unwrap();
            let rm = riemann_normal_form(&nf);
            let h = pinching_normal_form(&nf);
            let (a1, b1) = ricci_from_riemann(&nf, &rm);
            let (a2, b2) = ricci_from_pinching(&nf, &h);
            for i in 0..a1.len() {
                let scale = a2[i].abs().max(b2[i].abs()).max(1.0);
                assert!((a1[i] - a2[i]).abs() < 64.0 * f64::EPSILON * scale, "{cs:?} nn {i}");
                assert!((b1[i] - b2[i]).abs() < 64.0 * f64::EPSILON * scale, "{cs:?} ab {i}");
            }
        }
    }

    #[test]
    fn sectional_curvatures_approach_minus_one_quadratically() {
        let m = from_b(grid(512), 5, CrossSection::Sphere, |r| (1.0 - r * r / 4.0).powi(2) + 1e-2 * r * r);
        let nf = to_normal_form(&m, Accuracy::Fourth).unwrap();
        let dev = riemann_normal_form(&nf).deviation_from_hyperbolic();
        let r = nf.r.values();
        let idx: Vec<usize> = (0..r.len()).filter(|&i| r[i] > 0.01 && r[i] < 0.2).collect();
        let lx: Vec<f64> = idx.iter().map(|&i| r[i].ln()).collect();
        let ly: Vec<f64> = idx.iter().map(|&i| dev[i].ln()).collect();
        let (slope, _, _) = crate::scalar::linear_fit(&lx, &ly).unwrap();
        assert!((1.7..=2.3).contains(&slope), "slope {slope}");
    }
}
