//! Independent checks of tensor identities, evolution equations, spectral
//! non-degeneracy and the bounded-geometry conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{power_law_fit, PowerFit};
use crate::flow::{FlowMode, FlowTrajectory};
use crate::geometry::{
    curvature_closed_form, derivative_edge_rows, unit_ball_volume_proxy, CurvatureBundle, DerivativeDepth, WarpedMetric,
};
use crate::grid::{diff, trapezoid_weights, Accuracy};
use crate::scalar::Real;
use crate::tensor::{compose, curvature_action, riemann, IsoTensor};

/// Symmetric-class 2-tensor `u = rad ds⊗ds + tan P` in frame components;
/// in coordinates `a dx² + b x⁻²Bσ` with `rad = a x²/A`, `tan = b`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricField<T> {
    pub rad: Vec<T>,
    pub tan: Vec<T>,
}

impl<T: Real> SymmetricField<T> {
    pub fn new(rad: Vec<T>, tan: Vec<T>) -> Result<Self> {
        if rad.len() != tan.len() {
            return Err(Error::invalid("radial and tangential parts differ in length"));
        }
        Ok(Self { rad, tan })
    }

    /// `v g` for a scalar `v`.
    pub fn conformal(v: &[T]) -> Self {
        Self {
            rad: v.to_vec(),
            tan: v.to_vec(),
        }
    }

    /// The pinching tensor `h` of a curvature bundle.
    pub fn pinching(bundle: &CurvatureBundle<T>) -> Self {
        Self {
            rad: bundle.h_rad.values().to_vec(),
            tan: bundle.h_tan.values().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rad.is_empty()
    }

    pub fn tensor(&self, m: usize) -> IsoTensor<T> {
        IsoTensor::diagonal2(&self.rad, &self.tan, m)
    }

    fn from_tensor(t: &IsoTensor<T>) -> Self {
        let (rad, tan) = t.diagonal_parts();
        Self { rad, tan }
    }

    /// Pointwise `‖u‖²`.
    pub fn norm_sq(&self, m: usize) -> Vec<T> {
        let mf = T::count(m);
        self.rad.iter().zip(&self.tan).map(|(a, b)| *a * *a + mf * *b * *b).collect()
    }

    pub fn mul_field(&self, f: &[T]) -> Self {
        Self {
            rad: self.rad.iter().zip(f).map(|(u, v)| *u * *v).collect(),
            tan: self.tan.iter().zip(f).map(|(u, v)| *u * *v).collect(),
        }
    }
}

/// `Δ_L u = −Δu − 2 R_{ipjq}u^{pq} + R_{iq}u_j^q + R_{jq}u_i^q`.
pub fn lichnerowicz_apply<T: Real>(u: &SymmetricField<T>, m: &WarpedMetric<T>, accuracy: Accuracy) -> Result<SymmetricField<T>> {
    if u.len() != m.len() {
        return Err(Error::invalid("field and metric live on different grids"));
    }
    let dim = m.m();
    let frame = m.frame(accuracy)?;
    let bundle = curvature_closed_form(m, accuracy, DerivativeDepth::None)?;
    let rm = riemann(bundle.k_rad.values(), bundle.k_tan.values(), dim);
    let ric = IsoTensor::diagonal2(bundle.ric_rad.values(), bundle.ric_tan.values(), dim);
    let ut = u.tensor(dim);
    let two = T::lit(2.0);
    let out = ut
        .laplacian(&frame)?
        .scale(-T::one())
        .sub(&curvature_action(&rm, &ut).scale(two))
        .add(&compose(&ric, &ut))
        .add(&compose(&ut, &ric));
    Ok(SymmetricField::from_tensor(&out))
}

/// Riemannian measure per unit cross-section volume, `x^{−n}√(A Bᵐ)` times
/// trapezoid weights.
fn volume_weights<T: Real>(m: &WarpedMetric<T>) -> Vec<f64> {
    let tw = trapezoid_weights(m.x());
    let half_m = m.m() as f64 / 2.0;
    (0..m.len())
        .map(|i| {
            let x = m.x()[i].as_f64();
            let a = m.a.values()[i].as_f64();
            let b = m.b.values()[i].as_f64();
            tw[i].as_f64() * x.powi(-(m.n as i32)) * a.sqrt() * b.powf(half_m)
        })
        .collect()
}

/// `Q(u, g)` computed twice: through [`lichnerowicz_apply`] and through the
/// expanded form `∫‖∇u‖² − 2∫R_{ipjq}u^{pq}u^{ij} + ∫⟨h∘u + u∘h, u⟩`.
#[derive(Clone, Debug, Serialize)]
pub struct QFormComparison {
    pub operator_form: f64,
    pub expanded_form: f64,
    pub relative: f64,
}

/// Both forms of `Q`; `u` should vanish towards both ends so that the
/// integration by parts has no boundary term.
pub fn q_form_dual<T: Real>(u: &SymmetricField<T>, m: &WarpedMetric<T>, accuracy: Accuracy) -> Result<QFormComparison> {
    let dim = m.m();
    let w = volume_weights(m);
    let lu = lichnerowicz_apply(u, m, accuracy)?;
    let shift = T::count(2 * (m.n - 1));
    let mf = T::count(dim);
    let mut op = 0.0;
    for i in 0..m.len() {
        let rad = lu.rad[i] + shift * u.rad[i];
        let tan = lu.tan[i] + shift * u.tan[i];
        op += w[i] * (rad * u.rad[i] + mf * tan * u.tan[i]).as_f64();
    }
    let frame = m.frame(accuracy)?;
    let bundle = curvature_closed_form(m, accuracy, DerivativeDepth::None)?;
    let rm = riemann(bundle.k_rad.values(), bundle.k_tan.values(), dim);
    let ut = u.tensor(dim);
    let grad = ut.covariant_derivative(&frame)?.norm_sq();
    let rmuu = curvature_action(&rm, &ut).inner(&ut);
    let two = T::lit(2.0);
    let mut ex = 0.0;
    for i in 0..m.len() {
        let hterm = two * (bundle.h_rad.values()[i] * u.rad[i] * u.rad[i] + mf * bundle.h_tan.values()[i] * u.tan[i] * u.tan[i]);
        ex += w[i] * (grad[i] - two * rmuu[i] + hterm).as_f64();
    }
    let relative = (op - ex).abs() / op.abs().max(ex.abs()).max(f64::MIN_POSITIVE);
    Ok(QFormComparison {
        operator_form: op,
        expanded_form: ex,
        relative,
    })
}

// ---------------------------------------------------------------------------
// residual reports

/// Order a residual is expected to converge at.
pub const EXPECTED_ORDER: f64 = 2.0;
/// Accepted band around [`EXPECTED_ORDER`].
pub const ORDER_BAND: (f64, f64) = (1.6, 2.4);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub identity: String,
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub sup: f64,
    pub l2: f64,
    /// Refinement slope; present only once two resolutions were compared.
    pub slope: Option<f64>,
    pub pass: Option<bool>,
}

impl ResidualReport {
    pub fn new(identity: &str, x: Vec<f64>, residual: Vec<f64>) -> Self {
        let sup = residual.iter().cloned().fold(0.0, f64::max);
        let l2 = if x.len() > 1 {
            let tw = trapezoid_weights(&x);
            residual.iter().zip(&tw).map(|(r, w)| r * r * w).sum::<f64>().sqrt()
        } else {
            sup
        };
        Self {
            identity: identity.to_string(),
            x,
            residual,
            sup,
            l2,
            slope: None,
            pass: None,
        }
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "x,residual")?;
        for (x, r) in self.x.iter().zip(&self.residual) {
            writeln!(w, "{},{}", crate::geometry::fmt17(*x), crate::geometry::fmt17(*r))?;
        }
        Ok(())
    }
}

/// Refinement slopes from the sup residuals of the same identities at a
/// coarse and a fine resolution (`n_*` grid points).
pub fn refine_reports(coarse: &[ResidualReport], fine: &[ResidualReport], n_coarse: usize, n_fine: usize) -> Result<Vec<ResidualReport>> {
    if coarse.len() != fine.len() || n_fine <= n_coarse {
        return Err(Error::invalid("refinement needs matching reports and a finer second grid"));
    }
    let ratio = (n_fine as f64 / n_coarse as f64).ln();
    coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| {
            if c.identity != f.identity {
                return Err(Error::invalid(format!("identity mismatch: {} vs {}", c.identity, f.identity)));
            }
            let mut out = f.clone();
            if c.sup > 0.0 && f.sup > 0.0 {
                let s = (c.sup / f.sup).ln() / ratio;
                out.slope = Some(s);
                out.pass = Some(s >= ORDER_BAND.0 && s <= ORDER_BAND.1);
            }
            Ok(out)
        })
        .collect()
}

/// Relative spacing mismatch tolerated in a snapshot triple.
pub const SPACING_TOL: f64 = 1e-6;

fn time_weights(t0: f64, t1: f64, t2: f64) -> [f64; 3] {
    let (a, b) = (t1 - t0, t2 - t1);
    [-b / (a * (a + b)), (b - a) / (a * b), a / (b * (a + b))]
}

/// Pointwise quantities an evolution identity needs at one snapshot.
struct Slice<T> {
    bundle: CurvatureBundle<T>,
    a: Vec<T>,
    b: Vec<T>,
}

/// Residuals of the NRF evolution equations for `h`, `‖h‖²` and the
/// Christoffel symbols, with `∂_t` by three-point differences across
/// consecutive snapshots. Only triples with equal spacing (to
/// `SPACING_TOL`) are used, since an uneven stencil is first order. Only
/// rows with `x` inside `window` count; the per-point residual is the
/// maximum over the usable triples.
pub fn evolution_residuals<T: Real>(traj: &FlowTrajectory<T>, window: (f64, f64)) -> Result<Vec<ResidualReport>> {
    if traj.config.mode != FlowMode::Nrf {
        return Err(Error::ModeMismatch(format!(
            "evolution identities hold for pure NRF only, trajectory is {}",
            traj.config.mode.name()
        )));
    }
    if traj.snapshots.len() < 3 {
        return Err(Error::InsufficientSnapshots(format!("need 3 snapshots, have {}", traj.snapshots.len())));
    }
    let acc = traj.config.accuracy;
    let first = &traj.snapshots[0].metric;
    let dim = first.m();
    let mf = T::count(dim);
    let x: Vec<f64> = first.x().iter().map(|v| v.as_f64()).collect();
    let rows: Vec<usize> = (0..x.len()).filter(|&i| x[i] >= window.0 && x[i] <= window.1).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!("window [{}, {}] holds no grid points", window.0, window.1)));
    }
    let slices: Vec<Slice<T>> = traj
        .snapshots
        .iter()
        .map(|s| {
            Ok(Slice {
                bundle: curvature_closed_form(&s.metric, acc, DerivativeDepth::None)?,
                a: s.metric.a.values().to_vec(),
                b: s.metric.b.values().to_vec(),
            })
        })
        .collect::<Result<_>>()?;

    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t()).collect();
    let centres: Vec<usize> = (1..times.len() - 1)
        .filter(|&k| {
            let (a, b) = (times[k] - times[k - 1], times[k + 1] - times[k]);
            a > 0.0 && (a - b).abs() <= SPACING_TOL * a.max(b)
        })
        .collect();
    if centres.is_empty() {
        return Err(Error::InsufficientSnapshots(format!("no evenly spaced snapshot triple among t = {times:?}")));
    }
    let mut res = [vec![0.0f64; x.len()], vec![0.0f64; x.len()], vec![0.0f64; x.len()]];
    let two = T::lit(2.0);
    for &k in &centres {
        let ts = [times[k - 1], times[k], times[k + 1]];
        let wt = time_weights(ts[0], ts[1], ts[2]).map(T::lit);
        let dt = |f: &dyn Fn(&Slice<T>, usize) -> T, i: usize| -> T {
            wt[0] * f(&slices[k - 1], i) + wt[1] * f(&slices[k], i) + wt[2] * f(&slices[k + 1], i)
        };
        let metric = &traj.snapshots[k].metric;
        let s = &slices[k];
        let frame = metric.frame(acc)?;
        let rm = riemann(s.bundle.k_rad.values(), s.bundle.k_tan.values(), dim);
        let h = SymmetricField::pinching(&s.bundle).tensor(dim);
        let dh = h.covariant_derivative(&frame)?;

        // ∂_t h = Δh + 2 Rm∘h − 2 h∘h
        let rhs1 = dh
            .covariant_derivative(&frame)?
            .contract(0, 1)
            .add(&curvature_action(&rm, &h).scale(two))
            .sub(&compose(&h, &h).scale(two));
        let (r_rad, r_tan) = rhs1.diagonal_parts();
        // ‖h‖² evolution
        let hh = h.norm_sq();
        let lap_hh = IsoTensor::scalar(hh.clone(), dim).laplacian(&frame)?.coefficient(&[]);
        let grad_sq = dh.norm_sq();
        let rmhh = curvature_action(&rm, &h).inner(&h);
        // Christoffels: T_kij = ∇_k h_ij, e = √A/x, f = √B/x
        let t110 = dh.component(&[1, 1, 0]);
        let t011 = dh.component(&[0, 1, 1]);
        let t000 = dh.component(&[0, 0, 0]);

        for &i in &rows {
            let lhs_rad = dt(&|q: &Slice<T>, j| q.bundle.h_rad.values()[j] * q.a[j], i) / s.a[i];
            let lhs_tan = dt(&|q: &Slice<T>, j| q.bundle.h_tan.values()[j] * q.b[j], i) / s.b[i];
            let e1 = ((lhs_rad - r_rad[i]).powi(2) + mf * (lhs_tan - r_tan[i]).powi(2)).sqrt();

            let lhs2 = dt(&|q: &Slice<T>, j| q.bundle.h_norm.values()[j].powi(2), i);
            let e2 = (lhs2 - (lap_hh[i] - two * grad_sq[i] + T::lit(4.0) * rmhh[i])).abs();

            let xi = metric.x()[i];
            let e = s.a[i].sqrt() / xi;
            let f2 = s.b[i] / (xi * xi);
            let g_xxx = -e * t000[i];
            let g_xss = -f2 / e * (two * t110[i] - t011[i]);
            let g_sxs = -e * t011[i];
            let l_xxx = dt(&|q: &Slice<T>, j| q.bundle.gamma_xxx.values()[j], i);
            let l_xss = dt(&|q: &Slice<T>, j| q.bundle.gamma_xss.values()[j], i);
            let l_sxs = dt(&|q: &Slice<T>, j| q.bundle.gamma_sxs.values()[j], i);
            let e3 = (l_xxx - g_xxx).abs().max((l_xss - g_xss).abs()).max((l_sxs - g_sxs).abs());

            for (r, v) in res.iter_mut().zip([e1, e2, e3]) {
                r[i] = r[i].max(v.as_f64());
            }
        }
    }
    let xs: Vec<f64> = rows.iter().map(|&i| x[i]).collect();
    let names = ["pinching-evolution", "pinching-norm-evolution", "christoffel-evolution"];
    Ok(names
        .iter()
        .zip(res)
        .map(|(name, r)| ResidualReport::new(name, xs.clone(), rows.iter().map(|&i| r[i]).collect()))
        .collect())
}

// ---------------------------------------------------------------------------
// spectral estimate

/// Collar truncation for the spectral problem: test fields vanish at
/// `x_lo` and `x_hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralTruncation {
    pub x_lo: f64,
    pub x_hi: f64,
}

impl SpectralTruncation {
    pub fn whole<T: Real>(m: &WarpedMetric<T>) -> Self {
        Self {
            x_lo: m.grid().x_min().as_f64(),
            x_hi: m.grid().x_max().as_f64(),
        }
    }
}

/// Fewest interior points accepted by [`nondegeneracy_rayleigh`].
pub const MIN_SPECTRAL_POINTS: usize = 64;
const SPECTRAL_TOL: f64 = 1e-8;
const SPECTRAL_MAX_ITER: usize = 500;

/// The assembled form `Q` on the symmetric class in mass-normalized
/// unknowns `(√M a_i, √(mM) b_i)`, interleaved; symmetric with lower
/// bandwidth 2. `band[j][d]` holds entry `(j, j − d)`.
#[derive(Clone, Debug)]
pub struct QFormMatrix {
    pub band: Vec<[f64; 3]>,
    pub rows: (usize, usize),
}

impl QFormMatrix {
    pub fn size(&self) -> usize {
        self.band.len()
    }

    /// Row-major dense copy.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.size();
        let mut d = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..3 {
                if k <= j {
                    d[j * n + j - k] = self.band[j][k];
                    d[(j - k) * n + j] = self.band[j][k];
                }
            }
        }
        d
    }

    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.size();
        let mut out = vec![0.0; n];
        for j in 0..n {
            out[j] += self.band[j][0] * v[j];
            for k in 1..3 {
                if k <= j {
                    out[j] += self.band[j][k] * v[j - k];
                    out[j - k] += self.band[j][k] * v[j];
                }
            }
        }
        out
    }

    /// Square-root-free banded Cholesky `LDLᵀ` of `Q − σ`; also the number
    /// of negative pivots, i.e. eigenvalues below `σ`.
    fn ldl(&self, sigma: f64) -> (Vec<[f64; 3]>, Vec<f64>, usize) {
        let n = self.size();
        let mut l = vec![[0.0; 3]; n];
        let mut d = vec![0.0; n];
        let mut neg = 0;
        for j in 0..n {
            for k in (1..3).rev() {
                if k > j {
                    continue;
                }
                let i = j - k;
                let mut v = self.band[j][k];
                // Σ_p L[j][p] D[p] L[i][p] over p < i within the band
                for q in 1..3 {
                    let p_off = k + q;
                    if p_off < 3 && p_off <= j {
                        let p = j - p_off;
                        v -= l[j][p_off] * d[p] * l[i][q];
                    }
                }
                l[j][k] = v / d[i];
            }
            let mut v = self.band[j][0] - sigma;
            for k in 1..3 {
                if k <= j {
                    v -= l[j][k] * l[j][k] * d[j - k];
                }
            }
            if v < 0.0 {
                neg += 1;
            }
            d[j] = if v == 0.0 { f64::MIN_POSITIVE } else { v };
        }
        (l, d, neg)
    }

    fn solve(l: &[[f64; 3]], d: &[f64], rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y = rhs.to_vec();
        for j in 0..n {
            for k in 1..3 {
                if k <= j {
                    y[j] -= l[j][k] * y[j - k];
                }
            }
        }
        for j in 0..n {
            y[j] /= d[j];
        }
        for j in (0..n).rev() {
            for k in 1..3 {
                if j + k < n {
                    y[j] -= l[j + k][k] * y[j + k];
                }
            }
        }
        y
    }

    /// Gershgorin bounds on the spectrum.
    fn gershgorin(&self) -> (f64, f64) {
        let n = self.size();
        let mut radius = vec![0.0; n];
        for j in 0..n {
            for k in 1..3 {
                if k <= j {
                    radius[j] += self.band[j][k].abs();
                    radius[j - k] += self.band[j][k].abs();
                }
            }
        }
        (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| {
            (lo.min(self.band[j][0] - radius[j]), hi.max(self.band[j][0] + radius[j]))
        })
    }
}

/// Assembles `Q` on `u = a ds⊗ds + b P` with linear elements in `x`:
///
/// ```text
/// ‖∇u‖² = a_s² + m b_s² + 2mH²(a − b)²
/// R(u,u) = 2m K_rad ab + m(m−1) K_tan b²
/// ⟨h∘u + u∘h, u⟩ = 2(h_rad a² + m h_tan b²)
/// ```
///
/// Derivative terms are integrated per element, the rest lumped at nodes.
pub fn assemble_q_form<T: Real>(m: &WarpedMetric<T>, trunc: &SpectralTruncation) -> Result<QFormMatrix> {
    let x: Vec<f64> = m.x().iter().map(|v| v.as_f64()).collect();
    let len = x.len();
    let lo = x.iter().position(|v| *v >= trunc.x_lo * (1.0 - 1e-12)).unwrap_or(len);
    let hi = x.iter().rposition(|v| *v <= trunc.x_hi * (1.0 + 1e-12)).unwrap_or(0);
    if hi <= lo || hi - lo - 1 < MIN_SPECTRAL_POINTS {
        return Err(Error::invalid(format!(
            "truncation [{}, {}] leaves {} interior points, need {MIN_SPECTRAL_POINTS}",
            trunc.x_lo,
            trunc.x_hi,
            hi.saturating_sub(lo + 1)
        )));
    }
    let bundle = curvature_closed_form(m, Accuracy::Fourth, DerivativeDepth::None)?;
    let (hf, _) = m.frame_data(&m.radial_data(Accuracy::Fourth)?);
    let dim = m.m();
    let mf = dim as f64;
    let a: Vec<f64> = m.a.values().iter().map(|v| v.as_f64()).collect();
    let b: Vec<f64> = m.b.values().iter().map(|v| v.as_f64()).collect();
    let w: Vec<f64> = (0..len)
        .map(|i| x[i].powi(-(m.n as i32)) * a[i].sqrt() * b[i].powf(mf / 2.0))
        .collect();
    // d/ds = (x/√A) d/dx; element stiffness weight (x²/A) w / Δx at the midpoint
    let elem: Vec<f64> = (0..len - 1)
        .map(|i| {
            let c = |j: usize| x[j] * x[j] / a[j] * w[j];
            0.5 * (c(i) + c(i + 1)) / (x[i + 1] - x[i])
        })
        .collect();
    let nodes: Vec<usize> = (lo + 1..hi).collect();
    let size = 2 * nodes.len();
    let mut band = vec![[0.0; 3]; size];
    let mass: Vec<f64> = nodes.iter().map(|&i| w[i] * 0.5 * (x[i + 1] - x[i - 1])).collect();
    let scale = |j: usize| -> f64 {
        let k = j / 2;
        if j % 2 == 0 {
            mass[k].sqrt()
        } else {
            (mf * mass[k]).sqrt()
        }
    };
    for (k, &i) in nodes.iter().enumerate() {
        let h2 = hf[i].as_f64().powi(2);
        let kr = bundle.k_rad.values()[i].as_f64();
        let kt = bundle.k_tan.values()[i].as_f64();
        let hr = bundle.h_rad.values()[i].as_f64();
        let ht = bundle.h_tan.values()[i].as_f64();
        let mk = mass[k];
        // node quadratic form in (a, b)
        let aa = mk * (2.0 * mf * h2 + 2.0 * hr);
        let bb = mk * (2.0 * mf * h2 - 2.0 * mf * (mf - 1.0) * kt + 2.0 * mf * ht);
        let ab = mk * (-2.0 * mf * h2 - 2.0 * mf * kr);
        // element stiffness on both neighbours of node i
        let sa = elem[i - 1] + elem[i];
        band[2 * k][0] += aa + sa;
        band[2 * k + 1][0] += bb + mf * sa;
        band[2 * k + 1][1] += ab;
        if k + 1 < nodes.len() {
            band[2 * (k + 1)][2] -= elem[i];
            band[2 * (k + 1) + 1][2] -= mf * elem[i];
        }
    }
    for j in 0..size {
        for d in 0..3 {
            if d <= j {
                band[j][d] /= scale(j) * scale(j - d);
            }
        }
    }
    Ok(QFormMatrix { band, rows: (lo, hi) })
}

/// Result of [`nondegeneracy_rayleigh`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectralEstimate {
    pub lambda: f64,
    /// Rayleigh quotients of the inverse iteration, non-increasing.
    pub history: Vec<f64>,
    pub subspace: String,
    pub truncation: SpectralTruncation,
    pub interior_points: usize,
    /// Shift used for the inverse iteration, below the bottom eigenvalue.
    pub shift: f64,
}

/// Smallest Rayleigh quotient `Q(u,g)/∫‖u‖²` over symmetric-class fields
/// vanishing at both truncation radii. The bottom eigenvalue is bracketed
/// by inertia counts of `LDLᵀ(Q − σ)`; inverse iteration from below the
/// bracket then converges in a few steps.
pub fn nondegeneracy_rayleigh<T: Real>(m: &WarpedMetric<T>, trunc: &SpectralTruncation) -> Result<SpectralEstimate> {
    let q = assemble_q_form(m, trunc)?;
    let n = q.size();
    let rayleigh = |v: &[f64]| -> f64 {
        let qv = q.matvec(v);
        qv.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|a| a * a).sum::<f64>()
    };
    let (mut lo, _) = q.gershgorin();
    let start: Vec<f64> = (0..n).map(|j| if j % 2 == 0 { 1.0 } else { 0.5 }).collect();
    let mut hi = rayleigh(&start);
    if q.ldl(lo).2 > 0 {
        return Err(Error::invalid("Gershgorin bound failed to bracket the spectrum"));
    }
    for _ in 0..200 {
        if hi - lo <= 1e-6 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if q.ldl(mid).2 == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = lo - 1e-6 * lo.abs().max(1.0);
    let (l, d, neg) = q.ldl(shift);
    debug_assert_eq!(neg, 0);
    let mut v = start;
    let mut history = vec![rayleigh(&v)];
    for _ in 0..SPECTRAL_MAX_ITER {
        v = QFormMatrix::solve(&l, &d, &v);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        let r = rayleigh(&v);
        let prev = *history.last().expect("nonempty");
        history.push(r);
        if (prev - r).abs() < SPECTRAL_TOL {
            return Ok(SpectralEstimate {
                lambda: r,
                history,
                subspace: "symmetric class u = a(x) dx² + b(x) x⁻²B σ; an upper bound for the full infimum".into(),
                truncation: *trunc,
                interior_points: n / 2,
                shift,
            });
        }
    }
    let k = history.len();
    Err(Error::IterationStall {
        iterations: SPECTRAL_MAX_ITER,
        last_change: (history[k - 1] - history[k - 2]).abs(),
    })
}

// ---------------------------------------------------------------------------
// condition B

/// `B(k₀, v₀, λ₀)` ingredients plus `k₁`, each with where it came from.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConditionBReport {
    pub k0: f64,
    pub k0_source: String,
    pub k1: f64,
    pub k1_source: String,
    pub v0: f64,
    pub v0_source: String,
    pub lambda: f64,
    pub lambda_source: String,
}

/// Number of centres sampled for the volume proxy.
const VOLUME_CENTRES: usize = 16;

pub fn condition_b_report<T: Real>(m: &WarpedMetric<T>) -> Result<ConditionBReport> {
    let bundle = curvature_closed_form(m, Accuracy::Fourth, DerivativeDepth::First)?;
    let len = m.len();
    let edge = derivative_edge_rows(len, m.grid().boundary_ghosts);
    let k0 = bundle.rm_norm.values().iter().map(|v| v.as_f64()).fold(0.0, f64::max);
    let drm = bundle.drm_norm.as_ref().expect("first derivatives requested");
    let k1 = drm.values()[edge..len - edge].iter().map(|v| v.as_f64()).fold(0.0, f64::max);
    let (x0, x1) = (m.grid().x_min().as_f64(), m.grid().x_max().as_f64());
    let mut v0 = f64::INFINITY;
    for k in 0..VOLUME_CENTRES {
        let xc = x0 * (x1 / x0).powf(k as f64 / (VOLUME_CENTRES - 1) as f64);
        let xc = xc.clamp(x0, x1);
        v0 = v0.min(unit_ball_volume_proxy(m, T::lit(xc))?.lower_bound);
    }
    let est = nondegeneracy_rayleigh(m, &SpectralTruncation::whole(m))?;
    Ok(ConditionBReport {
        k0,
        k0_source: "sup of the closed-form ‖Rm‖ over the grid".into(),
        k1,
        k1_source: format!("sup of ‖∇Rm‖ from the invariant-tensor covariant derivative, {edge} edge rows excluded"),
        v0,
        v0_source: format!("minimum certified tube lower bound for vol B(p,1) over {VOLUME_CENTRES} log-spaced centres"),
        lambda: est.lambda,
        lambda_source: "symmetric-class Rayleigh estimate over the whole grid (upper bound for λ)".into(),
    })
}

// ---------------------------------------------------------------------------
// defining function

/// `|Δ_g x − (2−n)x|/x` and `|‖∇x‖² − x²|/x²` along a trajectory, with
/// the constants `C` of the bound `C(δ + x)` and `δ = ∫₀ᵗ sup‖h‖`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DefiningFunctionReport {
    pub delta: f64,
    pub laplacian: ResidualReport,
    pub gradient: ResidualReport,
    pub c_laplacian: f64,
    pub c_gradient: f64,
    /// Log-log slope of the Laplacian residual (divided by `x`) against `x`.
    pub laplacian_slope: PowerFit,
}

/// Evaluates the two residual fields on `metric`, restricted to `window`.
pub fn defining_function_residuals<T: Real>(m: &WarpedMetric<T>, window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = m.n;
    let half_m = T::count(m.m()) / T::lit(2.0);
    let x = m.x();
    let (a, b) = (m.a.values(), m.b.values());
    // Δx = (1/√det) ∂_x(√det g^{xx}), √det = x^{−n}√(A Bᵐ)
    let flux: Vec<T> = (0..m.len())
        .map(|i| x[i].powi(2 - n as i32) * b[i].powf(half_m) / a[i].sqrt())
        .collect();
    let dflux = diff(m.grid(), &flux, 1, Accuracy::Fourth)?;
    let edge = derivative_edge_rows(m.len(), m.grid().boundary_ghosts);
    let mut xs = Vec::new();
    let mut lap = Vec::new();
    let mut grad = Vec::new();
    for i in edge..m.len() - edge {
        let xi = x[i].as_f64();
        if xi < window.0 || xi > window.1 {
            continue;
        }
        let vol = x[i].powi(-(n as i32)) * a[i].sqrt() * b[i].powf(half_m);
        let delta_x = dflux[i] / vol;
        let r = (delta_x - (T::lit(2.0) - T::count(n)) * x[i]).abs() / x[i];
        xs.push(xi);
        lap.push(r.as_f64());
        grad.push((T::one() / a[i] - T::one()).abs().as_f64());
    }
    Ok((xs, lap, grad))
}

/// Checks every snapshot; `C` is the largest ratio residual/(δ(t) + x)
/// over snapshots and the window.
pub fn defining_function_checks<T: Real>(traj: &FlowTrajectory<T>, window: (f64, f64)) -> Result<DefiningFunctionReport> {
    let (ts, hs): (Vec<f64>, Vec<f64>) = traj.sup_h_history();
    let delta_at = |t: f64| -> f64 {
        let mut acc = 0.0;
        for k in 1..ts.len() {
            if ts[k - 1] >= t {
                break;
            }
            let t1 = ts[k].min(t);
            let frac = if ts[k] > ts[k - 1] { (t1 - ts[k - 1]) / (ts[k] - ts[k - 1]) } else { 0.0 };
            let h1 = hs[k - 1] + frac * (hs[k] - hs[k - 1]);
            acc += 0.5 * (hs[k - 1] + h1) * (t1 - ts[k - 1]);
        }
        acc
    };
    let mut c_lap: f64 = 0.0;
    let mut c_grad: f64 = 0.0;
    let mut last = None;
    for snap in &traj.snapshots {
        let d = delta_at(snap.t());
        let (xs, lap, grad) = defining_function_residuals(&snap.metric, window)?;
        for k in 0..xs.len() {
            c_lap = c_lap.max(lap[k] / (d + xs[k]));
            c_grad = c_grad.max(grad[k] / (d + xs[k]));
        }
        last = Some((d, xs, lap, grad));
    }
    let (delta, xs, lap, grad) = last.ok_or_else(|| Error::InsufficientSnapshots("trajectory has no snapshots".into()))?;
    let laplacian_slope = power_law_fit(&xs, &lap, window, 1e-14);
    Ok(DefiningFunctionReport {
        delta,
        laplacian: ResidualReport::new("defining-function-laplacian", xs.clone(), lap),
        gradient: ResidualReport::new("defining-function-gradient", xs, grad),
        c_laplacian: c_lap,
        c_gradient: c_grad,
        laplacian_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run, FlowConfig};
    use crate::geometry::CrossSection;
    use crate::grid::RadialGrid;
    use crate::initial_data::{build_glued_candidate, random_perturbation, BoundaryData, GlueRecipe, Remainder};
    use std::sync::Arc;

    fn grid(n: usize, stretch: f64) -> Arc<RadialGrid<f64>> {
        Arc::new(RadialGrid::build(n, 1.0, stretch).unwrap())
    }

    fn hyperbolic(n: usize, stretch: f64) -> WarpedMetric<f64> {
        WarpedMetric::einstein(grid(n, stretch), 5, CrossSection::Sphere).unwrap()
    }

    fn perturbed(n: usize) -> WarpedMetric<f64> {
        random_perturbation(grid(n, 1.0), 5, CrossSection::Sphere, 1e-2, 7).unwrap()
    }

    fn interior_sup(v: &[f64], len: usize) -> f64 {
        let e = len / 16;
        v[e..len - e].iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// `Δv` through the divergence form `(1/√det) ∂_x(√det x²/A v_x)`.
    fn scalar_laplacian(m: &WarpedMetric<f64>, v: &[f64]) -> Vec<f64> {
        let x = m.x();
        let (a, b) = (m.a.values(), m.b.values());
        let vol: Vec<f64> = (0..m.len()).map(|i| x[i].powi(-5) * a[i].sqrt() * b[i].powi(2)).collect();
        let vx = diff(m.grid(), v, 1, Accuracy::Fourth).unwrap();
        let flux: Vec<f64> = (0..m.len()).map(|i| vol[i] * x[i] * x[i] / a[i] * vx[i]).collect();
        let df = diff(m.grid(), &flux, 1, Accuracy::Fourth).unwrap();
        (0..m.len()).map(|i| df[i] / vol[i]).collect()
    }

    #[test]
    fn lichnerowicz_annihilates_the_metric() {
        let m = perturbed(256);
        let out = lichnerowicz_apply(&SymmetricField::conformal(&vec![1.0; m.len()]), &m, Accuracy::Fourth).unwrap();
        assert!(interior_sup(&out.rad, m.len()) < 1e-8);
        assert!(interior_sup(&out.tan, m.len()) < 1e-8);
    }

    #[test]
    fn lichnerowicz_of_conformal_field() {
        let mut errs = Vec::new();
        for n in [128, 256] {
            let m = perturbed(n);
            let v: Vec<f64> = m.x().iter().map(|x| x * x * (3.0 * x).sin()).collect();
            let out = lichnerowicz_apply(&SymmetricField::conformal(&v), &m, Accuracy::Fourth).unwrap();
            let lap = scalar_laplacian(&m, &v);
            let r: Vec<f64> = (0..n).map(|i| (out.rad[i] + lap[i]).abs().max((out.tan[i] + lap[i]).abs())).collect();
            errs.push(interior_sup(&r, n));
        }
        assert!(errs[1] < 5e-7, "{errs:?}");
        assert!(errs[1] < errs[0] / 8.0, "{errs:?}");
    }

    #[test]
    fn q_form_has_two_consistent_expressions() {
        let m = perturbed(512);
        let bundle = curvature_closed_form(&m, Accuracy::Fourth, DerivativeDepth::None).unwrap();
        let (x0, x1) = (m.x()[0], m.grid().x_max());
        let bump: Vec<f64> = m.x().iter().map(|x| (std::f64::consts::PI * (x - x0) / (x1 - x0)).sin().powi(4)).collect();
        let u = SymmetricField::pinching(&bundle).mul_field(&bump);
        let q = q_form_dual(&u, &m, Accuracy::Fourth).unwrap();
        assert!(q.relative < 1e-4, "{q:?}");
    }

    #[test]
    fn evolution_residuals_refuse_gauged_flows() {
        let m = hyperbolic(64, 4.0);
        let cfg = FlowConfig { t_final: 1e-3, snapshot_times: vec![5e-4], ..FlowConfig::default() };
        let traj = run(&m, &cfg).unwrap();
        assert!(matches!(evolution_residuals(&traj, (0.1, 0.6)), Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn evolution_residuals_vanish_on_hyperbolic_space() {
        let m = hyperbolic(128, 1.0);
        let cfg = FlowConfig {
            mode: FlowMode::Nrf,
            t_final: 2e-3,
            snapshot_times: vec![1e-3],
            ..FlowConfig::default()
        };
        let traj = run(&m, &cfg).unwrap();
        for r in evolution_residuals(&traj, (0.1, 0.6)).unwrap() {
            assert!(r.sup < 1e-7, "{} {}", r.identity, r.sup);
        }
    }

    #[test]
    fn uneven_snapshot_triples_are_refused() {
        let m = hyperbolic(64, 1.0);
        let cfg = FlowConfig { mode: FlowMode::Nrf, t_final: 1e-3, snapshot_times: vec![1e-4], ..FlowConfig::default() };
        let traj = run(&m, &cfg).unwrap();
        assert!(matches!(evolution_residuals(&traj, (0.1, 0.6)), Err(Error::InsufficientSnapshots(_))));
    }

    #[test]
    fn rayleigh_matches_dense_eigensolve() {
        let m = hyperbolic(96, 4.0);
        let trunc = SpectralTruncation::whole(&m);
        let est = nondegeneracy_rayleigh(&m, &trunc).unwrap();
        let q = assemble_q_form(&m, &trunc).unwrap();
        let n = q.size();
        let dense = nalgebra::DMatrix::from_row_slice(n, n, &q.dense());
        let lo = dense.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((est.lambda - lo).abs() <= 1e-6 * lo.abs(), "{} vs {lo}", est.lambda);
        assert!(est.lambda >= lo - 1e-9);
        assert!(est.history.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", est.history);
    }

    #[test]
    fn rayleigh_decreases_as_the_collar_deepens() {
        let m = hyperbolic(512, 20.0);
        let lambdas: Vec<f64> = [0.1, 0.03, 0.01]
            .iter()
            .map(|&lo| nondegeneracy_rayleigh(&m, &SpectralTruncation { x_lo: lo, x_hi: 1.0 }).unwrap().lambda)
            .collect();
        assert!(lambdas.windows(2).all(|w| w[1] < w[0]), "{lambdas:?}");
    }

    #[test]
    fn too_small_truncation_is_rejected() {
        let m = hyperbolic(128, 1.0);
        assert!(nondegeneracy_rayleigh(&m, &SpectralTruncation { x_lo: 0.5, x_hi: 0.6 }).is_err());
    }

    #[test]
    fn condition_b_on_hyperbolic_space() {
        let m = hyperbolic(256, 4.0);
        let rep = condition_b_report(&m).unwrap();
        // ‖Rm‖² = 4(m + m(m−1)/2) at sectional curvature −1, m = 4
        assert!((rep.k0 - 40f64.sqrt()).abs() < 1e-6, "{rep:?}");
        assert!(rep.k1 < 1e-4, "{rep:?}");
        assert!(rep.v0 > 0.0 && rep.v0.is_finite());
        assert!(rep.lambda.is_finite() && rep.lambda > 0.0);
    }

    #[test]
    fn condition_b_of_a_glued_candidate_is_close_to_the_base() {
        let base = hyperbolic(256, 4.0);
        let boundary = BoundaryData::new(CrossSection::Sphere, 1.01).unwrap();
        let recipe = GlueRecipe { k: 2, nu1: 0.2, remainder: Remainder::Truncated };
        let glued = build_glued_candidate(&base, &boundary, &recipe).unwrap();
        let (rb, rg) = (condition_b_report(&base).unwrap(), condition_b_report(&glued).unwrap());
        for v in [rg.k0, rg.k1, rg.v0, rg.lambda] {
            assert!(v.is_finite());
        }
        assert!((rg.lambda - rb.lambda).abs() < 0.1 * rb.lambda, "{} vs {}", rg.lambda, rb.lambda);
    }

    #[test]
    fn defining_function_on_hyperbolic_space() {
        let m = hyperbolic(512, 20.0);
        let cfg = FlowConfig { mode: FlowMode::Nrf, t_final: 1e-3, ..FlowConfig::default() };
        let traj = run(&m, &cfg).unwrap();
        let rep = defining_function_checks(&traj, (0.01, 0.3)).unwrap();
        let slope = rep.laplacian_slope.exponent.expect("fit");
        assert!((slope - 2.0).abs() < 0.1, "{:?}", rep.laplacian_slope);
        assert!(rep.gradient.sup < 1e-10);
        let (xs, lap, _) = defining_function_residuals(traj.last(), (0.01, 0.3)).unwrap();
        assert_eq!(xs, rep.laplacian.x);
        assert!(lap.iter().zip(&rep.laplacian.residual).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn refinement_slope_of_exact_second_order() {
        let coarse = vec![ResidualReport::new("e", vec![0.5], vec![4e-4])];
        let fine = vec![ResidualReport::new("e", vec![0.5], vec![1e-4])];
        let r = refine_reports(&coarse, &fine, 100, 200).unwrap();
        assert!((r[0].slope.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(r[0].pass, Some(true));
    }
}
