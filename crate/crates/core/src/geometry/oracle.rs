//! Brute-force curvature: explicit metric components on an `n`-dimensional
//! chart `(x, y¹…y^m)`, textbook Christoffel and Riemann formulas, finite
//! differences everywhere.
//!
//! The cross-section chart is stereographic for the sphere, the Poincaré
//! ball for hyperbolic space and Cartesian for the torus; its derivatives
//! are taken by fourth-order central differences with step
//! `chart_resolution`. Radial second derivatives are composed first
//! derivatives (inner fourth order, outer second order), so the oracle and
//! the closed form differ by a genuine `O(Δ²)` term.
//!
//! Riemann convention:
//! `R_ijkl = ½(−∂_j∂_l g_ik − ∂_i∂_k g_jl + ∂_i∂_l g_jk + ∂_j∂_k g_il)
//!           − g^{pq}([ik,p][jl,q] − [il,p][jk,q])`,
//! for which `R_ijij = K (g_ii g_jj − g_ij²)` and `Ric_ik = g^{jl} R_ijkl`.

use serde::Serialize;

use super::{CrossSection, CurvatureBundle, WarpedMetric};
use crate::error::{Error, Result};
use crate::grid::{Accuracy, ScalarField};
use crate::scalar::{sup_abs, Real};

/// Candidate chart points; the first non-degenerate one is used.
const SAMPLE_POINTS: [[f64; 7]; 3] = [
    [0.31, -0.17, 0.23, 0.11, -0.29, 0.07, 0.19],
    [-0.12, 0.26, -0.08, 0.21, 0.14, -0.18, 0.05],
    [0.05, 0.04, -0.06, 0.03, 0.02, -0.04, 0.01],
];

fn chart_metric<T: Real>(cs: CrossSection, y: &[T]) -> Vec<T> {
    let m = y.len();
    let r2: T = y.iter().map(|v| *v * *v).sum();
    let factor = match cs {
        CrossSection::Torus => T::one(),
        _ => {
            let q = T::one() + cs.kappa_t::<T>() * r2;
            T::lit(4.0) / (q * q)
        }
    };
    let mut s = vec![T::zero(); m * m];
    for a in 0..m {
        s[a * m + a] = factor;
    }
    s
}

fn chart_ok<T: Real>(cs: CrossSection, y: &[T]) -> bool {
    let r2: T = y.iter().map(|v| *v * *v).sum();
    match cs {
        CrossSection::Hyperbolic => r2 < T::lit(0.81),
        _ => r2.is_finite(),
    }
}

/// `(σ, ∂σ, ∂∂σ)` at `y`, differentiated numerically.
struct ChartJet<T> {
    s: Vec<T>,
    ds: Vec<T>,
    dds: Vec<T>,
}

fn chart_jet<T: Real>(cs: CrossSection, y: &[T], eps: T) -> ChartJet<T> {
    let m = y.len();
    let mm = m * m;
    let at = |shift: &[(usize, T)]| {
        let mut p = y.to_vec();
        for (c, d) in shift {
            p[*c] += *d;
        }
        chart_metric(cs, &p)
    };
    let w1 = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    let twelve = T::lit(12.0);
    let s = chart_metric(cs, y);
    let mut ds = vec![T::zero(); m * mm];
    for c in 0..m {
        for (k, w) in w1 {
            let v = at(&[(c, eps * T::lit(k))]);
            for e in 0..mm {
                ds[c * mm + e] += T::lit(w) * v[e] / (twelve * eps);
            }
        }
    }
    let mut dds = vec![T::zero(); mm * mm];
    let w2 = [(-2.0, -1.0), (-1.0, 16.0), (0.0, -30.0), (1.0, 16.0), (2.0, -1.0)];
    for c in 0..m {
        for d in 0..m {
            let mut acc = vec![T::zero(); mm];
            if c == d {
                for (k, w) in w2 {
                    let v = at(&[(c, eps * T::lit(k))]);
                    for e in 0..mm {
                        acc[e] += T::lit(w) * v[e] / (twelve * eps * eps);
                    }
                }
            } else {
                for (k, wk) in w1 {
                    for (l, wl) in w1 {
                        let v = at(&[(c, eps * T::lit(k)), (d, eps * T::lit(l))]);
                        for e in 0..mm {
                            acc[e] += T::lit(wk * wl) * v[e] / (twelve * twelve * eps * eps);
                        }
                    }
                }
            }
            dds[(c * m + d) * mm..(c * m + d + 1) * mm].copy_from_slice(&acc);
        }
    }
    ChartJet { s, ds, dds }
}

/// Radial values of `(A, A_x, A_xx, B, B_x, B_xx)` at one grid point.
#[derive(Clone, Copy)]
struct RadialJet<T> {
    x: T,
    a: [T; 3],
    b: [T; 3],
}

/// Value and first two derivatives of `c(x) / x²`.
fn over_x2<T: Real>(x: T, c: [T; 3]) -> [T; 3] {
    let x2 = x * x;
    let x3 = x2 * x;
    let x4 = x3 * x;
    [
        c[0] / x2,
        c[1] / x2 - T::lit(2.0) * c[0] / x3,
        c[2] / x2 - T::lit(4.0) * c[1] / x3 + T::lit(6.0) * c[0] / x4,
    ]
}

/// Metric jet at one chart point: `g_ij`, `∂_k g_ij`, `∂_k ∂_l g_ij`.
struct MetricJet<T> {
    n: usize,
    g: Vec<T>,
    gi: Vec<T>,
    dg: Vec<T>,
    ddg: Vec<T>,
}

fn metric_jet<T: Real>(r: RadialJet<T>, chart: &ChartJet<T>) -> Result<MetricJet<T>> {
    let m = (chart.s.len() as f64).sqrt().round() as usize;
    let n = m + 1;
    let nn = n * n;
    let p = over_x2(r.x, r.a);
    let q = over_x2(r.x, r.b);
    let mut g = vec![T::zero(); nn];
    let mut dg = vec![T::zero(); n * nn];
    let mut ddg = vec![T::zero(); nn * nn];
    let ix = |i: usize, j: usize| i * n + j;
    g[0] = p[0];
    dg[0] = p[1];
    ddg[0] = p[2];
    for a in 0..m {
        for b in 0..m {
            let sab = chart.s[a * m + b];
            let e = ix(a + 1, b + 1);
            g[e] = q[0] * sab;
            dg[e] = q[1] * sab;
            ddg[e] = q[2] * sab;
            for c in 0..m {
                let dc = chart.ds[c * m * m + a * m + b];
                dg[(c + 1) * nn + e] = q[0] * dc;
                ddg[(c + 1) * nn + e] = q[1] * dc;
                ddg[(c + 1) * n * nn + e] = q[1] * dc;
                for d in 0..m {
                    let dcd = chart.dds[(c * m + d) * m * m + a * m + b];
                    ddg[((c + 1) * n + d + 1) * nn + e] = q[0] * dcd;
                }
            }
        }
    }
    let gi = invert(&g, n)?;
    Ok(MetricJet { n, g, gi, dg, ddg })
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert<T: Real>(mat: &[T], n: usize) -> Result<Vec<T>> {
    let mut a = mat.to_vec();
    let mut inv = vec![T::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = T::one();
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())
            .unwrap();
        if !(a[piv * n + col].abs() > T::zero()) {
            return Err(Error::ChartDegenerate("singular chart metric".into()));
        }
        for k in 0..n {
            a.swap(col * n + k, piv * n + k);
            inv.swap(col * n + k, piv * n + k);
        }
        let d = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i * n + col];
                for k in 0..n {
                    a[i * n + k] = a[i * n + k] - f * a[col * n + k];
                    inv[i * n + k] = inv[i * n + k] - f * inv[col * n + k];
                }
            }
        }
    }
    Ok(inv)
}

/// Curvature at one chart point: Christoffels of the second kind `Γ^k_ij`
/// (stored `[k][i][j]`) and `R_ijkl`.
struct PointCurvature<T> {
    gamma: Vec<T>,
    rm: Vec<T>,
}

fn point_curvature<T: Real>(jet: &MetricJet<T>) -> PointCurvature<T> {
    let n = jet.n;
    let nn = n * n;
    let dg = |k: usize, i: usize, j: usize| jet.dg[k * nn + i * n + j];
    let ddg = |k: usize, l: usize, i: usize, j: usize| jet.ddg[(k * n + l) * nn + i * n + j];
    let half = T::lit(0.5);
    // first kind [ij,k]
    let mut first = vec![T::zero(); n * nn];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                first[(i * n + j) * n + k] = half * (dg(i, j, k) + dg(j, i, k) - dg(k, i, j));
            }
        }
    }
    let mut gamma = vec![T::zero(); n * nn];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..n {
                    acc += jet.gi[k * n + p] * first[(i * n + j) * n + p];
                }
                gamma[k * nn + i * n + j] = acc;
            }
        }
    }
    let mut rm = vec![T::zero(); nn * nn];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let second = half
                        * (-ddg(j, l, i, k) - ddg(i, k, j, l) + ddg(i, l, j, k) + ddg(j, k, i, l));
                    let mut quad = T::zero();
                    for p in 0..n {
                        quad += first[(i * n + k) * n + p] * gamma[p * nn + j * n + l]
                            - first[(i * n + l) * n + p] * gamma[p * nn + j * n + k];
                    }
                    rm[((i * n + j) * n + k) * n + l] = second - quad;
                }
            }
        }
    }
    PointCurvature { gamma, rm }
}

fn ricci_of<T: Real>(rm: &[T], gi: &[T], n: usize) -> Vec<T> {
    let mut ric = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let mut acc = T::zero();
            for j in 0..n {
                for l in 0..n {
                    acc += gi[j * n + l] * rm[((i * n + j) * n + k) * n + l];
                }
            }
            ric[i * n + k] = acc;
        }
    }
    ric
}

/// `T_{a…} T^{a…}` with all indices raised by `gi`.
fn full_norm_sq<T: Real>(t: &[T], rank: usize, gi: &[T], n: usize) -> T {
    let mut up = t.to_vec();
    for slot in 0..rank {
        let stride = n.pow((rank - 1 - slot) as u32);
        let mut next = vec![T::zero(); up.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let a = (idx / stride) % n;
            let base = idx - a * stride;
            let mut acc = T::zero();
            for q in 0..n {
                acc += gi[a * n + q] * up[base + q * stride];
            }
            *out = acc;
        }
        up = next;
    }
    t.iter().zip(&up).map(|(a, b)| *a * *b).sum()
}

/// Covariant derivative `∇_k T_{a…}` from partials `∂_k T` (stored `[k][a…]`).
fn covariant<T: Real>(t: &[T], partial: &[T], gamma: &[T], rank: usize, n: usize) -> Vec<T> {
    let size = t.len();
    let nn = n * n;
    let mut out = partial.to_vec();
    for k in 0..n {
        for idx in 0..size {
            let mut corr = T::zero();
            for slot in 0..rank {
                let stride = n.pow((rank - 1 - slot) as u32);
                let a = (idx / stride) % n;
                let base = idx - a * stride;
                for p in 0..n {
                    corr += gamma[p * nn + k * n + a] * t[base + p * stride];
                }
            }
            out[k * size + idx] -= corr;
        }
    }
    out
}

struct Slice<T> {
    jet: MetricJet<T>,
    curv: PointCurvature<T>,
    h: Vec<T>,
}

fn slice_at<T: Real>(cs: CrossSection, r: RadialJet<T>, y: &[T], eps: T) -> Result<Slice<T>> {
    let chart = chart_jet(cs, y, eps);
    let jet = metric_jet(r, &chart)?;
    let curv = point_curvature(&jet);
    let n = jet.n;
    let ric = ricci_of(&curv.rm, &jet.gi, n);
    let off = T::count(n - 1);
    let h = ric.iter().zip(&jet.g).map(|(r, g)| *r + off * *g).collect();
    Ok(Slice { jet, curv, h })
}

/// Curvature bundle computed from the textbook coordinate formulas. The
/// second-derivative norms are not produced.
pub fn curvature_fd_oracle<T: Real>(m: &WarpedMetric<T>, chart_resolution: T) -> Result<CurvatureBundle<T>> {
    if !(chart_resolution > T::zero()) {
        return Err(Error::invalid("chart_resolution must be positive"));
    }
    for (field, f) in [("A", &m.a), ("B", &m.b)] {
        if let Some((x, v)) = f.grid().points().iter().zip(f.values()).find(|(_, v)| !(**v > T::zero())) {
            return Err(Error::NonpositiveMetric {
                field,
                x: x.as_f64(),
                value: v.as_f64(),
            });
        }
    }
    let grid = m.grid().clone();
    let n = m.n;
    let dim = m.m();
    let cs = m.cross_section;
    let y0: Vec<T> = SAMPLE_POINTS
        .iter()
        .map(|p| p[..dim].iter().map(|v| T::lit(*v)).collect::<Vec<T>>())
        .find(|y| chart_ok(cs, y))
        .ok_or_else(|| Error::ChartDegenerate("no admissible chart sample point".into()))?;

    let d1 = grid.operator(1, Accuracy::Fourth)?;
    let d1c = grid.operator(1, Accuracy::Second)?;
    let ax = d1.apply(m.a.values());
    let bx = d1.apply(m.b.values());
    let axx = d1c.apply(&ax);
    let bxx = d1c.apply(&bx);
    let x = grid.points();
    let len = x.len();
    let radial = |i: usize| RadialJet {
        x: x[i],
        a: [m.a.values()[i], ax[i], axx[i]],
        b: [m.b.values()[i], bx[i], bxx[i]],
    };

    let slices: Vec<Slice<T>> = (0..len)
        .map(|i| slice_at(cs, radial(i), &y0, chart_resolution))
        .collect::<Result<_>>()?;

    let nn = n * n;
    let n4 = nn * nn;
    let ix = |i: usize, j: usize| i * n + j;
    let (t1, t2) = (1usize, 2usize);
    let mut cols: [Vec<T>; 12] = Default::default();
    for (i, s) in slices.iter().enumerate() {
        let g = &s.jet.g;
        let rm = &s.curv.rm;
        let ric = ricci_of(rm, &s.jet.gi, n);
        let sig11 = g[ix(t1, t1)];
        let k_rad = rm[((0 * n + t1) * n) * n + t1] / (g[0] * sig11 - g[ix(0, t1)].powi(2));
        let k_tan = rm[((t1 * n + t2) * n + t1) * n + t2]
            / (sig11 * g[ix(t2, t2)] - g[ix(t1, t2)].powi(2));
        let scalar: T = (0..nn).map(|e| s.jet.gi[e] * ric[e]).sum();
        let row = [
            s.curv.gamma[0],
            // Γ^x_{αβ} = c σ_{αβ} with σ_11 = g_11 x² / B
            s.curv.gamma[ix(t1, t1)] * m.b.values()[i] / (sig11 * x[i] * x[i]),
            s.curv.gamma[t1 * nn + ix(0, t1)],
            k_rad,
            k_tan,
            ric[0] / g[0],
            ric[ix(t1, t1)] / sig11,
            scalar,
            s.h[0] / g[0],
            s.h[ix(t1, t1)] / sig11,
            full_norm_sq(rm, 4, &s.jet.gi, n).max(T::zero()).sqrt(),
            full_norm_sq(&s.h, 2, &s.jet.gi, n).max(T::zero()).sqrt(),
        ];
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    // derivative norms: ∂_x through rescaled components, ∂_y by re-evaluation
    let rescaled_dx = |get: &dyn Fn(usize) -> T, p: i32| -> Vec<T> {
        let vals: Vec<T> = (0..len).map(|i| x[i].powi(p) * get(i)).collect();
        let d = d1.apply(&vals);
        (0..len)
            .map(|i| d[i] / x[i].powi(p) - T::lit(p as f64) * get(i) / x[i])
            .collect()
    };
    let mut dh_x = vec![vec![T::zero(); len]; nn];
    for (e, col) in dh_x.iter_mut().enumerate() {
        *col = rescaled_dx(&|i| slices[i].h[e], 2);
    }
    let mut drm_x = vec![vec![T::zero(); len]; n4];
    for (e, col) in drm_x.iter_mut().enumerate() {
        if slices.iter().all(|s| s.curv.rm[e] == T::zero()) {
            continue;
        }
        *col = rescaled_dx(&|i| slices[i].curv.rm[e], 4);
    }

    let w1 = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
    let eps_y = chart_resolution * T::lit(4.0);
    let mut dh_norm = Vec::with_capacity(len);
    let mut drm_norm = Vec::with_capacity(len);
    for i in 0..len {
        let s = &slices[i];
        let mut ph = vec![T::zero(); n * nn];
        let mut prm = vec![T::zero(); n * n4];
        for e in 0..nn {
            ph[e] = dh_x[e][i];
        }
        for e in 0..n4 {
            prm[e] = drm_x[e][i];
        }
        for c in 0..dim {
            for (k, w) in w1 {
                let mut y = y0.clone();
                y[c] += eps_y * T::lit(k);
                let sh = slice_at(cs, radial(i), &y, chart_resolution)?;
                let f = T::lit(w) / (T::lit(12.0) * eps_y);
                for e in 0..nn {
                    ph[(c + 1) * nn + e] += f * sh.h[e];
                }
                for e in 0..n4 {
                    prm[(c + 1) * n4 + e] += f * sh.curv.rm[e];
                }
            }
        }
        let dh = covariant(&s.h, &ph, &s.curv.gamma, 2, n);
        let drm = covariant(&s.curv.rm, &prm, &s.curv.gamma, 4, n);
        dh_norm.push(full_norm_sq(&dh, 3, &s.jet.gi, n).max(T::zero()).sqrt());
        drm_norm.push(full_norm_sq(&drm, 5, &s.jet.gi, n).max(T::zero()).sqrt());
    }

    let mut it = cols.into_iter().map(|v| ScalarField::new(grid.clone(), v));
    let mut next = || it.next().expect("column count");
    Ok(CurvatureBundle {
        n,
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
        dh_norm: Some(ScalarField::new(grid.clone(), dh_norm)?),
        drm_norm: Some(ScalarField::new(grid, drm_norm)?),
        ddh_norm: None,
        ddrm_norm: None,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldDifference {
    pub field: String,
    /// `sup|a − b| / max(sup|b|, 1)`.
    pub relative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BundleComparison {
    pub fields: Vec<FieldDifference>,
}

impl BundleComparison {
    pub fn max_relative(&self) -> f64 {
        self.fields.iter().map(|f| f.relative).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.fields.iter().find(|f| f.field == name).map(|f| f.relative)
    }
}

/// Rows excluded at each end when comparing covariant-derivative norms:
/// there one-sided stencils are applied twice and the difference between
/// two consistent discretizations is only first order.
pub fn derivative_edge_rows(len: usize, boundary_ghosts: usize) -> usize {
    boundary_ghosts.max(len / 16)
}

/// Field-by-field comparison of two bundles on the same grid. Derivative
/// norms skip the edge layer of [`derivative_edge_rows`].
pub fn compare_bundles<T: Real>(a: &CurvatureBundle<T>, reference: &CurvatureBundle<T>) -> BundleComparison {
    let ghosts = derivative_edge_rows(a.grid().len(), a.grid().boundary_ghosts);
    let rc = reference.columns();
    let fields = a
        .columns()
        .into_iter()
        .filter_map(|(name, fa)| {
            let fb = rc.iter().find(|(nb, _)| *nb == name)?.1;
            let (va, vb) = if name.starts_with("norm_grad") {
                let len = fa.len();
                (&fa.values()[ghosts..len - ghosts], &fb.values()[ghosts..len - ghosts])
            } else {
                (fa.values(), fb.values())
            };
            let diff = va.iter().zip(vb).fold(T::zero(), |acc, (p, q)| acc.max((*p - *q).abs()));
            let scale = sup_abs(vb).max(T::one());
            Some(FieldDifference {
                field: name.to_string(),
                relative: (diff / scale).as_f64(),
            })
        })
        .collect();
    BundleComparison { fields }
}
