//! Compactified radial grids and finite-difference operators.
//!
//! The collar coordinate `x` lives in `(0, x_max]`; the conformal boundary
//! `x = 0` is approached but never included. Grids are either uniform or
//! geometrically stretched toward `x = 0`, in which case consecutive spacings
//! grow by a constant ratio and the largest spacing is `stretch` times the
//! smallest.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{linear_fit, Real};

/// Smallest admissible grid size.
pub const MIN_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingPolicy {
    Uniform,
    GeometricStretch,
    /// Points supplied explicitly (e.g. the geodesic-gauge radii of a normal form).
    Explicit,
}

/// Formal accuracy of a finite-difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accuracy {
    Second,
    Fourth,
}

impl Accuracy {
    pub fn order(self) -> usize {
        match self {
            Accuracy::Second => 2,
            Accuracy::Fourth => 4,
        }
    }

    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            2 => Ok(Accuracy::Second),
            4 => Ok(Accuracy::Fourth),
            _ => Err(Error::invalid(format!("accuracy must be 2 or 4, got {order}"))),
        }
    }
}

/// One row of a finite-difference operator.
#[derive(Clone, Debug)]
struct Stencil<T> {
    start: usize,
    weights: Vec<T>,
}

/// Precomputed first- or second-derivative operator on a fixed grid.
#[derive(Clone, Debug)]
pub struct DiffOperator<T> {
    rows: Vec<Stencil<T>>,
    one_sided_rows: usize,
}

impl<T: Real> DiffOperator<T> {
    fn build(points: &[T], order: usize, accuracy: Accuracy) -> Result<Self> {
        let n = points.len();
        let half = accuracy.order() / 2;
        let centered = 2 * half + 1;
        let one_sided = accuracy.order() + order;
        let needed = centered.max(one_sided);
        if n < needed {
            return Err(Error::StencilUnderflow {
                needed,
                available: n,
            });
        }
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let (start, width) = if i >= half && i + half < n {
                (i - half, centered)
            } else if i < half {
                (0, one_sided)
            } else {
                (n - one_sided, one_sided)
            };
            let nodes = &points[start..start + width];
            let w = fornberg_weights(points[i], nodes, order);
            rows.push(Stencil { start, weights: w });
        }
        Ok(Self {
            rows,
            one_sided_rows: half,
        })
    }

    /// Number of rows at each end that use one-sided stencils.
    pub fn one_sided_rows(&self) -> usize {
        self.one_sided_rows
    }

    pub fn apply(&self, values: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); values.len()];
        self.apply_into(values, &mut out);
        out
    }

    pub fn apply_into(&self, values: &[T], out: &mut [T]) {
        debug_assert_eq!(values.len(), self.rows.len());
        for (row, o) in self.rows.iter().zip(out.iter_mut()) {
            let mut acc = T::zero();
            for (k, w) in row.weights.iter().enumerate() {
                acc += *w * values[row.start + k];
            }
            *o = acc;
        }
    }
}

/// Finite-difference weights for the `order`-th derivative at `z` on `nodes`
/// (Fornberg's recursion). Exact for polynomials of degree < `nodes.len()`.
pub fn fornberg_weights<T: Real>(z: T, nodes: &[T], order: usize) -> Vec<T> {
    let n = nodes.len();
    let m = order;
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![T::zero(); m + 1]; n];
    let mut c1 = T::one();
    let mut c4 = nodes[0] - z;
    c[0][0] = T::one();
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = T::one();
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (T::count(k) * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - T::count(k) * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Ordered radial coordinates `x_0 < ... < x_{N-1}` in `(0, x_max]`.
#[derive(Debug)]
pub struct RadialGrid<T> {
    points: Vec<T>,
    x_max: T,
    stretch: T,
    policy: SpacingPolicy,
    /// One-sided stencil rows at each end for the highest supported accuracy.
    pub boundary_ghosts: usize,
    ops: [OnceLock<DiffOperator<T>>; 4],
}

impl<T: Real> Clone for RadialGrid<T> {
    fn clone(&self) -> Self {
        Self {
            points: self.points.clone(),
            x_max: self.x_max,
            stretch: self.stretch,
            policy: self.policy,
            boundary_ghosts: self.boundary_ghosts,
            ops: Default::default(),
        }
    }
}

impl<T: Real> PartialEq for RadialGrid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

/// JSON form of a grid: `{N, x_max, stretch, points[]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub x_max: f64,
    pub stretch: f64,
    pub points: Vec<f64>,
}

impl<T: Real> RadialGrid<T> {
    /// Builds a uniform (`stretch == 1`) or geometrically stretched grid.
    ///
    /// With stretch `s > 1` the spacings are `x_0, x_0 q, ..., x_0 q^{N-2}`
    /// with `q = s^{1/(N-2)}`, so the first point equals the first spacing and
    /// the ratio of largest to smallest spacing is exactly `s`.
    pub fn build(n: usize, x_max: T, stretch: T) -> Result<Self> {
        if n < MIN_POINTS {
            return Err(Error::invalid(format!(
                "grid needs N >= {MIN_POINTS}, got {n}"
            )));
        }
        if !(x_max > T::zero()) || !x_max.is_finite() {
            return Err(Error::invalid(format!("x_max must be positive, got {x_max}")));
        }
        if !(stretch >= T::one() && stretch <= T::lit(20.0)) {
            return Err(Error::invalid(format!(
                "stretch must lie in [1, 20], got {stretch}"
            )));
        }
        let (points, policy) = if stretch == T::one() {
            let h = x_max / T::count(n);
            let pts = (0..n).map(|i| h * T::count(i + 1)).collect();
            (pts, SpacingPolicy::Uniform)
        } else {
            let q = stretch.powf(T::one() / T::count(n - 2));
            // x_max = x0 * (1 + sum_{j=0}^{n-2} q^j)
            let mut total = T::one();
            let mut p = T::one();
            for _ in 0..n - 1 {
                total += p;
                p *= q;
            }
            let x0 = x_max / total;
            let mut pts = Vec::with_capacity(n);
            let mut x = x0;
            let mut d = x0;
            pts.push(x);
            for _ in 1..n {
                x += d;
                d *= q;
                pts.push(x);
            }
            pts[n - 1] = x_max;
            (pts, SpacingPolicy::GeometricStretch)
        };
        Ok(Self {
            points,
            x_max,
            stretch,
            policy,
            boundary_ghosts: 2,
            ops: Default::default(),
        })
    }

    /// Wraps explicit points; they must satisfy the grid invariants.
    pub fn from_points(points: Vec<T>) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::invalid(format!(
                "grid needs N >= {MIN_POINTS}, got {}",
                points.len()
            )));
        }
        if !(points[0] > T::zero()) {
            return Err(Error::invalid("grid points must be positive"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("grid points must be finite and strictly increasing"));
        }
        let spacings: Vec<T> = std::iter::once(points[0])
            .chain(points.windows(2).map(|w| w[1] - w[0]))
            .collect();
        let lo = spacings.iter().copied().fold(T::infinity(), T::min);
        let hi = spacings.iter().copied().fold(T::zero(), T::max);
        let x_max = *points.last().unwrap();
        Ok(Self {
            points,
            x_max,
            stretch: hi / lo,
            policy: SpacingPolicy::Explicit,
            boundary_ghosts: 2,
            ops: Default::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn x_min(&self) -> T {
        self.points[0]
    }

    pub fn stretch(&self) -> T {
        self.stretch
    }

    pub fn policy(&self) -> SpacingPolicy {
        self.policy
    }

    /// Spacing to the left of each point (the first entry is `x_0` itself).
    pub fn spacings(&self) -> Vec<T> {
        std::iter::once(self.points[0])
            .chain(self.points.windows(2).map(|w| w[1] - w[0]))
            .collect()
    }

    /// Local spacing used by stability bounds: the smaller neighbour gap.
    pub fn local_spacing(&self, i: usize) -> T {
        let n = self.points.len();
        let left = if i > 0 {
            self.points[i] - self.points[i - 1]
        } else {
            self.points[0]
        };
        let right = if i + 1 < n {
            self.points[i + 1] - self.points[i]
        } else {
            left
        };
        left.min(right)
    }

    /// Cached derivative operator.
    pub fn operator(&self, order: usize, accuracy: Accuracy) -> Result<&DiffOperator<T>> {
        if !(order == 1 || order == 2) {
            return Err(Error::invalid(format!("derivative order must be 1 or 2, got {order}")));
        }
        let slot = (order - 1) * 2 + usize::from(accuracy == Accuracy::Fourth);
        if let Some(op) = self.ops[slot].get() {
            return Ok(op);
        }
        let op = DiffOperator::build(&self.points, order, accuracy)?;
        Ok(self.ops[slot].get_or_init(|| op))
    }

    /// Index of the interval `[x_i, x_{i+1}]` containing `x` (clamped).
    pub fn locate(&self, x: T) -> usize {
        let n = self.points.len();
        match self
            .points
            .binary_search_by(|p| p.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.points[0] && x <= self.x_max
    }

    pub fn record(&self) -> GridRecord {
        GridRecord {
            n: self.len(),
            x_max: self.x_max.as_f64(),
            stretch: self.stretch.as_f64(),
            points: self.points.iter().map(|p| p.as_f64()).collect(),
        }
    }

    pub fn from_record(rec: &GridRecord) -> Result<Self> {
        let grid = Self::build(rec.n, T::lit(rec.x_max), T::lit(rec.stretch))?;
        let same = grid
            .points
            .iter()
            .zip(&rec.points)
            .all(|(a, b)| (a.as_f64() - b).abs() <= 1e-12 * rec.x_max);
        if same && rec.points.len() == rec.n {
            Ok(grid)
        } else {
            Self::from_points(rec.points.iter().map(|p| T::lit(*p)).collect())
        }
    }
}

/// Values of a field on a shared grid.
#[derive(Clone, Debug)]
pub struct ScalarField<T> {
    grid: Arc<RadialGrid<T>>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: Arc<RadialGrid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "field value at x = {:e} is not finite",
                grid.points()[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<RadialGrid<T>>, f: impl Fn(T) -> T) -> Result<Self> {
        let values = grid.points().iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Arc<RadialGrid<T>>, c: T) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<RadialGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `a * self + b * other`, pointwise.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * *x + b * *y)
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }
}

/// Derivative of a field; `order` is 1 or 2.
pub fn derivative<T: Real>(f: &ScalarField<T>, order: usize, accuracy: Accuracy) -> Result<ScalarField<T>> {
    let op = f.grid.operator(order, accuracy)?;
    Ok(ScalarField {
        grid: f.grid.clone(),
        values: op.apply(&f.values),
    })
}

/// Raw-slice form of [`derivative`].
pub fn diff<T: Real>(grid: &RadialGrid<T>, values: &[T], order: usize, accuracy: Accuracy) -> Result<Vec<T>> {
    Ok(grid.operator(order, accuracy)?.apply(values))
}

// ---------------------------------------------------------------------------
// interpolation and quadrature

/// Lagrange interpolation through `nodes` evaluated at `x`.
pub fn lagrange_eval<T: Real>(nodes: &[T], values: &[T], x: T) -> T {
    let mut acc = T::zero();
    for (j, (&xj, &yj)) in nodes.iter().zip(values).enumerate() {
        let mut l = T::one();
        for (k, &xk) in nodes.iter().enumerate() {
            if k != j {
                l *= (x - xk) / (xj - xk);
            }
        }
        acc += l * yj;
    }
    acc
}

/// Degree-5 local Lagrange interpolation of grid data at `x` (extrapolates
/// polynomially outside the hull).
pub fn interpolate<T: Real>(grid: &RadialGrid<T>, values: &[T], x: T) -> T {
    let n = grid.len();
    let width = 6.min(n);
    let i = grid.locate(x);
    let start = (i + 1).saturating_sub(width / 2).min(n - width);
    lagrange_eval(
        &grid.points()[start..start + width],
        &values[start..start + width],
        x,
    )
}

const GAUSS3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Integral over `[a, b]` (inside interval `i`) of the cubic through the four
/// nodes nearest that interval.
fn cubic_piece<T: Real>(nodes: &[T], values: &[T], i: usize, a: T, b: T) -> T {
    let n = nodes.len();
    let start = i.saturating_sub(1).min(n - 4);
    let nodes = &nodes[start..start + 4];
    let vals = &values[start..start + 4];
    let mid = (a + b) / T::lit(2.0);
    let half = (b - a) / T::lit(2.0);
    let mut acc = T::zero();
    for (z, w) in GAUSS3_NODES.iter().zip(GAUSS3_WEIGHTS) {
        acc += T::lit(w) * lagrange_eval(nodes, vals, mid + half * T::lit(*z));
    }
    acc * half
}

/// Running integral `F_i = ∫_{x_0}^{x_i} f dx`, fourth-order accurate.
pub fn cumulative_integral<T: Real>(grid: &RadialGrid<T>, values: &[T]) -> Vec<T> {
    cumulative_integral_nodes(grid.points(), values)
}

/// [`cumulative_integral`] on any strictly increasing node set (at least 4 nodes).
pub fn cumulative_integral_nodes<T: Real>(nodes: &[T], values: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut acc = T::zero();
    out.push(acc);
    for i in 0..nodes.len() - 1 {
        acc += cubic_piece(nodes, values, i, nodes[i], nodes[i + 1]);
        out.push(acc);
    }
    out
}

fn locate_nodes<T: Real>(nodes: &[T], x: T) -> usize {
    let k = nodes.partition_point(|p| *p <= x);
    k.saturating_sub(1).min(nodes.len() - 2)
}

/// `∫_a^b f dx` for `a, b` inside the grid hull, fourth-order accurate.
pub fn definite_integral<T: Real>(grid: &RadialGrid<T>, values: &[T], a: T, b: T) -> Result<T> {
    definite_integral_nodes(grid.points(), values, a, b)
}

/// [`definite_integral`] on any strictly increasing node set.
pub fn definite_integral_nodes<T: Real>(nodes: &[T], values: &[T], a: T, b: T) -> Result<T> {
    let (lo_hull, hi_hull) = (nodes[0], nodes[nodes.len() - 1]);
    for x in [a, b] {
        if !(x >= lo_hull && x <= hi_hull) {
            return Err(Error::OutOfRange {
                x: x.as_f64(),
                lo: lo_hull.as_f64(),
                hi: hi_hull.as_f64(),
            });
        }
    }
    if a == b {
        return Ok(T::zero());
    }
    let (lo, hi, sign) = if a < b { (a, b, T::one()) } else { (b, a, -T::one()) };
    let il = locate_nodes(nodes, lo);
    let ih = locate_nodes(nodes, hi);
    let total = if il == ih {
        cubic_piece(nodes, values, il, lo, hi)
    } else {
        let mut acc = cubic_piece(nodes, values, il, lo, nodes[il + 1]);
        for i in il + 1..ih {
            acc += cubic_piece(nodes, values, i, nodes[i], nodes[i + 1]);
        }
        acc + cubic_piece(nodes, values, ih, nodes[ih], hi)
    };
    Ok(sign * total)
}

/// Trapezoid weights on arbitrary ordered nodes.
pub fn trapezoid_weights<T: Real>(points: &[T]) -> Vec<T> {
    let n = points.len();
    let mut w = vec![T::zero(); n];
    for i in 0..n - 1 {
        let h = (points[i + 1] - points[i]) / T::lit(2.0);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

// ---------------------------------------------------------------------------
// refinement studies

/// Result of fitting `log(error)` against `log(N)`.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<usize>,
    pub errors: Vec<f64>,
    /// Fitted order `p` in `error ~ N^{-p}`; `None` when indeterminate.
    pub fitted_order: Option<f64>,
    pub residual: f64,
    /// Errors failed to decrease between some consecutive levels.
    pub non_monotone: bool,
    /// All errors sit at the round-off floor.
    pub indeterminate: bool,
}

/// Runs `error_at(N)` on each level and fits the observed order.
pub fn refinement_study<F>(levels: &[usize], floor: f64, mut error_at: F) -> Result<ConvergenceReport>
where
    F: FnMut(usize) -> Result<f64>,
{
    if levels.len() < 2 {
        return Err(Error::invalid("a refinement study needs at least two levels"));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("refinement levels must increase"));
    }
    let errors = levels
        .iter()
        .map(|&n| error_at(n))
        .collect::<Result<Vec<f64>>>()?;
    let indeterminate = errors.iter().all(|e| *e <= floor);
    let non_monotone = errors.windows(2).any(|w| w[1] >= w[0]);
    let (fitted_order, residual) = if indeterminate || errors.iter().any(|e| !(*e > 0.0)) {
        (None, 0.0)
    } else {
        let lx: Vec<f64> = levels.iter().map(|n| (*n as f64).ln()).collect();
        let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        match linear_fit(&lx, &ly) {
            Some((slope, _, res)) => (Some(-slope), res),
            None => (None, 0.0),
        }
    };
    Ok(ConvergenceReport {
        levels: levels.to_vec(),
        errors,
        fitted_order,
        residual,
        non_monotone,
        indeterminate,
    })
}

/// Sup-norm derivative error study of `f` against the exact derivative.
pub fn derivative_study<T, F, D>(
    levels: &[usize],
    x_max: f64,
    stretch: f64,
    order: usize,
    accuracy: Accuracy,
    f: F,
    exact: D,
) -> Result<ConvergenceReport>
where
    T: Real,
    F: Fn(T) -> T,
    D: Fn(T) -> T,
{
    let floor = 1e3 * T::epsilon().as_f64();
    refinement_study(levels, floor, |n| {
        let grid = Arc::new(RadialGrid::build(n, T::lit(x_max), T::lit(stretch))?);
        let field = ScalarField::from_fn(grid.clone(), &f)?;
        let d = derivative(&field, order, accuracy)?;
        let err = grid
            .points()
            .iter()
            .zip(d.values())
            .fold(0.0f64, |acc, (&x, &v)| acc.max((v - exact(x)).abs().as_f64()));
        Ok(err)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::sup_diff;

    fn grid(n: usize, stretch: f64) -> Arc<RadialGrid<f64>> {
        Arc::new(RadialGrid::build(n, 1.0, stretch).unwrap())
    }

    #[test]
    fn uniform_grid_endpoints() {
        let g = grid(16, 1.0);
        assert_eq!(g.len(), 16);
        assert!((g.points()[0] - 1.0 / 16.0).abs() < 1e-15);
        assert!((g.points()[15] - 1.0).abs() < 1e-15);
        assert_eq!(g.policy(), SpacingPolicy::Uniform);
    }

    #[test]
    fn stretched_grid_spacing_ratio() {
        let g = grid(16, 4.0);
        let d: Vec<f64> = g.points().windows(2).map(|w| w[1] - w[0]).collect();
        let hi = d.iter().copied().fold(0.0, f64::max);
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((hi / lo - 4.0).abs() < 1e-12);
        assert!(g.points()[0] <= 1.0 / 16.0);
        assert!((g.x_max() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RadialGrid::<f64>::build(8, 1.0, 1.0).is_err());
        assert!(RadialGrid::<f64>::build(16, -1.0, 1.0).is_err());
        assert!(RadialGrid::<f64>::build(16, 1.0, 0.5).is_err());
        assert!(RadialGrid::<f64>::build(16, 1.0, 21.0).is_err());
    }

    #[test]
    fn from_points_validates() {
        let pts: Vec<f64> = (1..=16).map(|i| i as f64 * 0.1).collect();
        assert!(RadialGrid::from_points(pts.clone()).is_ok());
        let mut bad = pts.clone();
        bad[4] = bad[3];
        assert!(RadialGrid::from_points(bad).is_err());
    }

    #[test]
    fn linear_field_has_unit_derivative() {
        for stretch in [1.0, 4.0] {
            let g = grid(32, stretch);
            let f = ScalarField::from_fn(g, |x| x).unwrap();
            for acc in [Accuracy::Second, Accuracy::Fourth] {
                let d = derivative(&f, 1, acc).unwrap();
                assert!(d.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn quadratic_has_constant_second_derivative() {
        let g = grid(32, 3.0);
        let f = ScalarField::from_fn(g, |x| x * x).unwrap();
        let d = derivative(&f, 2, Accuracy::Second).unwrap();
        assert!(d.values().iter().all(|v| (v - 2.0).abs() < 1e-9));
    }

    #[test]
    fn polynomials_up_to_accuracy_are_exact() {
        let g = grid(40, 2.0);
        let f = ScalarField::from_fn(g.clone(), |x| 1.0 - 2.0 * x + 3.0 * x.powi(2) - x.powi(3) + 0.5 * x.powi(4))
            .unwrap();
        let d1 = derivative(&f, 1, Accuracy::Fourth).unwrap();
        let d2 = derivative(&f, 2, Accuracy::Fourth).unwrap();
        for (i, &x) in g.points().iter().enumerate() {
            let e1 = -2.0 + 6.0 * x - 3.0 * x * x + 2.0 * x.powi(3);
            let e2 = 6.0 - 6.0 * x + 6.0 * x * x;
            assert!((d1.values()[i] - e1).abs() < 1e-9, "d1 at {x}");
            assert!((d2.values()[i] - e2).abs() < 1e-7, "d2 at {x}");
        }
    }

    #[test]
    fn second_order_sine_study() {
        let rep = derivative_study::<f64, _, _>(
            &[64, 128, 256],
            1.0,
            1.0,
            1,
            Accuracy::Second,
            |x| (3.0 * x).sin(),
            |x| 3.0 * (3.0 * x).cos(),
        )
        .unwrap();
        let p = rep.fitted_order.unwrap();
        assert!((1.8..=2.2).contains(&p), "order {p}");
        // doubling N divides the error by about four
        let ratio = rep.errors[0] / rep.errors[1];
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fourth_order_sine_study() {
        let rep = derivative_study::<f64, _, _>(
            &[32, 64, 128],
            1.0,
            4.0,
            1,
            Accuracy::Fourth,
            |x| (3.0 * x).sin(),
            |x| 3.0 * (3.0 * x).cos(),
        )
        .unwrap();
        let p = rep.fitted_order.unwrap();
        assert!((3.6..=4.4).contains(&p), "order {p}");
    }

    #[test]
    fn constant_field_is_indeterminate() {
        let rep = derivative_study::<f64, _, _>(
            &[32, 64, 128],
            1.0,
            1.0,
            1,
            Accuracy::Second,
            |_| 2.5,
            |_| 0.0,
        )
        .unwrap();
        assert!(rep.indeterminate);
        assert!(rep.fitted_order.is_none());
    }

    #[test]
    fn cumulative_integral_is_fourth_order() {
        let err = |n: usize| {
            let g = grid(n, 4.0);
            let vals: Vec<f64> = g.points().iter().map(|x| (3.0 * x).cos()).collect();
            let f = cumulative_integral(&g, &vals);
            let x0 = g.points()[0];
            let exact: Vec<f64> = g
                .points()
                .iter()
                .map(|x| ((3.0 * x).sin() - (3.0 * x0).sin()) / 3.0)
                .collect();
            sup_diff(&f, &exact)
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 < 1e-5);
        assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);

        let g = grid(128, 4.0);
        let vals: Vec<f64> = g.points().iter().map(|x| (3.0 * x).cos()).collect();
        let d = definite_integral(&g, &vals, 0.5, 0.25).unwrap();
        let exact = ((0.75f64).sin() - (1.5f64).sin()) / 3.0;
        assert!((d - exact).abs() < 1e-7);
    }

    #[test]
    fn f32_grid_works() {
        let g = Arc::new(RadialGrid::<f32>::build(32, 1.0, 2.0).unwrap());
        let f = ScalarField::from_fn(g, |x| x * x).unwrap();
        let d = derivative(&f, 1, Accuracy::Second).unwrap();
        for (x, v) in f.grid().points().iter().zip(d.values()) {
            assert!((v - 2.0 * x).abs() < 1e-3);
        }
    }

    #[test]
    fn grid_record_roundtrip() {
        let g = RadialGrid::<f64>::build(20, 1.5, 3.0).unwrap();
        let rec = g.record();
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"N\":20"));
        let back: GridRecord = serde_json::from_str(&json).unwrap();
        let g2 = RadialGrid::<f64>::from_record(&back).unwrap();
        assert_eq!(g, g2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn derivative_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0.5f64..4.0) {
                let g = grid(48, 2.5);
                let f = ScalarField::from_fn(g.clone(), |x| (k * x).sin()).unwrap();
                let h = ScalarField::from_fn(g.clone(), |x| (k * x).exp()).unwrap();
                let lhs = derivative(&f.combine(a, &h, b), 1, Accuracy::Fourth).unwrap();
                let df = derivative(&f, 1, Accuracy::Fourth).unwrap();
                let dh = derivative(&h, 1, Accuracy::Fourth).unwrap();
                let rhs = df.combine(a, &dh, b);
                let scale = 1.0 + crate::scalar::sup_abs(rhs.values());
                prop_assert!(crate::scalar::sup_diff(lhs.values(), rhs.values()) < 1e-10 * scale);
            }

            #[test]
            fn stretched_grids_are_valid(n in 16usize..200, xm in 0.1f64..5.0, s in 1.0f64..20.0) {
                let g = RadialGrid::<f64>::build(n, xm, s).unwrap();
                prop_assert!(g.points()[0] > 0.0);
                prop_assert!(g.points()[0] <= xm / n as f64 * (1.0 + 1e-12));
                prop_assert!(g.points().windows(2).all(|w| w[1] > w[0]));
                prop_assert!((g.x_max() - xm).abs() < 1e-12 * xm);
            }
        }
    }
}
