//! Tensor calculus for fields invariant under the isometries of the
//! cross-section.
//!
//! In the orthonormal frame `e_0 = ∂_s`, `e_α = E_α / f` of a warped product
//! `ds² + f(s)² σ` with `σ` a space form of dimension `m`, every invariant
//! covariant tensor is a sum of "words": each slot is either the radial
//! covector `ds` or is paired with another slot through the tangential
//! projector `P = g − ds ⊗ ds`. A word's coefficient is a function of `s`
//! only, stored on the radial grid.
//!
//! The Levi-Civita connection acts on the two building blocks by
//! `∇ds = H P` and `(∇_X P)(Y, Z) = −H (P(X,Y) ds(Z) + ds(Y) P(X,Z))` with
//! `H = f'/f`, which is all that is needed to differentiate any word. The
//! derivative slot is always prepended as slot 0.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::grid::{Accuracy, RadialGrid};
use crate::scalar::Real;

/// Marker for a radial (`ds`) slot inside a word.
pub const RADIAL: u8 = u8::MAX;

/// Slot pattern of a basis tensor; `word[k]` is `RADIAL` or the partner slot.
pub type Word = Vec<u8>;

/// Radial frame data needed to differentiate invariant tensors.
#[derive(Clone, Debug)]
pub struct Frame<'g, T> {
    pub grid: &'g RadialGrid<T>,
    /// `ds/dx` inverse: `x / sqrt(A)`, converting `d/dx` into `d/ds`.
    pub dx_ds: Vec<T>,
    /// Mean-curvature-like coefficient `H = f'/f` of the cross-sections.
    pub h: Vec<T>,
    /// Cross-section dimension `m = n − 1`.
    pub m: usize,
    pub accuracy: Accuracy,
}

impl<T: Real> Frame<'_, T> {
    /// `d/ds` of grid data.
    pub fn d_ds(&self, values: &[T]) -> Result<Vec<T>> {
        let d = self.grid.operator(1, self.accuracy)?.apply(values);
        Ok(d.into_iter().zip(&self.dx_ds).map(|(v, e)| v * *e).collect())
    }
}

/// An invariant covariant tensor field of fixed rank.
#[derive(Clone, Debug, PartialEq)]
pub struct IsoTensor<T> {
    rank: usize,
    len: usize,
    m: usize,
    terms: BTreeMap<Word, Vec<T>>,
}

fn add_into<T: Real>(dst: &mut Vec<T>, src: &[T], factor: T) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * *s;
    }
}

impl<T: Real> IsoTensor<T> {
    pub fn zero(rank: usize, len: usize, m: usize) -> Self {
        Self {
            rank,
            len,
            m,
            terms: BTreeMap::new(),
        }
    }

    /// A scalar field (rank 0).
    pub fn scalar(values: Vec<T>, m: usize) -> Self {
        let len = values.len();
        let mut t = Self::zero(0, len, m);
        t.terms.insert(Vec::new(), values);
        t
    }

    /// `ds ⊗ ds`.
    pub fn radial(len: usize, m: usize) -> Self {
        Self::basis(vec![RADIAL, RADIAL], len, m)
    }

    /// The tangential projector `P`.
    pub fn tangential(len: usize, m: usize) -> Self {
        Self::basis(vec![1, 0], len, m)
    }

    /// The metric `g = ds ⊗ ds + P`.
    pub fn metric(len: usize, m: usize) -> Self {
        Self::radial(len, m).add(&Self::tangential(len, m))
    }

    /// A single word with unit coefficient.
    pub fn basis(word: Word, len: usize, m: usize) -> Self {
        debug_assert!(valid_word(&word));
        let mut t = Self::zero(word.len(), len, m);
        t.terms.insert(word, vec![T::one(); len]);
        t
    }

    /// Symmetric 2-tensor `a ds⊗ds + b P` in frame components.
    pub fn diagonal2(a: &[T], b: &[T], m: usize) -> Self {
        let len = a.len();
        let mut t = Self::zero(2, len, m);
        t.add_term(vec![RADIAL, RADIAL], a.to_vec());
        t.add_term(vec![1, 0], b.to_vec());
        t
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cross_dim(&self) -> usize {
        self.m
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Vec<T>)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn add_term(&mut self, word: Word, coeff: Vec<T>) {
        debug_assert_eq!(word.len(), self.rank);
        debug_assert_eq!(coeff.len(), self.len);
        match self.terms.get_mut(&word) {
            Some(c) => add_into(c, &coeff, T::one()),
            None => {
                self.terms.insert(word, coeff);
            }
        }
    }

    fn add_term_scaled(&mut self, word: Word, coeff: &[T], factor: &[T], sign: T) {
        let prod: Vec<T> = coeff
            .iter()
            .zip(factor)
            .map(|(c, f)| sign * *c * *f)
            .collect();
        self.add_term(word, prod);
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.rank, other.rank, "rank mismatch in tensor sum");
        let mut out = self.clone();
        for (w, c) in &other.terms {
            out.add_term(w.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            c.iter_mut().for_each(|v| *v *= s);
        }
        out
    }

    /// Pointwise multiplication by a scalar field.
    pub fn mul_field(&self, f: &[T]) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            c.iter_mut().zip(f).for_each(|(v, s)| *v *= *s);
        }
        out
    }

    /// Tensor product; slots of `other` follow those of `self`.
    pub fn outer(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.rank + other.rank, self.len, self.m);
        let shift = self.rank as u8;
        for (w1, c1) in &self.terms {
            for (w2, c2) in &other.terms {
                let mut w = w1.clone();
                w.extend(w2.iter().map(|&s| if s == RADIAL { RADIAL } else { s + shift }));
                let c: Vec<T> = c1.iter().zip(c2).map(|(a, b)| *a * *b).collect();
                out.add_term(w, c);
            }
        }
        out
    }

    /// Metric contraction of slots `a` and `b`.
    pub fn contract(&self, a: usize, b: usize) -> Self {
        assert!(a != b && a < self.rank && b < self.rank, "bad contraction slots");
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let mut out = Self::zero(self.rank - 2, self.len, self.m);
        let reindex = |k: u8| -> u8 {
            let k = k as usize;
            (k - usize::from(k > a) - usize::from(k > b)) as u8
        };
        for (w, c) in &self.terms {
            let (wa, wb) = (w[a], w[b]);
            let (mut nw, factor): (Word, T) = if wa == RADIAL && wb == RADIAL {
                (w.clone(), T::one())
            } else if wa == RADIAL || wb == RADIAL {
                continue;
            } else if wa as usize == b {
                (w.clone(), T::count(self.m))
            } else {
                let mut nw = w.clone();
                nw[wa as usize] = wb;
                nw[wb as usize] = wa;
                (nw, T::one())
            };
            let mut kept = Vec::with_capacity(self.rank - 2);
            for (k, s) in nw.drain(..).enumerate() {
                if k == a || k == b {
                    continue;
                }
                kept.push(if s == RADIAL { RADIAL } else { reindex(s) });
            }
            out.add_term(kept, c.iter().map(|v| *v * factor).collect());
        }
        out
    }

    /// Reorders slots: slot `i` of the result is slot `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rank);
        let mut inv = vec![0usize; self.rank];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let mut out = Self::zero(self.rank, self.len, self.m);
        for (w, c) in &self.terms {
            let nw: Word = perm
                .iter()
                .map(|&p| {
                    let s = w[p];
                    if s == RADIAL {
                        RADIAL
                    } else {
                        inv[s as usize] as u8
                    }
                })
                .collect();
            out.add_term(nw, c.clone());
        }
        out
    }

    /// Pointwise full contraction `⟨self, other⟩_g`.
    pub fn inner(&self, other: &Self) -> Vec<T> {
        assert_eq!(self.rank, other.rank, "rank mismatch in inner product");
        let mut out = vec![T::zero(); self.len];
        for (w1, c1) in &self.terms {
            for (w2, c2) in &other.terms {
                let Some(cycles) = pairing_cycles(w1, w2) else {
                    continue;
                };
                let f = T::count(self.m).powi(cycles as i32);
                for ((o, a), b) in out.iter_mut().zip(c1).zip(c2) {
                    *o += f * *a * *b;
                }
            }
        }
        out
    }

    pub fn norm_sq(&self) -> Vec<T> {
        self.inner(self)
    }

    pub fn norm(&self) -> Vec<T> {
        self.norm_sq()
            .into_iter()
            .map(|v| v.max(T::zero()).sqrt())
            .collect()
    }

    /// Frame component at `indices` (0 = radial, k >= 1 = tangential label).
    pub fn component(&self, indices: &[usize]) -> Vec<T> {
        assert_eq!(indices.len(), self.rank);
        let mut out = vec![T::zero(); self.len];
        for (w, c) in &self.terms {
            let hit = w.iter().enumerate().all(|(k, &s)| {
                if s == RADIAL {
                    indices[k] == 0
                } else {
                    indices[k] != 0 && indices[k] == indices[s as usize]
                }
            });
            if hit {
                add_into(&mut out, c, T::one());
            }
        }
        out
    }

    /// Covariant derivative; the derivative slot becomes slot 0.
    pub fn covariant_derivative(&self, frame: &Frame<'_, T>) -> Result<Self> {
        let mut out = Self::zero(self.rank + 1, self.len, self.m);
        let shift = |s: u8| if s == RADIAL { RADIAL } else { s + 1 };
        for (w, c) in &self.terms {
            let shifted: Word = w.iter().map(|&s| shift(s)).collect();

            let mut base = vec![RADIAL];
            base.extend(shifted.iter().copied());
            out.add_term(base, frame.d_ds(c)?);

            for (a, &s) in w.iter().enumerate() {
                if s == RADIAL {
                    // ∇ds = H P: new slot 0 pairs with slot a
                    let mut nw = vec![(a + 1) as u8];
                    nw.extend(shifted.iter().copied());
                    nw[a + 1] = 0;
                    out.add_term_scaled(nw, c, &frame.h, T::one());
                } else if (s as usize) > a {
                    let b = s as usize;
                    for (keep, drop) in [(a, b), (b, a)] {
                        let mut nw = vec![(keep + 1) as u8];
                        nw.extend(shifted.iter().copied());
                        nw[keep + 1] = 0;
                        nw[drop + 1] = RADIAL;
                        out.add_term_scaled(nw, c, &frame.h, -T::one());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Rough Laplacian `tr ∇²`.
    pub fn laplacian(&self, frame: &Frame<'_, T>) -> Result<Self> {
        Ok(self
            .covariant_derivative(frame)?
            .covariant_derivative(frame)?
            .contract(0, 1))
    }

    /// Coefficient of a word (zero when absent).
    pub fn coefficient(&self, word: &[u8]) -> Vec<T> {
        self.terms
            .get(word)
            .cloned()
            .unwrap_or_else(|| vec![T::zero(); self.len])
    }

    /// `(a, b)` of a symmetric 2-tensor `a ds⊗ds + b P`.
    pub fn diagonal_parts(&self) -> (Vec<T>, Vec<T>) {
        assert_eq!(self.rank, 2);
        (self.component(&[0, 0]), self.component(&[1, 1]))
    }
}

fn valid_word(w: &[u8]) -> bool {
    w.iter().enumerate().all(|(k, &s)| {
        s == RADIAL || ((s as usize) < w.len() && s as usize != k && w[s as usize] as usize == k)
    })
}

/// Number of cycles formed by two pairings, or `None` if the radial slots differ.
fn pairing_cycles(w1: &[u8], w2: &[u8]) -> Option<usize> {
    if w1
        .iter()
        .zip(w2)
        .any(|(a, b)| (*a == RADIAL) != (*b == RADIAL))
    {
        return None;
    }
    let mut seen = vec![false; w1.len()];
    let mut cycles = 0;
    for start in 0..w1.len() {
        if seen[start] || w1[start] == RADIAL {
            continue;
        }
        cycles += 1;
        let mut k = start;
        loop {
            seen[k] = true;
            let p = w1[k] as usize;
            seen[p] = true;
            let q = w2[p] as usize;
            if q == start {
                break;
            }
            k = q;
        }
    }
    Some(cycles)
}

/// Riemann tensor `R_{ijkl}` of a warped product with radial sectional
/// curvature `k_rad` and tangential sectional curvature `k_tan`, in the
/// convention `R_{ijij} = K(e_i, e_j)`.
pub fn riemann<T: Real>(k_rad: &[T], k_tan: &[T], m: usize) -> IsoTensor<T> {
    let len = k_rad.len();
    let mut rm = IsoTensor::zero(4, len, m);
    // K_tan (P_ik P_jl − P_il P_jk)
    rm.add_term(vec![2, 3, 0, 1], k_tan.to_vec());
    rm.add_term(vec![3, 2, 1, 0], k_tan.iter().map(|v| -*v).collect());
    // K_rad (D ⊙ P) = D_ik P_jl + D_jl P_ik − D_il P_jk − D_jk P_il
    rm.add_term(vec![RADIAL, 3, RADIAL, 1], k_rad.to_vec());
    rm.add_term(vec![2, RADIAL, 0, RADIAL], k_rad.to_vec());
    rm.add_term(vec![RADIAL, 2, 1, RADIAL], k_rad.iter().map(|v| -*v).collect());
    rm.add_term(vec![3, RADIAL, RADIAL, 0], k_rad.iter().map(|v| -*v).collect());
    rm
}

/// `(Rm ∘ u)_{ij} = R_{ipjq} u^{pq}`.
pub fn curvature_action<T: Real>(rm: &IsoTensor<T>, u: &IsoTensor<T>) -> IsoTensor<T> {
    // slots: i p j q | a b ; contract p-a then q-b
    rm.outer(u).contract(1, 4).contract(2, 3)
}

/// `(A ∘ B)_{ij} = A_{ip} B_{pj}` for 2-tensors.
pub fn compose<T: Real>(a: &IsoTensor<T>, b: &IsoTensor<T>) -> IsoTensor<T> {
    a.outer(b).contract(1, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RadialGrid;

    fn hyperbolic_frame(grid: &RadialGrid<f64>, m: usize) -> Frame<'_, f64> {
        // B = (1 - x²/4)², A = 1
        let h = grid
            .points()
            .iter()
            .map(|&x| {
                let b = (1.0 - x * x / 4.0).powi(2);
                let bx = -x * (1.0 - x * x / 4.0);
                x * bx / (2.0 * b) - 1.0
            })
            .collect();
        Frame {
            grid,
            dx_ds: grid.points().to_vec(),
            h,
            m,
            accuracy: Accuracy::Fourth,
        }
    }

    #[test]
    fn metric_norm_is_dimension() {
        let g = IsoTensor::<f64>::metric(3, 4);
        assert!(g.norm_sq().iter().all(|v| (v - 5.0).abs() < 1e-14));
        assert!(g.contract(0, 1).coefficient(&[]).iter().all(|v| (v - 5.0).abs() < 1e-14));
    }

    #[test]
    fn constant_curvature_riemann_contracts_to_einstein() {
        let m = 4;
        let k = vec![-1.0f64; 2];
        let rm = riemann(&k, &k, m);
        // |Rm|² = 2 n (n-1) for unit curvature
        assert!(rm.norm_sq().iter().all(|v| (v - 40.0).abs() < 1e-12));
        let ric = rm.contract(1, 3);
        let expected = IsoTensor::metric(2, m).scale(-4.0);
        let diff = ric.sub(&expected);
        assert!(diff.norm_sq().iter().all(|v| v.abs() < 1e-24));
        // component check R_{0101} = K
        assert!(rm.component(&[0, 1, 0, 1]).iter().all(|v| (v + 1.0).abs() < 1e-14));
        assert!(rm.component(&[1, 2, 1, 2]).iter().all(|v| (v + 1.0).abs() < 1e-14));
        assert!(rm.component(&[1, 2, 2, 1]).iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn metric_is_parallel() {
        let grid = RadialGrid::build(32, 1.0, 2.0).unwrap();
        let frame = hyperbolic_frame(&grid, 3);
        let g = IsoTensor::metric(grid.len(), 3);
        let dg = g.covariant_derivative(&frame).unwrap();
        assert!(dg.norm_sq().iter().all(|v| v.abs() < 1e-24));
    }

    #[test]
    fn symmetric_space_riemann_is_parallel() {
        let grid = RadialGrid::build(32, 1.0, 2.0).unwrap();
        let frame = hyperbolic_frame(&grid, 4);
        let k = vec![-1.0f64; grid.len()];
        let rm = riemann(&k, &k, 4);
        let drm = rm.covariant_derivative(&frame).unwrap();
        assert!(drm.norm_sq().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn scalar_laplacian_matches_radial_formula() {
        let grid = RadialGrid::build(200, 1.0, 1.0).unwrap();
        let m = 4;
        let frame = hyperbolic_frame(&grid, m);
        let v: Vec<f64> = grid.points().iter().map(|x| x * x).collect();
        let lap = IsoTensor::scalar(v.clone(), m).laplacian(&frame).unwrap();
        let lap = lap.coefficient(&[]);
        // Δv = v_ss + m H v_s with d/ds = x d/dx for A = 1
        for (i, &x) in grid.points().iter().enumerate().skip(3).take(190) {
            let vs = x * 2.0 * x;
            let vss = x * (4.0 * x);
            let expect = vss + m as f64 * frame.h[i] * vs;
            assert!((lap[i] - expect).abs() < 1e-6, "{} vs {}", lap[i], expect);
        }
    }

    #[test]
    fn permute_and_compose() {
        let a = IsoTensor::diagonal2(&[2.0f64], &[3.0], 4);
        let b = IsoTensor::diagonal2(&[5.0f64], &[7.0], 4);
        let c = compose(&a, &b);
        let (r, t) = c.diagonal_parts();
        assert!((r[0] - 10.0).abs() < 1e-14 && (t[0] - 21.0).abs() < 1e-14);
        let rm = riemann(&[1.0f64], &[2.0], 4);
        // pair symmetry R_{ijkl} = R_{klij}
        let swapped = rm.permute(&[2, 3, 0, 1]);
        assert!(swapped.sub(&rm).norm_sq()[0].abs() < 1e-24);
        // antisymmetry R_{ijkl} = -R_{jikl}
        let anti = rm.permute(&[1, 0, 2, 3]);
        assert!(anti.add(&rm).norm_sq()[0].abs() < 1e-24);
    }

    #[test]
    fn curvature_action_on_metric_is_ricci() {
        let rm = riemann(&[-0.7f64], &[-1.3], 4);
        let g = IsoTensor::metric(1, 4);
        let act = curvature_action(&rm, &g);
        let ric = rm.contract(1, 3);
        assert!(act.sub(&ric).norm_sq()[0].abs() < 1e-24);
    }
}
