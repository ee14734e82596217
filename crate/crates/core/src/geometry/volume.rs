//! Distances and volumes on the collar.
//!
//! Radial distance integrates `√A / x` in the variable `ln x`, where the
//! integrand is smooth all the way to the boundary. For the weighted volume
//! the distance between a point at radius `x` and the basepoint at radius
//! `x₀`, separated by cross-section angle `ψ`, is bounded above by the
//! best broken path "radially inward to a turning radius, across the
//! cross-section, radially back out":
//!
//! ```text
//! d(x, x₀, ψ) = min over turning radii x* ≥ max(x, x₀) of
//!               s(x*) − s(x) + s(x*) − s(x₀) + f(x*) ψ
//! ```
//!
//! with `s` the proper radial coordinate and `f = √B / x`. Turning at
//! `x* = max(x, x₀)` recovers the purely radial distance when `ψ = 0`.

use serde::Serialize;

use super::WarpedMetric;
use crate::error::{Error, Result};
use crate::grid::{cumulative_integral_nodes, definite_integral_nodes};
use crate::scalar::{linear_fit, Real};

fn log_nodes<T: Real>(m: &WarpedMetric<T>) -> (Vec<T>, Vec<T>) {
    let u: Vec<T> = m.x().iter().map(|x| x.ln()).collect();
    let v: Vec<T> = m.a.values().iter().map(|a| a.sqrt()).collect();
    (u, v)
}

/// Proper length of the radial segment between `x_a` and `x_b`.
pub fn radial_distance<T: Real>(m: &WarpedMetric<T>, x_a: T, x_b: T) -> Result<T> {
    let (lo, hi) = (m.grid().x_min(), m.grid().x_max());
    for x in [x_a, x_b] {
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfRange {
                x: x.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
    }
    let (u, v) = log_nodes(m);
    Ok(definite_integral_nodes(&u, &v, x_a.ln(), x_b.ln())?.abs())
}

/// Proper radial coordinate `s(x_i) = ∫_{x_0}^{x_i} √A/ξ dξ` on the grid.
pub(crate) fn proper_coordinate<T: Real>(m: &WarpedMetric<T>) -> Vec<T> {
    let (u, v) = log_nodes(m);
    cumulative_integral_nodes(&u, &v)
}

/// `sn_κ(ψ)`: sin, identity or sinh.
fn sn(kappa: i32, psi: f64) -> f64 {
    match kappa {
        1 => psi.sin(),
        0 => psi,
        _ => psi.sinh(),
    }
}

/// Volume of the unit `(k−1)`-sphere.
fn sphere_area(k: usize) -> f64 {
    let kf = k as f64;
    2.0 * std::f64::consts::PI.powf(kf / 2.0) / libm_gamma(kf / 2.0)
}

/// Gamma function at half-integers and integers.
fn libm_gamma(z: f64) -> f64 {
    if (z - z.round()).abs() < 1e-12 {
        (1..z.round() as usize).map(|k| k as f64).product()
    } else {
        // Γ(k + ½) = √π (2k)! / (4^k k!)
        let k = (z - 0.5).round() as i32;
        let mut g = std::f64::consts::PI.sqrt();
        for j in 0..k {
            g *= j as f64 + 0.5;
        }
        g
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightedVolume {
    /// Quadrature over the collar plus the tail estimate.
    pub value: f64,
    pub collar: f64,
    pub tail: f64,
    /// Fitted exponent `p` of the radial density `≈ c x^p` near the boundary.
    pub density_exponent: f64,
    pub divergence_warning: bool,
}

/// `∫ exp(−α d(·, x₀)) dv_g` over the collar, with the basepoint at radius
/// `x₀` on the cross-section. For `κ ≤ 0` the cross-section is unwrapped to
/// its universal cover.
pub fn weighted_volume<T: Real>(m: &WarpedMetric<T>, alpha: f64, x0: T) -> Result<WeightedVolume> {
    let grid = m.grid();
    if !grid.contains(x0) {
        return Err(Error::OutOfRange {
            x: x0.as_f64(),
            lo: grid.x_min().as_f64(),
            hi: grid.x_max().as_f64(),
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("weighted_volume needs alpha > 0"));
    }
    let x: Vec<f64> = m.x().iter().map(|v| v.as_f64()).collect();
    let s: Vec<f64> = proper_coordinate(m).iter().map(|v| v.as_f64()).collect();
    let a: Vec<f64> = m.a.values().iter().map(|v| v.as_f64()).collect();
    let b: Vec<f64> = m.b.values().iter().map(|v| v.as_f64()).collect();
    let len = x.len();
    let dim = m.m();
    let kappa = m.cross_section.kappa();
    let f: Vec<f64> = (0..len).map(|i| b[i].sqrt() / x[i]).collect();
    let f_min = f.iter().copied().fold(f64::INFINITY, f64::min);

    // basepoint snapped to the nearest node
    let i0 = (0..len)
        .min_by(|&i, &j| (x[i] - x0.as_f64()).abs().total_cmp(&(x[j] - x0.as_f64()).abs()))
        .unwrap();

    let psi_max = if kappa > 0 {
        std::f64::consts::PI
    } else {
        (60.0 + 4.0 * dim as f64) / (alpha * f_min)
    };
    let n_psi = 400;
    let psi_lo = 1e-6 * psi_max;
    let psis: Vec<f64> = (0..n_psi)
        .map(|k| psi_lo * (psi_max / psi_lo).powf(k as f64 / (n_psi - 1) as f64))
        .collect();
    let trap = trapezoid(&psis);
    let omega = sphere_area(dim - 1).max(if dim == 1 { 2.0 } else { 0.0 });

    // angular integral for every radius
    let mut angular = vec![0.0; len];
    let mut best = vec![0.0; len];
    for (k, &psi) in psis.iter().enumerate() {
        // best[i] = min over turning nodes j >= i of 2 s_j + f_j ψ
        let mut run = f64::INFINITY;
        for j in (0..len).rev() {
            run = run.min(2.0 * s[j] + f[j] * psi);
            best[j] = run;
        }
        let w = trap[k] * omega * sn(kappa, psi).powi(dim as i32 - 1);
        for i in 0..len {
            let start = i.max(i0);
            let d = best[start] - s[i] - s[i0];
            angular[i] += w * (-alpha * d).exp();
        }
    }
    let density: Vec<f64> = (0..len)
        .map(|i| angular[i] * x[i].powi(-(m.n as i32)) * a[i].sqrt() * b[i].powf(dim as f64 / 2.0))
        .collect();
    // integrate density · x in ln x, where the power-law behaviour is gentle
    let lnx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let collar: f64 = trapezoid(&lnx)
        .iter()
        .zip(density.iter().zip(&x))
        .map(|(w, (d, xi))| w * d * xi)
        .sum();

    // tail below the smallest radius from the local power law of the density
    let k = 8.min(len);
    let lx: Vec<f64> = x[..k].iter().map(|v| v.ln()).collect();
    let ld: Vec<f64> = density[..k].iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let p = linear_fit(&lx, &ld).map(|(slope, _, _)| slope).unwrap_or(f64::NAN);
    let tail = if p + 1.0 > 0.0 {
        density[0] * x[0] / (p + 1.0)
    } else {
        f64::INFINITY
    };
    let divergence_warning = alpha <= (m.n - 1) as f64 || !(p + 1.0 > 0.1);
    let tail_used = if tail.is_finite() { tail } else { 0.0 };
    Ok(WeightedVolume {
        value: collar + tail_used,
        collar,
        tail,
        density_exponent: p,
        divergence_warning,
    })
}

fn trapezoid(p: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; p.len()];
    for i in 0..p.len() - 1 {
        let h = 0.5 * (p[i + 1] - p[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Certified lower bound for `vol B(p, 1)` centred at radius `x_c`.
#[derive(Clone, Debug, Serialize)]
pub struct VolumeProxy {
    pub lower_bound: f64,
    pub tube_length: f64,
    pub cap_radius: f64,
    pub f_min: f64,
    pub f_max: f64,
}

/// The tube `{|s − s_c| ≤ ½, ψ ≤ ½ / f_max}` lies inside the unit ball
/// (half a unit across at the ball's own radius, then at most half a unit
/// radially), so its volume `≥ tube_length · f_min^m · V_cap` bounds
/// `vol B(p, 1)` from below.
pub fn unit_ball_volume_proxy<T: Real>(m: &WarpedMetric<T>, x_c: T) -> Result<VolumeProxy> {
    let grid = m.grid();
    if !grid.contains(x_c) {
        return Err(Error::OutOfRange {
            x: x_c.as_f64(),
            lo: grid.x_min().as_f64(),
            hi: grid.x_max().as_f64(),
        });
    }
    let s: Vec<f64> = proper_coordinate(m).iter().map(|v| v.as_f64()).collect();
    let x: Vec<f64> = m.x().iter().map(|v| v.as_f64()).collect();
    let sc = {
        let (u, v) = log_nodes(m);
        definite_integral_nodes(&u, &v, u[0], x_c.ln())?.as_f64()
    };
    let lo = (sc - 0.5).max(s[0]);
    let hi = (sc + 0.5).min(s[s.len() - 1]);
    let mut f_min = f64::INFINITY;
    let mut f_max: f64 = 0.0;
    for (i, si) in s.iter().enumerate() {
        if *si >= lo && *si <= hi {
            let f = m.b.values()[i].as_f64().sqrt() / x[i];
            f_min = f_min.min(f);
            f_max = f_max.max(f);
        }
    }
    if !f_min.is_finite() {
        let i = grid.locate(x_c);
        f_min = m.b.values()[i].as_f64().sqrt() / x[i];
        f_max = f_min;
    }
    let dim = m.m();
    let rho = 0.5 / f_max;
    let kappa = m.cross_section.kappa();
    let steps = 200;
    let cap: f64 = (0..steps)
        .map(|k| {
            let psi = rho * (k as f64 + 0.5) / steps as f64;
            sn(kappa, psi).powi(dim as i32 - 1) * rho / steps as f64
        })
        .sum::<f64>()
        * sphere_area(dim - 1);
    let tube_length = hi - lo;
    Ok(VolumeProxy {
        lower_bound: tube_length * f_min.powi(dim as i32) * cap,
        tube_length,
        cap_radius: rho,
        f_min,
        f_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CrossSection;
    use crate::grid::{RadialGrid, ScalarField};
    use std::sync::Arc;

    fn model(n: usize, stretch: f64) -> WarpedMetric<f64> {
        let g = Arc::new(RadialGrid::build(n, 1.0, stretch).unwrap());
        WarpedMetric::einstein(g, 5, CrossSection::Sphere).unwrap()
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((sphere_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn model_integrand_gives_log_two() {
        let m = model(128, 4.0);
        let d = radial_distance(&m, 0.5, 0.25).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(radial_distance(&m, 0.3, 0.3).unwrap(), 0.0);
        let (p, q) = (radial_distance(&m, 0.2, 0.7).unwrap(), radial_distance(&m, 0.7, 0.2).unwrap());
        assert_eq!(p, q);
        assert!(radial_distance(&m, 1e-9, 0.5).is_err());
    }

    #[test]
    fn perturbed_radial_factor_integrates() {
        let g = Arc::new(RadialGrid::build(256, 1.0, 4.0).unwrap());
        let a = ScalarField::from_fn(g.clone(), |x: f64| (1.0 + x).powi(2)).unwrap();
        let b = ScalarField::constant(g, 1.0);
        let m = WarpedMetric::new(5, CrossSection::Sphere, a, b).unwrap();
        // ∫ (1 + x)/x dx = ln(x_b/x_a) + x_b − x_a
        let d = radial_distance(&m, 0.1, 0.9).unwrap();
        assert!((d - (9f64.ln() + 0.8)).abs() < 1e-9);
    }

    #[test]
    fn weighted_volume_is_decreasing_in_alpha() {
        let m = model(128, 8.0);
        let v1 = weighted_volume(&m, 4.5, 0.3).unwrap();
        let v2 = weighted_volume(&m, 5.0, 0.3).unwrap();
        assert!(v1.value > v2.value);
        assert!(!v1.divergence_warning);
        assert!(weighted_volume(&m, 4.0, 0.3).unwrap().divergence_warning);
    }

    #[test]
    fn minimal_grid_is_finite() {
        let m = model(16, 1.0);
        let v = weighted_volume(&m, 4.5, 0.5).unwrap();
        assert!(v.value.is_finite() && v.value > 0.0);
        let p = unit_ball_volume_proxy(&m, 0.5).unwrap();
        assert!(p.lower_bound > 0.0 && p.lower_bound.is_finite());
    }
}
