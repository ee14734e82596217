//! Least-squares decay fits: power laws in space, exponentials in time.

use serde::{Deserialize, Serialize};

use crate::scalar::linear_fit;

/// Fits with fewer samples than this are refused.
pub const MIN_FIT_SAMPLES: usize = 8;

/// Why a fit was refused or is suspect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitFlag {
    TooFewSamples,
    BelowNoiseFloor,
    SignChange,
    NonDecaying,
}

/// `f ≈ C x^p` over a radius window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: Option<f64>,
    pub prefactor: Option<f64>,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub samples: usize,
    pub window: (f64, f64),
    pub flag: Option<FitFlag>,
}

/// `v ≈ C e^{−λ t}`; `rate` is `λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: Option<f64>,
    pub residual: f64,
    pub samples: usize,
    /// `1 − residual/spread`: near 1 for a clean exponential.
    pub confidence: f64,
    pub flag: Option<FitFlag>,
}

fn window_samples(x: &[f64], f: &[f64], lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    x.iter()
        .zip(f)
        .filter(|(xi, _)| **xi >= lo && **xi <= hi)
        .map(|(a, b)| (*a, *b))
        .unzip()
}

/// Log-log fit of `f` against `x` on `[lo, hi]`. Samples at or below
/// `noise_floor` refuse the fit; a field that changes sign is flagged.
pub fn power_law_fit(x: &[f64], f: &[f64], window: (f64, f64), noise_floor: f64) -> PowerFit {
    let (xs, fs) = window_samples(x, f, window.0, window.1);
    let refuse = |flag| PowerFit {
        exponent: None,
        prefactor: None,
        residual: 0.0,
        samples: xs.len(),
        window,
        flag: Some(flag),
    };
    if xs.len() < MIN_FIT_SAMPLES {
        return refuse(FitFlag::TooFewSamples);
    }
    let pos = fs.iter().any(|v| *v > 0.0);
    let neg = fs.iter().any(|v| *v < 0.0);
    if pos && neg {
        return refuse(FitFlag::SignChange);
    }
    if fs.iter().any(|v| v.abs() <= noise_floor) {
        return refuse(FitFlag::BelowNoiseFloor);
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = fs.iter().map(|v| v.abs().ln()).collect();
    match linear_fit(&lx, &ly) {
        Some((slope, icpt, res)) => PowerFit {
            exponent: Some(slope),
            prefactor: Some(icpt.exp()),
            residual: res,
            samples: xs.len(),
            window,
            flag: None,
        },
        None => refuse(FitFlag::TooFewSamples),
    }
}

/// Exponential decay rate of a positive series over the time window.
pub fn exponential_rate_fit(t: &[f64], v: &[f64], window: (f64, f64)) -> RateFit {
    let (ts, vs) = window_samples(t, v, window.0, window.1);
    let refuse = |flag| RateFit {
        rate: None,
        residual: 0.0,
        samples: ts.len(),
        confidence: 0.0,
        flag: Some(flag),
    };
    if ts.len() < MIN_FIT_SAMPLES {
        return refuse(FitFlag::TooFewSamples);
    }
    if vs.iter().any(|x| !(*x > 0.0)) {
        return refuse(FitFlag::BelowNoiseFloor);
    }
    let ly: Vec<f64> = vs.iter().map(|x| x.ln()).collect();
    let Some((slope, _, res)) = linear_fit(&ts, &ly) else {
        return refuse(FitFlag::TooFewSamples);
    };
    let spread = ly.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ly.iter().cloned().fold(f64::INFINITY, f64::min);
    let confidence = if spread > 0.0 { (1.0 - res / spread).clamp(0.0, 1.0) } else { 0.0 };
    RateFit {
        rate: Some(-slope),
        residual: res,
        samples: ts.len(),
        confidence,
        flag: (slope >= 0.0).then_some(FitFlag::NonDecaying),
    }
}
