//! Polynomial TTFT predictor fitted to offline prefill profiles.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{build_timeline, CostParams};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("degree must be 1, 2 or 3, got {0}")]
    UnsupportedDegree(usize),
    #[error("rank-deficient samples: degree {degree} needs {needed} distinct token counts, got {distinct}")]
    RankDeficient { degree: usize, needed: usize, distinct: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

/// `y = a_0 + a_1 x + ... + a_d x^d`, `x` in tokens and `y` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtftPoly {
    pub degree: usize,
    pub coefficients: Vec<f64>,
}

impl TtftPoly {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self {
            degree: coefficients.len().saturating_sub(1),
            coefficients,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Evaluates the predictor at an aggregate token count, clamped at zero.
pub fn predict_latency(n_tokens: u64, poly: &TtftPoly) -> f64 {
    poly.eval(n_tokens as f64).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub r_squared: f64,
    pub max_abs_residual: f64,
    pub samples: usize,
}

/// Least-squares polynomial fit.
pub fn fit_ttft_poly(samples: &[(f64, f64)], degree: usize) -> Result<TtftPoly, FitError> {
    if !(1..=3).contains(&degree) {
        return Err(FitError::UnsupportedDegree(degree));
    }
    if let Some(i) = samples.iter().position(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(FitError::NonFinite(i));
    }
    let distinct: BTreeSet<u64> = samples.iter().map(|(x, _)| x.to_bits()).collect();
    if distinct.len() < degree + 1 {
        return Err(FitError::RankDeficient {
            degree,
            needed: degree + 1,
            distinct: distinct.len(),
        });
    }

    // Columns are built on x / scale so the Vandermonde system stays well conditioned
    // for token counts in the tens of thousands.
    let scale = samples.iter().map(|(x, _)| x.abs()).fold(0.0, f64::max).max(1.0);
    let rows = samples.len();
    let design = DMatrix::from_fn(rows, degree + 1, |r, c| (samples[r].0 / scale).powi(c as i32));
    let target = DVector::from_iterator(rows, samples.iter().map(|&(_, y)| y));
    let svd = design.svd(true, true);
    let scaled = svd.solve(&target, 1e-12).map_err(|_| FitError::RankDeficient {
        degree,
        needed: degree + 1,
        distinct: distinct.len(),
    })?;
    let coefficients = scaled
        .iter()
        .enumerate()
        .map(|(k, b)| b / scale.powi(k as i32))
        .collect();
    Ok(TtftPoly {
        degree,
        coefficients,
    })
}

pub fn diagnostics(poly: &TtftPoly, samples: &[(f64, f64)]) -> FitDiagnostics {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut max_abs_residual: f64 = 0.0;
    for &(x, y) in samples {
        let r = y - poly.eval(x);
        ss_res += r * r;
        ss_tot += (y - mean) * (y - mean);
        max_abs_residual = max_abs_residual.max(r.abs());
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { 0.0 };
    FitDiagnostics {
        r_squared,
        max_abs_residual,
        samples: samples.len(),
    }
}

/// Token counts used when profiling a cost model: 256 to 32768 in steps of 256.
pub fn default_profile_grid() -> Vec<u64> {
    (1..=128).map(|k| k * 256).collect()
}

/// Single-request prefill latencies from the cost model, standing in for offline profiling.
pub fn profile_cost_model(tokens: &[u64], chunk_size: Option<u64>, p: &CostParams) -> Vec<(f64, f64)> {
    tokens
        .iter()
        .map(|&n| (n as f64, build_timeline(&[n], chunk_size, p).total_duration))
        .collect()
}

/// Fits a predictor against the cost model's own single-request latencies.
pub fn fit_to_cost_model(p: &CostParams, chunk_size: Option<u64>, degree: usize) -> Result<TtftPoly, FitError> {
    let samples = profile_cost_model(&default_profile_grid(), chunk_size, p);
    fit_ttft_poly(&samples, degree)
}
