//! Bisection searches over offered load and SLO scale.
//!
//! Both searches assume attainment is monotone in the searched variable (non-increasing in
//! rate, non-decreasing in SLO scale). Every evaluated point is kept; if the evaluations
//! contradict monotonicity the search falls back to a uniform grid scan and says so.

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::cost_model::CostParams;
use crate::engine::{run, SimError};
use crate::workload::{scale_rate, scale_slo, Trace, WorkloadError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("attainment {attainment:.4} at {bound} is below the target {target}; the search floor is infeasible")]
    InfeasibleFloor { bound: f64, attainment: f64, target: f64 },
    #[error("target attainment {0} is unreachable (must lie in (0, 1])")]
    UnreachableTarget(f64),
    #[error("invalid search bounds: {0}")]
    InvalidBounds(String),
    #[error("base trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchBounds {
    pub lo: f64,
    pub hi: f64,
    /// Stop once the bracket is narrower than `tol * lo`.
    pub tol: f64,
}

impl SearchBounds {
    pub fn new(lo: f64, hi: f64, tol: f64) -> Self {
        Self { lo, hi, tol }
    }

    fn validate(&self) -> Result<(), SearchError> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.tol > 0.0) || !self.hi.is_finite() {
            return Err(SearchError::InvalidBounds(format!(
                "need 0 < lo < hi and tol > 0, got lo={} hi={} tol={}",
                self.lo, self.hi, self.tol
            )));
        }
        Ok(())
    }

    /// Upper bound on bisection steps: `ceil(log2((hi - lo) / (tol * lo)))`.
    pub fn max_bisection_steps(&self) -> u32 {
        ((self.hi - self.lo) / (self.tol * self.lo)).log2().ceil().max(0.0) as u32
    }

    fn resolution(&self) -> f64 {
        self.tol * self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    /// Best value found that still meets the target.
    pub value: f64,
    /// The other side of the final bracket (first failing value), if any.
    pub bracket_other: Option<f64>,
    /// The whole range meets the target; `value` is the range end.
    pub saturated: bool,
    /// Evaluations contradicted monotonicity and a grid scan decided the result.
    pub non_monotone: bool,
    /// `(x, attainment)` in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
}

impl SearchOutcome {
    pub fn runs(&self) -> usize {
        self.evaluations.len()
    }
}

const GRID_POINTS: usize = 16;
/// Attainment rises smaller than this between evaluated points are treated as noise.
const MONOTONE_SLACK: f64 = 0.01;

fn validate_target(target: f64) -> Result<(), SearchError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(SearchError::UnreachableTarget(target));
    }
    Ok(())
}

/// Whether `evals` are consistent with attainment non-increasing in x.
fn monotone_decreasing(evals: &[(f64, f64)]) -> bool {
    let mut sorted = evals.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.windows(2).all(|w| w[1].1 <= w[0].1 + MONOTONE_SLACK)
}

/// Largest x in `bounds` whose attainment reaches `target`, for attainment non-increasing in x.
pub fn search_max<F>(mut attainment: F, target: f64, bounds: SearchBounds) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(f64) -> Result<f64, SearchError>,
{
    validate_target(target)?;
    bounds.validate()?;
    let mut evals = Vec::new();
    let mut eval = |x: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64, SearchError> {
        let a = attainment(x)?;
        evals.push((x, a));
        Ok(a)
    };

    let at_lo = eval(bounds.lo, &mut evals)?;
    if at_lo < target {
        return Err(SearchError::InfeasibleFloor {
            bound: bounds.lo,
            attainment: at_lo,
            target,
        });
    }
    let at_hi = eval(bounds.hi, &mut evals)?;
    if at_hi >= target {
        return Ok(SearchOutcome {
            value: bounds.hi,
            bracket_other: None,
            saturated: true,
            non_monotone: false,
            evaluations: evals,
        });
    }

    let (mut good, mut bad) = (bounds.lo, bounds.hi);
    while bad - good > bounds.resolution() {
        let mid = 0.5 * (good + bad);
        if eval(mid, &mut evals)? >= target {
            good = mid;
        } else {
            bad = mid;
        }
    }
    if monotone_decreasing(&evals) {
        return Ok(SearchOutcome {
            value: good,
            bracket_other: Some(bad),
            saturated: false,
            non_monotone: false,
            evaluations: evals,
        });
    }

    let step = (bounds.hi - bounds.lo) / (GRID_POINTS - 1) as f64;
    let mut best = bounds.lo;
    let mut first_fail = None;
    for i in 0..GRID_POINTS {
        let x = bounds.lo + step * i as f64;
        if eval(x, &mut evals)? >= target {
            best = x;
        } else if first_fail.is_none() {
            first_fail = Some(x);
        }
    }
    Ok(SearchOutcome {
        value: best,
        bracket_other: first_fail,
        saturated: false,
        non_monotone: true,
        evaluations: evals,
    })
}

/// Smallest x in `bounds` whose attainment reaches `target`, for attainment non-decreasing in x.
pub fn search_min<F>(mut attainment: F, target: f64, bounds: SearchBounds) -> Result<SearchOutcome, SearchError>
where
    F: FnMut(f64) -> Result<f64, SearchError>,
{
    validate_target(target)?;
    bounds.validate()?;
    // Reflect x -> lo + hi - x so the non-decreasing curve becomes non-increasing.
    let reflect = |x: f64| bounds.lo + bounds.hi - x;
    // The reflected floor is the original ceiling; report that bound correctly on failure.
    let outcome = search_max(|x| attainment(reflect(x)), target, bounds).map_err(|e| match e {
        SearchError::InfeasibleFloor { attainment, target, .. } => SearchError::InfeasibleFloor {
            bound: bounds.hi,
            attainment,
            target,
        },
        other => other,
    })?;
    Ok(SearchOutcome {
        value: reflect(outcome.value),
        bracket_other: outcome.bracket_other.map(reflect),
        saturated: outcome.saturated,
        non_monotone: outcome.non_monotone,
        evaluations: outcome.evaluations.into_iter().map(|(x, a)| (reflect(x), a)).collect(),
    })
}

/// Maximum request rate (requests/s) at which `target` attainment is sustained.
///
/// `base_rate` is the offered rate of `base_trace`; candidate rates are realized by
/// compressing its arrivals with [`scale_rate`].
pub fn goodput_search(
    base_trace: &Trace,
    base_rate: f64,
    cfg: &RunConfig,
    cost: &CostParams,
    target: f64,
    bounds: SearchBounds,
) -> Result<SearchOutcome, SearchError> {
    if base_trace.is_empty() {
        return Err(SearchError::EmptyTrace);
    }
    search_max(
        |rate| {
            let trace = scale_rate(base_trace, rate / base_rate)?;
            let res = run(&trace, cfg, cost)?;
            Ok(res.attainment().unwrap_or(0.0))
        },
        target,
        bounds,
    )
}

/// Smallest SLO scale at which `target` attainment is reached.
pub fn min_slo_scale_search(
    base_trace: &Trace,
    cfg: &RunConfig,
    cost: &CostParams,
    target: f64,
    bounds: SearchBounds,
) -> Result<SearchOutcome, SearchError> {
    if base_trace.is_empty() {
        return Err(SearchError::EmptyTrace);
    }
    search_min(
        |scale| {
            let trace = scale_slo(base_trace, scale)?;
            let res = run(&trace, cfg, cost)?;
            Ok(res.attainment().unwrap_or(0.0))
        },
        target,
        bounds,
    )
}
