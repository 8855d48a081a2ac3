//! The path-metric Lipschitz bound in parameter space:
//!
//! ```text
//! ‖R_θ(x) − R_θ′(x)‖₁ ≤ max(‖x‖_∞, 1) · ‖Φ(θ) − Φ(θ′)‖₁   when θ_i θ′_i ≥ 0 for all i
//! ```
//!
//! Besides evaluating both sides, this module exposes the objects the proof
//! is built on (the log-space trajectory between `θ` and `θ′`, its activation
//! breakpoints and the telescoping of the path-metric along it) and the two
//! fixtures showing the bound is tight and that the sign condition matters.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixtures;
use crate::metrics::path_metric_exact_dominated;
use crate::net::{check_input, check_params, forward, Architecture, ParamVector};
use crate::paths::{ActivationVector, PathOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// `max(‖x‖_∞, 1) · ‖ΔΦ‖₁`.
    Main,
    /// `‖x‖_∞ · ‖ΔΦ^I‖₁ + ‖ΔΦ^H‖₁`, input-starting and hidden-starting paths apart.
    Split,
}

impl std::str::FromStr for BoundVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(BoundVariant::Main),
            "split" => Ok(BoundVariant::Split),
            _ => Err(Error::Parse(format!("unknown bound variant `{s}`"))),
        }
    }
}

/// Where the path-metric in the right-hand side came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSource {
    Oracle,
    ExactDominated,
    /// Difference of path-norms only: the right-hand side may be too small
    /// and a failure is not evidence against the bound.
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub variant: BoundVariant,
    pub holds: bool,
    pub slack: f64,
    pub source: MetricSource,
}

impl BoundReport {
    fn new(lhs: f64, rhs: f64, variant: BoundVariant, source: MetricSource) -> Self {
        Self { lhs, rhs, variant, holds: lhs <= rhs * (1.0 + 1e-9) + 1e-12, slack: rhs - lhs, source }
    }
}

/// Errors with the offending coordinates when some `θ_i θ′_i < 0`.
pub fn check_signs(theta: &[f64], other: &[f64]) -> Result<()> {
    let bad: Vec<usize> = theta.iter().zip(other).enumerate().filter(|(_, (a, b))| **a * **b < 0.0).map(|(i, _)| i).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::SignConditionViolated(bad))
    }
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

pub fn bound_rhs(arch: &Architecture, theta: &ParamVector, other: &ParamVector, x: &[f64], variant: BoundVariant) -> Result<f64> {
    check_signs(theta, other)?;
    Ok(rhs_unchecked(arch, theta, other, x, variant)?.0)
}

fn rhs_unchecked(
    arch: &Architecture,
    theta: &ParamVector,
    other: &ParamVector,
    x: &[f64],
    variant: BoundVariant,
) -> Result<(f64, MetricSource)> {
    check_params(arch, theta)?;
    check_params(arch, other)?;
    check_input(arch, x)?;
    let x_inf = sup_norm(x);
    let oracle = match PathOracle::new(arch) {
        Ok(o) => Some(o),
        Err(Error::PathExplosion { .. }) if variant == BoundVariant::Main => None,
        Err(e) => return Err(e),
    };
    match (variant, oracle) {
        (BoundVariant::Main, Some(o)) => Ok((x_inf.max(1.0) * o.lifting(theta)?.distance_l1(&o.lifting(other)?), MetricSource::Oracle)),
        (BoundVariant::Main, None) => match path_metric_exact_dominated(arch, theta, other) {
            Ok(m) => Ok((x_inf.max(1.0) * m.value, MetricSource::ExactDominated)),
            Err(Error::DominanceUnverified) => {
                let lower = crate::metrics::path_metric_lower(arch, theta, other)?;
                Ok((x_inf.max(1.0) * lower, MetricSource::LowerBound))
            }
            Err(e) => Err(e),
        },
        (BoundVariant::Split, Some(o)) => {
            let (phi, phi_other) = (o.lifting(theta)?, o.lifting(other)?);
            let rhs = arch
                .outputs()
                .iter()
                .map(|&v| {
                    let (di, dh) = phi.split_distance(&phi_other, v);
                    x_inf * di + dh
                })
                .sum();
            Ok((rhs, MetricSource::Oracle))
        }
        (BoundVariant::Split, None) => unreachable!("explosion is returned for the split variant"),
    }
}

/// `‖R_θ(x) − R_θ′(x)‖₁`.
pub fn output_gap(arch: &Architecture, theta: &ParamVector, other: &ParamVector, x: &[f64]) -> Result<f64> {
    let (a, b) = (forward(arch, theta, x)?, forward(arch, other, x)?);
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum())
}

pub fn verify_bound(arch: &Architecture, theta: &ParamVector, other: &ParamVector, x: &[f64], variant: BoundVariant) -> Result<BoundReport> {
    check_signs(theta, other)?;
    verify_bound_unchecked(arch, theta, other, x, variant)
}

/// [`verify_bound`] without the sign condition, for demonstrating what goes
/// wrong without it.
pub fn verify_bound_unchecked(
    arch: &Architecture,
    theta: &ParamVector,
    other: &ParamVector,
    x: &[f64],
    variant: BoundVariant,
) -> Result<BoundReport> {
    let (rhs, source) = rhs_unchecked(arch, theta, other, x, variant)?;
    Ok(BoundReport::new(output_gap(arch, theta, other, x)?, rhs, variant, source))
}

/// `θ(t)_i = sgn(θ_i) |θ_i|^{1−t} |θ′_i|^t`, a straight line in log-space.
pub fn trajectory_point(theta: &ParamVector, other: &ParamVector, t: f64) -> Result<ParamVector> {
    if theta.len() != other.len() {
        return Err(Error::ParamMismatch { expected: theta.len(), got: other.len() });
    }
    check_signs(theta, other)?;
    if let Some(i) = theta.iter().zip(other.iter()).position(|(a, b)| (*a == 0.0) != (*b == 0.0)) {
        return Err(Error::MixedZeroCoordinate(i));
    }
    if t == 0.0 {
        return Ok(theta.clone());
    }
    if t == 1.0 {
        return Ok(other.clone());
    }
    Ok(theta.map(|i, a| if a == 0.0 { 0.0 } else { a * (other[i] / a).powf(t) }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breakpoint {
    /// Midpoint of the localizing interval.
    pub t: f64,
    /// Canonical indices of the paths whose activation flips there.
    pub changed_paths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakpointReport {
    pub breakpoints: Vec<Breakpoint>,
    /// `Σ_k ‖Φ(θ(t_{k+1})) − Φ(θ(t_k))‖₁` over the segments cut at the breakpoints.
    pub telescoped: f64,
    /// `‖Φ(θ) − Φ(θ′)‖₁`.
    pub endpoint_metric: f64,
    pub telescoping_holds: bool,
    /// Every `t ↦ Φ_p(θ(t))`, sampled at 11 points, is monotone.
    pub monotone: bool,
}

/// Width below which bisection stops.
pub const BREAKPOINT_TOLERANCE: f64 = 1e-10;

/// Samples the activation pattern at `resolution + 1` uniform times and
/// bisects every interval where it changes.
pub fn breakpoints(arch: &Architecture, theta: &ParamVector, other: &ParamVector, x: &[f64], resolution: usize) -> Result<BreakpointReport> {
    check_params(arch, theta)?;
    check_params(arch, other)?;
    check_input(arch, x)?;
    let resolution = resolution.max(1);
    let oracle = PathOracle::new(arch)?;
    let pattern = |t: f64| -> Result<ActivationVector> { oracle.activations(&trajectory_point(theta, other, t)?, x) };

    let mut found = Vec::new();
    let mut prev = pattern(0.0)?;
    for k in 1..=resolution {
        let (mut lo, mut hi) = ((k - 1) as f64 / resolution as f64, k as f64 / resolution as f64);
        let next = pattern(hi)?;
        if next == prev {
            continue;
        }
        let lo_pattern = prev.clone();
        let mut hi_pattern = next.clone();
        while hi - lo > BREAKPOINT_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            let m = pattern(mid)?;
            if m == lo_pattern {
                lo = mid;
            } else {
                hi = mid;
                hi_pattern = m;
            }
        }
        let changed_paths = (0..lo_pattern.0.len()).filter(|&p| lo_pattern.0[p] != hi_pattern.0[p]).collect();
        found.push(Breakpoint { t: 0.5 * (lo + hi), changed_paths });
        prev = next;
    }

    let mut cuts = vec![0.0];
    cuts.extend(found.iter().map(|b| b.t));
    cuts.push(1.0);
    let liftings = cuts
        .iter()
        .map(|&t| oracle.lifting(&trajectory_point(theta, other, t)?))
        .collect::<Result<Vec<_>>>()?;
    let telescoped: f64 = liftings.windows(2).map(|w| w[0].distance_l1(&w[1])).sum();
    let endpoint_metric = liftings[0].distance_l1(liftings.last().unwrap());
    let telescoping_holds = (telescoped - endpoint_metric).abs() <= 1e-9 * endpoint_metric.max(telescoped);

    let samples = (0..=10)
        .map(|j| oracle.lifting(&trajectory_point(theta, other, j as f64 / 10.0)?))
        .collect::<Result<Vec<_>>>()?;
    let monotone = (0..liftings[0].values.len()).all(|p| {
        let series: Vec<f64> = samples.iter().map(|s| s.values[p]).collect();
        is_monotone(&series)
    });

    Ok(BreakpointReport { breakpoints: found, telescoped, endpoint_metric, telescoping_holds, monotone })
}

/// Non-decreasing or non-increasing up to a relative `1e-12` wobble.
pub fn is_monotone(series: &[f64]) -> bool {
    let tol = 1e-12 * series.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let up = series.windows(2).all(|w| w[1] >= w[0] - tol);
    let down = series.windows(2).all(|w| w[1] <= w[0] + tol);
    up || down
}

/// A fixture network with two parameter vectors and an input, plus the
/// bound evaluated on it.
#[derive(Debug, Clone)]
pub struct Witness {
    pub arch: Architecture,
    pub theta: ParamVector,
    pub other: ParamVector,
    pub x: Vec<f64>,
    pub report: BoundReport,
    /// Path-metric `‖Φ(θ) − Φ(θ′)‖₁`.
    pub path_metric: f64,
}

/// Chain of length `d` with every weight `a` (resp. `b`) and input `x0`:
/// both sides of the split bound equal `|a^d − b^d| x0`.
pub fn equality_witness(d: usize, a: f64, b: f64, x0: f64) -> Result<Witness> {
    if d == 0 {
        return Err(Error::InvalidConfig("the witness chain needs at least one edge".into()));
    }
    for (name, v) in [("a", a), ("b", b), ("x0", x0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!("witness parameter {name} must be positive, got {v}")));
        }
    }
    let arch = fixtures::chain(d);
    let chain = |w: f64| ParamVector::new(&arch, (0..arch.num_params()).map(|i| if i < d { w } else { 0.0 }).collect());
    let (theta, other) = (chain(a)?, chain(b)?);
    let x = vec![x0];
    let report = verify_bound(&arch, &theta, &other, &x, BoundVariant::Split)?;
    let oracle = PathOracle::new(&arch)?;
    let path_metric = oracle.lifting(&theta)?.distance_l1(&oracle.lifting(&other)?);
    Ok(Witness { arch, theta, other, x, report, path_metric })
}

/// `in → h → out` with weights `(1, 1)` against `(−1, −1)`: equal liftings,
/// different functions.
pub fn sign_counterexample() -> Witness {
    sign_counterexample_at(1.0)
}

pub fn sign_counterexample_at(x: f64) -> Witness {
    let arch = fixtures::chain(2);
    let theta = ParamVector::new(&arch, vec![1.0, 1.0, 0.0, 0.0]).expect("chain of length 2");
    let other = ParamVector::new(&arch, vec![-1.0, -1.0, 0.0, 0.0]).expect("chain of length 2");
    let x = vec![x];
    let report = verify_bound_unchecked(&arch, &theta, &other, &x, BoundVariant::Main).expect("fixture is valid");
    let path_metric = report.rhs / sup_norm(&x).max(1.0);
    Witness { arch, theta, other, x, report, path_metric }
}
