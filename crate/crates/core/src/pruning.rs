//! Pruning scores, reverse hard thresholding and the pruning error bound.
//!
//! The path-magnitude score of a coordinate is the `|Φ|` mass of the paths
//! going through it:
//!
//! ```text
//! Path-Mag(θ, i) = Σ_{p ∋ i} |Φ_p(θ)| = ‖Φ(θ)‖₁ − ‖Φ(θ_{−i})‖₁ = θ_i ∂‖Φ(θ)‖₁/∂θ_i
//! ```
//!
//! Each equality gives one way to compute it. Since `Φ` is invariant under
//! rescalings, so are the scores and the masks they induce.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{batch_loss, batch_loss_grad, grad_path_norm_into, LossKind, Tape};
use crate::error::{Error, Result};
use crate::metrics::path_norm_raw;
use crate::net::{check_input, check_params, Architecture, Coord, ParamVector};
use crate::paths::PathOracle;

/// Finite-difference step of the OBD baselines.
pub const OBD_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// `θ ⊙ ∇‖Φ(θ)‖₁`, one forward and one backward sweep.
    Autodiff,
    /// `‖Φ(θ)‖₁ − ‖Φ(θ_{−i})‖₁`, two path-norms per coordinate.
    PathnormDiff,
    /// Sum over enumerated paths.
    Bruteforce,
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autodiff" => Ok(ScoreMethod::Autodiff),
            "diff" | "pathnorm_diff" => Ok(ScoreMethod::PathnormDiff),
            "brute" | "bruteforce" => Ok(ScoreMethod::Bruteforce),
            _ => Err(Error::Parse(format!("unknown score method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Magnitude,
    /// Exact Hessian diagonal by second-order central differences.
    ObdFd,
    /// Hutchinson estimate of the Hessian diagonal with Rademacher probes.
    ObdHutchinson { probes: usize, seed: u64 },
}

/// Nonnegative score per coordinate (OBD scores may be negative where the
/// loss is locally concave).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub criterion: &'static str,
    pub method: &'static str,
}

/// Keep/drop flag per coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mask {
    keep: Vec<bool>,
}

impl Mask {
    pub fn all(len: usize) -> Self {
        Self { keep: vec![true; len] }
    }

    pub fn from_pruned(len: usize, pruned: &[usize]) -> Self {
        let mut m = Self::all(len);
        for &i in pruned {
            m.keep[i] = false;
        }
        m
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// The pruned index set `I`, in increasing order.
    pub fn pruned(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| !self.keep[i]).collect()
    }

    /// `s ⊙ θ`.
    pub fn apply(&self, theta: &ParamVector) -> ParamVector {
        theta.map(|i, x| if self.keep[i] { x } else { 0.0 })
    }

    pub fn hamming(&self, other: &Mask) -> usize {
        self.keep.iter().zip(&other.keep).filter(|(a, b)| a != b).count()
    }

    /// `0`/`1` string in coordinate order.
    pub fn bits(&self) -> String {
        self.keep.iter().map(|&k| if k { '1' } else { '0' }).collect()
    }
}

pub fn path_mag_scores(arch: &Architecture, theta: &ParamVector, method: ScoreMethod) -> Result<ScoreVector> {
    check_params(arch, theta)?;
    let values = match method {
        ScoreMethod::Autodiff => path_mag_autodiff(arch, theta),
        ScoreMethod::PathnormDiff => {
            let full = path_norm_raw(arch, theta, 1.0);
            (0..theta.len())
                .into_par_iter()
                .map_init(
                    || theta.to_vec(),
                    |probe, i| {
                        let orig = probe[i];
                        probe[i] = 0.0;
                        let without = path_norm_raw(arch, probe, 1.0);
                        probe[i] = orig;
                        full - without
                    },
                )
                .collect()
        }
        ScoreMethod::Bruteforce => PathOracle::new(arch)?.path_mass_per_coord(theta)?,
    };
    let method = match method {
        ScoreMethod::Autodiff => "autodiff",
        ScoreMethod::PathnormDiff => "pathnorm_diff",
        ScoreMethod::Bruteforce => "bruteforce",
    };
    Ok(ScoreVector { values, criterion: "pathmag", method })
}

fn path_mag_autodiff(arch: &Architecture, theta: &[f64]) -> Vec<f64> {
    let mut values = vec![0.0; arch.num_neurons()];
    let mut adjoint = vec![0.0; arch.num_neurons()];
    let mut grad = vec![0.0; arch.num_params()];
    grad_path_norm_into(arch, theta, &mut values, &mut adjoint, &mut grad);
    grad.iter_mut().zip(theta).for_each(|(g, t)| *g *= t);
    grad
}

/// A labelled batch for the loss-based criteria.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

pub fn baseline_scores(
    arch: &Architecture,
    theta: &ParamVector,
    criterion: Baseline,
    data: Option<&Batch>,
    loss: LossKind,
) -> Result<ScoreVector> {
    check_params(arch, theta)?;
    if criterion == Baseline::Magnitude {
        return Ok(ScoreVector { values: theta.iter().map(|x| x.abs()).collect(), criterion: "magnitude", method: "direct" });
    }
    let batch = data.ok_or(Error::MissingData("obd"))?;
    if batch.inputs.is_empty() {
        return Err(Error::MissingData("obd"));
    }
    for x in &batch.inputs {
        check_input(arch, x)?;
    }
    let diag = match criterion {
        Baseline::ObdFd => hessian_diag_fd(arch, theta, batch, loss)?,
        Baseline::ObdHutchinson { probes, seed } => hessian_diag_hutchinson(arch, theta, batch, loss, probes, seed)?,
        Baseline::Magnitude => unreachable!(),
    };
    let values = diag.iter().zip(theta.iter()).map(|(h, t)| 0.5 * h * t * t).collect();
    let method = if criterion == Baseline::ObdFd { "finite_difference" } else { "hutchinson" };
    Ok(ScoreVector { values, criterion: "obd", method })
}

/// `∂²ℓ/∂θ_i²` by central differences of the summed batch loss.
pub fn hessian_diag_fd(arch: &Architecture, theta: &ParamVector, batch: &Batch, loss: LossKind) -> Result<Vec<f64>> {
    let center = batch_loss(arch, theta, &batch.inputs, &batch.targets, loss)?;
    let mut probe = theta.clone().into_vec();
    let mut diag = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + OBD_EPS;
        let up = batch_loss(arch, &ParamVector::from_vec(probe.clone()), &batch.inputs, &batch.targets, loss)?;
        probe[i] = orig - OBD_EPS;
        let down = batch_loss(arch, &ParamVector::from_vec(probe.clone()), &batch.inputs, &batch.targets, loss)?;
        probe[i] = orig;
        diag.push((up - 2.0 * center + down) / (OBD_EPS * OBD_EPS));
    }
    Ok(diag)
}

/// Mean over Rademacher probes `v` of `(Hv) ⊙ v`, with `Hv` from central
/// differences of the gradient along `v`.
pub fn hessian_diag_hutchinson(
    arch: &Architecture,
    theta: &ParamVector,
    batch: &Batch,
    loss: LossKind,
    probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if probes == 0 {
        return Err(Error::InvalidConfig("Hutchinson estimator needs at least one probe".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new(arch);
    let mut diag = vec![0.0; theta.len()];
    for _ in 0..probes {
        let v: Vec<f64> = (0..theta.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let plus = theta.map(|i, x| x + OBD_EPS * v[i]);
        let minus = theta.map(|i, x| x - OBD_EPS * v[i]);
        let (_, g_plus) = batch_loss_grad(arch, &plus, &batch.inputs, &batch.targets, loss, &mut tape)?;
        let (_, g_minus) = batch_loss_grad(arch, &minus, &batch.inputs, &batch.targets, loss, &mut tape)?;
        for i in 0..theta.len() {
            diag[i] += (g_plus[i] - g_minus[i]) / (2.0 * OBD_EPS) * v[i];
        }
    }
    diag.iter_mut().for_each(|d| *d /= probes as f64);
    Ok(diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amount {
    /// Fraction of the eligible coordinates, rounded to the nearest count.
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    /// Weights and biases.
    #[default]
    All,
    EdgesOnly,
}

fn eligible(arch: &Architecture, scope: PruneScope) -> Vec<usize> {
    (0..arch.num_params())
        .filter(|&i| scope == PruneScope::All || matches!(arch.coord(i), Coord::Edge(_)))
        .collect()
}

fn prune_count(amount: Amount, available: usize) -> Result<usize> {
    match amount {
        Amount::Fraction(f) if (0.0..=1.0).contains(&f) => Ok((f * available as f64).round() as usize),
        Amount::Fraction(f) => Err(Error::InfeasibleAmount(format!("fraction {f} is outside [0, 1]"))),
        Amount::Count(k) if k <= available => Ok(k),
        Amount::Count(k) => Err(Error::InfeasibleAmount(format!("{k} coordinates requested, {available} eligible"))),
    }
}

/// Relative gap below which two scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Sorts `candidates` by ascending score. Runs of scores whose consecutive
/// gaps are within [`TIE_TOLERANCE`] (relative) are ties and ordered by
/// coordinate, so rounding noise from a rescaling cannot reorder them.
pub fn rank_ascending(candidates: &mut [usize], scores: &[f64]) {
    candidates.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut start = 0;
    for j in 1..=candidates.len() {
        let split = j == candidates.len() || {
            let (lo, hi) = (scores[candidates[j - 1]], scores[candidates[j]]);
            hi - lo > TIE_TOLERANCE * lo.abs().max(hi.abs())
        };
        if split {
            candidates[start..j].sort_unstable();
            start = j;
        }
    }
}

/// Zeroes the eligible coordinates with the smallest scores; ties go to the
/// earlier coordinate.
pub fn apply_prune(
    arch: &Architecture,
    theta: &ParamVector,
    scores: &ScoreVector,
    amount: Amount,
    scope: PruneScope,
) -> Result<(Mask, ParamVector)> {
    check_params(arch, theta)?;
    if scores.values.len() != theta.len() {
        return Err(Error::ParamMismatch { expected: theta.len(), got: scores.values.len() });
    }
    let mut candidates = eligible(arch, scope);
    let k = prune_count(amount, candidates.len())?;
    rank_ascending(&mut candidates, &scores.values);
    let mask = Mask::from_pruned(theta.len(), &candidates[..k]);
    let pruned = mask.apply(theta);
    Ok((mask, pruned))
}

/// Removes one coordinate at a time, recomputing path-magnitude scores on the
/// current parameters after every removal.
pub fn apply_prune_iterative(arch: &Architecture, theta: &ParamVector, amount: Amount, scope: PruneScope) -> Result<(Mask, ParamVector)> {
    check_params(arch, theta)?;
    let mut remaining = eligible(arch, scope);
    let k = prune_count(amount, remaining.len())?;
    let mut current = theta.clone();
    let mut pruned = Vec::with_capacity(k);
    for _ in 0..k {
        let scores = path_mag_autodiff(arch, &current);
        let mut order = remaining.clone();
        rank_ascending(&mut order, &scores);
        let i = order[0];
        remaining.retain(|&j| j != i);
        current = current.without(i);
        pruned.push(i);
    }
    Ok((Mask::from_pruned(theta.len(), &pruned), current))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PruningBound {
    /// `max(1, ‖x‖_∞) · Σ_{i ∈ I} Path-Mag(θ, i)`.
    pub bound: f64,
    /// `‖R_θ(x) − R_{s⊙θ}(x)‖₁`.
    pub empirical_lhs: f64,
    pub holds: bool,
}

pub fn pruning_error_bound(arch: &Architecture, theta: &ParamVector, mask: &Mask, x: &[f64]) -> Result<PruningBound> {
    check_params(arch, theta)?;
    if mask.len() != theta.len() {
        return Err(Error::ParamMismatch { expected: theta.len(), got: mask.len() });
    }
    let scores = path_mag_autodiff(arch, theta);
    let mass: f64 = mask.pruned().iter().map(|&i| scores[i]).sum();
    let x_inf = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let bound = mass * x_inf.max(1.0);
    let empirical_lhs = crate::lipschitz::output_gap(arch, theta, &mask.apply(theta), x)?;
    Ok(PruningBound { bound, empirical_lhs, holds: empirical_lhs <= bound * (1.0 + 1e-9) + 1e-12 })
}
