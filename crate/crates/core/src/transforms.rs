//! Neuron-wise rescaling symmetries and the normalization map.
//!
//! Rescaling hidden neuron `v` by `λ > 0` multiplies its incoming weights and
//! bias by `λ` and divides its outgoing weights by `λ`. The realization and
//! the path-lifting are unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{check_params, Architecture, ParamVector};

/// Factors drawn by [`RescalePreset::FixedFactors`].
pub const FIXED_FACTORS: [f64; 3] = [1.0, 128.0, 4096.0];

/// Positive factor per neuron; neurons that are not rescaled carry 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescaling {
    factors: Vec<f64>,
}

impl Rescaling {
    pub fn identity(arch: &Architecture) -> Self {
        Self { factors: vec![1.0; arch.num_neurons()] }
    }

    pub fn from_named(arch: &Architecture, factors: &[(&str, f64)]) -> Result<Self> {
        let mut r = Self::identity(arch);
        for &(id, value) in factors {
            r.set(arch, arch.neuron(id)?, value)?;
        }
        Ok(r)
    }

    pub fn set(&mut self, arch: &Architecture, v: usize, value: f64) -> Result<()> {
        if !arch.is_hidden(v) {
            return Err(Error::IneligibleNeuron(arch.id(v).to_string()));
        }
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveFactor { id: arch.id(v).to_string(), value });
        }
        self.factors[v] = value;
        Ok(())
    }

    pub fn factor(&self, v: usize) -> f64 {
        self.factors[v]
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn is_identity(&self) -> bool {
        self.factors.iter().all(|&f| f == 1.0)
    }
}

/// `λ ⋄ θ`.
pub fn rescale(arch: &Architecture, theta: &ParamVector, lambda: &Rescaling) -> Result<ParamVector> {
    check_params(arch, theta)?;
    if lambda.factors.len() != arch.num_neurons() {
        return Err(Error::DimensionMismatch { expected: arch.num_neurons(), got: lambda.factors.len() });
    }
    let f = &lambda.factors;
    let mut out = theta.clone().into_vec();
    for (e, &(u, v)) in arch.edges().iter().enumerate() {
        if f[u] != 1.0 || f[v] != 1.0 {
            out[e] = out[e] * f[v] / f[u];
        }
    }
    for v in 0..arch.num_neurons() {
        if let Some(c) = arch.bias_coord(v) {
            out[c] *= f[v];
        }
    }
    Ok(ParamVector::from_vec(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescalePreset {
    /// Each factor uniform on {1, 128, 4096}.
    FixedFactors,
    /// `ln λ` uniform on `[−ln λmax, ln λmax]`.
    LogUniform(f64),
}

impl std::str::FromStr for RescalePreset {
    type Err = Error;

    /// Parses `fixed` or `loguniform:LMAX`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "fixed" {
            return Ok(RescalePreset::FixedFactors);
        }
        let lmax = s
            .strip_prefix("loguniform:")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse(format!("unknown rescale preset `{s}`")))?;
        if !(lmax >= 1.0 && lmax.is_finite()) {
            return Err(Error::InvalidConfig(format!("loguniform bound must be a finite number >= 1, got {lmax}")));
        }
        Ok(RescalePreset::LogUniform(lmax))
    }
}

/// Draws one factor per hidden neuron (pooling neurons included), in
/// topological order, from a ChaCha8 stream seeded with `seed`.
pub fn random_rescaling(arch: &Architecture, seed: u64, preset: RescalePreset) -> Rescaling {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rescaling_with(arch, &mut rng, preset)
}

pub fn random_rescaling_with<R: Rng>(arch: &Architecture, rng: &mut R, preset: RescalePreset) -> Rescaling {
    let mut r = Rescaling::identity(arch);
    for v in 0..arch.num_neurons() {
        if !arch.is_hidden(v) {
            continue;
        }
        r.factors[v] = match preset {
            RescalePreset::FixedFactors => FIXED_FACTORS[rng.random_range(0..FIXED_FACTORS.len())],
            RescalePreset::LogUniform(lmax) => {
                let span = lmax.ln().abs();
                if span > 0.0 {
                    rng.random_range(-span..=span).exp()
                } else {
                    1.0
                }
            }
        };
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeOptions {
    /// Also normalize k-max-pool neurons.
    pub include_pool: bool,
    /// Zero the outgoing weights of neurons whose incoming weights and bias
    /// are all zero. Such a neuron always outputs 0, so neither the
    /// realization nor the path-lifting changes.
    pub prune_dead: bool,
    /// Norm used for the incoming vector `(θ^{→v}, b_v)`.
    pub exponent: f64,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self { include_pool: false, prune_dead: false, exponent: 1.0 }
    }
}

impl NormalizeOptions {
    /// Representative used by the path-metric upper bounds: every hidden
    /// neuron normalized in `ℓ^q`, dead neurons disconnected.
    pub fn canonical(q: f64) -> Self {
        Self { include_pool: true, prune_dead: true, exponent: q }
    }
}

/// `‖(θ^{→v}, b_v)‖_q`.
pub fn incoming_norm(arch: &Architecture, theta: &[f64], v: usize, q: f64) -> f64 {
    let coords = arch.incoming(v).iter().copied().chain(arch.bias_coord(v));
    if q == 1.0 {
        coords.map(|c| theta[c].abs()).sum()
    } else {
        coords.map(|c| theta[c].abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// `N(θ)` with the default options: ReLU and identity hidden neurons get an
/// incoming `ℓ¹` norm of 1, dead neurons are left untouched.
pub fn normalize(arch: &Architecture, theta: &ParamVector) -> Result<ParamVector> {
    normalize_with(arch, theta, NormalizeOptions::default())
}

pub fn normalize_with(arch: &Architecture, theta: &ParamVector, opts: NormalizeOptions) -> Result<ParamVector> {
    check_params(arch, theta)?;
    if !(opts.exponent >= 1.0 && opts.exponent.is_finite()) {
        return Err(Error::InvalidConfig(format!("normalization exponent must be >= 1, got {}", opts.exponent)));
    }
    let mut t = theta.clone().into_vec();
    for v in 0..arch.num_neurons() {
        if !arch.rescalable(v, opts.include_pool) {
            continue;
        }
        let lambda = incoming_norm(arch, &t, v, opts.exponent);
        if lambda > 0.0 {
            for c in arch.incoming(v).iter().copied().chain(arch.bias_coord(v)) {
                t[c] /= lambda;
            }
            for &e in arch.outgoing(v) {
                t[e] *= lambda;
            }
        } else if opts.prune_dead {
            for &e in arch.outgoing(v) {
                t[e] = 0.0;
            }
        }
    }
    Ok(ParamVector::from_vec(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::net::forward;
    use crate::paths::path_lifting;

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn rescale_h1_by_two() {
        let arch = fixtures::diamond();
        let theta = fixtures::diamond_params();
        let lambda = Rescaling::from_named(&arch, &[("h1", 2.0)]).unwrap();
        let scaled = rescale(&arch, &theta, &lambda).unwrap();
        assert_eq!(&scaled[..4], &[2.0, -2.0, 1.5, 1.0]);
        assert_eq!(forward(&arch, &scaled, &[1.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn identity_rescaling_is_a_no_op() {
        let arch = fixtures::diamond();
        let theta = fixtures::diamond_params();
        assert_eq!(rescale(&arch, &theta, &Rescaling::identity(&arch)).unwrap(), theta);
    }

    #[test]
    fn extreme_factor_keeps_lifting() {
        let arch = fixtures::diamond();
        let theta = fixtures::diamond_params();
        let lambda = Rescaling::from_named(&arch, &[("h1", 4096.0)]).unwrap();
        let scaled = rescale(&arch, &theta, &lambda).unwrap();
        assert_close(&path_lifting(&arch, &scaled).unwrap().values, &path_lifting(&arch, &theta).unwrap().values);
    }

    #[test]
    fn rescaling_errors() {
        let arch = fixtures::diamond();
        assert_eq!(
            Rescaling::from_named(&arch, &[("h1", 0.0)]),
            Err(Error::NonPositiveFactor { id: "h1".into(), value: 0.0 })
        );
        assert_eq!(Rescaling::from_named(&arch, &[("out", 2.0)]), Err(Error::IneligibleNeuron("out".into())));
        assert_eq!(Rescaling::from_named(&arch, &[("in", 2.0)]), Err(Error::IneligibleNeuron("in".into())));
    }

    #[test]
    fn random_rescaling_presets() {
        let arch = fixtures::layered(&[3, 5, 5, 2]);
        let a = random_rescaling(&arch, 11, RescalePreset::FixedFactors);
        assert_eq!(a, random_rescaling(&arch, 11, RescalePreset::FixedFactors));
        for v in 0..arch.num_neurons() {
            let f = a.factor(v);
            if arch.is_hidden(v) {
                assert!(FIXED_FACTORS.contains(&f));
            } else {
                assert_eq!(f, 1.0);
            }
        }
        assert!(random_rescaling(&arch, 3, RescalePreset::LogUniform(1.0)).is_identity());
        let lu = random_rescaling(&arch, 3, RescalePreset::LogUniform(8.0));
        assert!(lu.factors().iter().all(|&f| (1.0 / 8.0..=8.0).contains(&f)));
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("fixed".parse::<RescalePreset>().unwrap(), RescalePreset::FixedFactors);
        assert_eq!("loguniform:64".parse::<RescalePreset>().unwrap(), RescalePreset::LogUniform(64.0));
        assert!("loguniform:0.5".parse::<RescalePreset>().is_err());
        assert!("gaussian".parse::<RescalePreset>().is_err());
    }

    #[test]
    fn normalize_diamond() {
        let arch = fixtures::diamond();
        let theta = fixtures::diamond_params();
        let n = normalize(&arch, &theta).unwrap();
        assert_eq!(&n[..4], &[1.0, -1.0, 3.0, 2.0]);
        assert_eq!(path_lifting(&arch, &n).unwrap().values, vec![3.0, -2.0, 0.0, 0.0, 0.0]);
        assert_eq!(normalize(&arch, &n).unwrap(), n);
    }

    #[test]
    fn dead_neuron_is_left_alone_by_default() {
        let arch = fixtures::diamond();
        let theta = fixtures::diamond_with(&[0.0, -2.0, 3.0, 1.0]);
        let n = normalize(&arch, &theta).unwrap();
        assert_eq!(n[0], 0.0);
        assert_eq!(n[2], 3.0);
        let canon = normalize_with(&arch, &theta, NormalizeOptions::canonical(1.0)).unwrap();
        assert_eq!(canon[2], 0.0);
        assert_eq!(path_lifting(&arch, &canon).unwrap(), path_lifting(&arch, &theta).unwrap());
    }

    #[test]
    fn pool_neurons_only_with_flag() {
        let arch = fixtures::pool_pair();
        let theta = fixtures::pool_params(2.0, -3.0);
        assert_eq!(normalize(&arch, &theta).unwrap(), theta);
        let opts = NormalizeOptions { include_pool: true, ..Default::default() };
        let n = normalize_with(&arch, &theta, opts).unwrap();
        assert_eq!(&n[..3], &[0.4, -0.6, 5.0]);
        assert_eq!(forward(&arch, &n, &[1.0, 1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn lq_normalization_gives_unit_incoming_norm() {
        let arch = fixtures::layered(&[2, 3, 1]);
        let theta = ParamVector::new(&arch, (0..arch.num_params()).map(|i| i as f64 - 3.5).collect()).unwrap();
        let n = normalize_with(&arch, &theta, NormalizeOptions::canonical(2.0)).unwrap();
        for v in 0..arch.num_neurons() {
            if arch.is_hidden(v) {
                assert!((incoming_norm(&arch, &n, v, 2.0) - 1.0).abs() < 1e-12);
            }
        }
        assert_close(&path_lifting(&arch, &n).unwrap().values, &path_lifting(&arch, &theta).unwrap().values);
    }
}
