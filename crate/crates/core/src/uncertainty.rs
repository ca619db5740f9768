//! Estimation-error sampling and γ-quantile robust utilities.
//!
//! A robust utility evaluates a fixed allocation on `M` independently
//! perturbed copies of the network and keeps a nearest-rank empirical
//! quantile of the resulting utilities. The tail is chosen so that the
//! reported level is met with probability at least `1 - γ`: the lower tail
//! for rate utilities, the upper tail for delays.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SystemConfig;
use crate::netmodel::{
    channel_gains, complex_gaussian, metrics_from_parts, Allocation, CMatrix, NetworkState,
};
use crate::objectives::{evaluate_utility, Family, Sense, UtilitySpec};
use crate::seeding::{rng_from, stream};

/// Default number of realizations per robust evaluation.
pub const DEFAULT_M: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum QuantileError {
    #[error("empirical quantile of an empty sample set")]
    Empty,
    #[error("quantile level {0} outside (0, 1)")]
    Level(f64),
    #[error("invalid error model: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Lower,
    Upper,
}

/// Statistics of the estimation errors and the injection budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub sigma_h_sq: f64,
    pub sigma_w_sq: f64,
    pub m_samples: usize,
    /// Per-family tail overrides. Families not listed use the sense rule.
    #[serde(default)]
    pub tail_overrides: BTreeMap<Family, Tail>,
}

impl ErrorModel {
    pub fn from_config(config: &SystemConfig, m_samples: usize) -> Self {
        Self {
            sigma_h_sq: config.sigma_h_sq,
            sigma_w_sq: config.sigma_w_sq,
            m_samples,
            tail_overrides: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), QuantileError> {
        if self.m_samples == 0 {
            return Err(QuantileError::Model("m_samples must be >= 1".into()));
        }
        if !(self.sigma_h_sq >= 0.0 && self.sigma_w_sq >= 0.0) {
            return Err(QuantileError::Model("variances must be >= 0".into()));
        }
        Ok(())
    }

    /// Conservative tail for a family: lower for rates, upper for delays.
    pub fn tail_for(&self, family: Family) -> Tail {
        self.tail_overrides
            .get(&family)
            .copied()
            .unwrap_or(match family.sense() {
                Sense::Maximize => Tail::Lower,
                Sense::Minimize => Tail::Upper,
            })
    }
}

/// Utility realizations of one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySamples {
    pub values: Vec<f64>,
    pub sense: Sense,
}

/// The parts of a perturbed state that metrics depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    /// `|h_kᴴ v_j|²`, row-major K×K.
    pub gains: Vec<f64>,
    pub omega: Vec<f64>,
}

fn draw_errors<R: Rng + ?Sized>(
    state: &NetworkState,
    model: &ErrorModel,
    rng: &mut R,
) -> (CMatrix, Vec<f64>) {
    let k = state.num_users();
    let l = state.num_antennas();
    let h_err = CMatrix::from_fn(k, l, |_, _| complex_gaussian(rng, model.sigma_h_sq));
    let sd = model.sigma_w_sq.sqrt();
    let w_err = (0..k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect();
    (h_err, w_err)
}

/// A copy of `state` whose ground truth is re-drawn around the estimates:
/// `h = ĥ + CN(0, σ_h²)`, `ω = max(ω̂ + N(0, σ_ω²), floor)`.
pub fn sample_perturbed_state<R: Rng + ?Sized>(
    state: &NetworkState,
    model: &ErrorModel,
    omega_floor: f64,
    rng: &mut R,
) -> NetworkState {
    let (h_err, w_err) = draw_errors(state, model, rng);
    let h_true = CMatrix::from_fn(state.num_users(), state.num_antennas(), |r, c| {
        state.h_est[(r, c)] + h_err[(r, c)]
    });
    let omega_true = state
        .omega_est
        .iter()
        .zip(&w_err)
        .map(|(w, e)| (w + e).max(omega_floor))
        .collect();
    NetworkState {
        h_true,
        omega_true,
        ..state.clone()
    }
}

/// Draws realization `m` of the sub-stream rooted at `seed`.
pub fn realization(
    state: &NetworkState,
    model: &ErrorModel,
    omega_floor: f64,
    seed: u64,
    m: usize,
) -> Realization {
    let mut rng = rng_from(seed, &[stream::INJECT, m as u64]);
    let s = sample_perturbed_state(state, model, omega_floor, &mut rng);
    Realization {
        gains: channel_gains(&s.h_true, &s.beamformer),
        omega: s.omega_true,
    }
}

/// All `m_samples` realizations for `seed`. Realization `m` depends only on
/// `(seed, m)`.
pub fn realizations(
    state: &NetworkState,
    model: &ErrorModel,
    omega_floor: f64,
    seed: u64,
) -> Vec<Realization> {
    (0..model.m_samples)
        .map(|m| realization(state, model, omega_floor, seed, m))
        .collect()
}

fn rank(gamma: f64, m: usize, tail: Tail) -> usize {
    let level = match tail {
        Tail::Lower => gamma,
        Tail::Upper => 1.0 - gamma,
    };
    let x = level * m as f64;
    let nearest = x.round();
    // Products such as 0.95 * 100 land a hair off the integer.
    let r = if (x - nearest).abs() <= 1e-9 * (m as f64).max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (r as usize).clamp(1, m)
}

/// Index into `samples` of the selected order statistic. Ties resolve to
/// the lower original index.
pub fn quantile_index(samples: &[f64], gamma: f64, tail: Tail) -> Result<usize, QuantileError> {
    if samples.is_empty() {
        return Err(QuantileError::Empty);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(QuantileError::Level(gamma));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let v = sorted[rank(gamma, samples.len(), tail) - 1];
    Ok(samples
        .iter()
        .position(|s| s.total_cmp(&v).is_eq())
        .expect("value taken from samples"))
}

/// Nearest-rank empirical quantile: rank `⌈γM⌉` of the ascending sort for
/// the lower tail, rank `⌈(1-γ)M⌉` for the upper tail.
pub fn empirical_quantile(samples: &[f64], gamma: f64, tail: Tail) -> Result<f64, QuantileError> {
    quantile_index(samples, gamma, tail).map(|i| samples[i])
}

/// Utility realizations of `alloc` under injected estimation errors.
pub fn utility_samples(
    spec: &UtilitySpec,
    state: &NetworkState,
    alloc: &Allocation,
    model: &ErrorModel,
    config: &SystemConfig,
    seed: u64,
) -> UtilitySamples {
    let values = realizations(state, model, config.omega_floor, seed)
        .iter()
        .map(|r| evaluate_utility(spec, &metrics_from_parts(&r.gains, &r.omega, alloc, config)))
        .collect();
    UtilitySamples {
        values,
        sense: spec.sense(),
    }
}

/// Quantile of precomputed realizations; lets callers share one set of
/// draws across many allocations.
pub fn robust_utility_on(
    spec: &UtilitySpec,
    realizations: &[Realization],
    alloc: &Allocation,
    model: &ErrorModel,
    config: &SystemConfig,
) -> Result<f64, QuantileError> {
    let values: Vec<f64> = realizations
        .iter()
        .map(|r| evaluate_utility(spec, &metrics_from_parts(&r.gains, &r.omega, alloc, config)))
        .collect();
    empirical_quantile(&values, config.gamma, model.tail_for(spec.family))
}

/// γ-quantile utility of a fixed allocation over `M` error realizations
/// derived from `seed`.
pub fn robust_utility(
    spec: &UtilitySpec,
    state: &NetworkState,
    alloc: &Allocation,
    model: &ErrorModel,
    config: &SystemConfig,
    seed: u64,
) -> Result<f64, QuantileError> {
    model.validate()?;
    let samples = utility_samples(spec, state, alloc, model, config, seed);
    empirical_quantile(&samples.values, config.gamma, model.tail_for(spec.family))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{generate_state, joint_metrics};
    use crate::objectives::Domain;
    use proptest::prelude::*;

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.05, Tail::Lower).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&v, 0.05, Tail::Upper).unwrap(), 95.0);
        assert_eq!(
            empirical_quantile(&[3.5; 7], 0.3, Tail::Upper).unwrap(),
            3.5
        );
        assert_eq!(
            empirical_quantile(&[], 0.05, Tail::Lower),
            Err(QuantileError::Empty)
        );
        assert_eq!(
            empirical_quantile(&[1.0], 1.0, Tail::Lower),
            Err(QuantileError::Level(1.0))
        );
    }

    #[test]
    fn ties_pick_lower_index() {
        let v = [2.0, 1.0, 1.0, 3.0];
        assert_eq!(quantile_index(&v, 0.5, Tail::Lower).unwrap(), 1);
    }

    #[test]
    fn zero_variance_perturbation_is_identity() {
        let cfg = SystemConfig {
            sigma_h_sq: 0.0,
            sigma_w_sq: 0.0,
            ..SystemConfig::default()
        };
        let s = generate_state(&cfg, &mut rng_from(1, &[])).unwrap();
        let model = ErrorModel::from_config(&cfg, 10);
        let p = sample_perturbed_state(&s, &model, cfg.omega_floor, &mut rng_from(2, &[]));
        assert_eq!(p.h_true, s.h_est);
        assert_eq!(p.omega_true, s.omega_est);
        assert_eq!(p.beamformer, s.beamformer);
    }

    #[test]
    fn perturbation_is_deterministic() {
        let cfg = SystemConfig::default();
        let s = generate_state(&cfg, &mut rng_from(1, &[])).unwrap();
        let model = ErrorModel::from_config(&cfg, 10);
        let a = sample_perturbed_state(&s, &model, 1.0, &mut rng_from(9, &[]));
        let b = sample_perturbed_state(&s, &model, 1.0, &mut rng_from(9, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn channel_error_variance() {
        // Monte-Carlo over 10^5 draws of one coefficient.
        let cfg = SystemConfig {
            num_users: 1,
            num_antennas: 1,
            ..SystemConfig::default()
        };
        let s = generate_state(&cfg, &mut rng_from(3, &[])).unwrap();
        let model = ErrorModel::from_config(&cfg, 1);
        let mut rng = rng_from(4, &[]);
        let n = 100_000;
        let var = (0..n)
            .map(|_| {
                (sample_perturbed_state(&s, &model, 1.0, &mut rng).h_true[(0, 0)] - s.h_est[(0, 0)])
                    .norm_sqr()
            })
            .sum::<f64>()
            / n as f64;
        assert!((var - 0.15).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn degenerate_errors_reduce_to_nominal() {
        let cfg = SystemConfig {
            sigma_h_sq: 0.0,
            sigma_w_sq: 0.0,
            ..SystemConfig::default()
        };
        let s = generate_state(&cfg, &mut rng_from(5, &[])).unwrap();
        let alloc = Allocation::joint(vec![0.4; 4], 0.5, vec![3e8; 4]).unwrap();
        for m in [1, 7, 50] {
            let model = ErrorModel::from_config(&cfg, m);
            for spec in UtilitySpec::all() {
                let nominal = evaluate_utility(&spec, &joint_metrics(&s, &alloc, &cfg, false));
                let robust = robust_utility(&spec, &s, &alloc, &model, &cfg, 11).unwrap();
                assert_eq!(robust, nominal, "{spec}");
            }
        }
    }

    #[test]
    fn single_realization_is_returned_as_is() {
        let cfg = SystemConfig::default();
        let s = generate_state(&cfg, &mut rng_from(6, &[])).unwrap();
        let alloc = Allocation::joint(vec![0.4; 4], 0.5, vec![3e8; 4]).unwrap();
        let model = ErrorModel::from_config(&cfg, 1);
        let spec = UtilitySpec::new(Family::SumR, Domain::Joint, true);
        let samples = utility_samples(&spec, &s, &alloc, &model, &cfg, 3);
        assert_eq!(
            robust_utility(&spec, &s, &alloc, &model, &cfg, 3).unwrap(),
            samples.values[0]
        );
    }

    #[test]
    fn tail_follows_sense() {
        let model = ErrorModel::from_config(&SystemConfig::default(), 5);
        assert_eq!(model.tail_for(Family::SumR), Tail::Lower);
        assert_eq!(model.tail_for(Family::MaxT), Tail::Upper);
        let mut m = model.clone();
        m.tail_overrides.insert(Family::SumR, Tail::Upper);
        assert_eq!(m.tail_for(Family::SumR), Tail::Upper);
    }

    proptest! {
        #[test]
        fn quantile_is_bounded_and_ordered(v in proptest::collection::vec(-1e6f64..1e6, 1..300), g in 0.001f64..0.499) {
            let lo = empirical_quantile(&v, g, Tail::Lower).unwrap();
            let hi = empirical_quantile(&v, g, Tail::Upper).unwrap();
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min <= lo && lo <= max);
            prop_assert!(min <= hi && hi <= max);
            prop_assert!(lo <= hi);
            // Conservatism: never above the mean plus the largest deviation.
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let dev = v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
            prop_assert!(lo <= mean + dev + 1e-9);
        }

        #[test]
        fn quantile_shifts_with_constant(v in proptest::collection::vec(-1e3f64..1e3, 1..100), c in -1e3f64..1e3, g in 0.01f64..0.99) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            for tail in [Tail::Lower, Tail::Upper] {
                let i = quantile_index(&v, g, tail).unwrap();
                let j = quantile_index(&shifted, g, tail).unwrap();
                prop_assert_eq!(shifted[j], v[i] + c);
            }
        }
    }
}
