//! Physical model of the joint communication and computing system.
//!
//! A multi-antenna base station with an embedded CPU serves `K`
//! single-antenna users. Downlink rates follow from the SINR under fixed
//! beamformers and a transmit power vector; computing rates follow from
//! the CPU cycles assigned per user and each user's computing intensity.
//! All metric functions are pure.

mod linalg;
mod state;

pub use linalg::CMatrix;
pub(crate) use state::complex_gaussian;
pub use state::{
    channel_gains, effective_channel, generate_state, rzf_beamformer, NetworkState, StateError,
    OMEGA_SCALE, OMEGA_SHAPE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SystemConfig;

/// Which groups of optimization variables an allocation carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocKind {
    Comm,
    Comp,
    Joint,
}

impl AllocKind {
    pub fn has_tx(self) -> bool {
        matches!(self, AllocKind::Comm | AllocKind::Joint)
    }

    pub fn has_compute(self) -> bool {
        matches!(self, AllocKind::Comp | AllocKind::Joint)
    }

    /// Smallest kind carrying the active fields of both.
    pub fn union(self, other: AllocKind) -> AllocKind {
        if self == other {
            self
        } else {
            AllocKind::Joint
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("negative or non-finite entry in {0}")]
    Invalid(&'static str),
    #[error("{field} has length {got}, expected {expected}")]
    Length {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("inactive field {0} is non-zero for a {1:?} allocation")]
    InactiveNonZero(&'static str, AllocKind),
}

/// A resource allocation: transmit powers, total computing power and the
/// CPU cycles per second assigned to each user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub p_tx: Vec<f64>,
    pub p_co: f64,
    pub f_co: Vec<f64>,
    pub kind: AllocKind,
}

impl Allocation {
    pub fn zeros(kind: AllocKind, k: usize) -> Self {
        Self {
            p_tx: vec![0.0; k],
            p_co: 0.0,
            f_co: vec![0.0; k],
            kind,
        }
    }

    pub fn comm(p_tx: Vec<f64>) -> Result<Self, AllocationError> {
        let k = p_tx.len();
        Self::new(AllocKind::Comm, p_tx, 0.0, vec![0.0; k])
    }

    pub fn comp(p_co: f64, f_co: Vec<f64>) -> Result<Self, AllocationError> {
        let k = f_co.len();
        Self::new(AllocKind::Comp, vec![0.0; k], p_co, f_co)
    }

    pub fn joint(p_tx: Vec<f64>, p_co: f64, f_co: Vec<f64>) -> Result<Self, AllocationError> {
        Self::new(AllocKind::Joint, p_tx, p_co, f_co)
    }

    pub fn new(
        kind: AllocKind,
        p_tx: Vec<f64>,
        p_co: f64,
        f_co: Vec<f64>,
    ) -> Result<Self, AllocationError> {
        let a = Self {
            p_tx,
            p_co,
            f_co,
            kind,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn num_users(&self) -> usize {
        self.p_tx.len()
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        if self.f_co.len() != self.p_tx.len() {
            return Err(AllocationError::Length {
                field: "f_co",
                got: self.f_co.len(),
                expected: self.p_tx.len(),
            });
        }
        let ok = |x: &f64| x.is_finite() && *x >= 0.0;
        if !self.p_tx.iter().all(ok) {
            return Err(AllocationError::Invalid("p_tx"));
        }
        if !ok(&self.p_co) {
            return Err(AllocationError::Invalid("p_co"));
        }
        if !self.f_co.iter().all(ok) {
            return Err(AllocationError::Invalid("f_co"));
        }
        match self.kind {
            AllocKind::Comm if self.p_co != 0.0 => {
                Err(AllocationError::InactiveNonZero("p_co", self.kind))
            }
            AllocKind::Comm if self.f_co.iter().any(|&f| f != 0.0) => {
                Err(AllocationError::InactiveNonZero("f_co", self.kind))
            }
            AllocKind::Comp if self.p_tx.iter().any(|&p| p != 0.0) => {
                Err(AllocationError::InactiveNonZero("p_tx", self.kind))
            }
            _ => Ok(()),
        }
    }
}

/// SINR, rates and delays of the downlink.
#[derive(Debug, Clone, PartialEq)]
pub struct CommMetrics {
    pub sinr: Vec<f64>,
    pub r_tx: Vec<f64>,
    pub t_tx: Vec<f64>,
}

/// Rates and delays of the computing stage plus the CPU power it draws.
#[derive(Debug, Clone, PartialEq)]
pub struct CompMetrics {
    pub r_co: Vec<f64>,
    pub t_co: Vec<f64>,
    pub p_co_required: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerUserMetrics {
    pub sinr: Vec<f64>,
    pub r_tx: Vec<f64>,
    pub r_co: Vec<f64>,
    pub r_joint: Vec<f64>,
    pub t_tx: Vec<f64>,
    pub t_co: Vec<f64>,
    pub t_joint: Vec<f64>,
    pub p_co_required: f64,
}

fn delay(bits: f64, rate: f64) -> f64 {
    if rate > 0.0 {
        bits / rate
    } else {
        f64::INFINITY
    }
}

/// Downlink metrics from precomputed gains `|h_kᴴ v_j|²` (row-major K×K).
pub fn comm_metrics_from_gains(gains: &[f64], p_tx: &[f64], config: &SystemConfig) -> CommMetrics {
    let k = p_tx.len();
    debug_assert_eq!(gains.len(), k * k);
    let noise = config.noise_power();
    let mut sinr = Vec::with_capacity(k);
    let mut r_tx = Vec::with_capacity(k);
    let mut t_tx = Vec::with_capacity(k);
    for u in 0..k {
        let row = &gains[u * k..(u + 1) * k];
        let interference: f64 = (0..k)
            .filter(|&j| j != u)
            .map(|j| row[j] * p_tx[j])
            .sum::<f64>()
            + noise;
        let s = row[u] * p_tx[u] / interference;
        let r = config.bandwidth * (s / config.sinr_gap).ln_1p() / std::f64::consts::LN_2;
        sinr.push(s);
        r_tx.push(r);
        t_tx.push(delay(config.d_out, r));
    }
    CommMetrics { sinr, r_tx, t_tx }
}

/// Downlink metrics on the true channels and the state's beamformers.
pub fn comm_metrics(state: &NetworkState, p_tx: &[f64], config: &SystemConfig) -> CommMetrics {
    let gains = channel_gains(&state.h_true, &state.beamformer);
    comm_metrics_from_gains(&gains, p_tx, config)
}

/// CPU power drawn by a total of `total_cycles` cycles per second.
pub fn cpu_power(total_cycles: f64, config: &SystemConfig) -> f64 {
    config.tau * total_cycles.powf(config.mu)
}

/// Largest total CPU frequency affordable under computing power `p_co`.
pub fn cycles_for_power(p_co: f64, config: &SystemConfig) -> f64 {
    (p_co / config.tau).powf(1.0 / config.mu)
}

pub fn comp_metrics(f_co: &[f64], omega: &[f64], config: &SystemConfig) -> CompMetrics {
    let r_co: Vec<f64> = f_co.iter().zip(omega).map(|(f, w)| f / w).collect();
    let t_co = r_co.iter().map(|&r| delay(config.d_in, r)).collect();
    let p_co_required = cpu_power(f_co.iter().sum(), config);
    CompMetrics {
        r_co,
        t_co,
        p_co_required,
    }
}

/// Metrics for a full allocation from precomputed gains and intensities.
/// Fields that are inactive for the allocation's kind count as zero, so a
/// communication-only allocation has zero computing rate and infinite
/// computing delay.
pub fn metrics_from_parts(
    gains: &[f64],
    omega: &[f64],
    alloc: &Allocation,
    config: &SystemConfig,
) -> PerUserMetrics {
    let k = alloc.num_users();
    let zeros = vec![0.0; k];
    let p_tx = if alloc.kind.has_tx() {
        &alloc.p_tx
    } else {
        &zeros
    };
    let f_co = if alloc.kind.has_compute() {
        &alloc.f_co
    } else {
        &zeros
    };
    let comm = comm_metrics_from_gains(gains, p_tx, config);
    let comp = comp_metrics(f_co, omega, config);
    let r_joint = comm
        .r_tx
        .iter()
        .zip(&comp.r_co)
        .map(|(a, b)| a + b)
        .collect();
    let t_joint = comm
        .t_tx
        .iter()
        .zip(&comp.t_co)
        .map(|(a, b)| a + b)
        .collect();
    PerUserMetrics {
        sinr: comm.sinr,
        r_tx: comm.r_tx,
        r_co: comp.r_co,
        r_joint,
        t_tx: comm.t_tx,
        t_co: comp.t_co,
        t_joint,
        p_co_required: comp.p_co_required,
    }
}

/// Metrics of `alloc` evaluated on the true parameters (`use_true`) or on
/// the base station's estimates.
pub fn joint_metrics(
    state: &NetworkState,
    alloc: &Allocation,
    config: &SystemConfig,
    use_true: bool,
) -> PerUserMetrics {
    let gains = channel_gains(state.channel(use_true), &state.beamformer);
    metrics_from_parts(&gains, state.omega(use_true), alloc, config)
}

/// Hard constraints of the allocation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Σ p_tx ≤ P^max,tx
    TransmitBudget,
    /// τ (Σ f)^μ ≤ P^max,co
    ComputingBudget,
    /// Σ f ≤ F^max
    CpuCapacity,
    /// Σ p_tx + τ (Σ f)^μ ≤ P^max
    JointBudget,
}

/// Relative tolerance applied when classifying a constraint as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    pub value: f64,
    pub limit: f64,
    /// `limit - value`; negative when violated.
    pub margin: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub checks: Vec<ConstraintCheck>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn get(&self, constraint: Constraint) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.constraint == constraint)
    }
}

/// Checks every hard constraint that applies to the allocation's kind.
/// The computing power is always recomputed from the cycle vector.
pub fn check_feasibility(alloc: &Allocation, config: &SystemConfig) -> FeasibilityReport {
    let mut checks = Vec::new();
    let mut push = |constraint, value: f64, limit: f64| {
        let margin = limit - value;
        checks.push(ConstraintCheck {
            constraint,
            value,
            limit,
            margin,
            satisfied: margin >= -FEASIBILITY_TOL * limit.max(1.0),
        });
    };
    let sum_p: f64 = alloc.p_tx.iter().sum();
    let sum_f: f64 = alloc.f_co.iter().sum();
    let p_co_required = cpu_power(sum_f, config);
    match alloc.kind {
        AllocKind::Comm => push(Constraint::TransmitBudget, sum_p, config.p_max_tx),
        AllocKind::Comp => {
            push(Constraint::ComputingBudget, p_co_required, config.p_max_co);
            push(Constraint::CpuCapacity, sum_f, config.f_max);
        }
        AllocKind::Joint => {
            push(Constraint::JointBudget, sum_p + p_co_required, config.p_max);
            push(Constraint::CpuCapacity, sum_f, config.f_max);
        }
    }
    FeasibilityReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::dbm_to_watts;
    use crate::seeding::rng_from;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn single_user_cfg() -> SystemConfig {
        SystemConfig {
            num_users: 1,
            num_antennas: 1,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn zero_power_gives_zero_rate() {
        let cfg = SystemConfig::default();
        let s = generate_state(&cfg, &mut rng_from(1, &[])).unwrap();
        let m = comm_metrics(&s, &[0.0; 4], &cfg);
        assert!(m.sinr.iter().all(|&x| x == 0.0));
        assert!(m.r_tx.iter().all(|&x| x == 0.0));
        assert!(m.t_tx.iter().all(|&x| x == f64::INFINITY));
    }

    #[test]
    fn single_user_closed_form() {
        // |h^H v|^2 = 1, p = 34 dBm, noise -75 dBm/Hz over 5 MHz, gap 9.5 dB.
        let cfg = single_user_cfg();
        let p = dbm_to_watts(34.0);
        let noise = 10f64.powf(-7.5) * 1e-3 * 5e6;
        let gap = 10f64.powf(0.95);
        let snr_over_gap = p / noise / gap;
        assert!((snr_over_gap - 1782.50).abs() < 0.01);
        let expected = 5e6 * (1.0 + snr_over_gap).log2();
        let m = comm_metrics_from_gains(&[1.0], &[p], &cfg);
        assert!(((m.r_tx[0] - expected) / expected).abs() < 1e-12);
        assert!((m.r_tx[0] - 5.40e7).abs() < 1e5);
    }

    #[test]
    fn symmetric_users_get_identical_rates() {
        let cfg = SystemConfig {
            num_users: 2,
            ..SystemConfig::default()
        };
        let m = comm_metrics_from_gains(&[0.8, 0.1, 0.1, 0.8], &[1.0, 1.0], &cfg);
        assert_eq!(m.r_tx[0], m.r_tx[1]);
    }

    #[test]
    fn computing_examples() {
        let cfg = SystemConfig::default();
        let m = comp_metrics(&[1e9], &[400.0], &cfg);
        assert!((m.r_co[0] - 2.5e6).abs() < 1e-6);
        assert!((m.t_co[0] - 0.02).abs() < 1e-15);
        let m = comp_metrics(&[1e9, 1.2e9, 1.4e9, 1e9], &[400.0; 4], &cfg);
        assert!((m.p_co_required - 9.7336).abs() < 1e-3);
        let m = comp_metrics(&[0.0], &[400.0], &cfg);
        assert_eq!(m.r_co[0], 0.0);
        assert_eq!(m.t_co[0], f64::INFINITY);
        assert_eq!(m.p_co_required, 0.0);
    }

    #[test]
    fn comm_kind_masks_computing() {
        let cfg = SystemConfig::default();
        let s = generate_state(&cfg, &mut rng_from(2, &[])).unwrap();
        let a = Allocation::comm(vec![0.5; 4]).unwrap();
        let m = joint_metrics(&s, &a, &cfg, true);
        assert!(m.r_co.iter().all(|&r| r == 0.0));
        assert_eq!(m.r_joint, m.r_tx);
        for u in 0..4 {
            assert_eq!(m.t_joint[u], m.t_tx[u] + m.t_co[u]);
        }
    }

    #[test]
    fn joint_metrics_match_scalar_oracle() {
        // Formula-by-formula recomputation straight from the channel entries.
        let cfg = SystemConfig::default();
        let s = generate_state(&cfg, &mut rng_from(3, &[])).unwrap();
        let a = Allocation::joint(vec![0.3, 0.5, 0.2, 0.6], 0.4, vec![4e8, 6e8, 5e8, 3e8]).unwrap();
        for use_true in [true, false] {
            let m = joint_metrics(&s, &a, &cfg, use_true);
            let h = s.channel(use_true);
            let omega = s.omega(use_true);
            for k in 0..4 {
                let gain = |j: usize| -> f64 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for l in 0..4 {
                        acc += h[(k, l)] * s.beamformer[(l, j)];
                    }
                    acc.norm_sqr()
                };
                let mut interf = 1e-10 * 5e6 * 10f64.powf(-0.5);
                for j in 0..4 {
                    if j != k {
                        interf += gain(j) * a.p_tx[j];
                    }
                }
                let sinr = gain(k) * a.p_tx[k] / interf;
                let rtx = 5e6 * (1.0 + sinr / 10f64.powf(0.95)).log2();
                let rco = a.f_co[k] / omega[k];
                let ttx = 2.5e4 / rtx;
                let tco = 5e4 / rco;
                let close = |x: f64, y: f64| ((x - y) / y).abs() < 1e-9;
                assert!(close(m.sinr[k], sinr));
                assert!(close(m.r_tx[k], rtx));
                assert!(close(m.r_co[k], rco));
                assert!(close(m.r_joint[k], rtx + rco));
                assert!(close(m.t_joint[k], ttx + tco));
            }
            assert!(((m.p_co_required - 1e-28 * 1.8e9f64.powi(3)) / m.p_co_required).abs() < 1e-9);
        }
    }

    #[test]
    fn feasibility_examples() {
        let cfg = SystemConfig::default();
        for kind in [AllocKind::Comm, AllocKind::Comp, AllocKind::Joint] {
            let r = check_feasibility(&Allocation::zeros(kind, 4), &cfg);
            assert!(r.feasible());
            assert!(r.checks.iter().all(|c| c.margin == c.limit));
        }
        let f = 2.93e9 / 4.0;
        let a = Allocation::joint(vec![0.5; 4], 2.515, vec![f; 4]).unwrap();
        let r = check_feasibility(&a, &cfg);
        let joint = r.get(Constraint::JointBudget).unwrap();
        assert!(!joint.satisfied);
        assert!((joint.value - 2.0 - 2.515).abs() < 2e-3);
        assert!((joint.margin + 2.0).abs() < 5e-3);

        let a = Allocation::comp(1.0, vec![1e9, 1.2e9, 1.4e9, 1e9]).unwrap();
        let cap = check_feasibility(&a, &cfg)
            .get(Constraint::CpuCapacity)
            .unwrap()
            .clone();
        assert!(cap.satisfied);
        assert!(cap.margin.abs() <= 1e-9);
    }

    #[test]
    fn allocation_invariants_are_enforced() {
        assert!(Allocation::comm(vec![-1.0]).is_err());
        assert!(Allocation::new(AllocKind::Comm, vec![1.0], 0.5, vec![0.0]).is_err());
        assert!(Allocation::new(AllocKind::Comp, vec![1.0], 0.5, vec![0.0]).is_err());
        assert!(Allocation::joint(vec![1.0], 0.5, vec![1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn rate_increases_with_power(g in 0.01f64..10.0, p1 in 1e-4f64..3.0, dp in 1e-3f64..3.0) {
            let cfg = single_user_cfg();
            let a = comm_metrics_from_gains(&[g], &[p1], &cfg).r_tx[0];
            let b = comm_metrics_from_gains(&[g], &[p1 + dp], &cfg).r_tx[0];
            prop_assert!(b > a);
        }

        #[test]
        fn sinr_is_scale_invariant(g in 0.01f64..10.0, c in 0.1f64..100.0, p in 0.01f64..3.0) {
            let cfg = single_user_cfg();
            let scaled = SystemConfig { noise_psd: cfg.noise_psd * c, ..cfg.clone() };
            let a = comm_metrics_from_gains(&[g], &[p], &cfg).sinr[0];
            let b = comm_metrics_from_gains(&[g * c], &[p], &scaled).sinr[0];
            prop_assert!(((a - b) / a).abs() < 1e-12);
        }

        #[test]
        fn delay_times_rate_is_payload(seed in 0u64..1000, p in proptest::collection::vec(0.0f64..1.0, 4)) {
            let cfg = SystemConfig::default();
            let s = generate_state(&cfg, &mut rng_from(seed, &[])).unwrap();
            let m = comm_metrics(&s, &p, &cfg);
            for k in 0..4 {
                if m.r_tx[k] > 0.0 {
                    prop_assert!((m.t_tx[k] * m.r_tx[k] - cfg.d_out).abs() <= 1e-9 * cfg.d_out);
                }
            }
        }

        #[test]
        fn cpu_power_is_convex(
            f in proptest::collection::vec(0.0f64..2e9, 4),
            g in proptest::collection::vec(0.0f64..2e9, 4),
            lam in 0.0f64..=1.0,
        ) {
            let cfg = SystemConfig::default();
            let mix: Vec<f64> = f.iter().zip(&g).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let lhs = comp_metrics(&mix, &[400.0; 4], &cfg).p_co_required;
            let rhs = lam * comp_metrics(&f, &[400.0; 4], &cfg).p_co_required
                + (1.0 - lam) * comp_metrics(&g, &[400.0; 4], &cfg).p_co_required;
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
        }
    }
}
