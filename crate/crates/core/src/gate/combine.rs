//! Weighted composition of expert allocations.

use super::{GateDecision, GateError};
use crate::config::SystemConfig;
use crate::netmodel::{cpu_power, Allocation};

/// `Σ α_a x_a` over transmit powers and CPU cycles. The computing power is
/// recomputed from the combined cycles, and the kind is the union of the
/// inputs' kinds.
pub fn combine_weighted(
    weights: &[f64],
    allocations: &[Allocation],
    config: &SystemConfig,
) -> Result<Allocation, GateError> {
    if weights.len() != allocations.len() {
        return Err(GateError::Misaligned(allocations.len(), weights.len()));
    }
    let first = allocations.first().ok_or(GateError::Misaligned(0, 0))?;
    let k = first.num_users();
    if allocations.iter().any(|a| a.num_users() != k) {
        return Err(GateError::Malformed(
            "allocations differ in user count".into(),
        ));
    }
    let kind = allocations
        .iter()
        .skip(1)
        .fold(first.kind, |acc, a| acc.union(a.kind));
    let mut p_tx = vec![0.0; k];
    let mut f_co = vec![0.0; k];
    for (w, a) in weights.iter().zip(allocations) {
        for i in 0..k {
            p_tx[i] += w * a.p_tx[i];
            f_co[i] += w * a.f_co[i];
        }
    }
    let p_co = if kind.has_compute() {
        cpu_power(f_co.iter().sum(), config)
    } else {
        0.0
    };
    Allocation::new(kind, p_tx, p_co, f_co).map_err(|e| GateError::Malformed(e.to_string()))
}

/// Combines `allocations`, one per selected expert of `decision` in library
/// order.
pub fn combine(
    decision: &GateDecision,
    allocations: &[Allocation],
    config: &SystemConfig,
) -> Result<Allocation, GateError> {
    let weights: Vec<f64> = decision.selected().into_iter().map(|(_, w)| w).collect();
    if weights.len() != allocations.len() {
        return Err(GateError::Misaligned(allocations.len(), weights.len()));
    }
    combine_weighted(&weights, allocations, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::map_outputs;
    use crate::netmodel::{check_feasibility, AllocKind};
    use crate::objectives::Domain;
    use crate::seeding::rng_from;
    use rand::Rng;
    use std::time::Duration;

    #[test]
    fn single_expert_is_identity() {
        let cfg = SystemConfig::default();
        let a = map_outputs(
            &[0.3, -1.0, 2.0, 0.1, 0.0, 1.0, -0.5, 0.2, 0.9],
            Domain::Joint,
            4,
            &cfg,
        )
        .unwrap();
        let c = combine_weighted(&[1.0], &[a.clone()], &cfg).unwrap();
        assert_eq!(c.p_tx, a.p_tx);
        assert_eq!(c.f_co, a.f_co);
        assert!((c.p_co - cpu_power(a.f_co.iter().sum(), &cfg)).abs() <= 1e-12 * c.p_co.max(1e-30));
    }

    #[test]
    fn convex_transmit_powers() {
        let cfg = SystemConfig::default();
        let a = Allocation::comm(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Allocation::comm(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let c = combine_weighted(&[0.5, 0.5], &[a, b], &cfg).unwrap();
        assert_eq!(c.p_tx, vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(c.kind, AllocKind::Comm);
    }

    #[test]
    fn comm_plus_comp_is_joint() {
        let cfg = SystemConfig::default();
        let a = Allocation::comm(vec![cfg.p_max_tx / 4.0; 4]).unwrap();
        let b = map_outputs(&[3.0, 0.0, 0.0, 0.0, 0.0], Domain::Comp, 4, &cfg).unwrap();
        let c = combine_weighted(&[0.5, 0.5], &[a, b], &cfg).unwrap();
        assert_eq!(c.kind, AllocKind::Joint);
        assert!(check_feasibility(&c, &cfg).feasible());
    }

    #[test]
    fn misaligned_lists_are_rejected() {
        let cfg = SystemConfig::default();
        let a = Allocation::comm(vec![1.0; 4]).unwrap();
        let d = GateDecision {
            library: vec!["A".into(), "B".into()],
            selection: vec![true, true],
            weights: vec![0.5, 0.5],
            interpretation: String::new(),
            transcript: None,
            latency: Duration::ZERO,
        };
        assert!(matches!(
            combine(&d, &[a], &cfg),
            Err(GateError::Misaligned(1, 2))
        ));
    }

    #[test]
    fn random_combinations_stay_feasible() {
        let cfg = SystemConfig::default();
        let mut rng = rng_from(3, &[]);
        for _ in 0..2000 {
            let draw = |rng: &mut crate::seeding::Rng| {
                let d = [Domain::Comm, Domain::Comp, Domain::Joint][rng.random_range(0..3)];
                let n = crate::experts::output_dim(d, 4);
                let z: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
                map_outputs(&z, d, 4, &cfg).unwrap()
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let w: f64 = rng.random();
            let c = combine_weighted(&[w, 1.0 - w], &[a, b], &cfg).unwrap();
            assert!(check_feasibility(&c, &cfg).feasible(), "{c:?}");
        }
    }
}
