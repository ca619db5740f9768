//! Utilities with analytic gradients with respect to the allocation.

use crate::config::SystemConfig;
use crate::netmodel::{metrics_from_parts, Allocation};
use crate::objectives::{delays, evaluate_utility, rates, Domain, Family, Sense, UtilitySpec};
use crate::uncertainty::{quantile_index, Realization, Tail};

/// Utility value and its gradient with respect to `p_tx` and `f_co`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityGrad {
    pub value: f64,
    pub d_ptx: Vec<f64>,
    pub d_f: Vec<f64>,
}

/// Weight of each per-user term in the family's aggregate. Ties in min and
/// max go to the lowest index.
fn term_weights(family: Family, values: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; values.len()];
    match family {
        Family::SumR | Family::SumT => w.iter_mut().for_each(|v| *v = 1.0),
        Family::LogR => {
            for (wi, r) in w.iter_mut().zip(values) {
                *wi = 1.0 / r;
            }
        }
        Family::MinR | Family::MaxT => {
            let mut best = 0;
            for (i, v) in values.iter().enumerate() {
                let better = if family == Family::MinR {
                    *v < values[best]
                } else {
                    *v > values[best]
                };
                if better {
                    best = i;
                }
            }
            w[best] = 1.0;
        }
    }
    w
}

/// Nominal utility of `spec` on one realization plus its gradient.
pub fn utility_with_grad(
    spec: &UtilitySpec,
    real: &Realization,
    alloc: &Allocation,
    config: &SystemConfig,
) -> UtilityGrad {
    let k = alloc.num_users();
    let m = metrics_from_parts(&real.gains, &real.omega, alloc, config);
    let value = evaluate_utility(spec, &m);
    let family = spec.family;
    let terms = if family.is_delay() {
        delays(spec.domain, &m)
    } else {
        rates(spec.domain, &m)
    };
    let w = term_weights(family, terms);
    let use_tx = matches!(spec.domain, Domain::Comm | Domain::Joint);
    let use_co = matches!(spec.domain, Domain::Comp | Domain::Joint);

    // ∂U/∂r_tx and ∂U/∂f per user.
    let mut d_rtx = vec![0.0; k];
    let mut d_f = vec![0.0; k];
    for u in 0..k {
        if use_tx {
            d_rtx[u] = if family.is_delay() {
                -w[u] * m.t_tx[u] / m.r_tx[u]
            } else {
                w[u]
            };
        }
        if use_co {
            d_f[u] = if family.is_delay() {
                -w[u] * m.t_co[u] / alloc.f_co[u]
            } else {
                w[u] / real.omega[u]
            };
        }
    }

    let mut d_ptx = vec![0.0; k];
    if use_tx {
        let noise = config.noise_power();
        for u in 0..k {
            if d_rtx[u] == 0.0 {
                continue;
            }
            let row = &real.gains[u * k..(u + 1) * k];
            let interf: f64 = (0..k)
                .filter(|&j| j != u)
                .map(|j| row[j] * alloc.p_tx[j])
                .sum::<f64>()
                + noise;
            let s = m.sinr[u];
            let a = d_rtx[u] * config.bandwidth / (std::f64::consts::LN_2 * (config.sinr_gap + s));
            d_ptx[u] += a * row[u] / interf;
            for j in (0..k).filter(|&j| j != u) {
                d_ptx[j] -= a * s * row[j] / interf;
            }
        }
    }
    UtilityGrad { value, d_ptx, d_f }
}

/// Order-statistic utility over a set of realizations: the nominal utility
/// for one realization, or the selected quantile otherwise. The gradient is
/// that of the selected realization.
pub fn quantile_utility_with_grad(
    spec: &UtilitySpec,
    reals: &[Realization],
    alloc: &Allocation,
    config: &SystemConfig,
    tail: Tail,
) -> UtilityGrad {
    if reals.len() == 1 {
        return utility_with_grad(spec, &reals[0], alloc, config);
    }
    let values: Vec<f64> = reals
        .iter()
        .map(|r| evaluate_utility(spec, &metrics_from_parts(&r.gains, &r.omega, alloc, config)))
        .collect();
    let idx = quantile_index(&values, config.gamma, tail).expect("gamma validated with the config");
    utility_with_grad(spec, &reals[idx], alloc, config)
}

/// Divisor bringing a family's utility to order one.
pub fn loss_scale(family: Family, config: &SystemConfig) -> f64 {
    match family {
        Family::SumR | Family::MinR => config.bandwidth,
        Family::LogR => 1.0,
        Family::MaxT | Family::SumT => config.d_out / config.bandwidth,
    }
}

/// Signed multiplier turning a utility into a loss to minimize.
pub fn loss_sign(spec: &UtilitySpec, config: &SystemConfig) -> f64 {
    let s = match spec.sense() {
        Sense::Maximize => -1.0,
        Sense::Minimize => 1.0,
    };
    s / loss_scale(spec.family, config)
}
