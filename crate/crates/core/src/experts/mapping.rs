//! Mapping from raw logits to allocations that satisfy the constraints by
//! construction.

use super::features::output_dim;
use super::ExpertError;
use crate::config::SystemConfig;
use crate::netmodel::{cycles_for_power, Allocation};
use crate::objectives::Domain;

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `∂L/∂z` of a softmax output `s = softmax(z)` given `g = ∂L/∂s`.
fn softmax_backward(s: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
    s.iter().zip(g).map(|(si, gi)| si * (gi - dot)).collect()
}

/// CPU frequency budget under computing power `p_co`.
fn capacity(p_co: f64, config: &SystemConfig) -> (f64, bool) {
    let f_pow = cycles_for_power(p_co, config);
    if f_pow < config.f_max {
        (f_pow, true)
    } else {
        (config.f_max, false)
    }
}

fn check_len(z: &[f64], domain: Domain, k: usize) -> Result<(), ExpertError> {
    let want = output_dim(domain, k);
    if z.len() != want {
        return Err(ExpertError::Shape {
            what: "logit vector",
            expected: want,
            got: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ExpertError::NonFinite("logits"));
    }
    Ok(())
}

/// Maps logits to an allocation of the domain's kind for `k` users.
///
/// * Comm: `p_tx = P_tx · softmax(z)`.
/// * Comp: `p_co = P_co · σ(z₀)`, `f = min(F^max, F^pow) · softmax(z₁..)`.
/// * Joint: `[p_tx; p_co] = P · softmax(z₀..z_K)`, then the CPU split as in
///   Comp over the remaining K logits.
pub fn map_outputs(
    z: &[f64],
    domain: Domain,
    k: usize,
    config: &SystemConfig,
) -> Result<Allocation, ExpertError> {
    check_len(z, domain, k)?;
    let a = match domain {
        Domain::Comm => {
            let s = softmax(z);
            Allocation::comm(s.iter().map(|v| config.p_max_tx * v).collect())
        }
        Domain::Comp => {
            let p_co = config.p_max_co * sigmoid(z[0]);
            let (cap, _) = capacity(p_co, config);
            let s = softmax(&z[1..]);
            Allocation::comp(p_co, s.iter().map(|v| cap * v).collect())
        }
        Domain::Joint => {
            let q = softmax(&z[..=k]);
            let p_co = config.p_max * q[k];
            let (cap, _) = capacity(p_co, config);
            let s = softmax(&z[k + 1..]);
            Allocation::joint(
                q[..k].iter().map(|v| config.p_max * v).collect(),
                p_co,
                s.iter().map(|v| cap * v).collect(),
            )
        }
    };
    a.map_err(|e| ExpertError::Mapping(e.to_string()))
}

/// Pulls `∂L/∂p_tx` and `∂L/∂f` back through [`map_outputs`] to `∂L/∂z`.
/// Entries for fields the domain does not produce are ignored.
pub fn map_backward(
    z: &[f64],
    domain: Domain,
    k: usize,
    config: &SystemConfig,
    d_ptx: &[f64],
    d_f: &[f64],
) -> Vec<f64> {
    // Gradient of the loss with respect to p_co through the CPU cap, given
    // the cap split s.
    let cpu_split = |p_co: f64, zf: &[f64]| -> (f64, Vec<f64>) {
        let (cap, power_limited) = capacity(p_co, config);
        let s = softmax(zf);
        let d_cap: f64 = s.iter().zip(d_f).map(|(a, b)| a * b).sum();
        let d_s: Vec<f64> = d_f.iter().map(|g| cap * g).collect();
        let d_pco = if power_limited && p_co > 0.0 {
            d_cap * cap / (config.mu * p_co)
        } else {
            0.0
        };
        (d_pco, softmax_backward(&s, &d_s))
    };
    match domain {
        Domain::Comm => {
            let s = softmax(z);
            let g: Vec<f64> = d_ptx.iter().map(|g| config.p_max_tx * g).collect();
            softmax_backward(&s, &g)
        }
        Domain::Comp => {
            let sg = sigmoid(z[0]);
            let p_co = config.p_max_co * sg;
            let (d_pco, d_zf) = cpu_split(p_co, &z[1..]);
            let mut out = Vec::with_capacity(k + 1);
            out.push(d_pco * config.p_max_co * sg * (1.0 - sg));
            out.extend(d_zf);
            out
        }
        Domain::Joint => {
            let q = softmax(&z[..=k]);
            let p_co = config.p_max * q[k];
            let (d_pco, d_zf) = cpu_split(p_co, &z[k + 1..]);
            let mut g: Vec<f64> = d_ptx[..k].iter().map(|g| config.p_max * g).collect();
            g.push(config.p_max * d_pco);
            let mut out = softmax_backward(&q, &g);
            out.extend(d_zf);
            out
        }
    }
}
