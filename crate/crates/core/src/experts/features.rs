use crate::netmodel::{effective_channel, NetworkState, OMEGA_SCALE, OMEGA_SHAPE};
use crate::objectives::Domain;

/// Length of the feature vector for `k` users.
pub fn input_dim(domain: Domain, k: usize) -> usize {
    match domain {
        Domain::Comm => 2 * k * k,
        Domain::Comp => k,
        Domain::Joint => 2 * k * k + k,
    }
}

/// Number of raw network outputs (logits) for `k` users.
pub fn output_dim(domain: Domain, k: usize) -> usize {
    match domain {
        Domain::Comm => k,
        Domain::Comp => k + 1,
        Domain::Joint => 2 * k + 1,
    }
}

/// Features an expert sees. Everything is built from estimates only.
///
/// Communication part: real then imaginary parts of the estimated effective
/// channels `ĥ_kᴴ v_j`, row-major. Computing part: estimated intensities
/// divided by their prior mean.
pub fn build_features(domain: Domain, state: &NetworkState) -> Vec<f64> {
    let k = state.num_users();
    let mut x = Vec::with_capacity(input_dim(domain, k));
    if matches!(domain, Domain::Comm | Domain::Joint) {
        let e = effective_channel(&state.h_est, &state.beamformer);
        x.extend(e.as_slice().iter().map(|z| z.re));
        x.extend(e.as_slice().iter().map(|z| z.im));
    }
    if matches!(domain, Domain::Comp | Domain::Joint) {
        let mean = OMEGA_SHAPE * OMEGA_SCALE;
        x.extend(state.omega_est.iter().map(|w| w / mean));
    }
    x
}
