use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{build_features, input_dim, output_dim};
use super::loss::{loss_sign, quantile_utility_with_grad};
use super::mapping::{map_backward, map_outputs};
use super::mlp::{ForwardCache, Mlp, MlpArchitecture};
use super::{ExpertError, ExpertRecord, PolicyParameters, TrainingMeta};
use crate::config::SystemConfig;
use crate::netmodel::{channel_gains, generate_state, NetworkState};
use crate::objectives::UtilitySpec;
use crate::seeding::{derive_seed, rng_from, stream};
use crate::uncertainty::{realization, ErrorModel, Realization};

/// Samples per gradient chunk. Chunks are reduced in index order so the
/// result does not depend on the number of worker threads.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub batch_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub optimizer: Optimizer,
    pub clip_norm: f64,
    /// Realizations per robust loss evaluation.
    pub m_samples: usize,
}

impl TrainConfig {
    /// Full-size networks and data sets.
    pub fn full_scale() -> Self {
        Self {
            hidden_layers: 10,
            hidden_width: 400,
            epochs: 500,
            minibatches: 50,
            batch_size: 1000,
            validation_size: 2000,
            test_size: 4000,
            optimizer: Optimizer::Adam {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            clip_norm: 10.0,
            m_samples: 200,
        }
    }

    /// Sizes that train all 30 experts in minutes on a laptop.
    pub fn desk() -> Self {
        Self {
            hidden_layers: 3,
            hidden_width: 64,
            epochs: 50,
            minibatches: 8,
            batch_size: 256,
            validation_size: 512,
            test_size: 1024,
            optimizer: Optimizer::Adam {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            clip_norm: 10.0,
            m_samples: 40,
        }
    }

    pub fn for_scale(desk_scale: bool) -> Self {
        if desk_scale {
            Self::desk()
        } else {
            Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<(), ExpertError> {
        let counts = [
            ("hidden_layers", self.hidden_layers),
            ("hidden_width", self.hidden_width),
            ("batch_size", self.batch_size),
            ("validation_size", self.validation_size),
            ("m_samples", self.m_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ExpertError::TrainConfig(format!("{name} must be positive")));
            }
        }
        let lr = match self.optimizer {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) || !(self.clip_norm > 0.0) {
            return Err(ExpertError::TrainConfig(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn architecture(&self, spec: &UtilitySpec, k: usize) -> MlpArchitecture {
        MlpArchitecture {
            input_dim: input_dim(spec.domain, k),
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            output_dim: output_dim(spec.domain, k),
        }
    }
}

/// Per-epoch losses. Index 0 of `validation` is the loss before any step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

/// The realizations a loss is computed over: the estimates themselves for
/// regular experts, injected errors around them for robust ones.
pub fn training_realizations(
    spec: &UtilitySpec,
    state: &NetworkState,
    config: &SystemConfig,
    m_samples: usize,
    seed: u64,
) -> Vec<Realization> {
    if spec.robust {
        let model = ErrorModel::from_config(config, m_samples);
        (0..m_samples)
            .map(|m| realization(state, &model, config.omega_floor, seed, m))
            .collect()
    } else {
        vec![Realization {
            gains: channel_gains(&state.h_est, &state.beamformer),
            omega: state.omega_est.clone(),
        }]
    }
}

/// A state with the realizations its loss is evaluated on.
pub struct Sample {
    pub state: NetworkState,
    pub reals: Vec<Realization>,
}

fn make_sample(
    spec: &UtilitySpec,
    config: &SystemConfig,
    tc: &TrainConfig,
    seed: u64,
    path: &[u64],
) -> Result<Sample, ExpertError> {
    let mut rng = rng_from(seed, path);
    let state = generate_state(config, &mut rng)?;
    let inject = derive_seed(seed, &[path, &[stream::INJECT]].concat());
    let reals = training_realizations(spec, &state, config, tc.m_samples, inject);
    Ok(Sample { state, reals })
}

/// Loss of one sample and, when `grad` is given, its accumulated gradient.
pub fn sample_loss(
    net: &Mlp,
    spec: &UtilitySpec,
    sample: &Sample,
    config: &SystemConfig,
    grad: Option<&mut Mlp>,
) -> Result<f64, ExpertError> {
    let k = sample.state.num_users();
    let x = build_features(spec.domain, &sample.state);
    let mut cache = ForwardCache::default();
    let z = net.forward_cached(&x, &mut cache)?;
    let alloc = map_outputs(&z, spec.domain, k, config)?;
    let tail = ErrorModel::from_config(config, 1).tail_for(spec.family);
    let ug = quantile_utility_with_grad(spec, &sample.reals, &alloc, config, tail);
    let c = loss_sign(spec, config);
    let loss = c * ug.value;
    if let Some(grad) = grad {
        let d_ptx: Vec<f64> = ug.d_ptx.iter().map(|g| c * g).collect();
        let d_f: Vec<f64> = ug.d_f.iter().map(|g| c * g).collect();
        let dz = map_backward(&z, spec.domain, k, config, &d_ptx, &d_f);
        net.backward(&cache, &dz, grad);
    }
    Ok(loss)
}

/// Mean loss and mean gradient over `samples`.
pub fn batch_gradient(
    net: &Mlp,
    spec: &UtilitySpec,
    samples: &[Sample],
    config: &SystemConfig,
) -> Result<(f64, Mlp), ExpertError> {
    let parts: Vec<Result<(f64, Mlp), ExpertError>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Mlp::zeros(net.arch);
            let mut loss = 0.0;
            for s in chunk {
                loss += sample_loss(net, spec, s, config, Some(&mut g))?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = Mlp::zeros(net.arch);
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    let n = samples.len() as f64;
    total.params_mut().for_each(|v| *v /= n);
    Ok((loss / n, total))
}

pub fn mean_loss(
    net: &Mlp,
    spec: &UtilitySpec,
    samples: &[Sample],
    config: &SystemConfig,
) -> Result<f64, ExpertError> {
    let parts: Vec<Result<f64, ExpertError>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|s| sample_loss(net, spec, s, config, None))
                .sum()
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / samples.len() as f64)
}

/// Fixed validation states for an expert.
pub fn validation_samples(
    spec: &UtilitySpec,
    config: &SystemConfig,
    tc: &TrainConfig,
    seed: u64,
) -> Result<Vec<Sample>, ExpertError> {
    (0..tc.validation_size)
        .into_par_iter()
        .map(|i| make_sample(spec, config, tc, seed, &[stream::VALIDATION, i as u64]))
        .collect()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Trains the policy of `record` from a seed-derived initialization.
pub fn train_expert(
    record: &ExpertRecord,
    tc: &TrainConfig,
    config: &SystemConfig,
    seed: u64,
) -> Result<PolicyParameters, ExpertError> {
    tc.validate()?;
    config
        .validate()
        .map_err(|e| ExpertError::TrainConfig(e.to_string()))?;
    let spec = record.spec;
    let k = config.num_users;
    let arch = record.architecture;
    if arch.input_dim != input_dim(spec.domain, k) || arch.output_dim != output_dim(spec.domain, k)
    {
        return Err(ExpertError::Shape {
            what: "expert architecture",
            expected: input_dim(spec.domain, k),
            got: arch.input_dim,
        });
    }
    let expert_seed = derive_seed(seed, &[spec.index() as u64]);
    let mut net = Mlp::init(arch, &mut rng_from(expert_seed, &[stream::INIT]));

    let validation = validation_samples(&spec, config, tc, expert_seed)?;
    let mut trace = LossTrace::default();
    trace
        .validation
        .push(mean_loss(&net, &spec, &validation, config)?);

    let n = net.num_params();
    let mut adam = AdamState {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    for epoch in 0..tc.epochs {
        let mut epoch_loss = 0.0;
        for mb in 0..tc.minibatches {
            let samples: Vec<Sample> = (0..tc.batch_size)
                .into_par_iter()
                .map(|i| {
                    make_sample(
                        &spec,
                        config,
                        tc,
                        expert_seed,
                        &[stream::TRAIN, epoch as u64, mb as u64, i as u64],
                    )
                })
                .collect::<Result<_, _>>()?;
            let (loss, mut grad) = batch_gradient(&net, &spec, &samples, config)?;
            let gnorm = grad.norm();
            if !loss.is_finite() || !gnorm.is_finite() {
                return Err(ExpertError::Divergence {
                    expert: spec.name(),
                    epoch,
                    detail: format!("minibatch {mb}: loss {loss}, gradient norm {gnorm}"),
                });
            }
            if gnorm > tc.clip_norm {
                let s = tc.clip_norm / gnorm;
                grad.params_mut().for_each(|v| *v *= s);
            }
            step(&mut net, &grad, tc.optimizer, &mut adam);
            epoch_loss += loss;
        }
        if tc.minibatches > 0 {
            trace.train.push(epoch_loss / tc.minibatches as f64);
        }
        let v = mean_loss(&net, &spec, &validation, config)?;
        if !v.is_finite() {
            return Err(ExpertError::Divergence {
                expert: spec.name(),
                epoch,
                detail: format!("validation loss {v}"),
            });
        }
        trace.validation.push(v);
        log::debug!("{} epoch {epoch}: validation loss {v:.6}", spec.name());
    }

    Ok(PolicyParameters {
        net,
        meta: TrainingMeta {
            seed,
            epochs: tc.epochs,
            minibatches: tc.minibatches,
            batch_size: tc.batch_size,
            m_samples: tc.m_samples,
            num_users: k,
            trace,
        },
    })
}

fn step(net: &mut Mlp, grad: &Mlp, opt: Optimizer, adam: &mut AdamState) {
    match opt {
        Optimizer::Sgd { lr } => net.add_scaled(grad, -lr),
        Optimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            adam.t += 1;
            let c1 = 1.0 - beta1.powi(adam.t);
            let c2 = 1.0 - beta2.powi(adam.t);
            for (((p, g), m), v) in net
                .params_mut()
                .zip(grad.params())
                .zip(&mut adam.m)
                .zip(&mut adam.v)
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
