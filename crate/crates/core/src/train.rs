//! Imitation-learning loop: label normalization, the composite training
//! loss, the polynomial learning-rate schedule, Adam, early stopping, and
//! checkpointing.
//!
//! The loss is the mean log-cosh residual between predicted and label
//! normalized flows plus a scaled penalty on nodal totals that leave the
//! generation-capacity interval; the penalty is what pushes predictions
//! toward balance-feasible dispatches.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;
use crate::encoding::{build_features, node_lpe, EncodingError, FeatureMatrix};
use crate::grid::Network;
use crate::nn::checkpoint::{Checkpoint, TrainStateSnapshot};
use crate::nn::model::{model_forward_on_tape, prepare_inputs, register_params, ModelInputs};
use crate::nn::params::{init_params, ModelDims, ModelParams};
use crate::nn::tape::{NnError, Tape, Tensor, ValueId};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Tolerance when checking that labels respect flow limits, in MW.
pub const LABEL_TOL_MW: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("label for link index {link_idx} is {value} MW, beyond its limit {f_nom} MW")]
    LabelOutOfRange {
        link_idx: usize,
        value: f64,
        f_nom: f64,
    },
    #[error("non-finite gradient")]
    BadGradient,
    #[error("bad training config: {0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Training hyperparameters; defaults follow the reference protocol
/// (poly-decayed Adam, batch 32, early-stop patience 100, penalty scale
/// 1e-7).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub decay_steps: u64,
    pub poly_power: f64,
    /// Scale of the nodal-balance penalty term.
    pub alpha: f64,
    pub seed: u64,
    /// Fraction of the training split held out for early stopping.
    pub val_fraction: f64,
    /// Worker threads for batch gradients; 1 keeps everything serial.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 32,
            patience: 100,
            lr_max: 1e-3,
            lr_min: 1e-4,
            decay_steps: 100,
            poly_power: 1.5,
            alpha: 1e-7,
            seed: 0,
            val_fraction: 0.1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(TrainError::Config(
                "epochs, batch_size, and patience must be positive".to_string(),
            ));
        }
        if !(self.lr_max > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(TrainError::Config(format!(
                "need 0 < lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.decay_steps == 0 || self.poly_power <= 0.0 || self.alpha < 0.0 {
            return Err(TrainError::Config(
                "decay_steps and poly_power must be positive, alpha non-negative".to_string(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.threads == 0 {
            return Err(TrainError::Config("threads must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Polynomial decay from `lr_max` to `lr_min` over `decay_steps` optimizer
/// steps, flat afterwards.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    let d = config.decay_steps as f64;
    let t = (step as f64).min(d);
    (config.lr_max - config.lr_min) * (1.0 - t / d).powf(config.poly_power) + config.lr_min
}

/// Normalizes label flows by nominal link power: F / f_nom in [-1, 1].
/// Labels exceeding a link limit beyond tolerance are data errors.
pub fn normalize_labels(network: &Network, flows_mw: &[f64]) -> Result<Vec<f64>, TrainError> {
    if flows_mw.len() != network.n_links() {
        return Err(TrainError::Shape(format!(
            "label vector has {} entries for {} links",
            flows_mw.len(),
            network.n_links()
        )));
    }
    flows_mw
        .iter()
        .enumerate()
        .map(|(l, &f)| {
            let f_nom = network.links()[l].f_nom;
            if f.abs() > f_nom + LABEL_TOL_MW {
                return Err(TrainError::LabelOutOfRange {
                    link_idx: l,
                    value: f,
                    f_nom,
                });
            }
            Ok((f / f_nom).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Per-snapshot constants of the loss: the balance map from normalized flows
/// to node totals, the demand offsets, and the capacity interval.
#[derive(Debug, Clone)]
pub struct LossContext {
    /// (N, L) matrix of incidence times f_nom: totals = demand + B f_hat.
    pub balance: Tensor,
    pub demand: Vec<f64>,
    pub avail: Vec<f64>,
}

impl LossContext {
    pub fn new(network: &Network, demand: Vec<f64>, avail: Vec<f64>) -> LossContext {
        let n = network.n_nodes();
        let l = network.n_links();
        let inc = network.incidence();
        let mut data = vec![0.0; n * l];
        for j in 0..n {
            for k in 0..l {
                data[j * l + k] = inc[(j, k)] * network.links()[k].f_nom;
            }
        }
        LossContext {
            balance: Tensor::from_vec(&[n, l], data),
            demand,
            avail,
        }
    }
}

/// Builds the training loss on a tape: mean log-cosh flow residual plus
/// alpha times the mean squared violation of each node total's feasible
/// interval [0, available capacity].
pub fn loss_on_tape(
    tape: &mut Tape<'_>,
    f_hat: ValueId,
    f_tilde: &[f64],
    ctx: &LossContext,
    alpha: f64,
) -> ValueId {
    let target = tape.constant(Tensor::vector(f_tilde.to_vec()));
    let diff = tape.sub(f_hat, target);
    let log_cosh = tape.log_cosh(diff);
    let residual = tape.mean(log_cosh);

    let balance = tape.constant(ctx.balance.clone());
    let flow_part = tape.matvec(balance, f_hat);
    let demand = tape.constant(Tensor::vector(ctx.demand.clone()));
    let totals = tape.add(flow_part, demand);
    let violation = tape.interval_violation(totals, vec![0.0; ctx.demand.len()], ctx.avail.clone());
    let squared = tape.square(violation);
    let penalty = tape.mean(squared);

    let scaled = tape.scale(penalty, alpha);
    tape.add(residual, scaled)
}

/// Loss as a plain number, through the same tape code path.
pub fn loss_value(f_hat: &[f64], f_tilde: &[f64], ctx: &LossContext, alpha: f64) -> f64 {
    let params: [&Tensor; 0] = [];
    let mut tape = Tape::new(&params);
    let pred = tape.constant(Tensor::vector(f_hat.to_vec()));
    let loss = loss_on_tape(&mut tape, pred, f_tilde, ctx, alpha);
    tape.value(loss).data[0]
}

/// Adam optimizer state; moment tensors are shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let zeros: Vec<Tensor> = params.flat().iter().map(|t| Tensor::zeros(&t.shape)).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Rejects non-finite gradients.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ModelParams,
    grads: &[Tensor],
    lr: f64,
) -> Result<(), TrainError> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::BadGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let slots = params.flat_mut();
    assert_eq!(slots.len(), grads.len(), "gradient count mismatch");
    for ((slot, grad), (m, v)) in slots
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for k in 0..slot.len() {
            let g = grad.data[k];
            m.data[k] = ADAM_BETA1 * m.data[k] + (1.0 - ADAM_BETA1) * g;
            v.data[k] = ADAM_BETA2 * v.data[k] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m.data[k] / bias1;
            let v_hat = v.data[k] / bias2;
            slot.data[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochLimit,
    EarlyStop,
    Diverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters, ready for inference.
    pub checkpoint: Checkpoint,
    /// Last-state checkpoint carrying optimizer state for exact resumption.
    pub resume_checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub stop: StopReason,
}

/// Per-sample training environment.
struct SampleSet {
    features: Vec<FeatureMatrix>,
    labels: Vec<Vec<f64>>,
    contexts: Vec<LossContext>,
}

fn sample_loss_and_grads(
    flat: &[&Tensor],
    dims: &ModelDims,
    inputs: &ModelInputs,
    features: &FeatureMatrix,
    label: &[f64],
    ctx: &LossContext,
    alpha: f64,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new(flat);
    let leaves = register_params(&mut tape, dims);
    let artifacts = model_forward_on_tape(&mut tape, &leaves, inputs, features, dims)?;
    let loss = loss_on_tape(&mut tape, artifacts.f_hat, label, ctx, alpha);
    let value = tape.value(loss).data[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

fn forward_loss_only(
    flat: &[&Tensor],
    dims: &ModelDims,
    inputs: &ModelInputs,
    features: &FeatureMatrix,
    label: &[f64],
    ctx: &LossContext,
    alpha: f64,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new(flat);
    let leaves = register_params(&mut tape, dims);
    let artifacts = model_forward_on_tape(&mut tape, &leaves, inputs, features, dims)?;
    let loss = loss_on_tape(&mut tape, artifacts.f_hat, label, ctx, alpha);
    Ok(tape.value(loss).data[0])
}

/// Mean loss and gradient over a batch, fanned out over `threads` workers.
/// The reduction always runs in sample-index order, so the result is
/// bit-identical however the work was scheduled.
fn batch_gradients(
    batch: &[usize],
    params: &ModelParams,
    inputs: &ModelInputs,
    set: &SampleSet,
    alpha: f64,
    threads: usize,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let flat = params.flat();
    let dims = &params.dims;
    let mut results: Vec<Option<(f64, Vec<Tensor>)>> = (0..batch.len()).map(|_| None).collect();

    if threads <= 1 || batch.len() == 1 {
        for (slot, &idx) in results.iter_mut().zip(batch) {
            *slot = Some(sample_loss_and_grads(
                &flat,
                dims,
                inputs,
                &set.features[idx],
                &set.labels[idx],
                &set.contexts[idx],
                alpha,
            )?);
        }
    } else {
        let chunk = batch.len().div_ceil(threads);
        let errors = std::sync::Mutex::new(Vec::<TrainError>::new());
        std::thread::scope(|scope| {
            for (slots, idxs) in results.chunks_mut(chunk).zip(batch.chunks(chunk)) {
                let flat_ref = &flat;
                let errors = &errors;
                scope.spawn(move || {
                    for (slot, &idx) in slots.iter_mut().zip(idxs) {
                        match sample_loss_and_grads(
                            flat_ref,
                            dims,
                            inputs,
                            &set.features[idx],
                            &set.labels[idx],
                            &set.contexts[idx],
                            alpha,
                        ) {
                            Ok(r) => *slot = Some(r),
                            Err(e) => errors.lock().unwrap().push(e),
                        }
                    }
                });
            }
        });
        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
    }

    let inv = 1.0 / batch.len() as f64;
    let mut mean_loss = 0.0;
    let mut grads: Vec<Tensor> = params.flat().iter().map(|t| Tensor::zeros(&t.shape)).collect();
    for r in results.into_iter() {
        let (loss, g) = r.expect("all samples computed");
        mean_loss += loss * inv;
        for (acc, gt) in grads.iter_mut().zip(&g) {
            for (a, v) in acc.data.iter_mut().zip(&gt.data) {
                *a += v * inv;
            }
        }
    }
    Ok((mean_loss, grads))
}

/// Trains the model by mini-batch Adam with early stopping on a validation
/// slice carved from the end of the training split. Returns the
/// best-validation checkpoint, a resumable last-state checkpoint, and the
/// per-epoch log. Divergence (non-finite loss) stops training and returns
/// the best state seen so far.
pub fn train(
    dataset: &Dataset,
    label_flows_mw: &HashMap<u64, Vec<f64>>,
    dims: &ModelDims,
    config: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    dims.validate().map_err(TrainError::Config)?;
    let network = &dataset.network;

    let encoding = node_lpe(network, dims.pe_dim)?;
    let inputs = prepare_inputs(network, &encoding, dims)?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut contexts = Vec::new();
    for &i in &dataset.split.train {
        let snap = &dataset.snapshots[i];
        let flows = label_flows_mw.get(&snap.step).ok_or_else(|| {
            TrainError::Shape(format!("no label flows for snapshot step {}", snap.step))
        })?;
        features.push(build_features(network, snap, &dataset.demand_max, &encoding)?);
        labels.push(normalize_labels(network, flows)?);
        contexts.push(LossContext::new(
            network,
            snap.demand.clone(),
            network.available_capacity(&snap.eta_wind, &snap.eta_solar),
        ));
    }
    let set = SampleSet {
        features,
        labels,
        contexts,
    };

    let n_train_total = dataset.split.train.len();
    let n_val = ((n_train_total as f64 * config.val_fraction).round() as usize)
        .max(1)
        .min(n_train_total.saturating_sub(1));
    let n_core = n_train_total - n_val;
    if n_core == 0 {
        return Err(TrainError::Config(
            "training split too small to carve a validation slice".to_string(),
        ));
    }
    let core_indices: Vec<usize> = (0..n_core).collect();
    let val_indices: Vec<usize> = (n_core..n_train_total).collect();

    let mut params;
    let mut adam;
    let start_epoch;
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut best_params_flat;
    match resume.and_then(|c| c.train_state.as_ref().map(|s| (c, s))) {
        Some((ckpt, state)) => {
            params = ModelParams::from_flat(dims.clone(), ckpt.params.clone())
                .map_err(TrainError::Config)?;
            adam = AdamState {
                m: state.adam_m.clone(),
                v: state.adam_v.clone(),
                step: state.step,
            };
            start_epoch = state.epoch;
            best_val = state.best_val_loss;
            since_best = state.epochs_since_best;
            best_params_flat = state.best_params.clone();
        }
        None => {
            params = init_params(config.seed, dims);
            adam = AdamState::new(&params);
            start_epoch = 0;
            best_params_flat = params.flat_cloned();
        }
    }

    let mut log = Vec::new();
    let mut stop = StopReason::EpochLimit;

    'epochs: for epoch in start_epoch..config.epochs {
        let t0 = Instant::now();
        // Epoch-keyed shuffle: reproducible and independent of history, so a
        // resumed run sees the same batches as an uninterrupted one.
        let mut order = core_indices.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(17),
        );
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        let mut lr = lr_schedule(adam.step, config);
        for batch in order.chunks(config.batch_size) {
            let (mean_loss, grads) = match batch_gradients(
                batch,
                &params,
                &inputs,
                &set,
                config.alpha,
                config.threads,
            ) {
                Ok(r) => r,
                // Numerical blow-ups abort training but keep the best state
                // seen so far; real shape/config errors still propagate.
                Err(TrainError::Nn(NnError::NonFinite { .. }))
                | Err(TrainError::Nn(NnError::NonFiniteGradient { .. }))
                | Err(TrainError::BadGradient) => {
                    stop = StopReason::Diverged;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !mean_loss.is_finite() {
                stop = StopReason::Diverged;
                break 'epochs;
            }
            epoch_loss += mean_loss * batch.len() as f64;
            seen += batch.len();
            lr = lr_schedule(adam.step, config);
            adam_step(&mut adam, &mut params, &grads, lr)?;
        }
        let train_loss = epoch_loss / seen.max(1) as f64;

        let flat = params.flat();
        let mut val_loss = 0.0;
        for &idx in &val_indices {
            val_loss += forward_loss_only(
                &flat,
                dims,
                &inputs,
                &set.features[idx],
                &set.labels[idx],
                &set.contexts[idx],
                config.alpha,
            )?;
        }
        val_loss /= val_indices.len() as f64;
        drop(flat);

        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });

        if !val_loss.is_finite() {
            stop = StopReason::Diverged;
            break;
        }
        if val_loss < best_val {
            best_val = val_loss;
            since_best = 0;
            best_params_flat = params.flat_cloned();
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }

    let best_params =
        ModelParams::from_flat(dims.clone(), best_params_flat.clone()).map_err(TrainError::Config)?;
    let f_nom: Vec<f64> = network.links().iter().map(|l| l.f_nom).collect();
    let checkpoint = Checkpoint::new(
        &best_params,
        &encoding,
        dataset.demand_max.clone(),
        f_nom.clone(),
        config.seed,
    );
    let mut resume_checkpoint = Checkpoint::new(
        &params,
        &encoding,
        dataset.demand_max.clone(),
        f_nom,
        config.seed,
    );
    resume_checkpoint.train_state = Some(TrainStateSnapshot {
        adam_m: adam.m.clone(),
        adam_v: adam.v.clone(),
        step: adam.step,
        epoch: log.last().map_or(start_epoch, |e| e.epoch + 1),
        best_val_loss: best_val,
        epochs_since_best: since_best,
        best_params: best_params_flat,
    });

    Ok(TrainOutcome {
        checkpoint,
        resume_checkpoint,
        log,
        stop,
    })
}

/// Writes the per-epoch log as delimiter-separated text.
pub fn save_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let mut out = String::from("epoch,train_loss,val_loss,lr,wall_ms\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.wall_ms
        ));
    }
    std::fs::write(path, out).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}
