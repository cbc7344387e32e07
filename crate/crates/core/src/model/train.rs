//! Mini-batch training with Adam.

use std::borrow::Borrow;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_logit_grad, LossKind, LossParams};
use super::network::{backward, forward, Architecture, Workspace};
use super::{ModelError, ModelState, PreparedSample, TrainingMetadata};
use crate::rng::{derive_seed, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub loss_params: LossParams,
    pub conv_channels: Vec<usize>,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::reference(380);
        Self {
            input_size: arch.input_size,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            loss: LossKind::Focal,
            loss_params: LossParams::default(),
            conv_channels: arch.conv_channels,
            hidden: arch.hidden,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_size: self.input_size,
            conv_channels: self.conv_channels.clone(),
            hidden: self.hidden,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.input_size < 8 {
            return bad(format!(
                "input size must be at least 8, got {}",
                self.input_size
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        self.loss_params
            .validate()
            .map_err(ModelError::InvalidConfig)?;
        self.architecture()
            .validate()
            .map_err(ModelError::InvalidConfig)
    }
}

/// Adam with bias correction.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    fn new(lr: f64, shapes: &[Vec<f32>]) -> Self {
        let zeros = || {
            shapes
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn update(&mut self, params: &mut [Vec<f32>], grads: &[Vec<f32>]) {
        self.step += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step_size * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Trains a fresh network on prepared samples.
///
/// Deterministic in `config.seed`: initialization draws from stream 0 of the
/// seed derived with label `"init"`, and epoch `e` shuffles with stream `e`
/// of the seed derived with label `"shuffle"`.
pub fn train_prepared<S: Borrow<PreparedSample>>(
    samples: &[S],
    config: &TrainConfig,
    data_digest: &str,
) -> Result<ModelState, ModelError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyPatchSet);
    }
    let arch = config.architecture();
    let expected_len = 3 * arch.input_size * arch.input_size;
    if let Some(bad) = samples
        .iter()
        .map(Borrow::borrow)
        .find(|s: &&PreparedSample| s.input.len() != expected_len)
    {
        return Err(ModelError::ArchitectureMismatch(format!(
            "sample has {} values, architecture expects {expected_len}",
            bad.input.len()
        )));
    }
    let positives = samples.iter().filter(|s| (*s).borrow().target == 1).count();
    if positives == 0 || positives == samples.len() {
        warn!(
            "training set has a single class ({positives}/{} positive)",
            samples.len()
        );
    }

    let mut weights = arch.init_weights(&mut Stream::new(derive_seed(config.seed, "init"), 0));
    let mut grads = arch.zeros::<f32>();
    let mut adam = Adam::new(config.learning_rate, &weights);
    let mut ws = Workspace::<f32>::new(&arch);
    let shuffle_seed = derive_seed(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.sort_unstable();
        Stream::new(shuffle_seed, epoch as u64).shuffle(&mut order);
        let mut total = 0.0f64;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let sample: &PreparedSample = samples[i].borrow();
                let z = forward(&arch, &weights, &sample.input, &mut ws) as f64;
                let (loss, dz) =
                    loss_and_logit_grad(config.loss, z, sample.target, config.loss_params);
                batch_loss += loss;
                backward(&arch, &weights, &mut ws, (dz * scale) as f32, &mut grads);
            }
            if !batch_loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    loss: batch_loss,
                });
            }
            adam.update(&mut weights, &grads);
            total += batch_loss;
        }
        let mean = total / samples.len() as f64;
        debug!(
            "epoch {}/{} mean loss {:.6}",
            epoch + 1,
            config.epochs,
            mean
        );
        epoch_losses.push(mean);
    }
    info!(
        "trained on {} samples ({} positive) for {} epochs; final loss {:.6}",
        samples.len(),
        positives,
        config.epochs,
        epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(ModelState {
        architecture: arch,
        weights,
        metadata: TrainingMetadata {
            config: Some(config.clone()),
            epoch_losses,
            data_digest: data_digest.to_string(),
            sample_count: samples.len(),
        },
    })
}
