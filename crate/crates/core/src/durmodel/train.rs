use rand::seq::SliceRandom;

use super::{loss_and_gradients, DurationModel, DurationModelConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::rng;

const INIT_TAG: u64 = 0x696e_6974;
const SHUFFLE_TAG: u64 = 0x7368_7566;
const DROPOUT_TAG: u64 = 0x6472_6f70;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: &DurationModelConfig, n_params: usize) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: DurationModel,
    /// Mean training loss (dropout active) of each epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainedModel {
    pub const LOSS_TSV_HEADER: &'static str = "epoch\tloss";

    pub fn loss_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::LOSS_TSV_HEADER);
        for (i, l) in self.loss_trace.iter().enumerate() {
            s.push_str(&format!("{}\t{l}\n", i + 1));
        }
        s
    }
}

/// Trains a duration model with Adam over shuffled utterance batches.
///
/// Initialization, per-epoch shuffling and dropout masks all derive from
/// `cfg.seed`, so a fixed seed reproduces the model bit for bit.
pub fn train(set: &[TrainingExample], cfg: &DurationModelConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    let mut positions = 0usize;
    let mut log_sum = 0.0;
    for ex in set {
        if ex.is_empty() || ex.input_units.len() != ex.target_durations.len() {
            return Err(Error::validation("malformed training example"));
        }
        positions += ex.len();
        log_sum += ex.target_durations.iter().map(|&d| (d as f64).ln()).sum::<f64>();
    }

    let mut init_rng = rng::stream(cfg.seed, INIT_TAG, 0);
    let mut model = DurationModel::init(cfg.clone(), &mut init_rng, log_sum / positions as f64)?;
    for ex in set {
        model.check_units(&ex.input_units)?;
    }
    let mut adam = Adam::new(cfg, model.params().len());
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, SHUFFLE_TAG, epoch as u64));
        let mut sse = 0.0;
        for chunk in order.chunks(cfg.batch_utterances) {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| set[i].clone()).collect();
            let n: usize = batch.iter().map(TrainingExample::len).sum();
            let mut drop_rng = rng::stream(cfg.seed, DROPOUT_TAG, step);
            let (loss, grads) = loss_and_gradients(&model, &batch, &mut drop_rng)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch: epoch + 1, loss });
            }
            adam.step(model.params_mut(), &grads);
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch: epoch + 1, loss: f64::NAN });
            }
            sse += loss * n as f64;
            step += 1;
        }
        loss_trace.push(sse / positions as f64);
    }
    Ok(TrainedModel { model, loss_trace })
}
