//! Convolutional unit-duration predictor.
//!
//! The network maps a de-duplicated unit id sequence to one log-duration per
//! position:
//!
//! ```text
//! embed -> conv1 -> ReLU -> LayerNorm -> dropout
//!       -> conv2 -> ReLU -> LayerNorm -> dropout -> linear(F -> 1)
//! ```
//!
//! Convolutions use zero "same" padding. Gradients are computed by explicit
//! backpropagation in `f64`. Training targets come straight from the
//! run-length factorization of frame-wise unit streams, so no external
//! alignment is needed.

mod network;
mod train;

pub use network::{loss_and_gradients, mean_loss};
pub use train::{train, Adam, TrainedModel};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::UnitSequence;
use crate::error::{Error, Result};
use crate::unitseq::{deduplicate, run_length_encode};

/// Epsilon inside the layer-normalization square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct DurationModelConfig {
    pub codebook_size: usize,
    pub embed_dim: usize,
    pub filter_size: usize,
    pub kernel_size: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_utterances: usize,
    pub seed: u64,
    pub max_duration: u32,
}

impl DurationModelConfig {
    pub fn new(codebook_size: usize) -> Self {
        DurationModelConfig {
            codebook_size,
            embed_dim: 128,
            filter_size: 256,
            kernel_size: 3,
            dropout_rate: 0.5,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 10,
            batch_utterances: 16,
            seed: 0,
            max_duration: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("codebook_size", self.codebook_size),
            ("embed_dim", self.embed_dim),
            ("filter_size", self.filter_size),
            ("kernel_size", self.kernel_size),
            ("epochs", self.epochs),
            ("batch_utterances", self.batch_utterances),
            ("max_duration", self.max_duration as usize),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be positive")));
            }
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::validation(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::validation("adam_eps must be positive"));
        }
        Ok(())
    }
}

/// Named parameter tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    /// `K x E`
    Embedding,
    /// `F x kernel x E` (output, tap, input)
    Conv1Weight,
    Conv1Bias,
    Ln1Gain,
    Ln1Bias,
    /// `F x kernel x F` (output, tap, input)
    Conv2Weight,
    Conv2Bias,
    Ln2Gain,
    Ln2Bias,
    /// `F`
    ProjWeight,
    /// scalar
    ProjBias,
}

impl Tensor {
    pub const ALL: [Tensor; 11] = [
        Tensor::Embedding,
        Tensor::Conv1Weight,
        Tensor::Conv1Bias,
        Tensor::Ln1Gain,
        Tensor::Ln1Bias,
        Tensor::Conv2Weight,
        Tensor::Conv2Bias,
        Tensor::Ln2Gain,
        Tensor::Ln2Bias,
        Tensor::ProjWeight,
        Tensor::ProjBias,
    ];
}

/// Offsets of each tensor inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    offsets: [usize; 12],
}

impl Layout {
    pub fn new(cfg: &DurationModelConfig) -> Self {
        let (k, e, f, w) = (cfg.codebook_size, cfg.embed_dim, cfg.filter_size, cfg.kernel_size);
        let sizes = [k * e, f * w * e, f, f, f, f * w * f, f, f, f, f, 1];
        let mut offsets = [0; 12];
        for (i, s) in sizes.iter().enumerate() {
            offsets[i + 1] = offsets[i] + s;
        }
        Layout { offsets }
    }

    pub fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let i = t as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn len(&self) -> usize {
        self.offsets[11]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationModel {
    config: DurationModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl DurationModel {
    pub fn from_parts(config: DurationModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len() {
            return Err(Error::validation(format!(
                "duration model expects {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("duration model parameters must be finite"));
        }
        Ok(DurationModel { config, layout, params })
    }

    pub fn zeros(config: DurationModelConfig) -> Result<Self> {
        let n = Layout::new(&config).len();
        Self::from_parts(config, vec![0.0; n])
    }

    /// Random initialization: standard-normal embeddings, uniform
    /// `+-1/sqrt(fan_in)` convolution and projection weights, unit
    /// layer-norm gains, and the projection bias set to `output_bias`.
    pub fn init(config: DurationModelConfig, rng: &mut ChaCha8Rng, output_bias: f64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let (e, f, w) = (m.config.embed_dim, m.config.filter_size, m.config.kernel_size);
        for p in m.tensor_mut(Tensor::Embedding) {
            *p = StandardNormal.sample(rng);
        }
        let fill = |m: &mut Self, t: Tensor, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in m.tensor_mut(t) {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(&mut m, Tensor::Conv1Weight, w * e, rng);
        fill(&mut m, Tensor::Conv1Bias, w * e, rng);
        fill(&mut m, Tensor::Conv2Weight, w * f, rng);
        fill(&mut m, Tensor::Conv2Bias, w * f, rng);
        fill(&mut m, Tensor::ProjWeight, f, rng);
        m.tensor_mut(Tensor::Ln1Gain).fill(1.0);
        m.tensor_mut(Tensor::Ln2Gain).fill(1.0);
        m.tensor_mut(Tensor::ProjBias)[0] = output_bias;
        Ok(m)
    }

    pub fn config(&self) -> &DurationModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// All parameters in storage order.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.params[self.layout.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.layout.range(t);
        &mut self.params[r]
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn check_units(&self, units: &[u32]) -> Result<()> {
        let k = self.config.codebook_size;
        if let Some((i, u)) = units.iter().enumerate().find(|(_, &u)| u as usize >= k) {
            return Err(Error::validation(format!(
                "unit id {u} at position {i} is out of range for a model with K={k}"
            )));
        }
        Ok(())
    }

    /// Deterministic inference pass returning predicted natural-log durations.
    pub fn log_durations(&self, units: &[u32]) -> Result<Vec<f64>> {
        self.forward(units, None)
    }

    /// Integer durations: `clamp(round(exp(y)), 1, max_duration)` with
    /// halves rounded away from zero.
    pub fn predict_durations(&self, units: &[u32]) -> Result<Vec<u32>> {
        Ok(self.log_durations(units)?.into_iter().map(|y| self.round_duration(y)).collect())
    }

    pub fn round_duration(&self, log_duration: f64) -> u32 {
        let max = self.config.max_duration as f64;
        let d = log_duration.exp().round();
        // NaN never arises from finite parameters; map it to the floor anyway.
        if d.is_nan() {
            return 1;
        }
        d.clamp(1.0, max) as u32
    }
}

/// One utterance as (de-duplicated units, run lengths).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub input_units: Vec<u32>,
    pub target_durations: Vec<u32>,
}

impl TrainingExample {
    pub fn new(input_units: Vec<u32>, target_durations: Vec<u32>) -> Result<Self> {
        if input_units.is_empty() || input_units.len() != target_durations.len() {
            return Err(Error::validation(format!(
                "training example needs equal non-zero lengths, got {} units and {} targets",
                input_units.len(),
                target_durations.len()
            )));
        }
        if target_durations.contains(&0) {
            return Err(Error::validation("target durations must be >= 1"));
        }
        Ok(TrainingExample { input_units, target_durations })
    }

    pub fn len(&self) -> usize {
        self.input_units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_units.is_empty()
    }
}

/// Turns frame-wise unit streams into duration-prediction examples.
pub fn build_training_set(corpus: &[UnitSequence]) -> Result<Vec<TrainingExample>> {
    if corpus.is_empty() {
        return Err(Error::validation("empty training corpus"));
    }
    Ok(corpus
        .iter()
        .map(|s| {
            let runs = run_length_encode(s);
            TrainingExample {
                input_units: deduplicate(s).into_units(),
                target_durations: runs.durations().collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Run, RunLengthSequence};
    use crate::unitseq::run_length_decode;

    #[test]
    fn training_set_from_worked_example() {
        let s = UnitSequence::new(vec![2, 2, 1, 2, 3, 3], 4).unwrap();
        let set = build_training_set(std::slice::from_ref(&s)).unwrap();
        assert_eq!(set[0].input_units, vec![2, 1, 2, 3]);
        assert_eq!(set[0].target_durations, vec![2, 1, 1, 2]);

        let runs = set[0]
            .input_units
            .iter()
            .zip(&set[0].target_durations)
            .map(|(&unit, &duration)| Run { unit, duration })
            .collect();
        let back = run_length_decode(&RunLengthSequence::new(runs, 4).unwrap()).unwrap();
        assert_eq!(back, s);

        let single = build_training_set(&[UnitSequence::new(vec![5], 6).unwrap()]).unwrap();
        assert_eq!(single[0], TrainingExample::new(vec![5], vec![1]).unwrap());
        assert!(build_training_set(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DurationModelConfig::new(4).validate().is_ok());
        let even = DurationModelConfig { kernel_size: 2, ..DurationModelConfig::new(4) };
        assert!(even.validate().is_err());
        let drop = DurationModelConfig { dropout_rate: 1.0, ..DurationModelConfig::new(4) };
        assert!(drop.validate().is_err());
    }

    #[test]
    fn zero_model_predicts_unit_durations() {
        let m = DurationModel::zeros(DurationModelConfig::new(8)).unwrap();
        assert_eq!(m.log_durations(&[1, 7, 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(m.predict_durations(&[1, 7, 3]).unwrap(), vec![1; 3]);
        assert!(matches!(m.predict_durations(&[8]), Err(Error::Validation(_))));
    }

    #[test]
    fn rounding_and_clamping() {
        let m = DurationModel::zeros(DurationModelConfig::new(2)).unwrap();
        assert_eq!(m.round_duration(2.5f64.ln()), 3);
        assert_eq!(m.round_duration(1000f64.ln()), 100);
        assert_eq!(m.round_duration(-20.0), 1);
        assert_eq!(m.round_duration(f64::INFINITY), 100);
    }

    #[test]
    fn layout_covers_all_parameters() {
        let cfg = DurationModelConfig { embed_dim: 3, filter_size: 5, kernel_size: 3, ..DurationModelConfig::new(4) };
        let l = Layout::new(&cfg);
        assert_eq!(l.len(), 4 * 3 + 5 * 3 * 3 + 5 * 3 + 5 * 3 * 5 + 5 * 3 + 5 + 1);
        assert_eq!(l.range(Tensor::ProjBias), l.len() - 1..l.len());
    }
}
