//! Bidirectional LSTM regressor from a melody to a predicted mean score.
//!
//! Tokens are one-hot encoded over the model's alphabet. A forward cell reads
//! the melody left to right and a backward cell right to left; their final
//! hidden states are concatenated and mapped to a scalar `y`. The prediction is
//! `100 * sigmoid(y)`, so it always lies strictly inside `(0, 100)`.
//!
//! Both cells use the standard recurrences
//!
//! ```text
//! i = sigmoid(W_i [x; h] + b_i)    f = sigmoid(W_f [x; h] + b_f)
//! o = sigmoid(W_o [x; h] + b_o)    g = tanh(W_g [x; h] + b_g)
//! c' = f * c + i * g               h' = o * tanh(c')
//! ```
//!
//! # Parameter layout
//!
//! All parameters live in one flat vector, in this order (`V` = alphabet size,
//! `H` = hidden size, `S = V + H`):
//!
//! 1. forward cell weights, `4H x S` row-major; rows are the gate blocks
//!    `i, f, o, g` of `H` rows each, and each row holds the `V` input columns
//!    followed by the `H` recurrent columns
//! 2. forward cell biases, `4H`, same gate order
//! 3. backward cell weights, as 1.
//! 4. backward cell biases, as 2.
//! 5. output weights, `2H`: forward half then backward half
//! 6. output bias, 1
//!
//! Gradients use the same layout.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::Token;
use crate::ga::Melody;
use batch::{sigmoid, tanh};

mod batch;

const SCORE_SCALE: f64 = 100.0;
const FORMAT_NAME: &str = "melodyevo-bilstm";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("token {0} is not in the model alphabet")]
    UnknownToken(Token),
    #[error("training data is empty")]
    EmptyData,
    #[error("target {0} outside [0, 100]")]
    TargetOutOfRange(f64),
    #[error("empty melody")]
    EmptyMelody,
    #[error("training diverged at epoch {epoch} (mse {mse}); lower the learning rate")]
    DivergenceDetected { epoch: usize, mse: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file format error: {0}")]
    Format(String),
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Offsets into the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    vocab: usize,
    hidden: usize,
}

impl Layout {
    fn stride(&self) -> usize {
        self.vocab + self.hidden
    }

    fn cell_weights(&self) -> usize {
        4 * self.hidden * self.stride()
    }

    fn cell_len(&self) -> usize {
        self.cell_weights() + 4 * self.hidden
    }

    fn cell(&self, dir: Direction) -> std::ops::Range<usize> {
        let start = match dir {
            Direction::Forward => 0,
            Direction::Backward => self.cell_len(),
        };
        start..start + self.cell_len()
    }

    fn output_weights(&self) -> std::ops::Range<usize> {
        let start = 2 * self.cell_len();
        start..start + 2 * self.hidden
    }

    fn output_bias(&self) -> usize {
        2 * self.cell_len() + 2 * self.hidden
    }

    fn len(&self) -> usize {
        self.output_bias() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// One LSTM cell's weights and biases borrowed from the flat vector.
struct Cell<'a> {
    weights: &'a [f64],
    biases: &'a [f64],
    vocab: usize,
    hidden: usize,
}

impl<'a> Cell<'a> {
    fn new(params: &'a [f64], layout: Layout) -> Self {
        let (weights, biases) = params.split_at(layout.cell_weights());
        Cell {
            weights,
            biases,
            vocab: layout.vocab,
            hidden: layout.hidden,
        }
    }

    fn step(&self, input: usize, h_prev: &[f64], c_prev: &[f64], gates: &mut [f64], c: &mut [f64], h: &mut [f64]) {
        let hs = self.hidden;
        let stride = self.vocab + hs;
        for (r, gate) in gates.iter_mut().enumerate() {
            let row = &self.weights[r * stride..(r + 1) * stride];
            let mut z = self.biases[r] + row[input];
            for (w, h) in row[self.vocab..].iter().zip(h_prev) {
                z += w * h;
            }
            *gate = if r < 3 * hs { sigmoid(z) } else { tanh(z) };
        }
        for j in 0..hs {
            let (i, f, o, g) = (gates[j], gates[hs + j], gates[2 * hs + j], gates[3 * hs + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * tanh(c[j]);
        }
    }

    /// Final hidden state after consuming `inputs` in order.
    fn run(&self, inputs: impl Iterator<Item = usize>) -> Vec<f64> {
        let hs = self.hidden;
        let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
        let (mut h_next, mut c_next) = (vec![0.0; hs], vec![0.0; hs]);
        let mut gates = vec![0.0; 4 * hs];
        for k in inputs {
            self.step(k, &h, &c, &mut gates, &mut c_next, &mut h_next);
            std::mem::swap(&mut h, &mut h_next);
            std::mem::swap(&mut c, &mut c_next);
        }
        h
    }
}

/// How the parameters are updated from the full-batch gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam with the usual moment decay rates.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Gradient-norm clipping threshold, applied to the normalized-loss gradient.
    pub clip_norm: f64,
    pub optimizer: Optimizer,
    pub hidden_size: usize,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
    pub forget_bias: f64,
    /// Fraction of the data held out for validation; 0 trains on everything.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            learning_rate: 0.01,
            clip_norm: 5.0,
            optimizer: Optimizer::adam(),
            hidden_size: 50,
            init_scale: 0.08,
            forget_bias: 1.0,
            holdout_fraction: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be a finite non-negative number");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Per-epoch mean squared error in score units squared.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
    /// Present when a holdout fraction was configured.
    pub holdout_trace: Option<Vec<f64>>,
}

impl TrainReport {
    pub fn final_mse(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    alphabet: Vec<Token>,
    lookup: HashMap<Token, usize>,
    hidden: usize,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocab: usize,
    hidden: usize,
    alphabet: Vec<Token>,
    params: Vec<f64>,
}

impl SurrogateModel {
    /// A model with every parameter zero; it predicts 50 for any melody.
    pub fn zeros(alphabet: Vec<Token>, hidden: usize) -> Self {
        let layout = Layout {
            vocab: alphabet.len(),
            hidden,
        };
        let lookup = alphabet.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        SurrogateModel {
            alphabet,
            lookup,
            hidden,
            params: vec![0.0; layout.len()],
        }
    }

    /// Uniform initialization in `[-init_scale, init_scale]`, forget-gate biases set to `forget_bias`.
    pub fn init(alphabet: Vec<Token>, config: &TrainConfig) -> Self {
        let mut model = Self::zeros(alphabet, config.hidden_size);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = config.init_scale;
        for p in model.params.iter_mut() {
            *p = if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            };
        }
        let layout = model.layout();
        let h = model.hidden;
        for dir in [Direction::Forward, Direction::Backward] {
            let bias_start = layout.cell(dir).start + layout.cell_weights();
            model.params[bias_start + h..bias_start + 2 * h].fill(config.forget_bias);
        }
        model
    }

    fn layout(&self) -> Layout {
        Layout {
            vocab: self.alphabet.len(),
            hidden: self.hidden,
        }
    }

    pub fn alphabet(&self) -> &[Token] {
        &self.alphabet
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// Flat parameter vector (see the module docs for the layout).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Mutable view of the output weights (forward half, then backward half).
    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let r = self.layout().output_weights();
        &mut self.params[r]
    }

    pub fn output_bias_mut(&mut self) -> &mut f64 {
        let i = self.layout().output_bias();
        &mut self.params[i]
    }

    /// Mutable weights and biases of one cell: `(weights 4H x (V+H), biases 4H)`.
    pub fn cell_mut(&mut self, dir: Direction) -> (&mut [f64], &mut [f64]) {
        let layout = self.layout();
        let range = layout.cell(dir);
        self.params[range].split_at_mut(layout.cell_weights())
    }

    fn cell(&self, dir: Direction) -> Cell<'_> {
        let layout = self.layout();
        Cell::new(&self.params[layout.cell(dir)], layout)
    }

    pub fn encode(&self, melody: &Melody) -> Result<Vec<usize>, SurrogateError> {
        if melody.is_empty() {
            return Err(SurrogateError::EmptyMelody);
        }
        melody
            .tokens()
            .iter()
            .map(|t| self.lookup.get(t).copied().ok_or(SurrogateError::UnknownToken(*t)))
            .collect()
    }

    /// Final hidden state of one cell after reading `inputs` (alphabet
    /// indices) in the order given.
    pub fn run_cell(&self, dir: Direction, inputs: &[usize]) -> Vec<f64> {
        self.cell(dir).run(inputs.iter().copied())
    }

    /// Final hidden states of the forward cell (left to right) and the backward
    /// cell (right to left).
    pub fn final_states(&self, melody: &Melody) -> Result<(Vec<f64>, Vec<f64>), SurrogateError> {
        let inputs = self.encode(melody)?;
        let forward = self.cell(Direction::Forward).run(inputs.iter().copied());
        let backward = self.cell(Direction::Backward).run(inputs.iter().rev().copied());
        Ok((forward, backward))
    }

    /// Predicted score in `(0, 100)`.
    pub fn forward(&self, melody: &Melody) -> Result<f64, SurrogateError> {
        let (hf, hb) = self.final_states(melody)?;
        Ok(SCORE_SCALE * sigmoid(self.readout(&hf, &hb)))
    }

    fn readout(&self, hf: &[f64], hb: &[f64]) -> f64 {
        let layout = self.layout();
        let w = &self.params[layout.output_weights()];
        let (wf, wb) = w.split_at(self.hidden);
        dot(wf, hf) + dot(wb, hb) + self.params[layout.output_bias()]
    }

    /// Mean squared error in score units squared, and its gradient with
    /// respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[(Melody, f64)]) -> Result<(f64, Vec<f64>), SurrogateError> {
        let encoded = self.encode_batch(batch)?;
        let chunks = batch::chunk(&encoded);
        let (loss01, mut grad) =
            batch::loss_and_gradients::<f64>(&self.params, self.layout(), &chunks, &mut Default::default());
        let scale = SCORE_SCALE * SCORE_SCALE;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss01 * scale, grad))
    }

    fn encode_batch(&self, batch: &[(Melody, f64)]) -> Result<Encoded, SurrogateError> {
        if batch.is_empty() {
            return Err(SurrogateError::EmptyData);
        }
        batch
            .iter()
            .map(|(m, target)| {
                if !(0.0..=SCORE_SCALE).contains(target) {
                    return Err(SurrogateError::TargetOutOfRange(*target));
                }
                Ok((self.encode(m)?, target / SCORE_SCALE))
            })
            .collect()
    }

    /// Loss on targets scaled to `[0, 1]`.
    fn normalized_loss(&self, encoded: &[(Vec<usize>, f64)]) -> f64 {
        let fw = self.cell(Direction::Forward);
        let bw = self.cell(Direction::Backward);
        let sum: f64 = encoded
            .iter()
            .map(|(inputs, target)| {
                let hf = fw.run(inputs.iter().copied());
                let hb = bw.run(inputs.iter().rev().copied());
                let e = sigmoid(self.readout(&hf, &hb)) - target;
                e * e
            })
            .sum();
        sum / encoded.len() as f64
    }

    /// Mean squared error (score units squared) without gradients.
    pub fn mse(&self, batch: &[(Melody, f64)]) -> Result<f64, SurrogateError> {
        let encoded = self.encode_batch(batch)?;
        Ok(self.normalized_loss(&encoded) * SCORE_SCALE * SCORE_SCALE)
    }

    /// Full-batch training for `config.epochs` steps on a copy of this model.
    ///
    /// The loss trace holds the mse before each update.
    pub fn train(
        &self,
        data: &[(Melody, f64)],
        config: &TrainConfig,
    ) -> Result<(SurrogateModel, TrainReport), SurrogateError> {
        config.validate()?;
        let encoded = self.encode_batch(data)?;
        let (train_set, holdout) = split_holdout(encoded, config);
        if train_set.is_empty() {
            return Err(SurrogateError::EmptyData);
        }
        let mut model = self.clone();
        let mut report = TrainReport {
            loss_trace: Vec::with_capacity(config.epochs),
            holdout_trace: holdout.as_ref().map(|_| Vec::with_capacity(config.epochs)),
        };
        let scale = SCORE_SCALE * SCORE_SCALE;
        let mut m1 = vec![0.0; model.params.len()];
        let mut m2 = vec![0.0; model.params.len()];
        let chunks = batch::chunk(&train_set);
        let mut workspace = batch::Workspace::<f32>::default();

        for epoch in 0..config.epochs {
            let (loss, mut grad) = batch::loss_and_gradients(&model.params, model.layout(), &chunks, &mut workspace);
            let mse = loss * scale;
            if !mse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(SurrogateError::DivergenceDetected { epoch, mse });
            }
            report.loss_trace.push(mse);
            if let (Some(h), Some(trace)) = (&holdout, report.holdout_trace.as_mut()) {
                trace.push(model.normalized_loss(h) * scale);
            }

            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if config.clip_norm > 0.0 && norm > config.clip_norm {
                let s = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            match config.optimizer {
                Optimizer::Sgd => axpy(-config.learning_rate, &grad, &mut model.params),
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let t = (epoch + 1) as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((p, g), a), b) in model.params.iter_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
                        *a = beta1 * *a + (1.0 - beta1) * g;
                        *b = beta2 * *b + (1.0 - beta2) * g * g;
                        *p -= config.learning_rate * (*a / c1) / ((*b / c2).sqrt() + epsilon);
                    }
                }
            }
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(SurrogateError::DivergenceDetected { epoch, mse });
            }
        }
        Ok((model, report))
    }

    /// Wraps [`forward`](Self::forward) as a GA fitness function.
    pub fn as_fitness(&self) -> impl Fn(&Melody) -> Result<f64, SurrogateError> + Send + Sync + '_ {
        move |m| self.forward(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        let file = ModelFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            vocab: self.alphabet.len(),
            hidden: self.hidden,
            alphabet: self.alphabet.clone(),
            params: self.params.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| SurrogateError::Format(e.to_string()))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SurrogateModel, SurrogateError> {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| SurrogateError::Format(e.to_string()))?;
        if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
            return Err(SurrogateError::Format(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        if file.vocab != file.alphabet.len() {
            return Err(SurrogateError::Format("alphabet length does not match vocab".into()));
        }
        let mut model = SurrogateModel::zeros(file.alphabet, file.hidden);
        if file.params.len() != model.params.len() {
            return Err(SurrogateError::Format(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                file.params.len()
            )));
        }
        model.params = file.params;
        Ok(model)
    }
}

/// Encoded melodies paired with their normalized targets.
type Encoded = Vec<(Vec<usize>, f64)>;

fn split_holdout(mut encoded: Encoded, config: &TrainConfig) -> (Encoded, Option<Encoded>) {
    let count = (encoded.len() as f64 * config.holdout_fraction).floor() as usize;
    if count == 0 {
        return (encoded, None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_401d);
    // Fisher-Yates; the first `count` entries become the holdout
    for i in (1..encoded.len()).rev() {
        let j = rng.random_range(0..=i);
        encoded.swap(i, j);
    }
    let train = encoded.split_off(count);
    (train, Some(encoded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abc::tokenize;

    fn melody(s: &str) -> Melody {
        Melody::from_abc_body(s).unwrap()
    }

    fn alphabet(s: &str) -> Vec<Token> {
        tokenize(s).unwrap()
    }

    fn small_config(hidden: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_size: hidden,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_model_predicts_fifty() {
        let model = SurrogateModel::zeros(alphabet("CDEF"), 5);
        for m in ["C", "CDEF", "FFFFFFFFFF"] {
            assert_eq!(model.forward(&melody(m)).unwrap(), 50.0);
        }
    }

    /// Scalar LSTM step by hand for H = 1, V = 1.
    #[test]
    fn single_unit_matches_scalar_recurrence() {
        let mut model = SurrogateModel::zeros(alphabet("C"), 1);
        // forward cell, rows i f o g, columns [x, h]
        let (w, b) = model.cell_mut(Direction::Forward);
        w.copy_from_slice(&[0.5, 0.0, -0.3, 0.0, 0.8, 0.0, 1.2, 0.0]);
        b.copy_from_slice(&[0.1, 0.2, -0.1, 0.05]);
        let (w, b) = model.cell_mut(Direction::Backward);
        w.copy_from_slice(&[0.2, 0.0, 0.4, 0.0, -0.6, 0.0, 0.9, 0.0]);
        b.copy_from_slice(&[0.0, 0.0, 0.3, -0.2]);
        model.output_weights_mut().copy_from_slice(&[1.5, -0.7]);
        *model.output_bias_mut() = 0.25;

        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let cell = |wi: f64, wf: f64, wo: f64, wg: f64, bi: f64, bf: f64, bo: f64, bg: f64| {
            let _ = (wf, bf); // forget gate multiplies c_prev = 0
            let i = s(wi + bi);
            let o = s(wo + bo);
            let g = (wg + bg).tanh();
            let c = i * g;
            o * c.tanh()
        };
        let hf = cell(0.5, -0.3, 0.8, 1.2, 0.1, 0.2, -0.1, 0.05);
        let hb = cell(0.2, 0.4, -0.6, 0.9, 0.0, 0.0, 0.3, -0.2);
        let expected = 100.0 * s(1.5 * hf - 0.7 * hb + 0.25);
        let got = model.forward(&melody("C")).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn backward_cell_reads_the_reversed_melody() {
        let model = SurrogateModel::init(alphabet("CDEFG"), &small_config(4, 11));
        let m = melody("CDEGGFC");
        let (_, hb) = model.final_states(&m).unwrap();
        let reversed: Vec<usize> = model.encode(&m).unwrap().into_iter().rev().collect();
        assert_eq!(hb, model.run_cell(Direction::Backward, &reversed));
        // and it differs from reading left to right
        let inputs = model.encode(&m).unwrap();
        assert_ne!(hb, model.run_cell(Direction::Backward, &inputs));
    }

    #[test]
    fn masking_backward_output_gives_unidirectional_readout() {
        let mut model = SurrogateModel::init(alphabet("CDEFG"), &small_config(4, 12));
        let h = model.hidden_size();
        model.output_weights_mut()[h..].fill(0.0);
        let m = melody("GFEDC");
        let inputs = model.encode(&m).unwrap();
        let hf = model.run_cell(Direction::Forward, &inputs);
        let wf = model.output_weights_mut()[..h].to_vec();
        let b = *model.output_bias_mut();
        let y: f64 = wf.iter().zip(&hf).map(|(a, b)| a * b).sum::<f64>() + b;
        let expected = 100.0 / (1.0 + (-y).exp());
        assert!((model.forward(&m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn unknown_tokens_and_bad_batches() {
        let model = SurrogateModel::zeros(alphabet("CD"), 2);
        assert!(matches!(
            model.forward(&melody("CE")),
            Err(SurrogateError::UnknownToken(_))
        ));
        assert!(matches!(model.forward(&melody("")), Err(SurrogateError::EmptyMelody)));
        assert!(matches!(model.loss_and_gradients(&[]), Err(SurrogateError::EmptyData)));
        assert!(matches!(
            model.loss_and_gradients(&[(melody("C"), 101.0)]),
            Err(SurrogateError::TargetOutOfRange(_))
        ));
    }

    #[test]
    fn perfect_predictions_have_zero_output_gradient() {
        let model = SurrogateModel::init(alphabet("CDEF"), &small_config(3, 2));
        let batch: Vec<(Melody, f64)> = ["CDEF", "FEDC"]
            .iter()
            .map(|s| {
                let m = melody(s);
                let p = model.forward(&m).unwrap();
                (m, p)
            })
            .collect();
        let (mse, grad) = model.loss_and_gradients(&batch).unwrap();
        assert!(mse < 1e-20);
        assert!(grad.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn doubling_residuals_quadruples_mse() {
        let model = SurrogateModel::zeros(alphabet("CDEF"), 3);
        // prediction is exactly 50 everywhere
        let a = [(melody("CD"), 40.0), (melody("EF"), 57.0)];
        let b = [(melody("CD"), 30.0), (melody("EF"), 64.0)];
        let mse_a = model.mse(&a).unwrap();
        let mse_b = model.mse(&b).unwrap();
        assert!((mse_b - 4.0 * mse_a).abs() < 1e-9);
        assert!((mse_a - (100.0 + 49.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let model = SurrogateModel::init(alphabet("CDEF"), &small_config(3, 4));
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..small_config(3, 4)
        };
        let (trained, report) = model.train(&[(melody("CDEF"), 80.0)], &config).unwrap();
        assert_eq!(trained.params(), model.params());
        assert_eq!(report.loss_trace.len(), 1);
    }

    #[test]
    fn training_replays_with_seed() {
        let config = TrainConfig {
            epochs: 20,
            ..small_config(4, 9)
        };
        let data = [(melody("CDEF"), 80.0), (melody("FEDC"), 20.0)];
        let run = || {
            SurrogateModel::init(alphabet("CDEF"), &config)
                .train(&data, &config)
                .unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert!(r1.final_mse() < r1.loss_trace[0]);
    }

    #[test]
    fn sgd_reduces_the_loss() {
        let config = TrainConfig {
            epochs: 200,
            optimizer: Optimizer::Sgd,
            learning_rate: 0.5,
            ..small_config(4, 9)
        };
        let data = [(melody("CDEF"), 90.0), (melody("FEDC"), 10.0)];
        let (_, report) = SurrogateModel::init(alphabet("CDEF"), &config)
            .train(&data, &config)
            .unwrap();
        assert!(report.final_mse() < report.loss_trace[0]);
    }

    #[test]
    fn non_finite_loss_is_reported_as_divergence() {
        let config = TrainConfig {
            epochs: 5,
            ..small_config(3, 1)
        };
        let mut model = SurrogateModel::init(alphabet("CDEF"), &config);
        *model.output_bias_mut() = f64::NAN;
        let data = [(melody("CDEF"), 90.0)];
        assert!(matches!(
            model.train(&data, &config),
            Err(SurrogateError::DivergenceDetected { epoch: 0, .. })
        ));
    }

    #[test]
    fn holdout_split_reports_a_second_trace() {
        let config = TrainConfig {
            epochs: 3,
            holdout_fraction: 0.5,
            ..small_config(3, 1)
        };
        let data: Vec<(Melody, f64)> = ["CD", "DC", "CC", "DD"].iter().map(|s| (melody(s), 50.0)).collect();
        let (_, report) = SurrogateModel::init(alphabet("CD"), &config)
            .train(&data, &config)
            .unwrap();
        assert_eq!(report.holdout_trace.unwrap().len(), 3);
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = SurrogateModel::init(alphabet("^c'2zG,_B,,4"), &small_config(6, 3));
        model.save(&path).unwrap();
        let loaded = SurrogateModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        let m = melody("zG,^c'2_B,,4z");
        assert_eq!(
            loaded.forward(&m).unwrap().to_bits(),
            model.forward(&m).unwrap().to_bits()
        );
    }

    #[test]
    fn load_rejects_wrong_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(
            &path,
            r#"{"format":"melodyevo-bilstm","version":1,"vocab":1,"hidden":1,"alphabet":["C"],"params":[0.0]}"#,
        )
        .unwrap();
        assert!(matches!(SurrogateModel::load(&path), Err(SurrogateError::Format(_))));
    }

    #[test]
    fn batched_loss_matches_per_melody_forward() {
        let model = SurrogateModel::init(alphabet("CDEFGAB"), &small_config(5, 21));
        let batch: Vec<(Melody, f64)> = ["CDEFG", "GAB", "BAGFEDC", "CCCCC", "EGB"]
            .iter()
            .enumerate()
            .map(|(i, s)| (melody(s), 20.0 * i as f64))
            .collect();
        let (batched, _) = model.loss_and_gradients(&batch).unwrap();
        let per_melody: f64 = batch
            .iter()
            .map(|(m, y)| (model.forward(m).unwrap() - y).powi(2))
            .sum::<f64>()
            / batch.len() as f64;
        assert!((batched - per_melody).abs() < 1e-9, "{batched} vs {per_melody}");
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut model = SurrogateModel::init(alphabet("CD"), &small_config(3, 0));
        let (w, b) = model.cell_mut(Direction::Backward);
        assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
        assert!(w.iter().all(|x| x.abs() <= 0.08));
        assert!(b[..3].iter().all(|x| x.abs() <= 0.08));
    }
}
