//! CNN-LSTM risk scorer over event sequences.
//!
//! Architecture: three valid 1-D convolutions (relu after each), two stacked
//! LSTM layers, the final hidden state of the top layer into a single-logit
//! dense head, sigmoid output. Layer widths are configuration; the layer
//! count is fixed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::GroundTruth;
use crate::nn::{
    self, conv1d, conv1d_output_len, sigmoid, xavier_uniform, Adam, CheckpointError, DenseParams, Gradients,
    Graph, LstmLayerIds, NnError, PackedLstm, Optimizer, ParamId, ParamStore, Tensor,
};
use crate::rng::SplitMix64;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqModelConfig {
    pub conv_channels: [usize; 3],
    pub kernel_widths: [usize; 3],
    pub lstm_hidden: [usize; 2],
    pub input_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl SeqModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            conv_channels: [16, 16, 32],
            kernel_widths: [5, 3, 3],
            lstm_hidden: [32, 32],
            input_dim,
            learning_rate: 3e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }

    /// Shortest sequence that survives the three valid convolutions.
    pub fn min_len(&self) -> usize {
        self.kernel_widths.iter().map(|k| k - 1).sum::<usize>() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    /// `T × k`, chronological.
    pub sequence: Vec<Vec<f64>>,
    pub label: GroundTruth,
}

impl SequenceSample {
    pub fn target(&self) -> f64 {
        match self.label {
            GroundTruth::Violation => 1.0,
            GroundTruth::Compliant => 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("sequence of length {got} shorter than minimum {min}")]
    SequenceTooShort { got: usize, min: usize },
    #[error("training split contains a single class")]
    DegenerateLabels,
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("step {step} has {got} features, model expects {expected}")]
    DimensionMismatch { step: usize, expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
struct ConvIds {
    kernel: ParamId,
    bias: ParamId,
}

/// Tape-free copies of the weights for fast scoring.
#[derive(Clone, Debug, PartialEq)]
struct Frozen {
    conv: Vec<(Tensor, Vec<f64>)>,
    cells: Vec<PackedLstm>,
    head_w: Vec<f64>,
    head_b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    config: SeqModelConfig,
    params: ParamStore,
    conv: Vec<ConvIds>,
    lstm: Vec<LstmLayerIds>,
    head: DenseParams,
    frozen: Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept (highest validation accuracy).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.get(self.best_epoch)
    }
}

impl SequenceModel {
    /// Seeded Xavier initialization.
    pub fn new(config: SeqModelConfig) -> Self {
        let mut rng = SplitMix64::new(config.seed);
        let mut params = ParamStore::new();
        let mut conv = Vec::with_capacity(3);
        let mut in_ch = config.input_dim;
        for (layer, (&out_ch, &kw)) in config.conv_channels.iter().zip(&config.kernel_widths).enumerate() {
            let kernel = params.add(
                format!("conv{}.kernel", layer + 1),
                xavier_uniform(&mut rng, &[kw, in_ch, out_ch], kw * in_ch, kw * out_ch),
            );
            let bias = params.add(format!("conv{}.bias", layer + 1), Tensor::vector(vec![0.0; out_ch]));
            conv.push(ConvIds { kernel, bias });
            in_ch = out_ch;
        }
        let mut lstm = Vec::with_capacity(2);
        let mut input = in_ch;
        for (layer, &hidden) in config.lstm_hidden.iter().enumerate() {
            lstm.push(LstmLayerIds::register(&mut params, &format!("lstm{}", layer + 1), input, hidden, &mut rng));
            input = hidden;
        }
        let head = DenseParams::register(&mut params, "head", input, 1, &mut rng);
        Self::assemble(config, params, conv, lstm, head)
    }

    fn assemble(
        config: SeqModelConfig,
        params: ParamStore,
        conv: Vec<ConvIds>,
        lstm: Vec<LstmLayerIds>,
        head: DenseParams,
    ) -> Self {
        let frozen = freeze(&params, &conv, &lstm, &head);
        Self { config, params, conv, lstm, head, frozen }
    }

    pub fn config(&self) -> &SeqModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access for tests and tooling; call [`SequenceModel::refresh`] afterwards.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn refresh(&mut self) {
        self.frozen = freeze(&self.params, &self.conv, &self.lstm, &self.head);
    }

    /// Parameter-name prefixes, one per layer.
    pub fn layer_names(&self) -> Vec<String> {
        vec!["conv1".into(), "conv2".into(), "conv3".into(), "lstm1".into(), "lstm2".into(), "head".into()]
    }

    fn check_sequence(&self, sequence: &[Vec<f64>]) -> Result<(), SequenceError> {
        let min = self.config.min_len();
        if sequence.len() < min {
            return Err(SequenceError::SequenceTooShort { got: sequence.len(), min });
        }
        for (step, row) in sequence.iter().enumerate() {
            if row.len() != self.config.input_dim {
                return Err(SequenceError::DimensionMismatch { step, expected: self.config.input_dim, got: row.len() });
            }
        }
        Ok(())
    }

    /// Head logit without the tape.
    pub fn logit(&self, sequence: &[Vec<f64>]) -> Result<f64, SequenceError> {
        self.check_sequence(sequence)?;
        let f = &self.frozen;
        let mut x = Tensor::matrix(sequence.len(), self.config.input_dim, sequence.concat())?;
        for (kernel, bias) in &f.conv {
            let mut y = conv1d(&x, kernel, 1)?;
            let cols = bias.len();
            for (i, v) in y.data_mut().iter_mut().enumerate() {
                *v = (*v + bias[i % cols]).max(0.0);
            }
            x = y;
        }
        let steps = x.shape()[0];
        let mut hs: Vec<Vec<f64>> = f.cells.iter().map(|c| vec![0.0; c.hidden()]).collect();
        let mut cs = hs.clone();
        let mut pre = Vec::new();
        let mut input = Vec::new();
        for t in 0..steps {
            input.clear();
            input.extend_from_slice(x.row(t));
            for (layer, cell) in f.cells.iter().enumerate() {
                cell.step(&input, &mut hs[layer], &mut cs[layer], &mut pre)?;
                input.clone_from(&hs[layer]);
            }
        }
        let top = hs.last().expect("two lstm layers");
        let z = f.head_b + f.head_w.iter().zip(top).map(|(a, b)| a * b).sum::<f64>();
        if !z.is_finite() {
            return Err(NnError::NonFinite("risk_score").into());
        }
        Ok(z)
    }

    /// Probability of violation, strictly inside (0, 1) for finite logits.
    pub fn risk_score(&self, sequence: &[Vec<f64>]) -> Result<f64, SequenceError> {
        self.logit(sequence).map(sigmoid)
    }

    fn record_forward(&self, g: &mut Graph<'_>, sequence: &[Vec<f64>]) -> Result<nn::NodeId, SequenceError> {
        self.check_sequence(sequence)?;
        let mut x = g.input(Tensor::matrix(sequence.len(), self.config.input_dim, sequence.concat())?)?;
        for ids in &self.conv {
            let k = g.param(ids.kernel);
            let b = g.param(ids.bias);
            let y = g.conv1d(x, k, 1)?;
            let y = g.add_row_bias(y, b)?;
            x = g.relu(y)?;
        }
        let steps = g.value(x).shape()[0];
        let mut state: Vec<(nn::NodeId, nn::NodeId)> = Vec::with_capacity(self.lstm.len());
        for layer in &self.lstm {
            let h = g.input(Tensor::vector(vec![0.0; layer.hidden]))?;
            let c = g.input(Tensor::vector(vec![0.0; layer.hidden]))?;
            state.push((h, c));
        }
        for t in 0..steps {
            let mut input = g.row(x, t)?;
            for (layer, ids) in self.lstm.iter().enumerate() {
                let (h, c) = state[layer];
                let next = ids.step(g, input, h, c)?;
                state[layer] = next;
                input = next.0;
            }
        }
        let top = state.last().expect("two lstm layers").0;
        Ok(self.head.forward(g, top)?)
    }

    /// Mean binary cross-entropy gradients over `batch`, accumulated into `grads`.
    /// Returns the summed loss.
    fn accumulate(&self, batch: &[&SequenceSample], grads: &mut Gradients) -> Result<f64, SequenceError> {
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for sample in batch {
            let mut g = Graph::new(&self.params);
            let logit = self.record_forward(&mut g, &sample.sequence)?;
            let loss = g.bce_with_logits(logit, sample.target())?;
            total += g.value(loss).item();
            g.backward_into(loss, grads, scale)?;
        }
        Ok(total)
    }

    /// Gradients of the mean loss over `batch`, without updating weights.
    pub fn batch_gradients(&self, batch: &[SequenceSample]) -> Result<Gradients, SequenceError> {
        let mut grads = Gradients::zeros_for(&self.params);
        let refs: Vec<&SequenceSample> = batch.iter().collect();
        self.accumulate(&refs, &mut grads)?;
        Ok(grads)
    }

    /// Mean loss over `batch` computed on the tape (used for gradient checks).
    pub fn batch_loss(&self, batch: &[SequenceSample]) -> Result<f64, SequenceError> {
        let mut total = 0.0;
        for sample in batch {
            let mut g = Graph::new(&self.params);
            let logit = self.record_forward(&mut g, &sample.sequence)?;
            let loss = g.bce_with_logits(logit, sample.target())?;
            total += g.value(loss).item();
        }
        Ok(total / batch.len() as f64)
    }

    /// Accuracy at threshold 0.5.
    pub fn accuracy(&self, samples: &[SequenceSample]) -> Result<f64, SequenceError> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for s in samples {
            let predicted_violation = self.risk_score(&s.sequence)? >= 0.5;
            if predicted_violation == (s.label == GroundTruth::Violation) {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<(), SequenceError> {
        nn::save_checkpoint(dir, &self.params)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(&self.config)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SequenceError> {
        let config: SeqModelConfig = serde_json::from_slice(&fs::read(dir.join(CONFIG_FILE))?)?;
        let params = nn::load_checkpoint(dir)?;
        let mut conv = Vec::with_capacity(3);
        for layer in 1..=3 {
            let find = |suffix: &str| {
                let name = format!("conv{layer}.{suffix}");
                params.id(&name).ok_or(NnError::UnknownParam(name))
            };
            conv.push(ConvIds { kernel: find("kernel")?, bias: find("bias")? });
        }
        let lstm = vec![LstmLayerIds::lookup(&params, "lstm1")?, LstmLayerIds::lookup(&params, "lstm2")?];
        let head = DenseParams::lookup(&params, "head")?;
        Ok(Self::assemble(config, params, conv, lstm, head))
    }
}

fn freeze(params: &ParamStore, conv: &[ConvIds], lstm: &[LstmLayerIds], head: &DenseParams) -> Frozen {
    Frozen {
        conv: conv.iter().map(|c| (params.get(c.kernel).clone(), params.get(c.bias).data().to_vec())).collect(),
        cells: lstm.iter().map(|l| PackedLstm::new(&l.cell(params))).collect(),
        head_w: params.get(head.w).data().to_vec(),
        head_b: params.get(head.b).item(),
    }
}

/// Trains with Adam on mini-batches of mean binary cross-entropy.
pub fn train_sequence_model(
    config: SeqModelConfig,
    train: &[SequenceSample],
    valid: &[SequenceSample],
) -> Result<(SequenceModel, TrainHistory), SequenceError> {
    if train.is_empty() {
        return Err(SequenceError::EmptySplit("train"));
    }
    if valid.is_empty() {
        return Err(SequenceError::EmptySplit("valid"));
    }
    let positives = train.iter().filter(|s| s.label == GroundTruth::Violation).count();
    if positives == 0 || positives == train.len() {
        return Err(SequenceError::DegenerateLabels);
    }
    let mut model = SequenceModel::new(config.clone());
    let mut rng = SplitMix64::new(config.seed).fork(0x5EC);
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = Gradients::zeros_for(&model.params);
    let mut history = TrainHistory::default();
    let batch_size = config.batch_size.max(1);
    let mut best: Option<(f64, SequenceModel)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &train[i]).collect();
            grads.zero();
            epoch_loss += model.accumulate(&batch, &mut grads)?;
            opt.step(&mut model.params, &grads);
        }
        model.refresh();
        let train_loss = epoch_loss / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(NnError::NonFinite("training loss").into());
        }
        let valid_accuracy = model.accuracy(valid)?;
        log::debug!("epoch {epoch}: loss {train_loss:.5} valid acc {valid_accuracy:.4}");
        history.epochs.push(EpochStats { epoch, train_loss, valid_accuracy });
        if best.as_ref().is_none_or(|(acc, _)| valid_accuracy > *acc) {
            history.best_epoch = epoch;
            best = Some((valid_accuracy, model.clone()));
        }
    }
    Ok((best.map_or(model, |(_, m)| m), history))
}

/// Output length after the conv stack for an input of `len` steps.
pub fn conv_output_len(config: &SeqModelConfig, len: usize) -> Option<usize> {
    config.kernel_widths.iter().try_fold(len, |l, &k| conv1d_output_len(l, k, 1))
}
