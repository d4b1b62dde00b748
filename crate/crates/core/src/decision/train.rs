use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::DecisionModel;
use super::sampling::softmax_prefix;
use super::DecisionError;
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, StepOutcome};
use crate::perception::TokenSequence;

/// A guide sequence and the response the model should learn to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub guide: TokenSequence,
    pub response: TokenSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Per-epoch decay of the teacher-forcing probability.
    pub ss_decay: f64,
    pub ss_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-5,
            max_epochs: 60,
            patience: 10,
            ss_decay: 0.99,
            ss_floor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DecisionError> {
        let bad = |m: String| Err(DecisionError::InvalidTrainConfig(m));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(self.ss_decay > 0.0 && self.ss_decay <= 1.0) {
            return bad(format!(
                "scheduled-sampling decay {} outside (0, 1]",
                self.ss_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.ss_floor) {
            return bad(format!(
                "scheduled-sampling floor {} outside [0, 1]",
                self.ss_floor
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        Ok(())
    }

    /// Teacher-forcing probability at `epoch` (0-based).
    pub fn epsilon(&self, epoch: usize) -> f64 {
        self.ss_decay.powi(epoch as i32).max(self.ss_floor)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub skipped_steps: u64,
}

pub fn loss_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,epsilon\n");
    for s in curve {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.epoch, s.train_loss, s.val_loss, s.epsilon
        );
    }
    out
}

pub fn write_loss_csv(path: impl AsRef<Path>, curve: &[EpochStats]) -> Result<(), DecisionError> {
    let path = path.as_ref();
    std::fs::write(path, loss_csv(curve)).map_err(|e| DecisionError::io(path, e))
}

fn check_pair(model: &DecisionModel<f32>, pair: &TrainingPair) -> Result<(), DecisionError> {
    for seq in [&pair.guide, &pair.response] {
        if seq.k() != model.k() {
            return Err(DecisionError::AlphabetMismatch {
                model: model.k(),
                input: seq.k(),
            });
        }
    }
    if pair.response.is_empty() {
        return Err(DecisionError::EmptyStream);
    }
    model.layout(pair.guide.ids(), &pair.response.ids()[1..])?;
    Ok(())
}

/// Response inputs with each ground-truth token kept with probability
/// `epsilon` and otherwise replaced by a token sampled from the model's own
/// teacher-forced prediction for that position.
fn scheduled_inputs(
    model: &DecisionModel<f32>,
    pair: &TrainingPair,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, DecisionError> {
    let truth = &pair.response.ids()[..pair.response.len() - 1];
    if epsilon >= 1.0 {
        return Ok(truth.to_vec());
    }
    let logits = model.logits(pair.guide.ids(), truth)?;
    let cols = logits.dims2().1;
    truth
        .iter()
        .enumerate()
        .map(|(t, &gt)| {
            if rng.random::<f64>() < epsilon {
                return Ok(gt);
            }
            let row: Vec<f64> = logits.data()[t * cols..(t + 1) * cols]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let dist = softmax_prefix(&row, model.k());
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            for (id, p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Ok(id);
                }
            }
            Ok(model.k() - 1)
        })
        .collect()
}

/// Cross-entropy of one pair and, when `dropout_seed` is given, its gradient.
type Gradients = Vec<Vec<f32>>;

fn example_loss(
    model: &DecisionModel<f32>,
    pair: &TrainingPair,
    inputs: &[usize],
    dropout_seed: Option<u64>,
) -> Result<(f64, Option<Gradients>), DecisionError> {
    let mut g = match dropout_seed {
        Some(seed) => Graph::training(seed),
        None => Graph::new(),
    };
    let vars = if dropout_seed.is_some() {
        model.bind(&mut g)
    } else {
        model
            .params()
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect()
    };
    let logits = model.forward_vars(&mut g, &vars, pair.guide.ids(), inputs)?;
    let mask = vec![true; pair.response.len()];
    let loss = g.cross_entropy(logits, pair.response.ids(), &mask)?;
    let value = g.value(loss).data()[0] as f64;
    if dropout_seed.is_none() {
        return Ok((value, None));
    }
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    Ok((value, Some(grads)))
}

/// Mean teacher-forced cross-entropy in evaluation mode.
pub fn evaluate_loss(
    model: &DecisionModel<f32>,
    pairs: &[TrainingPair],
) -> Result<f64, DecisionError> {
    if pairs.is_empty() {
        return Err(DecisionError::EmptyStream);
    }
    let losses: Vec<Result<f64, DecisionError>> = pairs
        .par_iter()
        .map(|p| {
            let inputs = &p.response.ids()[..p.response.len() - 1];
            example_loss(model, p, inputs, None).map(|r| r.0)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / pairs.len() as f64)
}

/// Adam training with scheduled sampling and early stopping on validation
/// loss (training loss when `val` is empty). The best parameters are kept.
pub fn train(
    model: &mut DecisionModel<f32>,
    train_pairs: &[TrainingPair],
    val: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<TrainReport, DecisionError> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(DecisionError::EmptyStream);
    }
    for p in train_pairs.iter().chain(val) {
        check_pair(model, p)?;
    }
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().to_vec());

    for epoch in 0..cfg.max_epochs {
        let epsilon = cfg.epsilon(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let jobs: Vec<(usize, u64)> = batch.iter().map(|&i| (i, rng.random())).collect();
            let snapshot = &*model;
            let results: Vec<_> = jobs
                .par_iter()
                .map(|&(i, seed)| {
                    let pair = &train_pairs[i];
                    let mut item_rng = ChaCha8Rng::seed_from_u64(seed);
                    let inputs = scheduled_inputs(snapshot, pair, epsilon, &mut item_rng)?;
                    example_loss(snapshot, pair, &inputs, Some(item_rng.random()))
                })
                .collect();
            let mut grads: Vec<Vec<f32>> =
                model.params().iter().map(|p| vec![0.0; p.len()]).collect();
            let scale = 1.0 / batch.len() as f32;
            for (r, &(i, _)) in results.into_iter().zip(&jobs) {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(DecisionError::NonFiniteLoss {
                        epoch,
                        step,
                        item: i,
                    });
                }
                loss_sum += loss;
                for (acc, gi) in grads
                    .iter_mut()
                    .zip(g.expect("training pass returns gradients"))
                {
                    for (a, v) in acc.iter_mut().zip(gi) {
                        *a += v * scale;
                    }
                }
            }
            if adam_step(model.params_mut(), &grads, &mut state, &adam)?
                == StepOutcome::SkippedNonFinite
            {
                log::warn!("epoch {epoch} step {step}: non-finite gradient, update skipped");
            }
        }
        let train_loss = loss_sum / train_pairs.len() as f64;
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            evaluate_loss(model, val)?
        };
        let monitored = if val.is_empty() { train_loss } else { val_loss };
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            epsilon,
        });
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} eps {epsilon:.3}");
        if monitored < best.0 {
            best = (monitored, epoch, model.params().to_vec());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    model.params_mut().clone_from_slice(&best.2);
    Ok(TrainReport {
        curve,
        best_epoch: best.1,
        skipped_steps: state.skipped,
    })
}
