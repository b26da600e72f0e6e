//! Softmax sentiment layer, negative log-likelihood, accuracy and macro-F1.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Polarity;
use crate::numerics::{dot, softmax, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

/// Probability floor applied before taking a log in [`nll_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no predictions to score")]
    Empty,
    #[error("{predictions} predictions for {golds} gold labels")]
    Length { predictions: usize, golds: usize },
}

/// Handles to `W` (`3 × d`) and `b` (`1 × 3`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, input: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weight: store.add("cls.weight", Tensor::uniform(vec![3, input], bound, rng)),
            bias: store.add("cls.bias", Tensor::uniform(vec![1, 3], bound, rng)),
        }
    }

    /// `1 × 3` logits `Wq + b` on the tape.
    pub fn logits(&self, tape: &mut Tape, q: Var) -> Result<Var, NumericsError> {
        let w = tape.param(self.weight)?;
        let b = tape.param(self.bias)?;
        let z = tape.matmul_nt(q, w)?;
        tape.add(z, b)
    }
}

/// Mean-free form of `-log softmax(logits)[gold]`, i.e. `logsumexp(z) - z_gold`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, gold: Polarity) -> Result<Var, NumericsError> {
    let lse = tape.log_sum_exp(logits)?;
    let picked = tape.select(logits, gold.index())?;
    tape.sub(lse, picked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// (positive, neutral, negative).
    pub probabilities: [f64; 3],
    pub label: Polarity,
    /// Yes-marginals per CRF head, empty when structured attention is ablated.
    pub head_marginals: Vec<Vec<f64>>,
}

impl Prediction {
    pub fn from_logits(logits: &[f64], head_marginals: Vec<Vec<f64>>) -> Result<Self, NumericsError> {
        if logits.len() != 3 {
            return Err(NumericsError::shape("prediction", &[logits.len()], &[3]));
        }
        let p = softmax(logits)?;
        let probabilities = [p[0], p[1], p[2]];
        Ok(Self {
            probabilities,
            label: argmax(&probabilities),
            head_marginals,
        })
    }
}

fn argmax(p: &[f64; 3]) -> Polarity {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    Polarity::ALL[best]
}

/// `softmax(W q + b)` in plain arithmetic.
pub fn predict(q: &[f64], weight: &Tensor, bias: &Tensor) -> Result<Prediction, NumericsError> {
    let (rows, cols) = weight.dims2()?;
    if rows != 3 || cols != q.len() || bias.len() != 3 {
        return Err(NumericsError::shape("predict", weight.shape(), &[q.len()]));
    }
    let logits: Vec<f64> = (0..3).map(|k| dot(weight.row_slice(k), q) + bias.values()[k]).collect();
    Prediction::from_logits(&logits, Vec::new())
}

/// `-log p_gold`, with `p_gold` floored at [`PROB_FLOOR`].
pub fn nll_loss(prediction: &Prediction, gold: Polarity) -> f64 {
    let p = prediction.probabilities[gold.index()];
    if p < PROB_FLOOR {
        log::warn!("gold probability {p:e} below floor; clamped to {PROB_FLOOR:e}");
    }
    -p.max(PROB_FLOOR).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Per-class F1 in (positive, neutral, negative) order.
    pub f1: [f64; 3],
}

/// Accuracy and macro-F1. A class whose precision or recall is undefined
/// contributes 0 for that component, so an absent class scores F1 = 0.
pub fn metrics(predictions: &[Polarity], golds: &[Polarity]) -> Result<Metrics, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::Length {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut tp = [0usize; 3];
    let mut predicted = [0usize; 3];
    let mut actual = [0usize; 3];
    for (&p, &g) in predictions.iter().zip(golds) {
        predicted[p.index()] += 1;
        actual[g.index()] += 1;
        if p == g {
            tp[p.index()] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut f1 = [0.0; 3];
    for k in 0..3 {
        let precision = ratio(tp[k], predicted[k]);
        let recall = ratio(tp[k], actual[k]);
        f1[k] = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    Ok(Metrics {
        accuracy: tp.iter().sum::<usize>() as f64 / golds.len() as f64,
        macro_f1: f1.iter().sum::<f64>() / 3.0,
        f1,
    })
}
