//! Mini-batch Adam training with dev-set model selection, ablations and grid search.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::classifier::{metrics, nll_loss, Metrics, MetricsError, Prediction};
use crate::config::{Ablation, ConfigError, RunConfig, SelectionMetric};
use crate::dataset::Dataset;
use crate::ingest::AspectInstance;
use crate::model::{Model, ModelDims};
use crate::numerics::{Gradients, NumericsError, ParamStore};
use crate::parallel::Exec;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("word vectors have width {found}, config asks for {expected}")]
    WordDim { expected: usize, found: usize },
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam step at time `t` (1-based), in place.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply `grads`. Frozen parameters and parameters without a gradient are untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        for (id, p) in store.iter_mut() {
            if !p.trainable || grads.get(id).is_none() {
                continue;
            }
            let cols = p.tensor.shape().last().copied().unwrap_or(1);
            let g = grads.dense(id, p.tensor.len(), cols);
            adam_update(
                p.tensor.values_mut(),
                &g,
                &mut self.m[id.0],
                &mut self.v[id.0],
                self.t,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            );
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    pub dev_f1: f64,
    /// Zero when wall-clock recording is off.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEvent {
    pub epoch: usize,
    pub batch: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbortEvent {
    pub epoch: usize,
    pub batch: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub clips: Vec<ClipEvent>,
    pub aborted: Vec<AbortEvent>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The best-dev model.
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Dropout/shuffle seed for `(seed, epoch)`.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Predict every instance and score against gold labels.
pub fn evaluate(model: &Model, instances: &[AspectInstance], exec: Exec) -> Result<(Metrics, Vec<Prediction>), TrainError> {
    let preds = exec.try_map(instances, |_, inst| model.predict(inst))?;
    let labels: Vec<_> = preds.iter().map(|p| p.label).collect();
    let golds: Vec<_> = instances.iter().map(|i| i.label).collect();
    Ok((metrics(&labels, &golds)?, preds))
}

/// Sum of per-instance losses and gradients over `batch`, folded in order.
pub fn batch_gradient(model: &Model, batch: &[&AspectInstance], rng_seed: Option<u64>, exec: Exec) -> Result<(f64, Gradients), NumericsError> {
    let parts = exec.try_map(batch, |i, inst| match rng_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            model.loss_and_grad(inst, Some(&mut rng))
        }
        None => model.loss_and_grad(inst, None),
    })?;
    let mut total = Gradients::new(model.params.len());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.merge(g);
    }
    Ok((loss, total))
}

fn score(m: &Metrics, by: SelectionMetric) -> f64 {
    match by {
        SelectionMetric::Accuracy => m.accuracy,
        SelectionMetric::MacroF1 => m.macro_f1,
    }
}

/// Train on `data.train`, selecting the epoch with the best dev score; ties go
/// to the lower mean dev NLL.
pub fn train(cfg: &RunConfig, data: &Dataset, exec: Exec) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.dev.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    if data.embeddings.dim() != cfg.word_dim {
        return Err(TrainError::WordDim {
            expected: cfg.word_dim,
            found: data.embeddings.dim(),
        });
    }
    let dims = ModelDims::from_config(cfg, data.vocab.len(), data.max_len);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(dims, Some(data.embeddings.vectors.clone()), &mut init_rng)?;
    let mut adam = Adam::new(cfg.learning_rate, &model.params);
    let mut log = TrainLog::default();
    let mut best: Option<(usize, Metrics, f64, ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.is_empty() {
                continue;
            }
            let batch: Vec<&AspectInstance> = chunk.iter().map(|&i| &data.train[i]).collect();
            let seed = epoch_seed(cfg.seed, epoch) ^ ((b as u64) << 40);
            let result = batch_gradient(&model, &batch, Some(seed), exec);
            let (loss, mut grads) = match result {
                Ok(r) if r.0.is_finite() && r.1.is_finite() => r,
                Ok(_) | Err(NumericsError::NonFinite(_)) => {
                    let reason = match result {
                        Err(e) => e.to_string(),
                        _ => "non-finite gradient".to_string(),
                    };
                    log::warn!("epoch {epoch}: aborting at batch {b}: {reason}");
                    log.aborted.push(AbortEvent { epoch, batch: b, reason });
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.global_norm();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                log::info!("epoch {epoch} batch {b}: clipped gradient norm {norm:.4} to {}", cfg.grad_clip);
                grads.scale(cfg.grad_clip / norm);
                log.clips.push(ClipEvent { epoch, batch: b, norm });
            }
            adam.step(&mut model.params, &grads);
            loss_sum += loss;
            seen += batch.len();
        }
        let (dev, preds) = evaluate(&model, &data.dev, exec)?;
        let dev_loss = preds.iter().zip(&data.dev).map(|(p, i)| nll_loss(p, i.label)).sum::<f64>() / preds.len() as f64;
        let seconds = if cfg.record_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            dev_acc: dev.accuracy,
            dev_f1: dev.macro_f1,
            seconds,
        });
        log::debug!("epoch {epoch}: loss {:.5} dev acc {:.4}", loss_sum / seen.max(1) as f64, dev.accuracy);
        let improved = match &best {
            None => true,
            Some((_, m, loss, _)) => {
                let (now, then) = (score(&dev, cfg.selection_metric), score(m, cfg.selection_metric));
                now > then || (now == then && dev_loss < *loss)
            }
        };
        if improved {
            best = Some((epoch, dev, dev_loss, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, dev_metrics, params) = match best {
        Some((e, m, _, p)) => (e, m, p),
        None => {
            let (m, _) = evaluate(&model, &data.dev, exec)?;
            (0, m, model.params.clone())
        }
    };
    model.params = params;
    log.best_epoch = best_epoch;
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        dims: model.dims.clone(),
        vocab: data.vocab.clone(),
        dev_metrics,
        best_epoch,
        params: model.params.clone(),
    };
    Ok(TrainOutcome { model, checkpoint, log })
}

/// Train with exactly one component removed.
pub fn ablate(cfg: &RunConfig, flag: Ablation, data: &Dataset, exec: Exec) -> Result<TrainOutcome, TrainError> {
    train(&cfg.with_ablation(flag)?, data, exec)
}

/// Values to try per field; an empty list keeps the template's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub hidden: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub dropout: Vec<f64>,
    pub aspect_dim: Vec<usize>,
    pub gamma: Vec<u32>,
    pub gru_layers: Vec<usize>,
    pub crf_heads: Vec<usize>,
    pub seed: Vec<u64>,
}

impl Grid {
    /// Cartesian product in field order, each candidate validated.
    pub fn candidates(&self, template: &RunConfig) -> Result<Vec<RunConfig>, ConfigError> {
        fn axis<T: Clone>(values: &[T], default: T) -> Vec<T> {
            if values.is_empty() {
                vec![default]
            } else {
                values.to_vec()
            }
        }
        let mut out = vec![template.clone()];
        macro_rules! expand {
            ($field:ident) => {
                out = out
                    .into_iter()
                    .flat_map(|c| {
                        axis(&self.$field, template.$field).into_iter().map(move |v| RunConfig { $field: v, ..c.clone() })
                    })
                    .collect();
            };
        }
        expand!(hidden);
        expand!(batch_size);
        expand!(dropout);
        expand!(aspect_dim);
        expand!(gamma);
        expand!(gru_layers);
        expand!(crf_heads);
        expand!(seed);
        let mut seen = std::collections::HashSet::new();
        out.retain(|c| seen.insert(c.canonical_json()));
        for c in &out {
            c.validate()?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub config: RunConfig,
    pub digest: String,
    pub dev_accuracy: f64,
    pub dev_macro_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub best: TrainOutcome,
    /// Sorted by dev accuracy, then dev macro-F1, both descending, then smaller hidden size.
    pub leaderboard: Vec<LeaderboardEntry>,
}

fn leaderboard_order(a: &LeaderboardEntry, b: &LeaderboardEntry) -> std::cmp::Ordering {
    b.dev_accuracy
        .total_cmp(&a.dev_accuracy)
        .then(b.dev_macro_f1.total_cmp(&a.dev_macro_f1))
        .then(a.config.hidden.cmp(&b.config.hidden))
}

/// Stable sort into leaderboard order.
pub fn rank(entries: &mut [LeaderboardEntry]) {
    entries.sort_by(leaderboard_order);
}

/// Train every candidate (in parallel under `exec`) and rank them.
pub fn grid_search(template: &RunConfig, grid: &Grid, data: &Dataset, exec: Exec) -> Result<GridOutcome, TrainError> {
    let candidates = grid.candidates(template)?;
    let mut outcomes = exec.try_map(&candidates, |_, cfg| train(cfg, data, Exec::Sequential))?;
    let mut entries: Vec<(usize, LeaderboardEntry)> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let c = &o.checkpoint;
            (
                i,
                LeaderboardEntry {
                    config: c.config.clone(),
                    digest: c.config.digest(),
                    dev_accuracy: c.dev_metrics.accuracy,
                    dev_macro_f1: c.dev_metrics.macro_f1,
                    best_epoch: c.best_epoch,
                },
            )
        })
        .collect();
    entries.sort_by(|(_, a), (_, b)| leaderboard_order(a, b));
    let best_index = entries[0].0;
    let best = outcomes.swap_remove(best_index);
    Ok(GridOutcome {
        best,
        leaderboard: entries.into_iter().map(|(_, e)| e).collect(),
    })
}
