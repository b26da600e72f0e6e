//! The assembled classifier: encoder, CRF heads and softmax layer over one
//! [`ParamStore`].

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::classifier::{cross_entropy, ClassifierParams, Prediction};
use crate::config::{Ablation, RunConfig};
use crate::crf_attn::{multi_head, ChainPosterior, HeadParams, MarginalExport};
use crate::encoder::{apply_decay, bigru_encode, embed_input, DecaySpec, EncoderParams};
use crate::ingest::{AspectInstance, Vocabulary};
use crate::numerics::{Gradients, NumericsError, ParamStore, Tape, Tensor, Var};

/// Everything needed to lay out the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub aspect_dim: usize,
    pub hidden: usize,
    pub gru_layers: usize,
    pub crf_heads: usize,
    pub decay: DecaySpec,
    pub dropout: f64,
    pub ablation: Option<Ablation>,
    pub shared_transitions: bool,
    pub embeddings_trainable: bool,
}

impl ModelDims {
    pub fn from_config(cfg: &RunConfig, vocab_size: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            word_dim: cfg.word_dim,
            aspect_dim: cfg.aspect_dim,
            hidden: cfg.hidden,
            gru_layers: cfg.gru_layers,
            crf_heads: cfg.crf_heads,
            decay: DecaySpec::new(cfg.effective_gamma(), max_len),
            dropout: cfg.dropout,
            ablation: cfg.ablation(),
            shared_transitions: cfg.shared_transitions,
            embeddings_trainable: cfg.embeddings_trainable,
        }
    }

    pub fn attention(&self) -> bool {
        self.ablation != Some(Ablation::Attention)
    }

    /// Width of the sentence vector fed to the classifier.
    pub fn sentence_dim(&self) -> usize {
        if self.attention() {
            self.crf_heads * 2 * self.hidden
        } else {
            2 * self.hidden
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ParamStore,
    pub encoder: EncoderParams,
    pub heads: Vec<HeadParams>,
    pub classifier: ClassifierParams,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub heads: Vec<ChainPosterior>,
    pub r: Var,
}

impl Model {
    /// Lay out and initialize all parameters. `word_vectors` defaults to a
    /// uniform `[-0.1, 0.1]` draw.
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, word_vectors: Option<Tensor>, rng: &mut R) -> Result<Self, NumericsError> {
        let words = match word_vectors {
            Some(t) => {
                if t.shape() != [dims.vocab_size, dims.word_dim] {
                    return Err(NumericsError::shape("word vectors", t.shape(), &[dims.vocab_size, dims.word_dim]));
                }
                t
            }
            None => Tensor::uniform(vec![dims.vocab_size, dims.word_dim], 0.1, rng),
        };
        let mut params = ParamStore::new();
        let mut encoder = EncoderParams::init(&mut params, words, dims.aspect_dim, dims.hidden, dims.gru_layers, rng);
        encoder.shared_indicator = dims.ablation == Some(Ablation::Indicator);
        params.set_trainable(encoder.word, dims.embeddings_trainable);
        let heads = if dims.attention() {
            HeadParams::init_all(&mut params, dims.crf_heads, 2 * dims.hidden, dims.shared_transitions, rng)
        } else {
            Vec::new()
        };
        let classifier = ClassifierParams::init(&mut params, dims.sentence_dim(), rng);
        Ok(Self {
            dims,
            params,
            encoder,
            heads,
            classifier,
        })
    }

    /// Record the forward pass for `inst`. Dropout is active iff `dropout_rng` is given.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        inst: &AspectInstance,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput, NumericsError> {
        let p = self.dims.dropout;
        let mut drop = |tape: &mut Tape<'p>, v: Var| match dropout_rng.as_deref_mut() {
            Some(rng) => tape.dropout(v, p, rng, true),
            None => Ok(v),
        };
        let x = embed_input(tape, &self.encoder, inst)?;
        let x = drop(tape, x)?;
        let h = bigru_encode(tape, &self.encoder, x)?;
        let h = drop(tape, h)?;
        let r = apply_decay(tape, h, inst, &self.dims.decay)?;
        let (q, heads) = if self.dims.attention() {
            let out = multi_head(tape, r, &self.heads)?;
            (out.q, out.heads)
        } else {
            let n = inst.len();
            let mean = tape.constant_row(vec![1.0 / n as f64; n]);
            (tape.matmul(mean, r)?, Vec::new())
        };
        let logits = self.classifier.logits(tape, q)?;
        Ok(ForwardOutput { logits, heads, r })
    }

    /// Negative log-likelihood of the gold label and its gradients.
    pub fn loss_and_grad(&self, inst: &AspectInstance, dropout_rng: Option<&mut dyn RngCore>) -> Result<(f64, Gradients), NumericsError> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, inst, dropout_rng)?;
        let loss = cross_entropy(&mut tape, out.logits, inst.label)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(format!("loss {value}")));
        }
        Ok((value, tape.backward(loss)?))
    }

    /// Loss only, without dropout.
    pub fn loss(&self, inst: &AspectInstance) -> Result<f64, NumericsError> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, inst, None)?;
        let loss = cross_entropy(&mut tape, out.logits, inst.label)?;
        Ok(tape.scalar(loss))
    }

    /// Evaluation-mode prediction, carrying each head's Yes-marginals.
    pub fn predict(&self, inst: &AspectInstance) -> Result<Prediction, NumericsError> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, inst, None)?;
        let marginals = out.heads.iter().map(|h| tape.value(h.yes).to_vec()).collect();
        Prediction::from_logits(tape.value(out.logits), marginals)
    }

    /// Heatmap record for `inst`.
    pub fn explain(&self, inst: &AspectInstance, vocab: &Vocabulary, words: Option<&[String]>) -> Result<(Prediction, MarginalExport), NumericsError> {
        let prediction = self.predict(inst)?;
        let tokens = match words {
            Some(w) => w.to_vec(),
            None => inst
                .tokens
                .iter()
                .map(|&id| vocab.token(id).unwrap_or("<unk>").to_string())
                .collect(),
        };
        let export = MarginalExport {
            tokens,
            aspect_span: [inst.aspect_start, inst.aspect_end],
            per_head_marginals: prediction.head_marginals.clone(),
        };
        Ok((prediction, export))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Polarity;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro(ablation: Option<Ablation>) -> (Model, AspectInstance) {
        let dims = ModelDims {
            vocab_size: 8,
            word_dim: 3,
            aspect_dim: 2,
            hidden: 2,
            gru_layers: 1,
            crf_heads: 2,
            decay: DecaySpec::new(2, 6),
            dropout: 0.5,
            ablation,
            shared_transitions: false,
            embeddings_trainable: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut model = Model::new(dims, None, &mut rng).unwrap();
        // Move CRF potentials off their zero init so every path carries signal.
        for (_, p) in model.params.iter_mut() {
            if p.name.contains("transitions") || p.name.ends_with(".start") || p.name.ends_with(".end") {
                p.tensor.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
            }
        }
        let inst = AspectInstance {
            tokens: vec![2, 5, 3, 7],
            aspect_start: 1,
            aspect_end: 2,
            label: Polarity::Negative,
            raw_text: String::new(),
        };
        (model, inst)
    }

    #[test]
    fn gradients_pass_check_for_each_variant() {
        for ablation in [None, Some(Ablation::Indicator), Some(Ablation::Attention)] {
            let (model, inst) = micro(ablation);
            let f = |store: &ParamStore| {
                let m = Model {
                    params: store.clone(),
                    ..model.clone()
                };
                m.loss_and_grad(&inst, None)
            };
            let report = grad_check(&model.params, f, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "{ablation:?}: {:?}", report.failures);
        }
    }

    #[test]
    fn sentence_width_follows_heads() {
        let (model, inst) = micro(None);
        let mut tape = Tape::new(&model.params);
        let out = model.forward(&mut tape, &inst, None).unwrap();
        assert_eq!(out.heads.len(), 2);
        assert_eq!(model.dims.sentence_dim(), 8);
        assert_eq!(tape.shape(out.logits), (1, 3));

        let (plain, inst) = micro(Some(Ablation::Attention));
        assert!(plain.heads.is_empty());
        assert_eq!(plain.dims.sentence_dim(), 4);
        assert!(plain.predict(&inst).unwrap().head_marginals.is_empty());
    }

    #[test]
    fn dropout_only_in_training() {
        let (model, inst) = micro(None);
        let a = model.predict(&inst).unwrap();
        let b = model.predict(&inst).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (l1, _) = model.loss_and_grad(&inst, Some(&mut rng)).unwrap();
        let l0 = model.loss(&inst).unwrap();
        assert_ne!(l1, l0);
    }

    #[test]
    fn frozen_embeddings_get_no_gradient() {
        let (mut model, inst) = micro(None);
        model.params.set_trainable(model.encoder.word, false);
        let (_, g) = model.loss_and_grad(&inst, None).unwrap();
        assert!(g.get(model.encoder.word).is_none());
        assert!(g.get(model.encoder.indicator).is_some());
    }
}
