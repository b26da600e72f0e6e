//! Aspect-aware input composition, bidirectional GRU and position decay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::AspectInstance;
use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

/// Indicator row for tokens inside the aspect span.
pub const IN_ASPECT: usize = 0;
/// Indicator row for context tokens.
pub const OUT_OF_ASPECT: usize = 1;

/// Polynomial position decay: 1 on the aspect, shrinking with distance.
///
/// `max_len` is the longest sentence seen when the model was built. Longer
/// inputs clamp their distance to `max_len - 1` so weights stay positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecaySpec {
    pub gamma: u32,
    pub max_len: usize,
}

impl DecaySpec {
    pub fn new(gamma: u32, max_len: usize) -> Self {
        Self {
            gamma,
            max_len: max_len.max(1),
        }
    }
}

/// Decay factor for token `t` given an aspect spanning `i..=j`.
pub fn decay_weight(t: usize, i: usize, j: usize, spec: &DecaySpec) -> f64 {
    let l = spec.max_len.max(1);
    let distance = if t < i {
        i - t
    } else if t > j {
        t - j
    } else {
        return 1.0;
    };
    let distance = distance.min(l - 1);
    let base = (l - distance) as f64 / l as f64;
    base.powi(spec.gamma as i32)
}

pub fn decay_weights(n: usize, i: usize, j: usize, spec: &DecaySpec) -> Vec<f64> {
    (0..n).map(|t| decay_weight(t, i, j, spec)).collect()
}

/// Parameters of one GRU direction, gates stacked as (reset, update, candidate).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruCell {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: store.add(format!("{prefix}.w_ih"), Tensor::uniform(vec![3 * hidden, input], bound, rng)),
            w_hh: store.add(format!("{prefix}.w_hh"), Tensor::uniform(vec![3 * hidden, hidden], bound, rng)),
            b_ih: store.add(format!("{prefix}.b_ih"), Tensor::uniform(vec![1, 3 * hidden], bound, rng)),
            b_hh: store.add(format!("{prefix}.b_hh"), Tensor::uniform(vec![1, 3 * hidden], bound, rng)),
            hidden,
        }
    }

    /// Run over the rows of `x` in the given order; returns one `1 × H` state per step.
    fn run(&self, tape: &mut Tape, x: Var, order: impl Iterator<Item = usize>) -> Result<Vec<(usize, Var)>, NumericsError> {
        let h_size = self.hidden;
        let w_ih = tape.param(self.w_ih)?;
        let w_hh = tape.param(self.w_hh)?;
        let b_ih = tape.param(self.b_ih)?;
        let b_hh = tape.param(self.b_hh)?;
        let projected = tape.matmul_nt(x, w_ih)?;
        let xi = tape.add_row_broadcast(projected, b_ih)?;

        let mut h = tape.constant_row(vec![0.0; h_size]);
        let mut states = Vec::new();
        for t in order {
            let gi = tape.row(xi, t)?;
            let hh = tape.matmul_nt(h, w_hh)?;
            let gh = tape.add(hh, b_hh)?;

            let gi_r = tape.slice_cols(gi, 0, h_size)?;
            let gh_r = tape.slice_cols(gh, 0, h_size)?;
            let pre_r = tape.add(gi_r, gh_r)?;
            let reset = tape.sigmoid(pre_r);

            let gi_z = tape.slice_cols(gi, h_size, h_size)?;
            let gh_z = tape.slice_cols(gh, h_size, h_size)?;
            let pre_z = tape.add(gi_z, gh_z)?;
            let update = tape.sigmoid(pre_z);

            let gi_n = tape.slice_cols(gi, 2 * h_size, h_size)?;
            let gh_n = tape.slice_cols(gh, 2 * h_size, h_size)?;
            let gated = tape.mul(reset, gh_n)?;
            let pre_n = tape.add(gi_n, gated)?;
            let candidate = tape.tanh(pre_n);

            // h' = (1 - z) * n + z * h = n + z * (h - n)
            let diff = tape.sub(h, candidate)?;
            let carried = tape.mul(update, diff)?;
            h = tape.add(candidate, carried)?;
            states.push((t, h));
        }
        Ok(states)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruLayer {
    pub forward: GruCell,
    pub backward: GruCell,
}

/// Handles to the encoder's parameters inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub word: ParamId,
    /// Two rows: [`IN_ASPECT`], [`OUT_OF_ASPECT`].
    pub indicator: ParamId,
    pub layers: Vec<GruLayer>,
    pub hidden: usize,
    /// Ablation: every token uses the [`IN_ASPECT`] row.
    pub shared_indicator: bool,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        word_vectors: Tensor,
        aspect_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let word_dim = word_vectors.shape()[1];
        let word = store.add("embed.word", word_vectors);
        let indicator = store.add("embed.aspect", Tensor::uniform(vec![2, aspect_dim], 0.1, rng));
        let mut gru = Vec::with_capacity(layers);
        let mut input = word_dim + aspect_dim;
        for l in 0..layers {
            gru.push(GruLayer {
                forward: GruCell::init(store, &format!("gru.{l}.fwd"), input, hidden, rng),
                backward: GruCell::init(store, &format!("gru.{l}.bwd"), input, hidden, rng),
            });
            input = 2 * hidden;
        }
        Self {
            word,
            indicator,
            layers: gru,
            hidden,
            shared_indicator: false,
        }
    }
}

/// `n × (word_dim + aspect_dim)`: word vector joined with its indicator row.
pub fn embed_input(tape: &mut Tape, params: &EncoderParams, inst: &AspectInstance) -> Result<Var, NumericsError> {
    if inst.is_empty() {
        return Err(NumericsError::Empty { op: "embed_input" });
    }
    let words = tape.gather(params.word, &inst.tokens)?;
    let rows: Vec<usize> = (0..inst.len())
        .map(|t| {
            if params.shared_indicator || inst.in_aspect(t) {
                IN_ASPECT
            } else {
                OUT_OF_ASPECT
            }
        })
        .collect();
    let indicators = tape.gather(params.indicator, &rows)?;
    tape.concat_cols(&[words, indicators])
}

/// Stacked bidirectional GRU with zero initial states; output is `n × 2H`.
pub fn bigru_encode(tape: &mut Tape, params: &EncoderParams, x: Var) -> Result<Var, NumericsError> {
    let n = tape.shape(x).0;
    if n == 0 {
        return Err(NumericsError::Empty { op: "bigru_encode" });
    }
    let mut input = x;
    for layer in &params.layers {
        let fwd: Vec<Var> = layer.forward.run(tape, input, 0..n)?.into_iter().map(|(_, h)| h).collect();
        let mut bwd = layer.backward.run(tape, input, (0..n).rev())?;
        bwd.reverse();
        let bwd: Vec<Var> = bwd.into_iter().map(|(_, h)| h).collect();
        let fwd_seq = tape.concat_rows(&fwd)?;
        let bwd_seq = tape.concat_rows(&bwd)?;
        input = tape.concat_cols(&[fwd_seq, bwd_seq])?;
    }
    Ok(input)
}

/// `r_t = f(t) · h_t`; the factors are constants.
pub fn apply_decay(tape: &mut Tape, h: Var, inst: &AspectInstance, spec: &DecaySpec) -> Result<Var, NumericsError> {
    let n = tape.shape(h).0;
    if n != inst.len() {
        return Err(NumericsError::shape("apply_decay", &[n], &[inst.len()]));
    }
    if spec.gamma == 0 {
        return Ok(h);
    }
    let weights = decay_weights(n, inst.aspect_start, inst.aspect_end, spec);
    tape.scale_rows(h, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Polarity;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(tokens: Vec<usize>, i: usize, j: usize) -> AspectInstance {
        AspectInstance {
            tokens,
            aspect_start: i,
            aspect_end: j,
            label: Polarity::Neutral,
            raw_text: String::new(),
        }
    }

    fn encoder(word_dim: usize, aspect_dim: usize, hidden: usize, layers: usize, seed: u64) -> (ParamStore, EncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let words = Tensor::uniform(vec![6, word_dim], 0.5, &mut rng);
        let params = EncoderParams::init(&mut store, words, aspect_dim, hidden, layers, &mut rng);
        (store, params)
    }

    #[test]
    fn decay_hand_values() {
        let spec = DecaySpec::new(2, 20);
        assert!((decay_weight(3, 5, 6, &spec) - 0.81).abs() < 1e-12);
        assert!((decay_weight(10, 5, 6, &spec) - 0.64).abs() < 1e-12);
        for t in 5..=6 {
            assert_eq!(decay_weight(t, 5, 6, &spec), 1.0);
        }
        let flat = DecaySpec::new(0, 20);
        assert!((0..20).all(|t| decay_weight(t, 5, 6, &flat) == 1.0));
    }

    #[test]
    fn decay_clamps_beyond_max_len() {
        let spec = DecaySpec::new(3, 4);
        let w = decay_weight(30, 0, 0, &spec);
        assert!((w - (0.25f64).powi(3)).abs() < 1e-15);
        assert!(w > 0.0);
    }

    #[test]
    fn embed_rows_carry_indicator() {
        let (store, params) = encoder(3, 2, 4, 1, 0);
        let mut tape = Tape::new(&store);
        let a = instance(vec![2, 3, 4], 1, 1);
        let b = instance(vec![2, 3, 4], 2, 2);
        let xa = embed_input(&mut tape, &params, &a).unwrap();
        let xb = embed_input(&mut tape, &params, &b).unwrap();
        assert_eq!(tape.shape(xa), (3, 5));
        let (va, vb) = (tape.value(xa).to_vec(), tape.value(xb).to_vec());
        for r in 0..3 {
            assert_eq!(va[r * 5..r * 5 + 3], vb[r * 5..r * 5 + 3]);
        }
        assert_ne!(va[5 + 3..5 + 5], vb[5 + 3..5 + 5]);

        let whole = instance(vec![2, 3], 0, 1);
        let x = embed_input(&mut tape, &params, &whole).unwrap();
        let ind = store.tensor(params.indicator).row_slice(IN_ASPECT).to_vec();
        assert_eq!(&tape.value(x)[3..5], ind.as_slice());
        assert_eq!(&tape.value(x)[8..10], ind.as_slice());
    }

    #[test]
    fn single_token_shapes() {
        let (store, params) = encoder(3, 2, 4, 2, 1);
        let mut tape = Tape::new(&store);
        let inst = instance(vec![5], 0, 0);
        let x = embed_input(&mut tape, &params, &inst).unwrap();
        assert_eq!(tape.shape(x), (1, 5));
        let h = bigru_encode(&mut tape, &params, x).unwrap();
        assert_eq!(tape.shape(h), (1, 8));
    }

    #[test]
    fn zero_parameters_keep_state_zero() {
        let (mut store, params) = encoder(3, 2, 4, 1, 2);
        for (_, p) in store.iter_mut() {
            p.tensor.values_mut().fill(0.0);
        }
        let mut tape = Tape::new(&store);
        let x = tape.constant(&Tensor::full(vec![4, 5], 0.7)).unwrap();
        let h = bigru_encode(&mut tape, &params, x).unwrap();
        assert!(tape.value(h).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversal_swaps_directions() {
        let (store, params) = encoder(3, 2, 4, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::uniform(vec![5, 5], 1.0, &mut rng);
        let mut rev = Vec::new();
        for t in (0..5).rev() {
            rev.extend_from_slice(x.row_slice(t));
        }
        let x_rev = Tensor::matrix(5, 5, rev).unwrap();

        // Swap the directional parameter sets for the reversed run.
        let mut swapped = params.clone();
        let layer = &mut swapped.layers[0];
        std::mem::swap(&mut layer.forward, &mut layer.backward);

        let mut tape = Tape::new(&store);
        let xv = tape.constant(&x).unwrap();
        let h = bigru_encode(&mut tape, &params, xv).unwrap();
        let xr = tape.constant(&x_rev).unwrap();
        let hr = bigru_encode(&mut tape, &swapped, xr).unwrap();
        let (h, hr) = (tape.value(h).to_vec(), tape.value(hr).to_vec());
        for t in 0..5 {
            let s = 4 - t;
            for k in 0..4 {
                assert!((h[t * 8 + k] - hr[s * 8 + 4 + k]).abs() < 1e-14);
                assert!((h[t * 8 + 4 + k] - hr[s * 8 + k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn apply_decay_cases() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = tape.constant(&Tensor::uniform(vec![4, 3], 1.0, &mut rng)).unwrap();
        let inst = instance(vec![2; 4], 1, 1);
        let same = apply_decay(&mut tape, h, &inst, &DecaySpec::new(0, 10)).unwrap();
        assert_eq!(tape.value(same), tape.value(h));
        let whole = instance(vec![2; 4], 0, 3);
        let r = apply_decay(&mut tape, h, &whole, &DecaySpec::new(3, 10)).unwrap();
        assert_eq!(tape.value(r), tape.value(h));

        let spec = DecaySpec::new(2, 10);
        let r = apply_decay(&mut tape, h, &inst, &spec).unwrap();
        for t in 0..4 {
            let norm = |v: &[f64]| v[t * 3..t * 3 + 3].iter().map(|x| x * x).sum::<f64>().sqrt();
            let f = decay_weight(t, 1, 1, &spec);
            assert!((norm(tape.value(r)) - f * norm(tape.value(h))).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn decay_is_monotone_and_bounded(l in 1usize..100, a in 0usize..100, b in 0usize..100, span in 0usize..5, g in 0u32..4) {
            let i = a % l;
            let j = (i + span).min(l - 1);
            let spec = DecaySpec::new(g, l);
            let mut prev_left = 1.0;
            for t in (0..i).rev() {
                let w = decay_weight(t, i, j, &spec);
                prop_assert!(w > 0.0 && w <= 1.0 && w <= prev_left);
                prev_left = w;
            }
            let mut prev_right = 1.0;
            for t in j + 1..l + (b % 5) {
                let w = decay_weight(t, i, j, &spec);
                prop_assert!(w > 0.0 && w <= 1.0 && w <= prev_right);
                prev_right = w;
            }
        }
    }
}
