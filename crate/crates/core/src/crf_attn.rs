//! Multi-CRF structured attention.
//!
//! Each head scores a binary latent label per token (`Yes`: the token is part
//! of an opinion span for the aspect). Forward-backward over a linear chain
//! gives the posterior `P(z_t = Yes | x)`, which weights the decayed states
//! into one sentence vector per head. Head vectors are concatenated.
//!
//! The dynamic program is written with tape primitives, so gradients reach
//! both emissions and transitions without a hand-derived adjoint.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{log_sum_exp, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

/// Label index of `Yes` in emission columns and transition rows.
pub const YES: usize = 0;
/// Label index of `No`.
pub const NO: usize = 1;

/// Chain states including the two boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainState {
    Start = 0,
    Yes = 1,
    No = 2,
    End = 3,
}

impl ChainState {
    fn label(label: usize) -> Self {
        if label == YES {
            ChainState::Yes
        } else {
            ChainState::No
        }
    }
}

/// Largest sequence the enumeration oracle accepts.
pub const ORACLE_MAX_LEN: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum CrfError {
    #[error("sequence length {0} exceeds the enumeration limit of {ORACLE_MAX_LEN}")]
    TooLong(usize),
    #[error("label sequence has length {got}, expected {expected}")]
    LabelCount { got: usize, expected: usize },
    #[error("invalid label {0}; expected 0 (Yes) or 1 (No)")]
    InvalidLabel(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Emission and transition scores of one head for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfPotentials {
    /// `n × 2`, columns (Yes, No).
    pub emissions: Tensor,
    /// Yes/No block, `transitions[from][to]`.
    pub transitions: [[f64; 2]; 2],
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl CrfPotentials {
    pub fn new(emissions: Tensor, transitions: [[f64; 2]; 2], start: [f64; 2], end: [f64; 2]) -> Result<Self, CrfError> {
        let (n, c) = emissions.dims2()?;
        if c != 2 || n == 0 {
            return Err(NumericsError::shape("crf potentials", emissions.shape(), &[n.max(1), 2]).into());
        }
        Ok(Self {
            emissions,
            transitions,
            start,
            end,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            emissions: Tensor::zeros(vec![n, 2]),
            transitions: [[0.0; 2]; 2],
            start: [0.0; 2],
            end: [0.0; 2],
        }
    }

    /// All entries uniform in `[-bound, bound]`.
    pub fn random<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Self {
        let mut draw = || rng.gen_range(-bound..=bound);
        let transitions = [[draw(), draw()], [draw(), draw()]];
        let start = [draw(), draw()];
        let end = [draw(), draw()];
        let emissions = Tensor::uniform(vec![n, 2], bound, rng);
        Self {
            emissions,
            transitions,
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.emissions.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn emission(&self, t: usize, label: usize) -> f64 {
        self.emissions.get2(t, label)
    }

    /// Full 4-state transition score. Moves into `Start`, out of `End`, and
    /// `Start → End` are impossible and score `-∞`.
    pub fn transition(&self, from: ChainState, to: ChainState) -> f64 {
        use ChainState::*;
        match (from, to) {
            (End, _) | (_, Start) | (Start, End) => f64::NEG_INFINITY,
            (Start, y) => self.start[y as usize - 1],
            (x, End) => self.end[x as usize - 1],
            (x, y) => self.transitions[x as usize - 1][y as usize - 1],
        }
    }

    /// Register the potentials as parameters so the tape can differentiate them.
    pub fn to_store(&self) -> (ParamStore, PotentialIds) {
        let mut store = ParamStore::new();
        let ids = PotentialIds {
            emissions: store.add("emissions", self.emissions.clone()),
            transitions: store.add(
                "transitions",
                Tensor::matrix(2, 2, self.transitions.iter().flatten().copied().collect()).expect("2x2"),
            ),
            start: store.add("start", Tensor::row(self.start.to_vec())),
            end: store.add("end", Tensor::row(self.end.to_vec())),
        };
        (store, ids)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PotentialIds {
    pub emissions: ParamId,
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

/// Score of one label sequence: boundary transitions, chain transitions and emissions.
pub fn score_sequence(p: &CrfPotentials, labels: &[usize]) -> Result<f64, CrfError> {
    let n = p.len();
    if labels.len() != n {
        return Err(CrfError::LabelCount {
            got: labels.len(),
            expected: n,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&z| z > NO) {
        return Err(CrfError::InvalidLabel(bad));
    }
    let mut prev = ChainState::Start;
    let mut score = 0.0;
    for (t, &z) in labels.iter().enumerate() {
        let state = ChainState::label(z);
        score += p.transition(prev, state) + p.emission(t, z);
        prev = state;
    }
    Ok(score + p.transition(prev, ChainState::End))
}

/// Tape handles produced by forward-backward for one head.
#[derive(Clone, Copy, Debug)]
pub struct ChainPosterior {
    pub log_z: Var,
    /// `1 × n` posterior `P(z_t = Yes | x)`.
    pub yes: Var,
}

/// Log-space forward-backward over `emissions` (`n × 2`) with a `2 × 2`
/// transition block and `1 × 2` start/end scores.
pub fn forward_backward(
    tape: &mut Tape,
    emissions: Var,
    transitions: Var,
    start: Var,
    end: Var,
) -> Result<ChainPosterior, NumericsError> {
    let (n, c) = tape.shape(emissions);
    if n == 0 || c != 2 {
        return Err(NumericsError::shape("forward_backward", &[n, c], &[n.max(1), 2]));
    }
    let e: Vec<Var> = (0..n).map(|t| tape.row(emissions, t)).collect::<Result<_, _>>()?;
    // Columns of the block are the scores of entering Yes / No from each label.
    let into = tape.transpose(transitions);
    let into_yes = tape.row(into, YES)?;
    let into_no = tape.row(into, NO)?;
    let from_yes = tape.row(transitions, YES)?;
    let from_no = tape.row(transitions, NO)?;

    let mut alpha = Vec::with_capacity(n);
    alpha.push(tape.add(start, e[0])?);
    for t in 1..n {
        let prev = alpha[t - 1];
        let sy = tape.add(prev, into_yes)?;
        let ly = tape.log_sum_exp(sy)?;
        let sn = tape.add(prev, into_no)?;
        let ln = tape.log_sum_exp(sn)?;
        let msg = tape.concat_cols(&[ly, ln])?;
        alpha.push(tape.add(msg, e[t])?);
    }
    let closing = tape.add(alpha[n - 1], end)?;
    let log_z = tape.log_sum_exp(closing)?;

    let mut beta = vec![end; n];
    for t in (0..n - 1).rev() {
        let ahead = tape.add(e[t + 1], beta[t + 1])?;
        let sy = tape.add(from_yes, ahead)?;
        let by = tape.log_sum_exp(sy)?;
        let sn = tape.add(from_no, ahead)?;
        let bn = tape.log_sum_exp(sn)?;
        beta[t] = tape.concat_cols(&[by, bn])?;
    }

    let mut probs = Vec::with_capacity(n);
    for t in 0..n {
        let a = tape.select(alpha[t], YES)?;
        let b = tape.select(beta[t], YES)?;
        let joint = tape.add(a, b)?;
        let centered = tape.sub(joint, log_z)?;
        probs.push(tape.exp(centered));
    }
    let yes = tape.concat_cols(&probs)?;
    Ok(ChainPosterior { log_z, yes })
}

/// Per-head marginals `P(z_t = Yes | x)` and log-partition values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub yes: Vec<Vec<f64>>,
    pub log_z: Vec<f64>,
}

impl MarginalTable {
    pub fn heads(&self) -> usize {
        self.yes.len()
    }

    /// Mean over heads of the Yes-marginal at each position.
    pub fn mean_yes(&self) -> Vec<f64> {
        let n = self.yes.first().map_or(0, Vec::len);
        let a = self.heads().max(1) as f64;
        (0..n).map(|t| self.yes.iter().map(|h| h[t]).sum::<f64>() / a).collect()
    }
}

fn single_head(p: &CrfPotentials) -> Result<(ParamStore, PotentialIds), CrfError> {
    if p.is_empty() {
        return Err(NumericsError::Empty { op: "crf" }.into());
    }
    Ok(p.to_store())
}

fn run_single<'p>(tape: &mut Tape<'p>, ids: &PotentialIds) -> Result<ChainPosterior, NumericsError> {
    let e = tape.param(ids.emissions)?;
    let t = tape.param(ids.transitions)?;
    let s = tape.param(ids.start)?;
    let en = tape.param(ids.end)?;
    forward_backward(tape, e, t, s, en)
}

/// `log Σ_z exp(score(z))` by the forward recursion.
pub fn log_partition(p: &CrfPotentials) -> Result<f64, CrfError> {
    let (store, ids) = single_head(p)?;
    let mut tape = Tape::new(&store);
    let post = run_single(&mut tape, &ids)?;
    Ok(tape.scalar(post.log_z))
}

/// Forward-backward marginals for one head.
pub fn marginals(p: &CrfPotentials) -> Result<MarginalTable, CrfError> {
    let (store, ids) = single_head(p)?;
    let mut tape = Tape::new(&store);
    let post = run_single(&mut tape, &ids)?;
    Ok(MarginalTable {
        yes: vec![tape.value(post.yes).to_vec()],
        log_z: vec![tape.scalar(post.log_z)],
    })
}

/// `log Z` and its gradient with respect to the `n × 2` emissions, via the tape.
pub fn log_partition_grad(p: &CrfPotentials) -> Result<(f64, Tensor), CrfError> {
    let (store, ids) = single_head(p)?;
    let mut tape = Tape::new(&store);
    let post = run_single(&mut tape, &ids)?;
    let grads = tape.backward(post.log_z)?;
    let n = p.len();
    let g = grads.dense(ids.emissions, n * 2, 2);
    Ok((tape.scalar(post.log_z), Tensor::matrix(n, 2, g)?))
}

/// Exact `log Z` and Yes-marginals by enumerating all `2^n` label sequences.
pub fn brute_force_oracle(p: &CrfPotentials) -> Result<(f64, Vec<f64>), CrfError> {
    let n = p.len();
    if n > ORACLE_MAX_LEN {
        return Err(CrfError::TooLong(n));
    }
    let count = 1usize << n;
    let mut scores = Vec::with_capacity(count);
    let mut labels = vec![NO; n];
    for mask in 0..count {
        for (t, z) in labels.iter_mut().enumerate() {
            *z = if mask >> t & 1 == 1 { YES } else { NO };
        }
        scores.push(score_sequence(p, &labels)?);
    }
    let log_z = log_sum_exp(&scores)?;
    let mut yes = vec![0.0; n];
    for (mask, s) in scores.iter().enumerate() {
        let prob = (s - log_z).exp();
        for (t, slot) in yes.iter_mut().enumerate() {
            if mask >> t & 1 == 1 {
                *slot += prob;
            }
        }
    }
    Ok((log_z, yes))
}

/// `s = Σ_t P(z_t = Yes) r_t`: `1 × n` weights against `n × d` states.
pub fn pool_sentence(tape: &mut Tape, yes: Var, r: Var) -> Result<Var, NumericsError> {
    tape.matmul(yes, r)
}

/// Parameters of one CRF head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadParams {
    /// `2 × d` linear layer from decayed states to (Yes, No) scores.
    pub emit_weight: ParamId,
    pub emit_bias: ParamId,
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl HeadParams {
    /// Heads own their emission layer; transitions are per head unless `shared`
    /// is given, in which case every head reuses them.
    pub fn init_all<R: Rng + ?Sized>(
        store: &mut ParamStore,
        heads: usize,
        input: usize,
        shared_transitions: bool,
        rng: &mut R,
    ) -> Vec<HeadParams> {
        let mut shared = None;
        (0..heads)
            .map(|k| {
                let emit_weight = store.add(format!("crf.{k}.emit.weight"), Tensor::uniform(vec![2, input], 0.1, rng));
                let emit_bias = store.add(format!("crf.{k}.emit.bias"), Tensor::uniform(vec![1, 2], 0.1, rng));
                let chain = |store: &mut ParamStore, prefix: String| {
                    (
                        store.add(format!("{prefix}.transitions"), Tensor::zeros(vec![2, 2])),
                        store.add(format!("{prefix}.start"), Tensor::zeros(vec![1, 2])),
                        store.add(format!("{prefix}.end"), Tensor::zeros(vec![1, 2])),
                    )
                };
                let (transitions, start, end) = if shared_transitions {
                    *shared.get_or_insert_with(|| chain(store, "crf.shared".into()))
                } else {
                    chain(store, format!("crf.{k}"))
                };
                HeadParams {
                    emit_weight,
                    emit_bias,
                    transitions,
                    start,
                    end,
                }
            })
            .collect()
    }

    pub fn emissions(&self, tape: &mut Tape, r: Var) -> Result<Var, NumericsError> {
        let w = tape.param(self.emit_weight)?;
        let b = tape.param(self.emit_bias)?;
        let scores = tape.matmul_nt(r, w)?;
        tape.add_row_broadcast(scores, b)
    }

    /// Numeric potentials of this head for the decayed states `r`.
    pub fn potentials(&self, tape: &mut Tape, r: Var) -> Result<CrfPotentials, CrfError> {
        let e = self.emissions(tape, r)?;
        let store = tape.store();
        let pair = |id: ParamId| {
            let v = store.tensor(id).values();
            [v[0], v[1]]
        };
        let t = store.tensor(self.transitions).values();
        CrfPotentials::new(tape.to_tensor(e), [[t[0], t[1]], [t[2], t[3]]], pair(self.start), pair(self.end))
    }
}

/// Concatenated head vectors plus each head's posterior handles.
#[derive(Clone, Debug)]
pub struct MultiHeadOutput {
    /// `1 × (a · d)`.
    pub q: Var,
    pub heads: Vec<ChainPosterior>,
}

/// Run every head on the shared states `r` and join their pooled vectors in head order.
pub fn multi_head(tape: &mut Tape, r: Var, heads: &[HeadParams]) -> Result<MultiHeadOutput, NumericsError> {
    if heads.is_empty() {
        return Err(NumericsError::Empty { op: "multi_head" });
    }
    let mut pooled = Vec::with_capacity(heads.len());
    let mut posts = Vec::with_capacity(heads.len());
    for head in heads {
        let e = head.emissions(tape, r)?;
        let trans = tape.param(head.transitions)?;
        let start = tape.param(head.start)?;
        let end = tape.param(head.end)?;
        let post = forward_backward(tape, e, trans, start, end)?;
        pooled.push(pool_sentence(tape, post.yes, r)?);
        posts.push(post);
    }
    let q = tape.concat_cols(&pooled)?;
    Ok(MultiHeadOutput { q, heads: posts })
}

/// Heatmap payload: one row of Yes-marginals per head over the sentence tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalExport {
    pub tokens: Vec<String>,
    pub aspect_span: [usize; 2],
    pub per_head_marginals: Vec<Vec<f64>>,
}

impl MarginalExport {
    /// Tab-separated matrix: a header of tokens, then one row per head.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("head");
        for t in &self.tokens {
            out.push('\t');
            out.push_str(&t.replace(['\t', '\n'], " "));
        }
        out.push('\n');
        for (k, row) in self.per_head_marginals.iter().enumerate() {
            out.push_str(&k.to_string());
            for p in row {
                out.push_str(&format!("\t{p:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Clamp a marginal away from 0 and 1 before taking logs in diagnostics.
pub fn clamp_marginal(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Score by summing over the explicit 4-state path, independent of `score_sequence`'s loop.
    fn naive_score(p: &CrfPotentials, z: &[usize]) -> f64 {
        let mut path = vec![ChainState::Start];
        path.extend(z.iter().map(|&l| if l == YES { ChainState::Yes } else { ChainState::No }));
        path.push(ChainState::End);
        let trans: f64 = path.windows(2).map(|w| p.transition(w[0], w[1])).sum();
        let emit: f64 = z.iter().enumerate().map(|(t, &l)| p.emissions.values()[t * 2 + l]).sum();
        trans + emit
    }

    #[test]
    fn score_cases() {
        let zero = CrfPotentials::zeros(4);
        assert_eq!(score_sequence(&zero, &[YES, NO, NO, YES]).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = CrfPotentials::random(1, 2.0, &mut rng);
        let expected = p.start[YES] + p.emission(0, YES) + p.end[YES];
        assert!((score_sequence(&p, &[YES]).unwrap() - expected).abs() < 1e-15);

        let p = CrfPotentials::random(3, 2.0, &mut rng);
        for mask in 0..8usize {
            let z: Vec<usize> = (0..3).map(|t| if mask >> t & 1 == 1 { YES } else { NO }).collect();
            assert!((score_sequence(&p, &z).unwrap() - naive_score(&p, &z)).abs() < 1e-12);
        }
        assert!(matches!(score_sequence(&p, &[YES, 2, NO]), Err(CrfError::InvalidLabel(2))));
        assert!(matches!(score_sequence(&p, &[YES]), Err(CrfError::LabelCount { .. })));
    }

    #[test]
    fn masked_transitions() {
        let p = CrfPotentials::zeros(2);
        assert_eq!(p.transition(ChainState::End, ChainState::Yes), f64::NEG_INFINITY);
        assert_eq!(p.transition(ChainState::No, ChainState::Start), f64::NEG_INFINITY);
        assert_eq!(p.transition(ChainState::Start, ChainState::End), f64::NEG_INFINITY);
    }

    #[test]
    fn partition_closed_forms() {
        for n in 1..6 {
            let z = log_partition(&CrfPotentials::zeros(n)).unwrap();
            assert!((z - n as f64 * 2f64.ln()).abs() < 1e-12);
        }
        let p = CrfPotentials::new(Tensor::matrix(1, 2, vec![0.3, -1.2]).unwrap(), [[0.0; 2]; 2], [0.0; 2], [0.0; 2]).unwrap();
        let z = log_partition(&p).unwrap();
        assert!((z - (0.3f64.exp() + (-1.2f64).exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn marginal_closed_forms() {
        let m = marginals(&CrfPotentials::zeros(5)).unwrap();
        assert!(m.yes[0].iter().all(|&p| (p - 0.5).abs() < 1e-14));

        let e = Tensor::matrix(3, 2, vec![1.0, 0.0, -0.5, 0.25, 2.0, 2.0]).unwrap();
        let p = CrfPotentials::new(e, [[0.0; 2]; 2], [0.0; 2], [0.0; 2]).unwrap();
        let m = marginals(&p).unwrap();
        let expected = [1f64.exp() / (1.0 + 1f64.exp()), crate::numerics::sigmoid(-0.75), 0.5];
        for (got, want) in m.yes[0].iter().zip(expected) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        assert!((m.yes[0][0] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn oracle_cases() {
        let (z, yes) = brute_force_oracle(&CrfPotentials::zeros(3)).unwrap();
        assert!((z - 3.0 * 2f64.ln()).abs() < 1e-14);
        assert!(yes.iter().all(|&p| (p - 0.5).abs() < 1e-14));

        let e = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let p = CrfPotentials::new(e, [[0.0; 2]; 2], [0.0; 2], [0.0; 2]).unwrap();
        let (z, yes) = brute_force_oracle(&p).unwrap();
        assert!((z - (1f64.exp() + 1.0).ln()).abs() < 1e-14);
        assert!((yes[0] - 1f64.exp() / (1.0 + 1f64.exp())).abs() < 1e-14);

        assert_eq!(brute_force_oracle(&CrfPotentials::zeros(13)), Err(CrfError::TooLong(13)));
    }

    #[test]
    fn dp_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let n = rng.gen_range(1..=ORACLE_MAX_LEN);
            let p = CrfPotentials::random(n, 5.0, &mut rng);
            let (z_bf, yes_bf) = brute_force_oracle(&p).unwrap();
            let m = marginals(&p).unwrap();
            assert!((m.log_z[0] - z_bf).abs() < 1e-9);
            for (a, b) in m.yes[0].iter().zip(&yes_bf) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gradient_of_log_z_is_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..=8);
            let p = CrfPotentials::random(n, 5.0, &mut rng);
            let (_, g) = log_partition_grad(&p).unwrap();
            let m = marginals(&p).unwrap();
            for t in 0..n {
                assert!((g.get2(t, YES) - m.yes[0][t]).abs() < 1e-8);
                assert!((g.get2(t, YES) + g.get2(t, NO) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pooling_cases() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r_t = Tensor::uniform(vec![3, 4], 1.0, &mut rng);
        let r = tape.constant(&r_t).unwrap();
        let ones = tape.constant_row(vec![1.0; 3]);
        let s = pool_sentence(&mut tape, ones, r).unwrap();
        for k in 0..4 {
            let col: f64 = (0..3).map(|t| r_t.get2(t, k)).sum();
            assert!((tape.value(s)[k] - col).abs() < 1e-15);
        }
        let zeros = tape.constant_row(vec![0.0; 3]);
        let s = pool_sentence(&mut tape, zeros, r).unwrap();
        assert!(tape.value(s).iter().all(|&v| v == 0.0));
        let onehot = tape.constant_row(vec![0.0, 1.0, 0.0]);
        let s = pool_sentence(&mut tape, onehot, r).unwrap();
        assert_eq!(tape.value(s), r_t.row_slice(1));
    }

    #[test]
    fn multi_head_shapes_and_identical_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let heads = HeadParams::init_all(&mut store, 4, 6, false, &mut rng);
        let r_t = Tensor::uniform(vec![5, 6], 1.0, &mut rng);
        {
            let mut tape = Tape::new(&store);
            let r = tape.constant(&r_t).unwrap();
            let out = multi_head(&mut tape, r, &heads[..1]).unwrap();
            assert_eq!(tape.shape(out.q), (1, 6));
            let out = multi_head(&mut tape, r, &heads).unwrap();
            assert_eq!(tape.shape(out.q), (1, 24));
        }
        let twins = vec![heads[0].clone(), heads[0].clone()];
        let mut tape = Tape::new(&store);
        let r = tape.constant(&r_t).unwrap();
        let out = multi_head(&mut tape, r, &twins).unwrap();
        let q = tape.value(out.q);
        assert_eq!(q[..6], q[6..]);
    }

    #[test]
    fn shared_transitions_reuse_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let heads = HeadParams::init_all(&mut store, 3, 4, true, &mut rng);
        assert!(heads.iter().all(|h| h.transitions == heads[0].transitions));
        assert_ne!(heads[0].emit_weight, heads[1].emit_weight);
    }

    #[test]
    fn tsv_shape() {
        let export = MarginalExport {
            tokens: vec!["food".into(), "is".into(), "good".into()],
            aspect_span: [0, 0],
            per_head_marginals: vec![vec![0.5; 3], vec![0.25; 3]],
        };
        let tsv = export.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split('\t').count() == 4));
    }

    proptest! {
        #[test]
        fn emission_shift_invariance(seed in any::<u64>(), n in 1usize..9, c in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = CrfPotentials::random(n, 5.0, &mut rng);
            let mut shifted = p.clone();
            shifted.emissions.values_mut().iter_mut().for_each(|v| *v += c);
            let a = marginals(&p).unwrap();
            let b = marginals(&shifted).unwrap();
            prop_assert!((b.log_z[0] - a.log_z[0] - n as f64 * c).abs() < 1e-9);
            for (x, y) in a.yes[0].iter().zip(&b.yes[0]) {
                prop_assert!((x - y).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(x));
            }
        }

        #[test]
        fn pooling_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let store = ParamStore::new();
            let mut tape = Tape::new(&store);
            let r = tape.constant(&Tensor::uniform(vec![4, 3], 1.0, &mut rng)).unwrap();
            let r2 = tape.constant(&Tensor::uniform(vec![4, 3], 1.0, &mut rng)).unwrap();
            let p1 = tape.constant(&Tensor::uniform(vec![1, 4], 1.0, &mut rng)).unwrap();
            let p2 = tape.constant(&Tensor::uniform(vec![1, 4], 1.0, &mut rng)).unwrap();
            let sum_p = tape.add(p1, p2).unwrap();
            let lhs = pool_sentence(&mut tape, sum_p, r).unwrap();
            let a = pool_sentence(&mut tape, p1, r).unwrap();
            let b = pool_sentence(&mut tape, p2, r).unwrap();
            for k in 0..3 {
                prop_assert!((tape.value(lhs)[k] - tape.value(a)[k] - tape.value(b)[k]).abs() < 1e-12);
            }
            let sum_r = tape.add(r, r2).unwrap();
            let lhs = pool_sentence(&mut tape, p1, sum_r).unwrap();
            let b = pool_sentence(&mut tape, p1, r2).unwrap();
            for k in 0..3 {
                prop_assert!((tape.value(lhs)[k] - tape.value(a)[k] - tape.value(b)[k]).abs() < 1e-12);
            }
            let scaled = tape.mul_const(p1, vec![alpha; 4]).unwrap();
            let s = pool_sentence(&mut tape, scaled, r).unwrap();
            for k in 0..3 {
                prop_assert!((tape.value(s)[k] - alpha * tape.value(a)[k]).abs() < 1e-12);
            }
        }
    }
}
