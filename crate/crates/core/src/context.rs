//! Context encoders over the preceding sentences of a window: a projected
//! bag of words, a context LSTM over per-sentence bags of words, and a
//! bidirectional annotation sequence read by additive attention.
//!
//! An empty context always encodes to the zero vector.

use crate::corpus::{bow_counts, Sentence};
use crate::error::{Error, Result};
use crate::numeric::{ParamId, Real, Tape, Var};
use crate::rlm::{Lstm, LstmState};

/// Additive attention scorer: `v^T tanh(W z + U h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub w: ParamId,
    pub u: ParamId,
    pub v: ParamId,
}

/// Sparse raw-frequency bag of words of `sentences`.
fn counts<T: Real>(sentences: &[Sentence]) -> Vec<(usize, T)> {
    bow_counts(sentences)
        .into_iter()
        .map(|(id, c)| (id, T::from_u32(c).expect("count fits")))
        .collect()
}

/// `p = P^T s` with `P` stored as `|V| x d_ctx`.
pub fn encode_bow<T: Real>(tape: &mut Tape<'_, T>, projection: ParamId, context: &[Sentence]) -> Var {
    let d_ctx = tape.params().get(projection).cols();
    if context.is_empty() {
        return tape.zeros(d_ctx);
    }
    tape.bow_project(projection, counts(context))
}

fn projected_sequence<T: Real>(tape: &mut Tape<'_, T>, projection: ParamId, context: &[Sentence]) -> Vec<Var> {
    context
        .iter()
        .map(|s| tape.bow_project(projection, counts(std::slice::from_ref(s))))
        .collect()
}

/// Last hidden state of the context LSTM run over per-sentence projected
/// bags of words in document order.
pub fn encode_seqbow<T: Real>(tape: &mut Tape<'_, T>, projection: ParamId, lstm: &Lstm, context: &[Sentence]) -> Var {
    if context.is_empty() {
        return tape.zeros(lstm.hidden_dim);
    }
    let inputs = projected_sequence(tape, projection, context);
    let mut state = LstmState::zeros(tape, lstm.hidden_dim);
    for x in inputs {
        state = lstm.step(tape, x, state);
    }
    state.h
}

/// One annotation per context sentence: forward and reverse context-LSTM
/// states concatenated positionwise.
pub fn annotate_bidirectional<T: Real>(
    tape: &mut Tape<'_, T>,
    projection: ParamId,
    forward: &Lstm,
    reverse: &Lstm,
    context: &[Sentence],
) -> Vec<Var> {
    if context.is_empty() {
        return Vec::new();
    }
    let inputs = projected_sequence(tape, projection, context);
    let mut state = LstmState::zeros(tape, forward.hidden_dim);
    let mut fwd = Vec::with_capacity(inputs.len());
    for &x in &inputs {
        state = forward.step(tape, x, state);
        fwd.push(state.h);
    }
    let mut state = LstmState::zeros(tape, reverse.hidden_dim);
    let mut rev = vec![state.h; inputs.len()];
    for (j, &x) in inputs.iter().enumerate().rev() {
        state = reverse.step(tape, x, state);
        rev[j] = state.h;
    }
    fwd.iter().zip(&rev).map(|(&f, &r)| tape.concat(&[f, r])).collect()
}

impl Attention {
    /// `W z_k` for every annotation. These do not depend on the query and
    /// are computed once per sentence.
    pub fn keys<T: Real>(&self, tape: &mut Tape<'_, T>, annotations: &[Var]) -> Vec<Var> {
        annotations.iter().map(|&z| tape.affine(self.w, z, None)).collect()
    }

    /// Returns the context vector `sum_k alpha_k z_k` and the weights.
    pub fn attend<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        annotations: &[Var],
        keys: &[Var],
        query: Var,
    ) -> Result<(Var, Var)> {
        if annotations.is_empty() {
            return Err(Error::InvalidArgument("attention over zero annotations".into()));
        }
        debug_assert_eq!(annotations.len(), keys.len());
        let q = tape.affine(self.u, query, None);
        let scores: Vec<Var> = keys
            .iter()
            .map(|&k| {
                let pre = tape.add(k, q);
                let act = tape.tanh(pre);
                tape.affine(self.v, act, None)
            })
            .collect();
        let scores = tape.stack(&scores);
        let alphas = tape.softmax(scores);
        let p = tape.weighted_sum(alphas, annotations);
        Ok((p, alphas))
    }
}
