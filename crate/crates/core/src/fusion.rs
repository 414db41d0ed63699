//! Feeding a context vector into the sentence LSTM.
//!
//! Early fusion adds the projected context `q = W_p p` to the word input at
//! every step. Late fusion leaves the LSTM cell untouched and mixes `q`
//! into the output through a gate conditioned on the current cell:
//!
//! ```text
//! r_t = sigmoid(W_rp q + W_rc c_t + b_r)
//! h_t = o_t * tanh(c_t + r_t * q)
//! ```

use crate::numeric::{ParamId, Real, Tape, Var};
use crate::rlm::{Lstm, LstmState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LateGate {
    pub w_rp: ParamId,
    pub w_rc: ParamId,
    pub b_r: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionParams {
    /// Context projection `W_p`.
    pub w_p: ParamId,
    /// Present for late fusion only.
    pub late: Option<LateGate>,
}

impl FusionParams {
    pub fn project<T: Real>(&self, tape: &mut Tape<'_, T>, context: Var) -> Var {
        tape.affine(self.w_p, context, None)
    }
}

/// `x_t = E^T w_t + W_p p`, given the embedded word and the projection.
pub fn early_fusion_input<T: Real>(tape: &mut Tape<'_, T>, embedded: Var, projected: Var) -> Var {
    tape.add(embedded, projected)
}

#[derive(Debug, Clone, Copy)]
pub struct LateStep {
    pub state: LstmState,
    /// Context gate `r_t`.
    pub gate: Var,
}

/// One late-fusion step. `projected` is `q = W_p p`.
pub fn late_fusion_step<T: Real>(
    tape: &mut Tape<'_, T>,
    lstm: &Lstm,
    gate: &LateGate,
    x: Var,
    state: LstmState,
    projected: Var,
) -> LateStep {
    let (c, o) = lstm.cell(tape, x, state);
    let pre = tape.affine2(gate.w_rc, c, gate.w_rp, projected, gate.b_r);
    let r = tape.sigmoid(pre);
    let controlled = tape.mul(r, projected);
    let mixed = tape.add(c, controlled);
    let act = tape.tanh(mixed);
    let h = tape.mul(o, act);
    LateStep {
        state: LstmState { h, c },
        gate: r,
    }
}
