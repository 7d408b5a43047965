use alloc::format;
use alloc::vec::Vec;

use super::init::xavier_uniform;
use super::params::{Bound, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-layer LSTM cell.
///
/// Gate blocks are fused column-wise in the order input, forget, candidate,
/// output: `w_input: [input, 4H]`, `w_hidden: [H, 4H]`, `bias: [4H]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let hs = hidden_size;
        let wi_name = format!("{name}.w_input");
        let mut wi = Tensor::zeros(&[input_size, 4 * hs]);
        xavier_uniform(wi.data_mut(), input_size, hs, seed, &wi_name);
        let wh_name = format!("{name}.w_hidden");
        let mut wh = Tensor::zeros(&[hs, 4 * hs]);
        xavier_uniform(wh.data_mut(), hs, hs, seed, &wh_name);
        let mut bias = Tensor::zeros(&[4 * hs]);
        bias.data_mut()[hs..2 * hs].fill(1.0);
        Ok(Lstm {
            w_input: store.insert(&wi_name, wi)?,
            w_hidden: store.insert(&wh_name, wh)?,
            bias: store.insert(&format!("{name}.bias"), bias)?,
            input_size,
            hidden_size,
        })
    }

    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> LstmState {
        let h = tape.constant(Tensor::zeros(&[rows, self.hidden_size]));
        let c = tape.constant(Tensor::zeros(&[rows, self.hidden_size]));
        LstmState { h, c }
    }

    /// One recurrence step for every row of `x: [rows, input_size]`.
    pub fn step(&self, tape: &mut Tape, bound: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let (sx, sh, sc) = (tape.shape(x), tape.shape(state.h), tape.shape(state.c));
        let rows = sx.first().copied().unwrap_or(0);
        let ok = sx.len() == 2
            && sx[1] == self.input_size
            && sh == [rows, self.hidden_size]
            && sc == [rows, self.hidden_size];
        if !ok {
            return Err(Error::Shape {
                op: "lstm_step",
                lhs: sx.to_vec(),
                rhs: sh.to_vec(),
            });
        }
        let zx = tape.linear(x, bound.var(self.w_input), bound.var(self.bias))?;
        let zh = tape.matmul(state.h, bound.var(self.w_hidden))?;
        let z = tape.add(zx, zh)?;
        let gates = tape.lstm_gates(z)?;
        let c = tape.lstm_cell_state(gates, state.c)?;
        let h = tape.lstm_hidden(gates, c)?;
        Ok(LstmState { h, c })
    }

    /// Runs the cell over a sequence, returning the state after every step.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &[Var],
        mut state: LstmState,
    ) -> Result<Vec<LstmState>> {
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(tape, bound, x, state)?;
            out.push(state);
        }
        Ok(out)
    }
}
