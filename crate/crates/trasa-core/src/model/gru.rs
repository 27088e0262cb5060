//! A GRU cell expressed as tape operations, used by the relation encoder.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorId};

/// Tape handles of one GRU cell's nine parameter tensors.
///
/// `w_*` map the input (d → hidden), `u_*` map the previous hidden state
/// (hidden → hidden), `b_*` are hidden-width biases; gates: `z` update,
/// `r` reset, `h` candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w_z: TensorId,
    pub u_z: TensorId,
    pub b_z: TensorId,
    pub w_r: TensorId,
    pub u_r: TensorId,
    pub b_r: TensorId,
    pub w_h: TensorId,
    pub u_h: TensorId,
    pub b_h: TensorId,
}

/// One GRU step: given input row `x` (1×d) and state row `h_prev` (1×hidden),
/// produce the next state (1×hidden):
///
/// ```text
/// z = sigmoid(x·W_z + h_prev·U_z + b_z)
/// r = sigmoid(x·W_r + h_prev·U_r + b_r)
/// ĥ = tanh(x·W_h + (r ⊙ h_prev)·U_h + b_h)
/// h = (1 − z) ⊙ h_prev + z ⊙ ĥ
/// ```
pub fn gru_step<S: Scalar>(
    tape: &mut Tape<S>,
    cell: &GruCell,
    x: TensorId,
    h_prev: TensorId,
) -> Result<TensorId> {
    let gate = |tape: &mut Tape<S>, w, u, b| -> Result<TensorId> {
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h_prev, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    };

    let z_pre = gate(tape, cell.w_z, cell.u_z, cell.b_z)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, cell.w_r, cell.u_r, cell.b_r)?;
    let r = tape.sigmoid(r_pre)?;

    let xw = tape.matmul(x, cell.w_h)?;
    let gated_state = tape.mul(r, h_prev)?;
    let hu = tape.matmul(gated_state, cell.u_h)?;
    let pre = tape.add(xw, hu)?;
    let pre = tape.add(pre, cell.b_h)?;
    let candidate = tape.tanh(pre)?;

    let hidden = tape.shape(h_prev).to_vec();
    let ones = tape.constant_filled(1.0, hidden)?;
    let keep = tape.sub(ones, z)?;
    let carried = tape.mul(keep, h_prev)?;
    let updated = tape.mul(z, candidate)?;
    tape.add(carried, updated)
}

/// Run the cell over `inputs` (rows of an s×d matrix, in the given order)
/// from a zero state and return the final hidden state (1×hidden).
pub fn gru_run<S: Scalar>(
    tape: &mut Tape<S>,
    cell: &GruCell,
    inputs: TensorId,
    order: impl Iterator<Item = usize>,
    hidden: usize,
) -> Result<TensorId> {
    let mut h = tape.constant_filled(0.0, vec![1, hidden])?;
    for step in order {
        let x = tape.slice(inputs, 0, step, step + 1)?;
        h = gru_step(tape, cell, x, h)?;
    }
    Ok(h)
}
