use super::{DiffError, Tape, Var};

/// Handles to the packed weights of one GRU cell.
///
/// Gate blocks are stacked in the order reset, update, candidate:
/// `w_input: [3H, X]`, `w_hidden: [3H, H]`, `b_input: [3H]`, `b_hidden: [3H]`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_input: Var,
    pub w_hidden: Var,
    pub b_input: Var,
    pub b_hidden: Var,
}

/// One gated-recurrent-unit update.
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell_step(tape: &mut Tape, h: Var, x: Var, p: &GruParams) -> Result<Var, DiffError> {
    let hidden = tape.value(h).cols();
    if tape.value(p.w_hidden).shape() != [3 * hidden, hidden] {
        return Err(DiffError::Shape {
            op: "gru_cell_step",
            detail: format!(
                "hidden state width {hidden} vs W_h {:?}",
                tape.value(p.w_hidden).shape()
            ),
        });
    }
    let gi = tape.linear(x, p.w_input, p.b_input)?;
    let gh = tape.linear(h, p.w_hidden, p.b_hidden)?;
    if tape.value(gi).shape() != tape.value(gh).shape() {
        return Err(DiffError::Shape {
            op: "gru_cell_step",
            detail: format!(
                "batch of x {:?} vs h {:?}",
                tape.value(gi).shape(),
                tape.value(gh).shape()
            ),
        });
    }
    let gate = |tape: &mut Tape, k: usize| -> Result<(Var, Var), DiffError> {
        Ok((
            tape.slice_cols(gi, k * hidden, hidden)?,
            tape.slice_cols(gh, k * hidden, hidden)?,
        ))
    };
    let (ir, hr) = gate(tape, 0)?;
    let (iz, hz) = gate(tape, 1)?;
    let (in_, hn) = gate(tape, 2)?;
    let r = tape.add(ir, hr)?;
    let r = tape.sigmoid(r)?;
    let z = tape.add(iz, hz)?;
    let z = tape.sigmoid(z)?;
    let rh = tape.mul(r, hn)?;
    let n = tape.add(in_, rh)?;
    let n = tape.tanh(n)?;
    // h' = n + z ⊙ (h − n)
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}
