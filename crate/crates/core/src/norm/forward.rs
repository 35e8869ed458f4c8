//! Evaluating a norm site on one activation matrix.

use super::state::{NormState, TokenFlags};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Appends the site's normalization of `x: [rows×width]` to `tape`, reading
/// `gamma`/`beta` from the given vars.
pub fn norm_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &NormState<F>,
    flags: &[TokenFlags],
) -> Result<Var> {
    let rows = tape.value(x).as_matrix_dims().0;
    if flags.len() != rows {
        return Err(Error::Dimension(format!(
            "{} token flags for {rows} rows",
            flags.len()
        )));
    }
    tape.norm(x, gamma, beta, state.center_mean, &state.row_divisors(flags))
}

/// Normalizes each row of `x: [T×H]` according to `state`.
pub fn norm_forward<F: Scalar>(
    x: &Tensor<F>,
    state: &NormState<F>,
    flags: &[TokenFlags],
) -> Result<Tensor<F>> {
    let (_, h) = x.as_matrix_dims();
    if h != state.width() {
        return Err(Error::Dimension(format!(
            "input width {h} for a norm of width {}",
            state.width()
        )));
    }
    state.validate()?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(state.gamma.clone());
    let b = tape.constant(state.beta.clone());
    let out = norm_on_tape(&mut tape, xv, g, b, state, flags)?;
    Ok(tape.into_value(out))
}
