use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Attention pooling of a query over its own tokens.
///
/// `u = v·tanh(W_q·Qᵀ)`, `α = softmax(u)` over the first `true_length`
/// positions (pad positions get exactly zero weight), `q = α·Q`.
/// Returns `(q [1×d], α [1×L_q])`.
pub fn self_match(tape: &mut Tape, q_tokens: Var, w_q: Var, v: Var, true_length: usize) -> Result<(Var, Var)> {
    let len = tape.shape(q_tokens)[0];
    if true_length == 0 || true_length > len {
        return Err(Error::Contract(format!(
            "self_match true_length {true_length} outside 1..={len}"
        )));
    }
    let qt = tape.transpose(q_tokens)?;
    let proj = tape.matmul(w_q, qt)?;
    let act = tape.tanh(proj);
    let scores = tape.matmul(v, act)?;
    let mask: Vec<bool> = (0..len).map(|t| t < true_length).collect();
    let alpha = tape.masked_softmax(scores, 1, Some(&mask))?;
    let pooled = tape.matmul(alpha, q_tokens)?;
    Ok((pooled, alpha))
}
