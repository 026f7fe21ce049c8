use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Mean of the first `len` rows of each category encoding, stacked to
/// `[|C|×d]`.
pub fn category_means(tape: &mut Tape, categories: &[(Var, usize)]) -> Result<Var> {
    let rows = categories
        .iter()
        .map(|&(c, len)| {
            if len == 0 {
                return Err(Error::Contract("category with no tokens".into()));
            }
            let valid = tape.narrow(c, 0, 0, len)?;
            let mean = tape.mean(valid, 0)?;
            let d = tape.value(mean).len();
            tape.reshape(mean, &[1, d])
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&rows, 0)
}

/// Cross-attention of mean-pooled categories over query tokens:
/// `Z2 = softmax_rows(C·W_qs·Qᵀ)·Q` with pad query positions masked.
pub fn semantic_match_from_means(
    tape: &mut Tape,
    q_tokens: Var,
    means: Var,
    w_qs: Var,
    true_length: usize,
) -> Result<Var> {
    let len = tape.shape(q_tokens)[0];
    if true_length == 0 || true_length > len {
        return Err(Error::Contract(format!(
            "semantic_match true_length {true_length} outside 1..={len}"
        )));
    }
    let cw = tape.matmul(means, w_qs)?;
    let qt = tape.transpose(q_tokens)?;
    let scores = tape.matmul(cw, qt)?;
    let mask: Vec<bool> = (0..len).map(|t| t < true_length).collect();
    let attn = tape.masked_softmax(scores, 1, Some(&mask))?;
    tape.matmul(attn, q_tokens)
}

/// `Z2 [|C|×d]` from raw category encodings paired with their true lengths.
pub fn semantic_match(
    tape: &mut Tape,
    q_tokens: Var,
    categories: &[(Var, usize)],
    w_qs: Var,
    true_length: usize,
) -> Result<Var> {
    let means = category_means(tape, categories)?;
    semantic_match_from_means(tape, q_tokens, means, w_qs, true_length)
}
