use crate::config::ModelConfig;
use crate::error::Result;
use crate::tape::{Tape, Var};

/// Bilinear interaction map `M_j = Q·W_qc·C_jᵀ`, shape `[L_q×L_c]`.
pub fn char_interaction(tape: &mut Tape, q_tokens: Var, c_tokens: Var, w_qc: Var) -> Result<Var> {
    let qw = tape.matmul(q_tokens, w_qc)?;
    let ct = tape.transpose(c_tokens)?;
    tape.matmul(qw, ct)
}

/// Stacks interaction maps on a leading channel axis: `[|C|×L_q×L_c]`.
pub fn stack_maps(tape: &mut Tape, maps: &[Var]) -> Result<Var> {
    let lifted = maps
        .iter()
        .map(|&m| {
            let s = tape.shape(m).to_vec();
            tape.reshape(m, &[1, s[0], s[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&lifted, 0)
}

/// Handles for one conv + pool block.
#[derive(Debug, Clone, Copy)]
pub struct ConvBlockVars {
    pub kernels: Var,
    pub bias: Var,
}

/// Per-category conv→ReLU→pool blocks, flatten, then projection to `d`.
///
/// Each category channel of `maps` runs through the same blocks on its own;
/// channels are never mixed. Returns `Z1 [|C|×d]`.
pub fn char_match(
    tape: &mut Tape,
    maps: Var,
    blocks: &[ConvBlockVars],
    projection: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let shape = tape.shape(maps).to_vec();
    let (n_cats, lq, lc) = (shape[0], shape[1], shape[2]);
    let mut rows = Vec::with_capacity(n_cats);
    for k in 0..n_cats {
        let mut x = tape.narrow(maps, 0, k, 1)?;
        debug_assert_eq!(tape.shape(x), &[1, lq, lc]);
        for b in blocks {
            x = tape.conv2d(x, b.kernels, b.bias, cfg.conv_stride)?;
            x = tape.relu(x);
            x = tape.maxpool2d(x, cfg.pool_window, cfg.pool_stride)?;
        }
        let flat = tape.value(x).len();
        rows.push(tape.reshape(x, &[1, flat])?);
    }
    let stacked = tape.concat(&rows, 0)?;
    tape.matmul(stacked, projection)
}
