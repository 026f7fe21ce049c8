use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Inputs to the fusion head; absent branches are ablated.
#[derive(Debug, Clone, Copy)]
pub struct FusionInputs {
    /// Query self-representation `[1×d]` and its map `W_qf [d×|C|]`.
    pub query: Option<(Var, Var)>,
    /// Char-level features `Z1 [|C|×d]`.
    pub z1: Option<Var>,
    /// Semantic features `Z2 [|C|×d]`.
    pub z2: Option<Var>,
    /// `W_z`, `[k·d × 1]` for the `k` matching branches present.
    pub w_z: Option<Var>,
    /// `W_x [|C|×|C|]`.
    pub w_x: Var,
}

/// `logits = W_xᵀ·ReLU(q·W_qf + [Z1, Z2]·W_z)` as a `[1×|C|]` row.
pub fn fuse_and_score(tape: &mut Tape, inputs: FusionInputs) -> Result<Var> {
    let mut terms = Vec::new();
    if let Some((q, w_qf)) = inputs.query {
        terms.push(tape.matmul(q, w_qf)?);
    }
    let matched: Vec<Var> = [inputs.z1, inputs.z2].into_iter().flatten().collect();
    if !matched.is_empty() {
        let w_z = inputs
            .w_z
            .ok_or_else(|| Error::Contract("matching features supplied without W_z".into()))?;
        let joined = if matched.len() == 1 {
            matched[0]
        } else {
            tape.concat(&matched, 1)?
        };
        let col = tape.matmul(joined, w_z)?;
        terms.push(tape.transpose(col)?);
    }
    let mut pre = *terms
        .first()
        .ok_or_else(|| Error::Contract("fusion head has no inputs".into()))?;
    for &t in &terms[1..] {
        pre = tape.add(pre, t)?;
    }
    let hidden = tape.relu(pre);
    tape.matmul(hidden, inputs.w_x)
}

/// Summed binary cross-entropy over labels for one example.
pub fn multilabel_loss(tape: &mut Tape, logits: Var, targets: &[f64]) -> Result<Var> {
    if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract("multi-label targets must be 0 or 1".into()));
    }
    tape.bce_with_logits(logits, targets)
}
