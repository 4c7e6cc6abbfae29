// SPDX-License-Identifier: MIT OR Apache-2.0

use super::Rule;
use crate::error::{Result, WasdError};
use crate::model::{ActivationModel, Prompt, TokenId};

/// Greedy decoding with `rule` enforced at every step.
///
/// Positions are re-anchored to the end of the growing sequence, so a
/// predicate on `pos_from_end = 0` always clamps the newest token.
pub fn intervened_generate(
    model: &dyn ActivationModel,
    x: &Prompt,
    rule: &Rule,
    steps: usize,
) -> Result<Vec<TokenId>> {
    if steps == 0 {
        return Err(WasdError::InvalidConfig("steps must be at least 1".into()));
    }
    let mut sequence = x.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (iv, _) = rule.interventions_for(sequence.len());
        let token = model.next_token(&sequence, &iv)?;
        out.push(token);
        sequence = sequence.push(token);
    }
    Ok(out)
}
