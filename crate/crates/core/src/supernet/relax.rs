//! Continuous relaxation: mixed operations, combination-to-edge weight
//! aggregation and node sums.

use crate::error::{Error, Result};
use crate::space::TopologySpace;
use crate::tensor::{Tape, Tensor, Var};

/// `Σ_o w_o · o(x)` over already-evaluated candidate outputs.
pub fn mixed_op(tape: &mut Tape, outputs: &[Var], weights: Var) -> Result<Var> {
    if outputs.is_empty() {
        return Err(Error::invalid(
            "mixed operation over an empty candidate list",
        ));
    }
    tape.weighted_sum(outputs, weights)
}

/// Mixed operation whose candidates are split into independently
/// normalised groups: `Σ_g Σ_{o ∈ g} w_{g,o} · o(x)`.
pub fn grouped_mixed_op(tape: &mut Tape, groups: &[(Vec<Var>, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (outputs, weights) in groups {
        let part = mixed_op(tape, outputs, *weights)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, part)?,
            None => part,
        });
    }
    acc.ok_or_else(|| Error::invalid("mixed operation over an empty group list"))
}

/// Matrix `M` with `M[i][c] = 1 / N(c)` when edge `i` belongs to combination
/// `c`, so that `γ = M β`.
pub fn gamma_matrix(space: &TopologySpace) -> Result<Tensor> {
    let n = space.in_degree;
    let m = space.len();
    let mut data = vec![0.0; n * m];
    for (c, combo) in space.combinations.iter().enumerate() {
        if combo.code.len() != n {
            return Err(Error::invalid(format!(
                "combination {} spans {} edges but node {} has {n}",
                combo.label(),
                combo.code.len(),
                space.node
            )));
        }
        let inv = 1.0 / combo.size as f64;
        for (i, &bit) in combo.code.iter().enumerate() {
            if bit {
                data[i * m + c] = inv;
            }
        }
    }
    Tensor::new(vec![n, m], data)
}

/// Edge weights `γ^{(i,j)} = Σ_{c ∋ (i,j)} β_c / N(c)` from normalised `β`.
pub fn aggregate_gamma(beta: &[f64], space: &TopologySpace) -> Result<Vec<f64>> {
    if beta.len() != space.len() {
        return Err(Error::shape(
            "aggregate_gamma",
            format!("{} weights for {} combinations", beta.len(), space.len()),
        ));
    }
    let m = gamma_matrix(space)?;
    let cols = space.len();
    Ok(m.data()
        .chunks(cols)
        .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect())
}

/// [`aggregate_gamma`] on the tape, so gradients reach `β`.
pub fn aggregate_gamma_var(tape: &mut Tape, beta: Var, space: &TopologySpace) -> Result<Var> {
    let m = tape.constant(gamma_matrix(space)?)?;
    let column = tape.reshape(beta, &[space.len(), 1])?;
    let gamma = tape.matmul(m, column)?;
    tape.reshape(gamma, &[space.in_degree])
}

/// `x_j = Σ_i γ_i · ō_i(x_i)`; `None` means every `γ_i = 1`.
pub fn node_forward(tape: &mut Tape, edge_outputs: &[Var], gamma: Option<Var>) -> Result<Var> {
    let first = *edge_outputs
        .first()
        .ok_or_else(|| Error::invalid("node without incoming edges"))?;
    match gamma {
        Some(g) => tape.weighted_sum(edge_outputs, g),
        None => {
            let mut acc = first;
            for &e in &edge_outputs[1..] {
                acc = tape.add(acc, e)?;
            }
            Ok(acc)
        }
    }
}
