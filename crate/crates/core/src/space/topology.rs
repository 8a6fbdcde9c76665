//! Edge-combination spaces for a single intermediate node.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which edge subsets a node may choose from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyPolicy {
    /// Exactly two incoming edges per node.
    Pairwise,
    /// Any non-empty subset of incoming edges.
    Flexible,
}

impl fmt::Display for TopologyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyPolicy::Pairwise => "pairwise",
            TopologyPolicy::Flexible => "flexible",
        })
    }
}

impl FromStr for TopologyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(TopologyPolicy::Pairwise),
            "flexible" => Ok(TopologyPolicy::Flexible),
            other => Err(Error::invalid(format!("unknown topology policy `{other}`"))),
        }
    }
}

/// Subset of a node's incoming edges as a binary code: `code[k]` is set when
/// the edge from predecessor `k + 1` is kept.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeCombination {
    pub node: usize,
    pub code: Vec<bool>,
    pub size: usize,
}

impl EdgeCombination {
    pub fn from_code(node: usize, code: Vec<bool>) -> Result<Self> {
        let size = code.iter().filter(|&&b| b).count();
        if size == 0 {
            return Err(Error::invalid(
                "edge combination must keep at least one edge",
            ));
        }
        Ok(EdgeCombination { node, code, size })
    }

    /// Combination keeping the given 1-based predecessors out of `n`.
    pub fn from_predecessors(node: usize, n: usize, preds: &[usize]) -> Result<Self> {
        let mut code = vec![false; n];
        for &p in preds {
            if p == 0 || p > n {
                return Err(Error::invalid(format!("predecessor {p} outside 1..={n}")));
            }
            code[p - 1] = true;
        }
        Self::from_code(node, code)
    }

    /// Kept predecessors, ascending.
    pub fn predecessors(&self) -> Vec<usize> {
        self.code
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k + 1))
            .collect()
    }

    pub fn contains(&self, predecessor: usize) -> bool {
        predecessor >= 1 && self.code.get(predecessor - 1).copied().unwrap_or(false)
    }

    /// Code as a bit string, first predecessor first, e.g. `"10110"`.
    pub fn code_string(&self) -> String {
        self.code
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    /// Human label such as `<1,3>`.
    pub fn label(&self) -> String {
        let preds: Vec<String> = self
            .predecessors()
            .iter()
            .map(ToString::to_string)
            .collect();
        format!("<{}>", preds.join(","))
    }
}

/// Ordered candidate combinations for one node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpace {
    pub node: usize,
    pub in_degree: usize,
    pub policy: TopologyPolicy,
    pub combinations: Vec<EdgeCombination>,
}

impl TopologySpace {
    pub fn build(policy: TopologyPolicy, node: usize, n: usize) -> Result<Self> {
        match policy {
            TopologyPolicy::Pairwise => build_pairwise_space(node, n),
            TopologyPolicy::Flexible => build_flexible_space(node, n),
        }
    }

    pub fn len(&self) -> usize {
        self.combinations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combinations.is_empty()
    }

    pub fn position(&self, combo: &EdgeCombination) -> Option<usize> {
        self.combinations.iter().position(|c| c.code == combo.code)
    }
}

/// All `C(n, 2)` pairs `<i1, i2>` with `i1 < i2`, in lexicographic order.
pub fn build_pairwise_space(node: usize, n: usize) -> Result<TopologySpace> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "pairwise space needs at least 2 incoming edges, got {n}"
        )));
    }
    let mut combinations = Vec::with_capacity(n * (n - 1) / 2);
    for i1 in 1..=n {
        for i2 in i1 + 1..=n {
            combinations.push(EdgeCombination::from_predecessors(node, n, &[i1, i2])?);
        }
    }
    Ok(TopologySpace {
        node,
        in_degree: n,
        policy: TopologyPolicy::Pairwise,
        combinations,
    })
}

/// All `2^n − 1` non-empty codes, in increasing binary value where the
/// first predecessor is the least significant bit.
pub fn build_flexible_space(node: usize, n: usize) -> Result<TopologySpace> {
    if n == 0 {
        return Err(Error::invalid(
            "flexible space needs at least one incoming edge",
        ));
    }
    if n > 20 {
        return Err(Error::invalid(format!(
            "flexible space over {n} edges is too large to enumerate"
        )));
    }
    let combinations = (1u32..(1u32 << n))
        .map(|value| {
            EdgeCombination::from_code(node, (0..n).map(|k| value >> k & 1 == 1).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TopologySpace {
        node,
        in_degree: n,
        policy: TopologyPolicy::Flexible,
        combinations,
    })
}
