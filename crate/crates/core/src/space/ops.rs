use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate operation on a cell edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "zero")]
    Zero,
    #[serde(rename = "skip_connect")]
    SkipConnect,
    #[serde(rename = "avg_pool_3x3")]
    AvgPool3x3,
    #[serde(rename = "max_pool_3x3")]
    MaxPool3x3,
    #[serde(rename = "sep_conv_3x3")]
    SepConv3x3,
    #[serde(rename = "sep_conv_5x5")]
    SepConv5x5,
    #[serde(rename = "dil_conv_3x3")]
    DilConv3x3,
    #[serde(rename = "dil_conv_5x5")]
    DilConv5x5,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::Zero,
        OpKind::SkipConnect,
        OpKind::AvgPool3x3,
        OpKind::MaxPool3x3,
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::SkipConnect => "skip_connect",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown operation `{s}`")))
    }
}

/// Ordered candidate operations, optionally partitioned into groups that are
/// relaxed independently.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationSet {
    ops: Vec<OpKind>,
    groups: Option<Vec<Vec<OpKind>>>,
}

impl OperationSet {
    pub fn new(ops: Vec<OpKind>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::invalid("operation set is empty"));
        }
        let mut seen = ops.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != ops.len() {
            return Err(Error::invalid("operation set contains duplicates"));
        }
        Ok(OperationSet { ops, groups: None })
    }

    /// The eight DARTS operations in their conventional order.
    pub fn canonical() -> Self {
        OperationSet {
            ops: OpKind::ALL.to_vec(),
            groups: None,
        }
    }

    pub fn is_canonical(&self) -> bool {
        let mut sorted = self.ops.clone();
        sorted.sort();
        sorted == OpKind::ALL
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn contains(&self, op: OpKind) -> bool {
        self.ops.contains(&op)
    }

    /// Groups in order; an ungrouped set is one group holding every operation.
    pub fn groups(&self) -> Vec<Vec<OpKind>> {
        self.groups
            .clone()
            .unwrap_or_else(|| vec![self.ops.clone()])
    }

    pub fn is_grouped(&self) -> bool {
        self.groups.is_some()
    }

    /// Attach a partition. Groups must be non-empty, disjoint and cover the set.
    pub fn with_groups(mut self, groups: Vec<Vec<OpKind>>) -> Result<Self> {
        let mut flat: Vec<OpKind> = groups.iter().flatten().copied().collect();
        if groups.iter().any(Vec::is_empty) {
            return Err(Error::invalid("operation group is empty"));
        }
        let total = flat.len();
        flat.sort();
        flat.dedup();
        if flat.len() != total {
            return Err(Error::invalid("operation groups overlap"));
        }
        let mut own = self.ops.clone();
        own.sort();
        if flat != own {
            return Err(Error::invalid(
                "operation groups do not cover the operation set",
            ));
        }
        self.groups = Some(groups);
        Ok(self)
    }
}

fn require_canonical(ops: &OperationSet, scheme: &str) -> Result<()> {
    if !ops.is_canonical() {
        return Err(Error::invalid(format!(
            "{scheme} grouping is only defined for the canonical 8-operation set"
        )));
    }
    Ok(())
}

/// Two groups: topology-related (zero, skip, pools) and topology-agnostic
/// (the four convolutions).
pub fn group_partition_v2(ops: &OperationSet) -> Result<OperationSet> {
    require_canonical(ops, "group-v2")?;
    use OpKind::*;
    ops.clone().with_groups(vec![
        vec![Zero, SkipConnect, AvgPool3x3, MaxPool3x3],
        vec![SepConv3x3, SepConv5x5, DilConv3x3, DilConv5x5],
    ])
}

/// Four groups: the topology-related pair, pools, separable and dilated
/// convolutions.
pub fn group_partition_v1(ops: &OperationSet) -> Result<OperationSet> {
    require_canonical(ops, "group-v1")?;
    use OpKind::*;
    ops.clone().with_groups(vec![
        vec![Zero, SkipConnect],
        vec![AvgPool3x3, MaxPool3x3],
        vec![SepConv3x3, SepConv5x5],
        vec![DilConv3x3, DilConv5x5],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v2_partition_membership() {
        let grouped = group_partition_v2(&OperationSet::canonical()).unwrap();
        let groups = grouped.groups();
        assert_eq!(groups.len(), 2);
        assert!(groups.iter().all(|g| g.len() == 4));
        assert!(groups[0].contains(&OpKind::SkipConnect));
        assert!(groups[0].contains(&OpKind::Zero));
        assert!(groups[1].contains(&OpKind::SepConv3x3));
    }

    #[test]
    fn nonstandard_sets_cannot_be_grouped() {
        let small = OperationSet::new(vec![OpKind::Zero, OpKind::SkipConnect]).unwrap();
        assert!(group_partition_v2(&small).is_err());
        assert!(group_partition_v1(&small).is_err());
    }

    #[test]
    fn partition_must_be_disjoint_and_covering() {
        use OpKind::*;
        let set = OperationSet::new(vec![Zero, SkipConnect, SepConv3x3]).unwrap();
        assert!(set
            .clone()
            .with_groups(vec![vec![Zero, SkipConnect], vec![SkipConnect, SepConv3x3]])
            .is_err());
        assert!(set
            .clone()
            .with_groups(vec![vec![Zero], vec![SepConv3x3]])
            .is_err());
        assert!(set
            .with_groups(vec![vec![Zero, SkipConnect], vec![SepConv3x3]])
            .is_ok());
    }

    #[test]
    fn names_round_trip() {
        for op in OpKind::ALL {
            assert_eq!(op.name().parse::<OpKind>().unwrap(), op);
        }
        assert!(OperationSet::new(vec![OpKind::Zero, OpKind::Zero]).is_err());
    }
}
