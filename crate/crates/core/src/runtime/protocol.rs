use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{ParallelGroups, Rank, RankCoord};

/// How a logical batch is laid onto a worker group's ranks and gathered
/// back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "ONE_TO_ALL")]
    OneToAll,
    #[serde(rename = "3D_PROTO")]
    ThreeD,
    #[serde(rename = "3D_ALL_MICRO_DP")]
    ThreeDAllMicroDp,
    #[serde(rename = "3D_PP_ONLY")]
    ThreeDPpOnly,
    #[serde(rename = "DP_PROTO")]
    Dp,
    #[serde(rename = "ALL_TO_ALL")]
    AllToAll,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::OneToAll,
        Protocol::ThreeD,
        Protocol::ThreeDAllMicroDp,
        Protocol::ThreeDPpOnly,
        Protocol::Dp,
        Protocol::AllToAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::OneToAll => "ONE_TO_ALL",
            Protocol::ThreeD => "3D_PROTO",
            Protocol::ThreeDAllMicroDp => "3D_ALL_MICRO_DP",
            Protocol::ThreeDPpOnly => "3D_PP_ONLY",
            Protocol::Dp => "DP_PROTO",
            Protocol::AllToAll => "ALL_TO_ALL",
        }
    }

    /// Protocols whose collect exactly inverts distribute.
    pub fn has_inverse(self) -> bool {
        matches!(self, Protocol::ThreeD | Protocol::ThreeDAllMicroDp | Protocol::Dp)
    }

    /// Number of chunks the batch is split into.
    pub fn split_count(self, groups: &ParallelGroups) -> u32 {
        match self {
            Protocol::ThreeD | Protocol::Dp | Protocol::ThreeDAllMicroDp => groups.dp_size(),
            Protocol::OneToAll | Protocol::ThreeDPpOnly | Protocol::AllToAll => 1,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown transfer protocol `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{protocol}: batch of {len} does not split into {split} equal chunks")]
    IndivisibleBatch { protocol: Protocol, len: usize, split: u32 },
    #[error("{protocol}: designated rank {rank} produced no output")]
    MissingOutput { protocol: Protocol, rank: Rank },
    #[error("ALL_TO_ALL takes per-rank inputs; use distribute_per_rank")]
    NeedsPerRankInputs,
    #[error("expected {expected} per-rank entries, found {found}")]
    RankCount { expected: u32, found: usize },
    #[error("3D_ALL_MICRO_DP needs a generation layout")]
    NotGenerationLayout,
}

/// Outputs gathered from the designated ranks, in group order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Collected<T> {
    pub sources: Vec<Rank>,
    pub parts: Vec<Vec<T>>,
}

impl<T: Clone> Collected<T> {
    pub fn concat(&self) -> Vec<T> {
        self.parts.iter().flatten().cloned().collect()
    }
}

fn check_layout(protocol: Protocol, groups: &ParallelGroups) -> Result<(), ProtocolError> {
    let generation = matches!(groups.layout, crate::topology::GroupLayout::Generation { .. });
    if protocol == Protocol::ThreeDAllMicroDp && !generation {
        return Err(ProtocolError::NotGenerationLayout);
    }
    Ok(())
}

/// Per-rank inputs for `batch`. Splitting protocols hand chunk `i` to every
/// rank whose DP coordinate is `i`; 3D_ALL_MICRO_DP does the same over the
/// generation layout, whose DP coordinate enumerates the `d·d_g` generation
/// replicas.
pub fn distribute<T: Clone>(
    protocol: Protocol,
    batch: &[T],
    groups: &ParallelGroups,
) -> Result<Vec<Vec<T>>, ProtocolError> {
    check_layout(protocol, groups)?;
    let world = groups.world as usize;
    match protocol {
        Protocol::AllToAll => Err(ProtocolError::NeedsPerRankInputs),
        Protocol::OneToAll | Protocol::ThreeDPpOnly => Ok(vec![batch.to_vec(); world]),
        Protocol::ThreeD | Protocol::Dp | Protocol::ThreeDAllMicroDp => {
            let split = protocol.split_count(groups);
            if !batch.len().is_multiple_of(split as usize) {
                return Err(ProtocolError::IndivisibleBatch {
                    protocol,
                    len: batch.len(),
                    split,
                });
            }
            let chunk = batch.len() / split as usize;
            Ok(groups
                .coords()
                .iter()
                .map(|c| {
                    let start = c.dp as usize * chunk;
                    batch[start..start + chunk].to_vec()
                })
                .collect())
        }
    }
}

/// ALL_TO_ALL: per-rank inputs pass through unchanged.
pub fn distribute_per_rank<T: Clone>(
    per_rank: Vec<Vec<T>>,
    groups: &ParallelGroups,
) -> Result<Vec<Vec<T>>, ProtocolError> {
    if per_rank.len() != groups.world as usize {
        return Err(ProtocolError::RankCount {
            expected: groups.world,
            found: per_rank.len(),
        });
    }
    Ok(per_rank)
}

/// Ranks whose outputs [`collect`] reads, in concatenation order.
pub fn designated_ranks(protocol: Protocol, groups: &ParallelGroups) -> Vec<Rank> {
    let coords = groups.coords();
    let pick = |pred: &dyn Fn(&RankCoord) -> bool, order: &dyn Fn(&RankCoord) -> u32| -> Vec<Rank> {
        let mut ranks: Vec<Rank> = (0..groups.world).filter(|&r| pred(&coords[r as usize])).collect();
        ranks.sort_by_key(|&r| (order(&coords[r as usize]), r));
        ranks
    };
    match protocol {
        Protocol::OneToAll | Protocol::AllToAll => (0..groups.world).collect(),
        Protocol::ThreeD => {
            let last = groups.pp_size() - 1;
            pick(&|c| c.pp == last && c.tp == 0, &|c| c.dp)
        }
        Protocol::ThreeDAllMicroDp => pick(&|c| c.pp == 0 && c.tp == 0, &|c| c.dp),
        Protocol::Dp => groups.replicas().iter().map(|r| r[0]).collect(),
        Protocol::ThreeDPpOnly => pick(&|c| c.tp == 0 && c.dp == 0, &|c| c.pp),
    }
}

/// Gathers the designated ranks' outputs. `outputs[r]` is `None` when rank
/// `r` produced nothing.
pub fn collect<T: Clone>(
    protocol: Protocol,
    outputs: &[Option<Vec<T>>],
    groups: &ParallelGroups,
) -> Result<Collected<T>, ProtocolError> {
    check_layout(protocol, groups)?;
    if outputs.len() != groups.world as usize {
        return Err(ProtocolError::RankCount {
            expected: groups.world,
            found: outputs.len(),
        });
    }
    let sources = designated_ranks(protocol, groups);
    let parts = sources
        .iter()
        .map(|&r| {
            outputs[r as usize]
                .clone()
                .ok_or(ProtocolError::MissingOutput { protocol, rank: r })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Collected { sources, parts })
}
