//! Training/generation parallel groups, weight-shard ownership and the
//! resharding accounting between the two layouts.

mod groups;
mod ownership;
mod reshard;

pub use groups::{
    build_generation_groups_vanilla, build_generation_groups_zero_redundancy, build_training_groups,
    GroupLayout, GroupingScheme, ParallelGroups, Rank, RankCoord,
};
pub use ownership::{shard_ownership, ShardOwnership, SliceId};
pub use reshard::{
    analytic_overhead, engine_generation_groups, reshard_plan, transition_plan, verify_zero_redundancy, Engine, OverheadTriple, RankCheck,
    RankReshard, ReshardPlan, ZeroRedundancyReport,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3D parallel sizes used for training (and for every non-generation
/// workload): `p` pipeline stages, `t` tensor shards, `d` replicas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStrategy {
    pub p: u32,
    pub t: u32,
    pub d: u32,
}

impl TrainStrategy {
    pub fn new(p: u32, t: u32, d: u32) -> Result<Self, TopologyError> {
        if p == 0 || t == 0 || d == 0 {
            return Err(TopologyError::ZeroSize);
        }
        Ok(Self { p, t, d })
    }

    /// Model-parallel size `p·t`.
    pub fn mp(&self) -> u32 {
        self.p * self.t
    }

    pub fn world(&self) -> u32 {
        self.p * self.t * self.d
    }
}

impl fmt::Display for TrainStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.p, self.t, self.d)
    }
}

/// Actor generation sizes `p_g`, `t_g` and the micro data-parallel size
/// `d_g = p·t / (p_g·t_g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenStrategy {
    pub p_g: u32,
    pub t_g: u32,
    pub d_g: u32,
}

impl GenStrategy {
    /// Derives `d_g` from the training strategy. Requires `p_g | p` and
    /// `t_g | t` so that generation shards are exact unions of training
    /// slices.
    pub fn for_training(train: &TrainStrategy, p_g: u32, t_g: u32) -> Result<Self, TopologyError> {
        if p_g == 0 || t_g == 0 {
            return Err(TopologyError::ZeroSize);
        }
        if !train.p.is_multiple_of(p_g) {
            return Err(TopologyError::NotDivisible(format!(
                "generation pipeline size {p_g} does not divide training pipeline size {}",
                train.p
            )));
        }
        if !train.t.is_multiple_of(t_g) {
            return Err(TopologyError::NotDivisible(format!(
                "generation tensor size {t_g} does not divide training tensor size {}",
                train.t
            )));
        }
        Ok(Self {
            p_g,
            t_g,
            d_g: train.mp() / (p_g * t_g),
        })
    }

    /// Same sizes as training; no resharding needed.
    pub fn identity(train: &TrainStrategy) -> Self {
        Self {
            p_g: train.p,
            t_g: train.t,
            d_g: 1,
        }
    }

    pub fn mp(&self) -> u32 {
        self.p_g * self.t_g
    }

    pub fn check_against(&self, train: &TrainStrategy) -> Result<(), TopologyError> {
        let derived = GenStrategy::for_training(train, self.p_g, self.t_g)?;
        if derived.d_g != self.d_g {
            return Err(TopologyError::NotDivisible(format!(
                "micro data-parallel size {} inconsistent with {}: expected {}",
                self.d_g, train, derived.d_g
            )));
        }
        Ok(())
    }
}

impl fmt::Display for GenStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.p_g, self.t_g, self.d_g)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("parallel sizes must be at least 1")]
    ZeroSize,
    #[error("strategy covers {expected} ranks but the world has {found}")]
    WorldMismatch { expected: u32, found: u32 },
    #[error("{0}")]
    NotDivisible(String),
    #[error("group layout mismatch: {0}")]
    LayoutMismatch(String),
}
