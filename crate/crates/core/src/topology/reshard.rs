use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::groups::{
    build_generation_groups_vanilla, build_generation_groups_zero_redundancy, build_training_groups, GroupLayout,
    ParallelGroups, Rank,
};
use super::ownership::{shard_ownership, SliceId};
use super::{GenStrategy, TopologyError, TrainStrategy};
use crate::units::{serde_units, Units};

/// Actor engine used for the training → generation transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Engine {
    /// All-gather over every rank of the actor.
    #[serde(rename = "dschat")]
    DsChat,
    /// All-gather inside each training TP×PP block (vanilla grouping).
    #[serde(rename = "hf-v")]
    HybridVanilla,
    /// All-gather inside each micro-DP group (zero-redundancy grouping).
    #[serde(rename = "hf")]
    Hybrid,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::DsChat, Engine::HybridVanilla, Engine::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Engine::DsChat => "dschat",
            Engine::HybridVanilla => "hf-v",
            Engine::Hybrid => "hf",
        }
    }

    /// Whether generation weights are built in place around the training
    /// slice instead of next to a separately kept training copy.
    fn reuses_training_weights(self) -> bool {
        matches!(self, Engine::Hybrid)
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dschat" | "ds-chat" => Ok(Engine::DsChat),
            "hf-v" | "hf_v" | "hfv" => Ok(Engine::HybridVanilla),
            "hf" => Ok(Engine::Hybrid),
            other => Err(format!("unknown engine `{other}` (expected dschat, hf-v or hf)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReshard {
    pub rank: Rank,
    /// Training slices held before the transition.
    pub own: Vec<SliceId>,
    /// Generation shard required after the transition.
    pub target: Vec<SliceId>,
    /// Slices present after the all-gather (union over the gather group).
    pub gathered: Vec<SliceId>,
    /// Units this rank feeds into the all-gather.
    #[serde(with = "serde_units")]
    pub contribution: Units,
    #[serde(with = "serde_units")]
    pub recv: Units,
    #[serde(with = "serde_units")]
    pub peak_mem: Units,
    #[serde(with = "serde_units")]
    pub redundancy: Units,
    /// The target shard is available after the gather.
    pub covers_target: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReshardPlan {
    pub engine: Engine,
    pub train: TrainStrategy,
    pub gen: GenStrategy,
    #[serde(with = "serde_units")]
    pub m: Units,
    #[serde(with = "serde_units")]
    pub slice_size: Units,
    pub gather_groups: Vec<Vec<Rank>>,
    pub ranks: Vec<RankReshard>,
}

impl ReshardPlan {
    /// How many ranks hold each slice inside one gather group.
    pub fn holders_in(&self, group: &[Rank]) -> BTreeMap<SliceId, u32> {
        let mut holders = BTreeMap::new();
        for &r in group {
            for s in &self.ranks[r as usize].own {
                *holders.entry(*s).or_insert(0) += 1;
            }
        }
        holders
    }

    pub fn max_recv(&self) -> Units {
        self.ranks.iter().map(|r| r.recv).max().unwrap_or_default()
    }

    /// Per-rank maxima of the three quantities.
    pub fn measured(&self) -> OverheadTriple {
        let max = |f: fn(&RankReshard) -> Units| self.ranks.iter().map(f).max().unwrap_or_default();
        OverheadTriple {
            comm_volume: max(|r| r.recv),
            peak_mem: max(|r| r.peak_mem),
            redundancy: max(|r| r.redundancy),
        }
    }

    pub fn gather_group_of(&self, rank: Rank) -> Option<&Vec<Rank>> {
        self.gather_groups.iter().find(|g| g.contains(&rank))
    }
}

/// Brute-force transition accounting from explicit slice sets.
///
/// Within a gather group, a slice held by `h` members is split into `h`
/// equal pieces, one contributed by each holder (ring all-gather). A rank
/// receives every piece of the group's union it did not contribute.
pub fn reshard_plan(
    train_groups: &ParallelGroups,
    gen_groups: &ParallelGroups,
    engine: Engine,
    m: Units,
) -> Result<ReshardPlan, TopologyError> {
    if train_groups.world != gen_groups.world {
        return Err(TopologyError::WorldMismatch {
            expected: train_groups.world,
            found: gen_groups.world,
        });
    }
    let train = match train_groups.layout {
        GroupLayout::Training { train } => train,
        _ => return Err(TopologyError::LayoutMismatch("first argument must be training groups".into())),
    };
    let gen = match gen_groups.layout {
        GroupLayout::Generation { train: t, gen, .. } if t == train => gen,
        GroupLayout::Generation { .. } => {
            return Err(TopologyError::LayoutMismatch(
                "generation groups were built for a different training strategy".into(),
            ))
        }
        _ => return Err(TopologyError::LayoutMismatch("second argument must be generation groups".into())),
    };

    let own = shard_ownership(train_groups, m);
    let target = shard_ownership(gen_groups, m);
    let size = own.slice_size;
    let world = train_groups.world;

    let gather_groups: Vec<Vec<Rank>> = match engine {
        Engine::DsChat => vec![(0..world).collect()],
        Engine::HybridVanilla => train_groups.replicas(),
        Engine::Hybrid => gen_groups.micro_dp_groups.clone(),
    };

    let mut rows: Vec<Option<RankReshard>> = vec![None; world as usize];
    for group in &gather_groups {
        let mut holders: BTreeMap<SliceId, i128> = BTreeMap::new();
        let mut union: BTreeSet<SliceId> = BTreeSet::new();
        for &r in group {
            for s in &own.per_rank[r as usize] {
                *holders.entry(*s).or_insert(0) += 1;
                union.insert(*s);
            }
        }
        let union_units = size * Units::from_integer(union.len() as i128);
        for &r in group {
            let mine = &own.per_rank[r as usize];
            let tgt = &target.per_rank[r as usize];
            let piece = |s: &SliceId| size / Units::from_integer(holders[s]);
            let contribution: Units = mine.iter().map(piece).sum();
            let recv = union_units - contribution;
            let resident: BTreeSet<SliceId> = union.union(mine).copied().collect();
            let peak_mem = size * Units::from_integer(resident.len() as i128);
            let redundancy: Units = if engine.reuses_training_weights() {
                mine.iter().filter(|s| !tgt.contains(s)).map(piece).sum()
            } else {
                contribution
            };
            rows[r as usize] = Some(RankReshard {
                rank: r,
                own: mine.iter().copied().collect(),
                target: tgt.iter().copied().collect(),
                gathered: union.iter().copied().collect(),
                contribution,
                recv,
                peak_mem,
                redundancy,
                covers_target: tgt.is_subset(&resident),
            });
        }
    }
    let ranks = rows
        .into_iter()
        .enumerate()
        .map(|(r, row)| row.ok_or_else(|| TopologyError::LayoutMismatch(format!("rank {r} is in no gather group"))))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ReshardPlan {
        engine,
        train,
        gen,
        m,
        slice_size: size,
        gather_groups,
        ranks,
    })
}

/// Generation groups an engine reshards into: zero-redundancy grouping for
/// `hf`, vanilla grouping for the other two.
pub fn engine_generation_groups(
    train: &TrainStrategy,
    gen: &GenStrategy,
    engine: Engine,
) -> Result<ParallelGroups, TopologyError> {
    match engine {
        Engine::Hybrid => build_generation_groups_zero_redundancy(train, gen),
        Engine::DsChat | Engine::HybridVanilla => build_generation_groups_vanilla(train, gen),
    }
}

/// Builds both layouts over `train.world()` ranks and plans the transition.
pub fn transition_plan(
    train: &TrainStrategy,
    gen: &GenStrategy,
    engine: Engine,
    m: Units,
) -> Result<ReshardPlan, TopologyError> {
    let tr = build_training_groups(train, train.world())?;
    let ge = engine_generation_groups(train, gen, engine)?;
    reshard_plan(&tr, &ge, engine, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadTriple {
    #[serde(with = "serde_units")]
    pub comm_volume: Units,
    #[serde(with = "serde_units")]
    pub peak_mem: Units,
    #[serde(with = "serde_units")]
    pub redundancy: Units,
}

/// Closed-form per-rank transition overhead for each engine.
pub fn analytic_overhead(train: &TrainStrategy, gen: &GenStrategy, engine: Engine, m: Units) -> OverheadTriple {
    let i = |x: u32| Units::from_integer(x as i128);
    let tp = i(train.mp());
    let tpd = i(train.world());
    let gp = i(gen.mp());
    match engine {
        Engine::DsChat => OverheadTriple {
            comm_volume: (tpd - i(1)) / tpd * m,
            peak_mem: m,
            redundancy: m / tpd,
        },
        Engine::HybridVanilla => OverheadTriple {
            comm_volume: (tp - i(1)) / tp * m,
            peak_mem: m,
            redundancy: m / tp,
        },
        Engine::Hybrid => OverheadTriple {
            comm_volume: (tp - gp) / (gp * tp) * m,
            peak_mem: m / gp,
            redundancy: Units::from_integer(0),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RankCheck {
    pub rank: Rank,
    pub redundancy_zero: bool,
    pub training_within_generation: bool,
    pub recv_matches: bool,
}

impl RankCheck {
    pub fn passed(&self) -> bool {
        self.redundancy_zero && self.training_within_generation && self.recv_matches
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ZeroRedundancyReport {
    pub ranks: Vec<RankCheck>,
}

impl ZeroRedundancyReport {
    pub fn all_passed(&self) -> bool {
        self.ranks.iter().all(RankCheck::passed)
    }

    pub fn failing_ranks(&self) -> Vec<Rank> {
        self.ranks.iter().filter(|c| !c.passed()).map(|c| c.rank).collect()
    }
}

/// Per-rank zero-redundancy checks: no extra training copy, training
/// slice inside the generation shard, and only the missing part received.
pub fn verify_zero_redundancy(plan: &ReshardPlan) -> ZeroRedundancyReport {
    let ranks = plan
        .ranks
        .iter()
        .map(|row| {
            let own: BTreeSet<_> = row.own.iter().collect();
            let target: BTreeSet<_> = row.target.iter().collect();
            let expected_recv =
                plan.slice_size * Units::from_integer(row.target.len() as i128 - row.own.len() as i128);
            RankCheck {
                rank: row.rank,
                redundancy_zero: row.redundancy == Units::from_integer(0),
                training_within_generation: own.is_subset(&target),
                recv_matches: row.recv == expected_recv,
            }
        })
        .collect();
    ZeroRedundancyReport { ranks }
}
