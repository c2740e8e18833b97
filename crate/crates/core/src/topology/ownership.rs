use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::groups::{GroupLayout, ParallelGroups};
use crate::units::Units;

/// One training slice: a (pipeline stage, tensor shard) block holding
/// `M / (p·t)` weight units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceId {
    pub stage: u32,
    pub shard: u32,
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.stage, self.shard)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardOwnership {
    pub num_slices: u32,
    pub slice_size: Units,
    pub per_rank: Vec<BTreeSet<SliceId>>,
}

impl ShardOwnership {
    /// Total weight units owned by `rank`.
    pub fn owned_units(&self, rank: u32) -> Units {
        self.slice_size * Units::from_integer(self.per_rank[rank as usize].len() as i128)
    }
}

/// Which training slices each rank holds under the given groups. For a
/// generation layout, the generation shard `(ppg, tpg)` is the union of
/// training slices with `stage / (p/p_g) == ppg` and
/// `shard / (t/t_g) == tpg`.
pub fn shard_ownership(groups: &ParallelGroups, m: Units) -> ShardOwnership {
    let train = *groups.layout.train();
    let slice_size = m / Units::from_integer(train.mp() as i128);
    let coords = groups.coords();
    let per_rank = match groups.layout {
        GroupLayout::Training { .. } => coords
            .iter()
            .map(|c| BTreeSet::from([SliceId { stage: c.pp, shard: c.tp }]))
            .collect(),
        GroupLayout::Generation { gen, .. } => {
            let k_p = train.p / gen.p_g;
            let k_t = train.t / gen.t_g;
            coords
                .iter()
                .map(|c| {
                    let mut set = BTreeSet::new();
                    for stage in c.pp * k_p..(c.pp + 1) * k_p {
                        for shard in c.tp * k_t..(c.tp + 1) * k_t {
                            set.insert(SliceId { stage, shard });
                        }
                    }
                    set
                })
                .collect()
        }
    };
    ShardOwnership {
        num_slices: train.mp(),
        slice_size,
        per_rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{
        build_generation_groups_vanilla, build_generation_groups_zero_redundancy, build_training_groups,
        GenStrategy, TrainStrategy,
    };
    use crate::units::{frac, units};
    use std::collections::BTreeMap;

    #[test]
    fn training_slices_replicated_d_times() {
        let train = TrainStrategy::new(1, 4, 2).unwrap();
        let g = build_training_groups(&train, 8).unwrap();
        let own = shard_ownership(&g, units(8));
        assert_eq!(own.slice_size, units(2));
        let mut counts: BTreeMap<SliceId, u32> = BTreeMap::new();
        for set in &own.per_rank {
            assert_eq!(set.len(), 1);
            for s in set {
                *counts.entry(*s).or_default() += 1;
            }
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 2));
        // rank r owns shard r mod 4 by grid coordinates
        for r in 0..8u32 {
            assert!(own.per_rank[r as usize].contains(&SliceId { stage: 0, shard: r % 4 }));
        }
    }

    #[test]
    fn zero_redundancy_generation_shard_holds_two_slices() {
        let train = TrainStrategy::new(1, 4, 2).unwrap();
        let gen = GenStrategy::for_training(&train, 1, 2).unwrap();
        let g = build_generation_groups_zero_redundancy(&train, &gen).unwrap();
        let own = shard_ownership(&g, units(8));
        for r in 0..8 {
            assert_eq!(own.per_rank[r].len(), 2);
            assert_eq!(own.owned_units(r as u32), units(4));
        }
    }

    #[test]
    fn empty_model_has_zero_slices() {
        let train = TrainStrategy::new(2, 2, 1).unwrap();
        let g = build_training_groups(&train, 4).unwrap();
        let own = shard_ownership(&g, units(0));
        assert_eq!(own.slice_size, units(0));
        assert!((0..4).all(|r| own.owned_units(r) == units(0)));
    }

    #[test]
    fn vanilla_grouping_leaves_some_ranks_disjoint() {
        let train = TrainStrategy::new(1, 4, 2).unwrap();
        let gen = GenStrategy::for_training(&train, 1, 2).unwrap();
        let tr = shard_ownership(&build_training_groups(&train, 8).unwrap(), units(1));
        let ge = shard_ownership(&build_generation_groups_vanilla(&train, &gen).unwrap(), units(1));
        let disjoint: Vec<usize> = (0..8)
            .filter(|&r| tr.per_rank[r].is_disjoint(&ge.per_rank[r]))
            .collect();
        assert_eq!(disjoint, vec![1, 2, 5, 6]);
        assert_eq!(ge.slice_size, frac(1, 4));
    }

    #[test]
    fn zero_redundancy_subset_for_two_four_one() {
        let train = TrainStrategy::new(2, 4, 1).unwrap();
        let gen = GenStrategy::for_training(&train, 1, 2).unwrap();
        assert_eq!(gen.d_g, 4);
        let tr = shard_ownership(&build_training_groups(&train, 8).unwrap(), units(1));
        let ge = shard_ownership(&build_generation_groups_zero_redundancy(&train, &gen).unwrap(), units(1));
        for r in 0..8 {
            assert!(tr.per_rank[r].is_subset(&ge.per_rank[r]), "rank {r}");
        }
    }
}
