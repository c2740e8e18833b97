use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GenStrategy, TopologyError, TrainStrategy};

/// 0-based device index inside one resource pool.
pub type Rank = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingScheme {
    /// Consecutive TP/PP, strided DP: the usual 3D method applied with the
    /// generation sizes.
    Vanilla,
    /// Strided generation TP/PP, consecutive micro-DP.
    ZeroRedundancy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroupLayout {
    Training {
        train: TrainStrategy,
    },
    Generation {
        train: TrainStrategy,
        gen: GenStrategy,
        scheme: GroupingScheme,
    },
}

impl GroupLayout {
    pub fn train(&self) -> &TrainStrategy {
        match self {
            GroupLayout::Training { train } | GroupLayout::Generation { train, .. } => train,
        }
    }
}

/// Position of a rank along each parallel dimension, read off its group
/// memberships.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCoord {
    pub pp: u32,
    pub tp: u32,
    pub dp: u32,
}

/// Every family partitions `0..world`. For training layouts the micro-DP
/// family is all singletons.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelGroups {
    pub world: u32,
    pub layout: GroupLayout,
    pub tp_groups: Vec<Vec<Rank>>,
    pub pp_groups: Vec<Vec<Rank>>,
    pub dp_groups: Vec<Vec<Rank>>,
    pub micro_dp_groups: Vec<Vec<Rank>>,
}

fn canonical(mut groups: Vec<Vec<Rank>>) -> Vec<Vec<Rank>> {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
}

fn grid_groups(p: u32, t: u32, d: u32) -> (Vec<Vec<Rank>>, Vec<Vec<Rank>>, Vec<Vec<Rank>>) {
    let rank = |dp: u32, pp: u32, tp: u32| dp * p * t + pp * t + tp;
    let mut tp_groups = Vec::new();
    let mut pp_groups = Vec::new();
    let mut dp_groups = Vec::new();
    for dp in 0..d {
        for pp in 0..p {
            tp_groups.push((0..t).map(|tp| rank(dp, pp, tp)).collect());
        }
        for tp in 0..t {
            pp_groups.push((0..p).map(|pp| rank(dp, pp, tp)).collect());
        }
    }
    for pp in 0..p {
        for tp in 0..t {
            dp_groups.push((0..d).map(|dp| rank(dp, pp, tp)).collect());
        }
    }
    (canonical(tp_groups), canonical(pp_groups), canonical(dp_groups))
}

/// Standard 3D grouping: rank = dp·p·t + pp·t + tp.
pub fn build_training_groups(train: &TrainStrategy, world: u32) -> Result<ParallelGroups, TopologyError> {
    let train = TrainStrategy::new(train.p, train.t, train.d)?;
    if train.world() != world {
        return Err(TopologyError::WorldMismatch {
            expected: train.world(),
            found: world,
        });
    }
    let (tp_groups, pp_groups, dp_groups) = grid_groups(train.p, train.t, train.d);
    Ok(ParallelGroups {
        world,
        layout: GroupLayout::Training { train },
        tp_groups,
        pp_groups,
        dp_groups,
        micro_dp_groups: (0..world).map(|r| vec![r]).collect(),
    })
}

/// The training grouping method applied to generation sizes
/// `(p_g, t_g, d_g·d)`. Micro-DP groups are the `d_g` replicas carved out
/// of each training replica, sharing a generation shard.
pub fn build_generation_groups_vanilla(
    train: &TrainStrategy,
    gen: &GenStrategy,
) -> Result<ParallelGroups, TopologyError> {
    gen.check_against(train)?;
    let (pg, tg, dg) = (gen.p_g, gen.t_g, gen.d_g);
    let (tp_groups, pp_groups, dp_groups) = grid_groups(pg, tg, dg * train.d);
    let mut micro = Vec::new();
    for dp in 0..train.d {
        for ppg in 0..pg {
            for tpg in 0..tg {
                micro.push(
                    (0..dg)
                        .map(|j| (dp * dg + j) * pg * tg + ppg * tg + tpg)
                        .collect(),
                );
            }
        }
    }
    Ok(ParallelGroups {
        world: train.world(),
        layout: GroupLayout::Generation {
            train: *train,
            gen: *gen,
            scheme: GroupingScheme::Vanilla,
        },
        tp_groups,
        pp_groups,
        dp_groups,
        micro_dp_groups: canonical(micro),
    })
}

/// Generation TP/PP groups stride by `t/t_g` and `p/p_g` inside each
/// training replica; micro-DP groups are the remaining consecutive ranks.
/// Every rank's training slice lands inside its generation shard.
pub fn build_generation_groups_zero_redundancy(
    train: &TrainStrategy,
    gen: &GenStrategy,
) -> Result<ParallelGroups, TopologyError> {
    gen.check_against(train)?;
    let (p, t) = (train.p, train.t);
    let (pg, tg) = (gen.p_g, gen.t_g);
    let k_t = t / tg;
    let k_p = p / pg;
    let rank = |dp: u32, pp: u32, tp: u32| dp * p * t + pp * t + tp;

    let mut tp_groups = Vec::new();
    let mut pp_groups = Vec::new();
    let mut micro = Vec::new();
    let mut shard_members: BTreeMap<(u32, u32), Vec<Rank>> = BTreeMap::new();
    for dp in 0..train.d {
        for pp in 0..p {
            for mt in 0..k_t {
                tp_groups.push((0..tg).map(|tpg| rank(dp, pp, tpg * k_t + mt)).collect());
            }
        }
        for tp in 0..t {
            for mp in 0..k_p {
                pp_groups.push((0..pg).map(|ppg| rank(dp, ppg * k_p + mp, tp)).collect());
            }
        }
        for ppg in 0..pg {
            for tpg in 0..tg {
                let mut g = Vec::new();
                for mp in 0..k_p {
                    for mt in 0..k_t {
                        let r = rank(dp, ppg * k_p + mp, tpg * k_t + mt);
                        g.push(r);
                        shard_members.entry((ppg, tpg)).or_default().push(r);
                    }
                }
                micro.push(g);
            }
        }
    }
    Ok(ParallelGroups {
        world: train.world(),
        layout: GroupLayout::Generation {
            train: *train,
            gen: *gen,
            scheme: GroupingScheme::ZeroRedundancy,
        },
        tp_groups: canonical(tp_groups),
        pp_groups: canonical(pp_groups),
        dp_groups: canonical(shard_members.into_values().collect()),
        micro_dp_groups: canonical(micro),
    })
}

impl ParallelGroups {
    pub fn families(&self) -> [(&'static str, &Vec<Vec<Rank>>); 4] {
        [
            ("tp", &self.tp_groups),
            ("pp", &self.pp_groups),
            ("dp", &self.dp_groups),
            ("micro_dp", &self.micro_dp_groups),
        ]
    }

    /// Per-rank coordinates: the rank's index inside its PP, TP and DP
    /// groups.
    pub fn coords(&self) -> Vec<RankCoord> {
        let mut out = vec![RankCoord { pp: 0, tp: 0, dp: 0 }; self.world as usize];
        for g in &self.pp_groups {
            for (i, &r) in g.iter().enumerate() {
                out[r as usize].pp = i as u32;
            }
        }
        for g in &self.tp_groups {
            for (i, &r) in g.iter().enumerate() {
                out[r as usize].tp = i as u32;
            }
        }
        for g in &self.dp_groups {
            for (i, &r) in g.iter().enumerate() {
                out[r as usize].dp = i as u32;
            }
        }
        out
    }

    pub fn tp_size(&self) -> u32 {
        self.tp_groups.first().map_or(1, |g| g.len() as u32)
    }

    pub fn pp_size(&self) -> u32 {
        self.pp_groups.first().map_or(1, |g| g.len() as u32)
    }

    pub fn dp_size(&self) -> u32 {
        self.dp_groups.first().map_or(1, |g| g.len() as u32)
    }

    /// Model replicas: ranks sharing a DP coordinate, ordered by that
    /// coordinate. Each replica holds one full copy of the model.
    pub fn replicas(&self) -> Vec<Vec<Rank>> {
        let mut by_dp: BTreeMap<u32, Vec<Rank>> = BTreeMap::new();
        for (r, c) in self.coords().into_iter().enumerate() {
            by_dp.entry(c.dp).or_default().push(r as Rank);
        }
        by_dp.into_values().collect()
    }

    /// Checks that every family is a partition of the world.
    pub fn check_partitions(&self) -> Result<(), String> {
        for (name, fam) in self.families() {
            let mut seen = vec![false; self.world as usize];
            for g in fam {
                for &r in g {
                    let slot = seen
                        .get_mut(r as usize)
                        .ok_or_else(|| format!("{name} group contains out-of-range rank {r}"))?;
                    if *slot {
                        return Err(format!("{name} groups overlap at rank {r}"));
                    }
                    *slot = true;
                }
            }
            if let Some(r) = seen.iter().position(|s| !s) {
                return Err(format!("{name} groups miss rank {r}"));
            }
        }
        Ok(())
    }
}
