use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::topology::{
    build_training_groups, engine_generation_groups, reshard_plan, shard_ownership, Engine, GenStrategy, ParallelGroups,
    Rank, ReshardPlan, SliceId, TopologyError, TrainStrategy,
};
use crate::units::{serde_units, Units};

/// Words of toy weight content per training slice.
const SLICE_WORDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("generation shards incomplete after the all-gather on ranks {0:?}")]
    OwnershipMismatch(Vec<Rank>),
    #[error("received bytes differ from the reshard plan on ranks {0:?}")]
    VolumeMismatch(Vec<Rank>),
    #[error("training slices changed after re-partition on ranks {0:?}")]
    NotPreserved(Vec<Rank>),
}

/// One hop of a ring all-gather.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransitionMessage {
    pub step: u32,
    pub from: Rank,
    pub to: Rank,
    /// Rank that contributed the piece.
    pub origin: Rank,
    pub slice: SliceId,
    /// Piece `index` of `pieces` equal parts of the slice.
    pub index: u32,
    pub pieces: u32,
    #[serde(with = "serde_units")]
    pub units: Units,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionReport {
    pub engine: Engine,
    #[serde(serialize_with = "crate::units::serialize_units_vec")]
    pub recv: Vec<Units>,
    pub messages: Vec<TransitionMessage>,
    /// Slices each rank holds for generation.
    pub generation_shards: Vec<BTreeSet<SliceId>>,
}

impl TransitionReport {
    pub fn total_recv(&self) -> Units {
        self.recv.iter().sum()
    }
}

fn word(slice: SliceId, j: usize) -> u64 {
    let mut x = ((slice.stage as u64) << 40) ^ ((slice.shard as u64) << 20) ^ j as u64;
    x = x.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^ (x >> 29)
}

fn slice_content(slice: SliceId) -> Vec<u64> {
    (0..SLICE_WORDS).map(|j| word(slice, j)).collect()
}

fn piece_range(index: u32, pieces: u32) -> std::ops::Range<usize> {
    let lo = SLICE_WORDS * index as usize / pieces as usize;
    let hi = SLICE_WORDS * (index as usize + 1) / pieces as usize;
    lo..hi
}

/// Piece held by a rank: slice, piece index, piece count, content.
type Block = (SliceId, u32, u32, Vec<u64>);

/// Plans and executes the training → generation transition for `engine`
/// over `train.world()` ranks.
pub fn execute_transition(
    train: &TrainStrategy,
    gen: &GenStrategy,
    engine: Engine,
    m: Units,
) -> Result<TransitionReport, TransitionError> {
    let tr = build_training_groups(train, train.world())?;
    let ge = engine_generation_groups(train, gen, engine)?;
    execute_transition_groups(&tr, &ge, engine, m)
}

/// Ring all-gather over explicit layouts. Each slice held by `h` members of
/// a gather group is cut into `h` pieces, piece `k` contributed by its
/// `k`-th holder in rank order. Afterwards every rank must hold its whole
/// generation shard; then non-training slices are dropped and the training
/// slices are checked against their original content.
pub fn execute_transition_groups(
    train_groups: &ParallelGroups,
    gen_groups: &ParallelGroups,
    engine: Engine,
    m: Units,
) -> Result<TransitionReport, TransitionError> {
    let plan: ReshardPlan = reshard_plan(train_groups, gen_groups, engine, m)?;
    let own = shard_ownership(train_groups, m);
    let target = shard_ownership(gen_groups, m);
    let world = train_groups.world as usize;
    let size = own.slice_size;

    // training copies
    let weights: Vec<BTreeMap<SliceId, Vec<u64>>> = own
        .per_rank
        .iter()
        .map(|set| set.iter().map(|s| (*s, slice_content(*s))).collect())
        .collect();

    let mut recv = vec![Units::from_integer(0); world];
    let mut received: Vec<Vec<Block>> = vec![Vec::new(); world];
    let mut messages = Vec::new();

    for group in &plan.gather_groups {
        let n = group.len();
        let mut holders: BTreeMap<SliceId, Vec<Rank>> = BTreeMap::new();
        for &r in group {
            for s in &own.per_rank[r as usize] {
                holders.entry(*s).or_default().push(r);
            }
        }
        let contributed: Vec<Vec<Block>> = group
            .iter()
            .map(|&r| {
                own.per_rank[r as usize]
                    .iter()
                    .map(|s| {
                        let hs = &holders[s];
                        let k = hs.iter().position(|&x| x == r).unwrap() as u32;
                        let h = hs.len() as u32;
                        (*s, k, h, weights[r as usize][s][piece_range(k, h)].to_vec())
                    })
                    .collect()
            })
            .collect();
        // step s: position i forwards what originated at position i - s
        for step in 0..n.saturating_sub(1) {
            for i in 0..n {
                let to_pos = (i + 1) % n;
                let origin_pos = (i + n - step) % n;
                let (from, to, origin) = (group[i], group[to_pos], group[origin_pos]);
                for (slice, index, pieces, content) in &contributed[origin_pos] {
                    let units = size / Units::from_integer(*pieces as i128);
                    recv[to as usize] += units;
                    received[to as usize].push((*slice, *index, *pieces, content.clone()));
                    messages.push(TransitionMessage {
                        step: step as u32,
                        from,
                        to,
                        origin,
                        slice: *slice,
                        index: *index,
                        pieces: *pieces,
                        units,
                    });
                }
            }
        }
    }

    let mismatched: Vec<Rank> = (0..world)
        .filter(|&r| recv[r] != plan.ranks[r].recv)
        .map(|r| r as Rank)
        .collect();
    if !mismatched.is_empty() {
        return Err(TransitionError::VolumeMismatch(mismatched));
    }

    // assemble generation shards from own copies plus received pieces
    let mut shards: Vec<BTreeMap<SliceId, Vec<u64>>> = Vec::with_capacity(world);
    let mut incomplete = Vec::new();
    for r in 0..world {
        let mut assembled: BTreeMap<SliceId, Vec<Option<u64>>> = BTreeMap::new();
        for (s, w) in &weights[r] {
            assembled.insert(*s, w.iter().copied().map(Some).collect());
        }
        for (slice, index, pieces, content) in &received[r] {
            let buf = assembled.entry(*slice).or_insert_with(|| vec![None; SLICE_WORDS]);
            for (dst, v) in buf[piece_range(*index, *pieces)].iter_mut().zip(content) {
                *dst = Some(*v);
            }
        }
        let mut shard = BTreeMap::new();
        let mut ok = true;
        for s in &target.per_rank[r] {
            match assembled.get(s).and_then(|b| b.iter().copied().collect::<Option<Vec<u64>>>()) {
                Some(words) if words == slice_content(*s) => {
                    shard.insert(*s, words);
                }
                _ => ok = false,
            }
        }
        if !ok {
            incomplete.push(r as Rank);
        }
        shards.push(shard);
    }
    if !incomplete.is_empty() {
        return Err(TransitionError::OwnershipMismatch(incomplete));
    }

    // re-partition: training slices come back from the generation shard when
    // it contains them, otherwise from the separately kept training copy
    let not_preserved: Vec<Rank> = (0..world)
        .filter(|&r| {
            own.per_rank[r].iter().any(|s| {
                let restored = shards[r].get(s).unwrap_or(&weights[r][s]);
                *restored != slice_content(*s)
            })
        })
        .map(|r| r as Rank)
        .collect();
    if !not_preserved.is_empty() {
        return Err(TransitionError::NotPreserved(not_preserved));
    }

    Ok(TransitionReport {
        engine,
        recv,
        messages,
        generation_shards: shards.iter().map(|s| s.keys().copied().collect()).collect(),
    })
}
