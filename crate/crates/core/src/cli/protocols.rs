use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::runtime::{collect, designated_ranks, distribute, distribute_per_rank, Protocol, ProtocolError};
use crate::topology::{
    build_generation_groups_zero_redundancy, build_training_groups, GenStrategy, ParallelGroups, TrainStrategy,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolTally {
    pub protocol: Protocol,
    pub cases: u32,
    pub passed: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolCaseFailure {
    pub case: u32,
    pub protocol: Protocol,
    pub layout: String,
    pub batch: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolSuiteReport {
    pub seed: u64,
    pub cases: u32,
    pub tallies: Vec<ProtocolTally>,
    pub failures: Vec<ProtocolCaseFailure>,
}

impl ProtocolSuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol properties: {} cases, seed {}", self.cases, self.seed);
        for t in &self.tallies {
            let _ = writeln!(out, "  {:<16} {:>5}/{:<5}", t.protocol.as_str(), t.passed, t.cases);
        }
        for f in self.failures.iter().take(10) {
            let _ = writeln!(
                out,
                "  FAIL case {} {} on {} (batch {}): {}",
                f.case, f.protocol, f.layout, f.batch, f.reason
            );
        }
        out
    }
}

fn divisors(n: u32) -> Vec<u32> {
    (1..=n).filter(|k| n.is_multiple_of(*k)).collect()
}

fn random_layout(rng: &mut ChaCha8Rng, generation: bool) -> (ParallelGroups, String) {
    let p = rng.gen_range(1..=4);
    let t = [1, 2, 4][rng.gen_range(0..3)];
    let d = rng.gen_range(1..=4);
    let train = TrainStrategy::new(p, t, d).expect("positive sizes");
    if !generation {
        let g = build_training_groups(&train, train.world()).expect("world matches");
        return (g, format!("train {train}"));
    }
    let pgs = divisors(p);
    let tgs = divisors(t);
    let p_g = pgs[rng.gen_range(0..pgs.len())];
    let t_g = tgs[rng.gen_range(0..tgs.len())];
    let gen = GenStrategy::for_training(&train, p_g, t_g).expect("divisors");
    let g = build_generation_groups_zero_redundancy(&train, &gen).expect("valid sizes");
    (g, format!("train {train} gen {gen}"))
}

fn check(protocol: Protocol, groups: &ParallelGroups, batch: &[u32]) -> Result<(), String> {
    let world = groups.world as usize;
    let coords = groups.coords();
    let designated = designated_ranks(protocol, groups);
    // each rank echoes its input tagged with its rank
    let echo = |inputs: &[Vec<u32>]| -> Vec<Option<Vec<(u32, u32)>>> {
        inputs
            .iter()
            .enumerate()
            .map(|(r, v)| Some(v.iter().map(|x| (r as u32, *x)).collect()))
            .collect()
    };
    let untag = |v: Vec<(u32, u32)>| v.into_iter().map(|(_, x)| x).collect::<Vec<u32>>();
    match protocol {
        Protocol::ThreeD | Protocol::Dp | Protocol::ThreeDAllMicroDp => {
            let split = protocol.split_count(groups) as usize;
            let inputs = distribute(protocol, batch, groups).map_err(|e| e.to_string())?;
            for (r, c) in coords.iter().enumerate() {
                let chunk = batch.len() / split;
                let want = &batch[c.dp as usize * chunk..(c.dp as usize + 1) * chunk];
                if inputs[r] != want {
                    return Err(format!("rank {r} got the wrong chunk"));
                }
            }
            let out = collect(protocol, &echo(&inputs), groups).map_err(|e| e.to_string())?;
            if untag(out.concat()) != batch {
                return Err("roundtrip changed the batch".into());
            }
            if designated.len() != split {
                return Err(format!("collected {} ranks, expected {split}", designated.len()));
            }
            for &r in &designated {
                let c = &coords[r as usize];
                let ok = match protocol {
                    Protocol::ThreeD => c.pp == groups.pp_size() - 1 && c.tp == 0,
                    Protocol::ThreeDAllMicroDp => c.pp == 0 && c.tp == 0,
                    _ => groups.replicas().iter().any(|rep| rep[0] == r),
                };
                if !ok {
                    return Err(format!("rank {r} should not be collected"));
                }
            }
            if batch.len().is_multiple_of(split) && split > 1 {
                let short = &batch[..batch.len() - 1];
                if !matches!(
                    distribute(protocol, short, groups),
                    Err(ProtocolError::IndivisibleBatch { .. })
                ) {
                    return Err("indivisible batch accepted".into());
                }
            }
        }
        Protocol::OneToAll | Protocol::ThreeDPpOnly => {
            let inputs = distribute(protocol, batch, groups).map_err(|e| e.to_string())?;
            if inputs.iter().any(|v| v != batch) {
                return Err("broadcast differs between ranks".into());
            }
            let out = collect(protocol, &echo(&inputs), groups).map_err(|e| e.to_string())?;
            let expected: Vec<u32> = if protocol == Protocol::OneToAll {
                (0..world as u32).collect()
            } else {
                let mut v: Vec<u32> = (0..world as u32)
                    .filter(|&r| coords[r as usize].tp == 0 && coords[r as usize].dp == 0)
                    .collect();
                v.sort_by_key(|&r| coords[r as usize].pp);
                v
            };
            if out.sources != expected {
                return Err(format!("collected {:?}, expected {expected:?}", out.sources));
            }
            for (src, part) in out.sources.iter().zip(&out.parts) {
                if part.iter().any(|(r, _)| r != src) || untag(part.clone()) != batch {
                    return Err(format!("part from rank {src} is wrong"));
                }
            }
        }
        Protocol::AllToAll => {
            if !matches!(distribute(protocol, batch, groups), Err(ProtocolError::NeedsPerRankInputs)) {
                return Err("ALL_TO_ALL accepted a single batch".into());
            }
            let per_rank: Vec<Vec<u32>> = (0..world).map(|r| batch.iter().map(|x| x ^ r as u32).collect()).collect();
            let inputs = distribute_per_rank(per_rank.clone(), groups).map_err(|e| e.to_string())?;
            if inputs != per_rank {
                return Err("per-rank inputs changed".into());
            }
            let out = collect(protocol, &echo(&inputs), groups).map_err(|e| e.to_string())?;
            let parts: Vec<Vec<u32>> = out.parts.into_iter().map(untag).collect();
            if parts != per_rank {
                return Err("collected parts differ from per-rank inputs".into());
            }
        }
    }
    Ok(())
}

/// Randomized distribute/collect checks across all six protocols.
pub fn run_protocol_suite(seed: u64, cases: u32) -> ProtocolSuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tallies: Vec<ProtocolTally> = Protocol::ALL
        .iter()
        .map(|&protocol| ProtocolTally {
            protocol,
            cases: 0,
            passed: 0,
        })
        .collect();
    let mut failures = Vec::new();
    for case in 0..cases {
        let pi = case as usize % Protocol::ALL.len();
        let protocol = Protocol::ALL[pi];
        let generation = protocol == Protocol::ThreeDAllMicroDp || rng.gen_bool(0.3);
        let (groups, layout) = random_layout(&mut rng, generation);
        let split = protocol.split_count(&groups);
        let batch_len = split as usize * rng.gen_range(1..=4);
        let batch: Vec<u32> = (0..batch_len).map(|_| rng.gen()).collect();
        tallies[pi].cases += 1;
        match check(protocol, &groups, &batch) {
            Ok(()) => tallies[pi].passed += 1,
            Err(reason) => failures.push(ProtocolCaseFailure {
                case,
                protocol,
                layout,
                batch: batch_len,
                reason,
            }),
        }
    }
    ProtocolSuiteReport {
        seed,
        cases,
        tallies,
        failures,
    }
}
