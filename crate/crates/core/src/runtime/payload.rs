use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataflow::{ops_in_stage, DataflowGraph, ModelOp, OpKind, StageKind};

/// Toy per-prompt record flowing through the dataflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub prompt_id: u32,
    pub tokens: u32,
    pub value: u64,
}

/// Wire size of one record.
pub const RECORD_BYTES: u64 = 16;

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn salt(op: &str) -> u64 {
    op.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Seeded prompt batch.
pub fn synth_prompts(seed: u64, count: u32, prompt_len: u32) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| Record {
            prompt_id: i,
            tokens: prompt_len,
            value: rng.gen(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("op `{op}`: inputs disagree at position {position} (prompts {left} vs {right})")]
pub struct MisalignedInputs {
    pub op: String,
    pub position: usize,
    pub left: u32,
    pub right: u32,
}

/// Deterministic stand-in for an op's computation: inputs are zipped by
/// position and must describe the same prompts; generation appends
/// `response_len` tokens.
pub fn apply_op(op: &ModelOp, inputs: &[&[Record]], response_len: u32) -> Result<Vec<Record>, MisalignedInputs> {
    let Some(first) = inputs.first() else {
        return Ok(Vec::new());
    };
    let s = salt(&op.id);
    let mut out = Vec::with_capacity(first.len());
    for (i, base) in first.iter().enumerate() {
        let mut value = mix(s ^ base.value);
        let mut tokens = base.tokens;
        for other in &inputs[1..] {
            let r = other.get(i).copied().unwrap_or(Record {
                prompt_id: u32::MAX,
                tokens: 0,
                value: 0,
            });
            if r.prompt_id != base.prompt_id {
                return Err(MisalignedInputs {
                    op: op.id.clone(),
                    position: i,
                    left: base.prompt_id,
                    right: r.prompt_id,
                });
            }
            value = mix(value ^ r.value);
            tokens = tokens.max(r.tokens);
        }
        if op.kind == OpKind::Generation {
            tokens += response_len;
        }
        out.push(Record {
            prompt_id: base.prompt_id,
            tokens,
            value,
        });
    }
    Ok(out)
}

pub fn checksum(records: &[Record]) -> u64 {
    records.iter().fold(0, |h, r| {
        mix(h ^ mix(((r.prompt_id as u64) << 32) ^ r.tokens as u64) ^ r.value)
    })
}

/// Outputs of every op computed directly on whole batches, with no
/// distribution. Ops without inputs read the prompts.
pub fn reference_outputs(
    graph: &DataflowGraph,
    prompts: &[Record],
    response_len: u32,
) -> Result<BTreeMap<String, Vec<Record>>, MisalignedInputs> {
    let mut done: BTreeMap<String, Vec<Record>> = BTreeMap::new();
    for stage in StageKind::ORDER {
        for op in ops_in_stage(graph, stage) {
            let inputs: Vec<&[Record]> = if op.inputs.is_empty() {
                vec![prompts]
            } else {
                op.inputs.iter().map(|i| done[i].as_slice()).collect()
            };
            let out = apply_op(op, &inputs, response_len)?;
            done.insert(op.id.clone(), out);
        }
    }
    Ok(done)
}
