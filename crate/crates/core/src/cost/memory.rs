use serde::{Deserialize, Serialize};

use super::{ModelSpec, WorkKind, WorkloadSpec};
use crate::topology::{GenStrategy, TrainStrategy};

/// BF16 weights.
const TRAIN_PARAM_BYTES: f64 = 2.0;
/// FP32 gradients.
const GRAD_BYTES: f64 = 4.0;
/// FP32 master weights, first and second Adam moments.
const OPTIMIZER_BYTES: f64 = 12.0;

/// Per-rank bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub params: f64,
    pub grads: f64,
    pub optimizer: f64,
    /// Generation-shard bytes beyond the resident training weights.
    pub gen_weights: f64,
    /// KVCache for every sequence of the rank's micro replica at full
    /// length.
    pub kv_cache: f64,
    /// KVCache of a single full-length sequence.
    pub kv_per_sequence: f64,
}

impl MemoryBreakdown {
    /// Weights and optimizer state that stay resident across stages.
    pub fn resident(&self) -> f64 {
        self.params + self.grads + self.optimizer
    }

    /// Smallest footprint that lets the workload make progress: resident
    /// state, generation weights and room for one sequence's KVCache.
    pub fn required(&self) -> f64 {
        self.resident() + self.gen_weights + self.kv_per_sequence
    }

    /// Footprint with the whole batch's KVCache allocated at once.
    pub fn full(&self) -> f64 {
        self.resident() + self.gen_weights + self.kv_cache
    }
}

pub(crate) fn sequences_per_replica(train: &TrainStrategy, gen: &GenStrategy, workload: &WorkloadSpec) -> u64 {
    let replicas = (train.d as u64) * (gen.d_g as u64);
    (workload.global_batch as u64).div_ceil(replicas)
}

/// Per-rank bytes of `model` under `strategy`. Trainable models keep
/// 18 bytes/param of mixed-precision Adam state; inference-only models keep
/// their inference-precision weights. Generation (which needs `gen`) adds
/// generation weights and the KVCache, both split over `p_g·t_g`.
pub fn memory_footprint(
    model: &ModelSpec,
    strategy: &TrainStrategy,
    kind: WorkKind,
    gen: Option<&GenStrategy>,
    workload: &WorkloadSpec,
) -> MemoryBreakdown {
    let p = model.params as f64;
    let mp = strategy.mp() as f64;
    let mut m = if model.trainable {
        MemoryBreakdown {
            params: p * TRAIN_PARAM_BYTES / mp,
            grads: p * GRAD_BYTES / mp,
            optimizer: p * OPTIMIZER_BYTES / mp,
            ..Default::default()
        }
    } else {
        MemoryBreakdown {
            params: model.weight_bytes() / mp,
            ..Default::default()
        }
    };
    if let (WorkKind::Generation, Some(gen)) = (kind, gen) {
        let gmp = gen.mp() as f64;
        let resident_weights = if model.trainable {
            p * TRAIN_PARAM_BYTES / mp
        } else {
            m.params
        };
        m.gen_weights = (model.weight_bytes() / gmp - resident_weights).max(0.0);
        let ctx = (workload.prompt_len + workload.response_len) as f64;
        m.kv_per_sequence = ctx * model.kv_bytes_per_token() / gmp;
        m.kv_cache = m.kv_per_sequence * sequences_per_replica(strategy, gen, workload) as f64;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::ModelRole;

    fn wl() -> WorkloadSpec {
        WorkloadSpec::default()
    }

    #[test]
    fn trainable_seven_b_over_eight_ranks() {
        let m = ModelSpec::llama("actor", ModelRole::Actor, 7);
        let s = TrainStrategy::new(1, 8, 1).unwrap();
        let f = memory_footprint(&m, &s, WorkKind::Training, None, &wl());
        assert_eq!(f.resident(), 15.75e9);
        assert_eq!(f.params, 1.75e9);
        assert_eq!(f.grads, 3.5e9);
        assert_eq!(f.optimizer, 10.5e9);
    }

    #[test]
    fn inference_only_seven_b_single_rank() {
        let m = ModelSpec::llama("ref", ModelRole::Reference, 7);
        let s = TrainStrategy::new(1, 1, 1).unwrap();
        let f = memory_footprint(&m, &s, WorkKind::Inference, None, &wl());
        assert_eq!(f.resident(), 14e9);
        assert_eq!(f.required(), 14e9);
    }

    #[test]
    fn zero_params_zero_bytes() {
        let mut m = ModelSpec::llama("x", ModelRole::Reward, 7);
        m.params = 0;
        let s = TrainStrategy::new(1, 1, 1).unwrap();
        assert_eq!(memory_footprint(&m, &s, WorkKind::Inference, None, &wl()).resident(), 0.0);
    }

    #[test]
    fn generation_adds_kv_and_generation_weights() {
        let m = ModelSpec::llama("actor", ModelRole::Actor, 7);
        let s = TrainStrategy::new(1, 8, 2).unwrap();
        let g = GenStrategy::for_training(&s, 1, 2).unwrap();
        let f = memory_footprint(&m, &s, WorkKind::Generation, Some(&g), &wl());
        // 14 GB / 2 − 1.75 GB already resident
        assert_eq!(f.gen_weights, 5.25e9);
        // 2·32·32·128·2 bytes/token × 2048 tokens ÷ 2
        assert_eq!(f.kv_per_sequence, 524288.0 * 2048.0 / 2.0);
        // 1024 prompts over 2·4 micro replicas
        assert_eq!(f.kv_cache, f.kv_per_sequence * 128.0);
    }
}
