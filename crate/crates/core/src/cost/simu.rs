use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::memory::{memory_footprint, sequences_per_replica, MemoryBreakdown};
use super::{ClusterSpec, ModelSpec, WorkKind, WorkloadSpec};
use crate::topology::{GenStrategy, TrainStrategy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("out of memory: {required:.0} bytes per rank needed, {capacity:.0} available")]
    OutOfMemory { required: f64, capacity: f64 },
    #[error("generation cost needs a generation strategy")]
    MissingGenStrategy,
    #[error("generation strategy {gen} does not fit training strategy {train}")]
    Incompatible { train: String, gen: String },
}

/// How a generation pass is split into waves of concurrent sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationBreakdown {
    pub sequences_per_replica: u64,
    pub sequences_per_wave: u64,
    pub waves: u64,
    /// Per decoding step, seconds.
    pub weight_read: f64,
    /// Per decoding step of a full wave, seconds.
    pub kv_read: f64,
    /// Per decoding step of a full wave, seconds.
    pub tp_comm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// Seconds.
    pub latency: f64,
    pub memory: MemoryBreakdown,
    pub generation: Option<GenerationBreakdown>,
}

/// Latency and memory of one workload under one strategy, with the full
/// device capacity available.
pub fn simu(
    strategy: &TrainStrategy,
    model: &ModelSpec,
    workload: &WorkloadSpec,
    kind: WorkKind,
    gen: Option<&GenStrategy>,
    cluster: &ClusterSpec,
) -> Result<CostEstimate, SimError> {
    simu_reserved(strategy, model, workload, kind, gen, cluster, 0.0)
}

/// [`simu`] with `reserved` bytes per rank already taken by colocated
/// models.
///
/// Training and inference are compute-bound: `6·P·tokens` and `2·P·tokens`
/// FLOPs per replica, split over `p·t` ranks, training stretched by the
/// pipeline bubble `1 + (p−1)/microbatches`. Generation is memory-bound:
/// every decoding step reads each stage's generation weights and the
/// KVCache of the sequences in flight, stage after stage, plus two ring
/// all-reduces per layer across the generation TP group and one hop per
/// pipeline boundary. Sequences that do not fit next to the weights are
/// decoded in later waves.
pub fn simu_reserved(
    strategy: &TrainStrategy,
    model: &ModelSpec,
    workload: &WorkloadSpec,
    kind: WorkKind,
    gen: Option<&GenStrategy>,
    cluster: &ClusterSpec,
    reserved: f64,
) -> Result<CostEstimate, SimError> {
    if kind == WorkKind::Generation {
        let g = gen.ok_or(SimError::MissingGenStrategy)?;
        g.check_against(strategy).map_err(|_| SimError::Incompatible {
            train: strategy.to_string(),
            gen: g.to_string(),
        })?;
    }
    let memory = memory_footprint(model, strategy, kind, gen, workload);
    let required = memory.required() + reserved;
    if required > cluster.mem_per_gpu {
        return Err(SimError::OutOfMemory {
            required,
            capacity: cluster.mem_per_gpu,
        });
    }
    let params = model.params as f64;
    let tokens_per_replica = workload.tokens() / strategy.d as f64;
    let mp = strategy.mp() as f64;
    let (latency, generation) = match kind {
        WorkKind::Training => {
            let flops = 6.0 * params * tokens_per_replica;
            let rate = mp * cluster.flops_peak * cluster.mfu_train;
            let micro = (workload.global_batch / (strategy.d * workload.micro_batch_size)).max(1);
            let bubble = 1.0 + (strategy.p - 1) as f64 / micro as f64;
            (workload.update_iters as f64 * flops / rate * bubble, None)
        }
        WorkKind::Inference => {
            let flops = 2.0 * params * tokens_per_replica;
            (flops / (mp * cluster.flops_peak * cluster.mfu_infer), None)
        }
        WorkKind::Generation => {
            let g = gen.expect("checked above");
            let b = generation_time(strategy, g, model, workload, cluster, &memory, reserved);
            let full_waves = b.sequences_per_replica / b.sequences_per_wave;
            let tail = b.sequences_per_replica % b.sequences_per_wave;
            let mut latency = full_waves as f64 * wave_time(g, model, workload, cluster, b.sequences_per_wave);
            if tail > 0 {
                latency += wave_time(g, model, workload, cluster, tail);
            }
            (latency, Some(b))
        }
    };
    Ok(CostEstimate {
        latency,
        memory,
        generation,
    })
}

fn generation_time(
    train: &TrainStrategy,
    gen: &GenStrategy,
    model: &ModelSpec,
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    memory: &MemoryBreakdown,
    reserved: f64,
) -> GenerationBreakdown {
    let seqs = sequences_per_replica(train, gen, workload);
    let budget = cluster.mem_per_gpu - reserved - memory.resident() - memory.gen_weights;
    let per_wave = if memory.kv_per_sequence > 0.0 {
        ((budget / memory.kv_per_sequence).floor() as u64).clamp(1, seqs)
    } else {
        seqs
    };
    GenerationBreakdown {
        sequences_per_replica: seqs,
        sequences_per_wave: per_wave,
        waves: seqs.div_ceil(per_wave),
        weight_read: weight_read(gen, model, cluster),
        kv_read: kv_read(gen, model, workload, cluster, per_wave),
        tp_comm: tp_comm(gen, model, cluster, per_wave),
    }
}

/// A token visits the `p_g` stages one after another, so each step reads
/// `p_g` ranks' worth of weights.
fn weight_read(gen: &GenStrategy, model: &ModelSpec, cluster: &ClusterSpec) -> f64 {
    let per_rank = model.weight_bytes() / gen.mp() as f64;
    gen.p_g as f64 * per_rank / cluster.hbm_bw
}

/// Average context over the response is `prompt + response/2`.
fn kv_read(gen: &GenStrategy, model: &ModelSpec, workload: &WorkloadSpec, cluster: &ClusterSpec, seqs: u64) -> f64 {
    let ctx = workload.prompt_len as f64 + workload.response_len as f64 / 2.0;
    let per_rank = seqs as f64 * ctx * model.kv_bytes_per_token() / gen.mp() as f64;
    gen.p_g as f64 * per_rank / cluster.hbm_bw
}

fn tp_comm(gen: &GenStrategy, model: &ModelSpec, cluster: &ClusterSpec, seqs: u64) -> f64 {
    if gen.t_g <= 1 {
        return 0.0;
    }
    let t = gen.t_g as f64;
    let steps = 2.0 * (t - 1.0);
    let bytes = seqs as f64 * model.hidden as f64 * 2.0 * steps / t;
    let per_allreduce = steps * cluster.collective_latency + bytes / cluster.intra_bw;
    2.0 * model.layers as f64 * per_allreduce
}

fn wave_time(gen: &GenStrategy, model: &ModelSpec, workload: &WorkloadSpec, cluster: &ClusterSpec, seqs: u64) -> f64 {
    let pp_hops = (gen.p_g - 1) as f64 * cluster.collective_latency;
    let step = weight_read(gen, model, cluster)
        + kv_read(gen, model, workload, cluster, seqs)
        + tp_comm(gen, model, cluster, seqs)
        + pp_hops;
    workload.response_len as f64 * step
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::ModelRole;

    fn cluster() -> ClusterSpec {
        ClusterSpec::default()
    }

    fn small_batch() -> WorkloadSpec {
        WorkloadSpec {
            global_batch: 128,
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn inference_doubles_with_params() {
        let s = TrainStrategy::new(1, 2, 4).unwrap();
        let mut m = ModelSpec::llama("ref", ModelRole::Reference, 7);
        let w = WorkloadSpec::default();
        let a = simu(&s, &m, &w, WorkKind::Inference, None, &cluster()).unwrap().latency;
        m.params *= 2;
        let b = simu(&s, &m, &w, WorkKind::Inference, None, &cluster()).unwrap().latency;
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn training_shapes_differ_by_bubble_only() {
        let m = ModelSpec::llama("actor", ModelRole::Actor, 7);
        let w = WorkloadSpec::default();
        let tp = TrainStrategy::new(1, 8, 1).unwrap();
        let pp = TrainStrategy::new(8, 1, 1).unwrap();
        let a = simu(&tp, &m, &w, WorkKind::Training, None, &cluster()).unwrap().latency;
        let b = simu(&pp, &m, &w, WorkKind::Training, None, &cluster()).unwrap().latency;
        // closed form: 6·7e9·2048·1024 / (8·312e12·0.5)
        let base = 6.0 * 7e9 * 1024.0 * 2048.0 / (8.0 * 312e12 * 0.5);
        assert!((a - base).abs() <= 1e-12 * base);
        assert!((b - base * (1.0 + 7.0 / 1024.0)).abs() <= 1e-12 * b);
    }

    #[test]
    fn halving_generation_tp_doubles_weight_read() {
        let m = ModelSpec::llama("actor", ModelRole::Actor, 7);
        let s = TrainStrategy::new(1, 8, 2).unwrap();
        let g8 = GenStrategy::for_training(&s, 1, 8).unwrap();
        let g4 = GenStrategy::for_training(&s, 1, 4).unwrap();
        let w = small_batch();
        let e8 = simu(&s, &m, &w, WorkKind::Generation, Some(&g8), &cluster()).unwrap();
        let e4 = simu(&s, &m, &w, WorkKind::Generation, Some(&g4), &cluster()).unwrap();
        assert_eq!(e4.generation.unwrap().weight_read, 2.0 * e8.generation.unwrap().weight_read);
    }

    #[test]
    fn smaller_generation_tp_is_faster_when_kv_fits() {
        let w = small_batch();
        for size in [7, 13] {
            let m = ModelSpec::llama("actor", ModelRole::Actor, size);
            let s = TrainStrategy::new(1, 8, 2).unwrap();
            let full = GenStrategy::identity(&s);
            let half = GenStrategy::for_training(&s, 1, 4).unwrap();
            let a = simu(&s, &m, &w, WorkKind::Generation, Some(&full), &cluster()).unwrap();
            let b = simu(&s, &m, &w, WorkKind::Generation, Some(&half), &cluster()).unwrap();
            assert_eq!(a.generation.unwrap().waves, 1);
            assert_eq!(b.generation.unwrap().waves, 1);
            assert!(b.latency < a.latency, "{size}B: {} !< {}", b.latency, a.latency);
        }
    }

    #[test]
    fn generation_requires_gen_strategy() {
        let m = ModelSpec::llama("actor", ModelRole::Actor, 7);
        let s = TrainStrategy::new(1, 8, 1).unwrap();
        let r = simu(&s, &m, &WorkloadSpec::default(), WorkKind::Generation, None, &cluster());
        assert_eq!(r, Err(SimError::MissingGenStrategy));
    }

    #[test]
    fn out_of_memory_is_reported() {
        let m = ModelSpec::llama("actor", ModelRole::Actor, 70);
        let s = TrainStrategy::new(1, 1, 1).unwrap();
        let r = simu(&s, &m, &WorkloadSpec::default(), WorkKind::Training, None, &cluster());
        assert!(matches!(r, Err(SimError::OutOfMemory { .. })));
    }

    #[test]
    fn waves_split_batch_when_kv_is_tight() {
        let m = ModelSpec::llama("actor", ModelRole::Actor, 7);
        let s = TrainStrategy::new(1, 8, 2).unwrap();
        let g = GenStrategy::for_training(&s, 1, 2).unwrap();
        let e = simu(&s, &m, &WorkloadSpec::default(), WorkKind::Generation, Some(&g), &cluster()).unwrap();
        let b = e.generation.unwrap();
        assert_eq!(b.sequences_per_replica, 128);
        assert!(b.waves > 1);
        assert!(b.sequences_per_wave as f64 * e.memory.kv_per_sequence + e.memory.resident() + e.memory.gen_weights <= 80e9);
    }
}
