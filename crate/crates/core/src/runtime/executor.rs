use std::collections::{BTreeMap, VecDeque};

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::payload::{apply_op, synth_prompts, MisalignedInputs, Record, RECORD_BYTES};
use super::protocol::{collect, distribute, Protocol, ProtocolError};
use super::registry::{Registry, RegistryError};
use super::trace::{ExecutionTrace, StageSpan, TraceEvent};
use super::transition::{execute_transition, TransitionError, TransitionReport};
use crate::cost::{ClusterSpec, ModelSpec, SimError, SimTime, WorkloadSpec};
use crate::dataflow::{ops_in_stage, DataflowGraph, ModelRole, OpKind, StageKind};
use crate::mapper::{
    d_cost, evaluate_strategy, model_jobs, stage_costs, CostContext, Mapping, MapperError, ModelJob, ModelStrategy,
};
use crate::topology::{build_training_groups, engine_generation_groups, ParallelGroups, TopologyError};
use crate::units::units;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Models(#[from] MapperError),
    #[error("mapping does not fit the dataflow: {0}")]
    InvalidMapping(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Payload(#[from] MisalignedInputs),
    #[error("cost model rejected `{model}`: {source}")]
    Cost { model: String, source: SimError },
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("deadlock: ops {0:?} can never start")]
    Deadlock(Vec<String>),
    #[error("op `{op}` costs {recomputed} now but the mapping recorded {recorded}")]
    StaleCost {
        op: String,
        recorded: SimTime,
        recomputed: SimTime,
    },
}

/// The devices and layouts one model runs on.
#[derive(Clone, Debug)]
pub struct WorkerGroup {
    pub model: String,
    pub role: ModelRole,
    pub pool: usize,
    /// First global device of the pool.
    pub offset: u32,
    pub strategy: ModelStrategy,
    pub groups: ParallelGroups,
    pub gen_groups: Option<ParallelGroups>,
}

impl WorkerGroup {
    pub fn devices(&self) -> Vec<u32> {
        (self.offset..self.offset + self.groups.world).collect()
    }

    fn layout_for(&self, kind: OpKind) -> &ParallelGroups {
        match (kind, &self.gen_groups) {
            (OpKind::Generation, Some(g)) => g,
            _ => &self.groups,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimOptions {
    pub seed: u64,
    /// Records in the toy batch; by default the smallest multiple of every
    /// protocol split count that reaches min(global_batch, 64).
    pub toy_batch: Option<u32>,
    /// Extra latency per weight transition (KVCache offload).
    pub kv_offload: SimTime,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            toy_batch: None,
            kv_offload: SimTime::ZERO,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterationResult {
    pub trace: ExecutionTrace,
    pub prompts: Vec<Record>,
    /// Collected output of every op.
    pub outputs: BTreeMap<String, Vec<Record>>,
    pub transition: Option<TransitionReport>,
    /// Stage aggregation of the recomputed op costs.
    pub d_cost: SimTime,
}

/// Where each record of a resolved future lives: a device or the
/// controller (`None`).
type Located = Vec<(Record, Option<u32>)>;

/// Output of a finished op: metadata is known to the controller, the
/// records stay on their producing devices until a consumer pulls them.
#[derive(Clone, Debug)]
struct DataFuture {
    records: Located,
}

enum Job<'a> {
    Transition { pool: usize },
    Op(&'a crate::dataflow::ModelOp),
}

impl Job<'_> {
    fn id(&self) -> String {
        match self {
            Job::Transition { .. } => "actor_transition".to_string(),
            Job::Op(op) => op.id.clone(),
        }
    }
}

/// Builds the worker groups of `mapping` and checks it against the jobs.
pub fn worker_groups(mapping: &Mapping, jobs: &[ModelJob]) -> Result<Vec<WorkerGroup>, RuntimeError> {
    let mut out = Vec::with_capacity(jobs.len());
    for job in jobs {
        let a = mapping
            .model(&job.spec.name)
            .ok_or_else(|| RuntimeError::InvalidMapping(format!("no strategy for model `{}`", job.spec.name)))?;
        let set = mapping
            .sets
            .get(a.set)
            .ok_or_else(|| RuntimeError::InvalidMapping(format!("model `{}` names unknown set {}", a.name, a.set)))?;
        let train = a.strategy.train;
        if train.world() != set.devices {
            return Err(RuntimeError::InvalidMapping(format!(
                "model `{}`: strategy {} covers {} devices but its set has {}",
                a.name,
                train,
                train.world(),
                set.devices
            )));
        }
        let groups = build_training_groups(&train, set.devices)?;
        let gen_groups = match (job.generates(), a.strategy.gen) {
            (true, Some(gen)) => {
                gen.check_against(&train)?;
                Some(engine_generation_groups(&train, &gen, mapping.engine)?)
            }
            (true, None) => {
                return Err(RuntimeError::InvalidMapping(format!(
                    "model `{}` generates but has no generation strategy",
                    a.name
                )))
            }
            (false, _) => None,
        };
        out.push(WorkerGroup {
            model: a.name.clone(),
            role: a.role,
            pool: a.set,
            offset: set.offset,
            strategy: a.strategy,
            groups,
            gen_groups,
        });
    }
    let mut end = 0;
    for s in &mapping.sets {
        if s.offset != end {
            return Err(RuntimeError::InvalidMapping(format!("set offsets are not consecutive at {}", s.offset)));
        }
        end += s.devices;
    }
    if end > mapping.n_gpus {
        return Err(RuntimeError::InvalidMapping(format!(
            "sets use {end} devices but the cluster has {}",
            mapping.n_gpus
        )));
    }
    Ok(out)
}

/// Runs one iteration of `graph` under `mapping` in virtual time.
///
/// The controller walks the stages in order and starts a stage once every
/// op of the previous one has finished. Within a stage each pool runs its
/// models' ops one at a time in program order, pools run concurrently, and
/// an op starts once its pool is free and its inputs exist. Among ready ops
/// the earliest start wins, then the lowest first device, then the op id.
/// The actor's weight transition opens its pool's Generation stage.
pub fn execute_iteration(
    graph: &DataflowGraph,
    mapping: &Mapping,
    models: &[ModelSpec],
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    options: &SimOptions,
) -> Result<IterationResult, RuntimeError> {
    let registry = Registry::default_for(graph, mapping.engine);
    execute_with_registry(graph, mapping, models, workload, cluster, options, &registry)
}

pub fn execute_with_registry(
    graph: &DataflowGraph,
    mapping: &Mapping,
    models: &[ModelSpec],
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    options: &SimOptions,
    registry: &Registry,
) -> Result<IterationResult, RuntimeError> {
    let jobs = model_jobs(graph, models)?;
    let workers = worker_groups(mapping, &jobs)?;
    let ctx = CostContext {
        cluster: ClusterSpec {
            n_gpus: mapping.n_gpus,
            ..cluster.clone()
        },
        workload: workload.clone(),
        engine: mapping.engine,
    };

    // durations straight from the cost model
    let mut durations: BTreeMap<String, SimTime> = BTreeMap::new();
    let mut transition_ticks: BTreeMap<usize, SimTime> = BTreeMap::new();
    let mut per_model = Vec::with_capacity(jobs.len());
    for (job, w) in jobs.iter().zip(&workers) {
        let a = mapping.model(&w.model).expect("checked by worker_groups");
        let cost = evaluate_strategy(job, &w.strategy, &ctx, a.reserved_bytes as f64).map_err(|source| {
            RuntimeError::Cost {
                model: w.model.clone(),
                source,
            }
        })?;
        for (op, recorded) in cost.ops.iter().zip(&a.ops) {
            if op.ticks != recorded.ticks || op.op != recorded.op {
                return Err(RuntimeError::StaleCost {
                    op: op.op.clone(),
                    recorded: recorded.ticks,
                    recomputed: op.ticks,
                });
            }
            durations.insert(op.op.clone(), op.ticks);
        }
        if cost.transition != a.transition {
            return Err(RuntimeError::StaleCost {
                op: format!("{} transition", w.model),
                recorded: a.transition,
                recomputed: cost.transition,
            });
        }
        if job.generates() {
            transition_ticks.insert(per_model.len(), cost.transition);
        }
        per_model.push(cost.stages());
    }
    let sets: Vec<Vec<usize>> = (0..mapping.sets.len())
        .map(|s| (0..workers.len()).filter(|&m| workers[m].pool == s).collect())
        .collect();
    let expected = d_cost(&stage_costs(&per_model, &sets));

    // toy batch
    let mut lcm = 1u32;
    for op in graph.ops.iter().filter(|o| !o.is_controller_op()) {
        let w = worker_of(&workers, op.role.unwrap());
        let p = registry.protocol(&op.id)?;
        lcm = lcm.lcm(&p.split_count(w.layout_for(op.kind)));
    }
    let batch = options
        .toy_batch
        .unwrap_or_else(|| workload.global_batch.min(64).div_ceil(lcm).max(1) * lcm);
    let prompts = synth_prompts(options.seed, batch, workload.prompt_len);

    // weight transition, executed for its bytes and ownership checks
    let mut transition = None;
    for &m in transition_ticks.keys() {
        let w = &workers[m];
        let bytes = jobs[m].spec.params as i128 * jobs[m].spec.bytes_param_infer as i128;
        transition = Some(execute_transition(
            &w.strategy.train,
            &w.strategy.gen.unwrap(),
            mapping.engine,
            units(bytes),
        )?);
    }

    let mut futures: BTreeMap<String, DataFuture> = BTreeMap::new();
    let mut ends: BTreeMap<String, SimTime> = BTreeMap::new();
    let mut events = Vec::new();
    let mut spans = Vec::new();
    let mut clock = SimTime::ZERO;
    let controller_pool = mapping.sets.len();

    for stage in StageKind::ORDER {
        let mut queues: Vec<VecDeque<Job>> = (0..=controller_pool).map(|_| VecDeque::new()).collect();
        if stage == StageKind::Generation {
            for &m in transition_ticks.keys() {
                queues[workers[m].pool].push_back(Job::Transition { pool: workers[m].pool });
            }
        }
        for op in ops_in_stage(graph, stage) {
            let pool = match op.role {
                Some(role) => worker_of(&workers, role).pool,
                None => controller_pool,
            };
            queues[pool].push_back(Job::Op(op));
        }
        let mut pool_free = vec![clock; controller_pool + 1];
        let mut stage_end = clock;
        loop {
            let mut pick: Option<(SimTime, u32, String, usize)> = None;
            for (pool, q) in queues.iter().enumerate() {
                let Some(job) = q.front() else { continue };
                let mut start = pool_free[pool];
                if let Job::Op(op) = job {
                    let mut ready = true;
                    for i in &op.inputs {
                        match ends.get(i) {
                            Some(&t) => start = start.max(t),
                            None => ready = false,
                        }
                    }
                    if !ready {
                        continue;
                    }
                }
                let first_device = if pool == controller_pool {
                    u32::MAX
                } else {
                    mapping.sets[pool].offset
                };
                let key = (start, first_device, job.id(), pool);
                if pick.as_ref().is_none_or(|p| key < *p) {
                    pick = Some(key);
                }
            }
            let Some((start, _, _, pool)) = pick else {
                let blocked: Vec<String> = queues.iter().flatten().map(Job::id).collect();
                if blocked.is_empty() {
                    break;
                }
                return Err(RuntimeError::Deadlock(blocked));
            };
            let job = queues[pool].pop_front().unwrap();
            let (event, output) = match job {
                Job::Transition { pool } => {
                    let m = *transition_ticks
                        .keys()
                        .find(|&&m| workers[m].pool == pool)
                        .expect("transition belongs to a generating model");
                    let w = &workers[m];
                    let end = start + transition_ticks[&m] + options.kv_offload;
                    let bytes = transition.as_ref().map_or(0, |t| {
                        let total = t.total_recv();
                        (total.numer() / total.denom()) as u64
                    });
                    (
                        TraceEvent {
                            op: "actor_transition".into(),
                            model: Some(w.model.clone()),
                            pool: Some(pool),
                            stage,
                            start,
                            end,
                            devices: w.devices(),
                            bytes,
                        },
                        None,
                    )
                }
                Job::Op(op) => {
                    let inputs: Vec<&Located> = op.inputs.iter().map(|i| &futures[i].records).collect();
                    let prompt_input: Located = prompts.iter().map(|r| (*r, None)).collect();
                    let inputs: Vec<&Located> = if inputs.is_empty() { vec![&prompt_input] } else { inputs };
                    match op.role {
                        None => {
                            let plain: Vec<Vec<Record>> =
                                inputs.iter().map(|l| l.iter().map(|(r, _)| *r).collect()).collect();
                            let refs: Vec<&[Record]> = plain.iter().map(Vec::as_slice).collect();
                            let out = apply_op(op, &refs, workload.response_len)?;
                            let moved = inputs.iter().flat_map(|l| l.iter()).filter(|(_, d)| d.is_some()).count();
                            (
                                TraceEvent {
                                    op: op.id.clone(),
                                    model: None,
                                    pool: None,
                                    stage,
                                    start,
                                    end: start,
                                    devices: Vec::new(),
                                    bytes: moved as u64 * RECORD_BYTES,
                                },
                                Some(out.into_iter().map(|r| (r, None)).collect()),
                            )
                        }
                        Some(role) => {
                            let w = worker_of(&workers, role);
                            let protocol = registry.protocol(&op.id)?;
                            let layout = w.layout_for(op.kind);
                            let (out, bytes) =
                                run_on_workers(op, protocol, layout, w.offset, &inputs, workload.response_len)?;
                            let end = start + durations[&op.id];
                            (
                                TraceEvent {
                                    op: op.id.clone(),
                                    model: Some(w.model.clone()),
                                    pool: Some(w.pool),
                                    stage,
                                    start,
                                    end,
                                    devices: w.devices(),
                                    bytes,
                                },
                                Some(out),
                            )
                        }
                    }
                }
            };
            pool_free[pool] = event.end;
            stage_end = stage_end.max(event.end);
            if let Some(out) = output {
                ends.insert(event.op.clone(), event.end);
                futures.insert(event.op.clone(), DataFuture { records: out });
            }
            events.push(event);
        }
        spans.push(StageSpan {
            stage,
            start: clock,
            end: stage_end,
        });
        clock = stage_end;
    }

    let outputs = futures
        .into_iter()
        .map(|(k, f)| (k, f.records.into_iter().map(|(r, _)| r).collect()))
        .collect();
    Ok(IterationResult {
        trace: ExecutionTrace {
            events,
            stages: spans,
            makespan: clock,
        },
        prompts,
        outputs,
        transition,
        d_cost: expected,
    })
}

fn worker_of(workers: &[WorkerGroup], role: ModelRole) -> &WorkerGroup {
    workers.iter().find(|w| w.role == role).expect("every role has a worker")
}

/// Distributes each input over the op's ranks, computes per rank, and
/// collects the result. Returns the located output and the bytes pulled
/// onto the op's devices from other devices or the controller.
fn run_on_workers(
    op: &crate::dataflow::ModelOp,
    protocol: Protocol,
    layout: &ParallelGroups,
    offset: u32,
    inputs: &[&Located],
    response_len: u32,
) -> Result<(Located, u64), RuntimeError> {
    let per_input: Vec<Vec<Located>> = inputs
        .iter()
        .map(|l| distribute(protocol, l, layout))
        .collect::<Result<_, _>>()?;
    let mut bytes = 0u64;
    let mut outputs = Vec::with_capacity(layout.world as usize);
    for rank in 0..layout.world as usize {
        let device = offset + rank as u32;
        let chunks: Vec<Vec<Record>> = per_input
            .iter()
            .map(|chunks| {
                let chunk = &chunks[rank];
                bytes += chunk.iter().filter(|(_, src)| *src != Some(device)).count() as u64 * RECORD_BYTES;
                chunk.iter().map(|(r, _)| *r).collect()
            })
            .collect();
        let refs: Vec<&[Record]> = chunks.iter().map(Vec::as_slice).collect();
        let out = apply_op(op, &refs, response_len)?;
        outputs.push(Some(out.into_iter().map(|r| (r, Some(device))).collect::<Located>()));
    }
    let collected = collect(protocol, &outputs, layout)?;
    Ok((collected.concat(), bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{build_dataflow, Algorithm};
    use crate::mapper::{find_best_mapping, MapperOptions};
    use crate::runtime::reference_outputs;
    use crate::topology::Engine;

    fn setup(alg: Algorithm, n: u32, engine: Engine) -> (DataflowGraph, Vec<ModelSpec>, WorkloadSpec, ClusterSpec, Mapping) {
        let graph = build_dataflow(alg);
        let models: Vec<ModelSpec> = alg.roles().into_iter().map(|r| ModelSpec::llama(r.as_str(), r, 7)).collect();
        let workload = WorkloadSpec::default();
        let cluster = ClusterSpec::default().with_gpus(n);
        let opts = MapperOptions {
            engine,
            ..MapperOptions::default()
        };
        let mapping = find_best_mapping(&graph, &models, &workload, &cluster, &opts).unwrap().mapping;
        (graph, models, workload, cluster, mapping)
    }

    #[test]
    fn makespan_matches_stage_aggregation() {
        for alg in [Algorithm::Ppo, Algorithm::ReMax, Algorithm::SafeRlhf] {
            let (graph, models, workload, cluster, mapping) = setup(alg, 16, Engine::Hybrid);
            let r = execute_iteration(&graph, &mapping, &models, &workload, &cluster, &SimOptions::default()).unwrap();
            assert_eq!(r.trace.makespan, r.d_cost);
            assert_eq!(r.d_cost, mapping.total_ticks);
            r.trace.check_mutual_exclusion().unwrap();
            let want = reference_outputs(&graph, &r.prompts, workload.response_len).unwrap();
            assert_eq!(r.outputs, want);
        }
    }

    #[test]
    fn kv_offload_extends_generation() {
        let (graph, models, workload, cluster, mapping) = setup(Algorithm::Ppo, 16, Engine::Hybrid);
        let opts = SimOptions {
            kv_offload: SimTime(1_000),
            ..SimOptions::default()
        };
        let r = execute_iteration(&graph, &mapping, &models, &workload, &cluster, &opts).unwrap();
        assert_eq!(r.trace.makespan, r.d_cost + SimTime(1_000));
    }

    #[test]
    fn edited_mapping_is_rejected() {
        let (graph, models, workload, cluster, mut mapping) = setup(Algorithm::Ppo, 16, Engine::Hybrid);
        mapping.models[0].ops[0].ticks = SimTime(1);
        let err = execute_iteration(&graph, &mapping, &models, &workload, &cluster, &SimOptions::default()).unwrap_err();
        assert!(matches!(err, RuntimeError::StaleCost { .. }));
    }

    #[test]
    fn same_seed_same_trace() {
        let (graph, models, workload, cluster, mapping) = setup(Algorithm::ReMax, 16, Engine::DsChat);
        let a = execute_iteration(&graph, &mapping, &models, &workload, &cluster, &SimOptions::default()).unwrap();
        let b = execute_iteration(&graph, &mapping, &models, &workload, &cluster, &SimOptions::default()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.outputs, b.outputs);
    }
}
