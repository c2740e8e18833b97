use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::cost::{simu_reserved, transition_cost, ClusterSpec, ModelSpec, SimError, SimTime, WorkKind, WorkloadSpec};
use crate::dataflow::{OpKind, StageKind};
use crate::topology::{transition_plan, Engine, GenStrategy, TrainStrategy};
use crate::units::units;

use super::ModelJob;

/// Strategy assigned to one model; `gen` is set for models that generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelStrategy {
    pub train: TrainStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenStrategy>,
}

impl ModelStrategy {
    /// Sort key for the lexicographic tie-break.
    fn key(&self) -> (u32, u32, u32, u32, u32) {
        let (pg, tg) = self.gen.map_or((0, 0), |g| (g.p_g, g.t_g));
        (self.train.p, self.train.t, self.train.d, pg, tg)
    }
}

/// Smallest pipeline/tensor sizes that fit a colocated set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinParallel {
    pub p_min: u32,
    pub t_min: u32,
}

impl MinParallel {
    /// `(1, c)` within a machine, `(c/U, U)` beyond.
    pub fn for_size(c: u32, gpus_per_machine: u32) -> Self {
        if c <= gpus_per_machine {
            Self { p_min: 1, t_min: c }
        } else {
            Self {
                p_min: c / gpus_per_machine,
                t_min: gpus_per_machine,
            }
        }
    }

    pub fn size(&self) -> u32 {
        self.p_min * self.t_min
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpCost {
    pub op: String,
    pub stage: StageKind,
    pub ticks: SimTime,
}

/// Latency of every op of a model under one strategy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyCost {
    pub ops: Vec<OpCost>,
    /// Training → generation weight transition, charged to the Generation
    /// stage.
    pub transition: SimTime,
}

impl StrategyCost {
    pub fn stage(&self, stage: StageKind) -> SimTime {
        let ops: SimTime = self.ops.iter().filter(|o| o.stage == stage).map(|o| o.ticks).sum();
        if stage == StageKind::Generation {
            ops + self.transition
        } else {
            ops
        }
    }

    pub fn stages(&self) -> [SimTime; 3] {
        StageKind::ORDER.map(|s| self.stage(s))
    }

    pub fn total(&self) -> SimTime {
        self.ops.iter().map(|o| o.ticks).sum::<SimTime>() + self.transition
    }
}

/// Everything a cost evaluation depends on besides the model and strategy.
#[derive(Clone, Debug)]
pub struct CostContext {
    pub cluster: ClusterSpec,
    pub workload: WorkloadSpec,
    pub engine: Engine,
}

fn work_kind(kind: OpKind) -> Option<WorkKind> {
    match kind {
        OpKind::Generation => Some(WorkKind::Generation),
        OpKind::Inference => Some(WorkKind::Inference),
        OpKind::Training => Some(WorkKind::Training),
        OpKind::Numerical => None,
    }
}

/// Seconds of the actor's weight transition over its own devices.
pub fn transition_seconds(model: &ModelSpec, train: &TrainStrategy, gen: &GenStrategy, ctx: &CostContext) -> f64 {
    let bytes = model.params as i128 * model.bytes_param_infer as i128;
    let plan = transition_plan(train, gen, ctx.engine, units(bytes)).expect("generation strategy checked against training");
    transition_cost(&plan, &ctx.cluster)
}

/// Prices every op of `job` under `strategy`, with `reserved` bytes per
/// rank held by colocated models.
pub fn evaluate_strategy(
    job: &ModelJob,
    strategy: &ModelStrategy,
    ctx: &CostContext,
    reserved: f64,
) -> Result<StrategyCost, SimError> {
    evaluate_with(job, strategy, ctx, reserved, &mut |m, t, g| transition_seconds(m, t, g, ctx))
}

fn evaluate_with(
    job: &ModelJob,
    strategy: &ModelStrategy,
    ctx: &CostContext,
    reserved: f64,
    transition: &mut dyn FnMut(&ModelSpec, &TrainStrategy, &GenStrategy) -> f64,
) -> Result<StrategyCost, SimError> {
    let mut ops = Vec::with_capacity(job.ops.len());
    let mut memo: [Option<SimTime>; 3] = [None; 3];
    for op in &job.ops {
        let ticks = match work_kind(op.kind) {
            None => SimTime::ZERO,
            Some(kind) => {
                let slot = kind as usize;
                match memo[slot] {
                    Some(t) => t,
                    None => {
                        let est = simu_reserved(
                            &strategy.train,
                            &job.spec,
                            &ctx.workload,
                            kind,
                            strategy.gen.as_ref(),
                            &ctx.cluster,
                            reserved,
                        )?;
                        let t = SimTime::from_secs(est.latency);
                        memo[slot] = Some(t);
                        t
                    }
                }
            }
        };
        ops.push(OpCost {
            op: op.id.clone(),
            stage: op.stage,
            ticks,
        });
    }
    let transition = match (job.generates(), strategy.gen) {
        (true, Some(gen)) => SimTime::from_secs(transition(&job.spec, &strategy.train, &gen)),
        (true, None) => return Err(SimError::MissingGenStrategy),
        _ => SimTime::ZERO,
    };
    Ok(StrategyCost { ops, transition })
}

/// Result of [`auto_parallel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyChoice {
    pub strategy: ModelStrategy,
    pub cost: StrategyCost,
    /// Candidates priced during the search.
    pub candidates: u32,
}

/// Every training strategy the search visits on `a` devices: `t` from
/// `t_min` to `min(U, a)`, `p` from `p_min` upward, `d = a/(p·t)`.
pub fn training_candidates(a: u32, min: MinParallel, gpus_per_machine: u32) -> Vec<TrainStrategy> {
    let mut out = Vec::new();
    for t in min.t_min..=gpus_per_machine.min(a) {
        for p in min.p_min..=a / t {
            if a.is_multiple_of(p * t) {
                out.push(TrainStrategy { p, t, d: a / (p * t) });
            }
        }
    }
    out
}

/// Generation strategies with `p_g | p` and `t_g | t`.
pub fn generation_candidates(train: &TrainStrategy) -> Vec<GenStrategy> {
    let mut out = Vec::new();
    for p_g in (1..=train.p).filter(|x| train.p.is_multiple_of(*x)) {
        for t_g in (1..=train.t).filter(|x| train.t.is_multiple_of(*x)) {
            out.push(GenStrategy::for_training(train, p_g, t_g).expect("divisors"));
        }
    }
    out
}

/// Cheapest strategy for `job` on `a` devices, minimizing the sum of its op
/// latencies (plus the weight transition for a generating model). Ties go
/// to the lexicographically smallest `(p, t, d, p_g, t_g)`. `None` when no
/// candidate fits in memory.
pub fn auto_parallel(
    a: u32,
    min: MinParallel,
    job: &ModelJob,
    ctx: &CostContext,
    reserved: f64,
) -> Option<StrategyChoice> {
    auto_parallel_with(a, min, job, ctx, reserved, &mut |m, t, g| transition_seconds(m, t, g, ctx))
}

fn auto_parallel_with(
    a: u32,
    min: MinParallel,
    job: &ModelJob,
    ctx: &CostContext,
    reserved: f64,
    transition: &mut dyn FnMut(&ModelSpec, &TrainStrategy, &GenStrategy) -> f64,
) -> Option<StrategyChoice> {
    let mut best: Option<(SimTime, ModelStrategy, StrategyCost)> = None;
    let mut candidates = 0u32;
    for train in training_candidates(a, min, ctx.cluster.gpus_per_machine) {
        let gens: Vec<Option<GenStrategy>> = if job.generates() {
            generation_candidates(&train).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        for gen in gens {
            let strategy = ModelStrategy { train, gen };
            candidates += 1;
            let Ok(cost) = evaluate_with(job, &strategy, ctx, reserved, transition) else {
                continue;
            };
            let total = cost.total();
            let better = match &best {
                None => true,
                Some((t, s, _)) => (total, strategy.key()) < (*t, s.key()),
            };
            if better {
                best = Some((total, strategy, cost));
            }
        }
    }
    best.map(|(_, strategy, cost)| StrategyChoice {
        strategy,
        cost,
        candidates,
    })
}

type CacheKey = (usize, u32, MinParallel, u64);
type TransitionKey = (TrainStrategy, GenStrategy);

/// Memoizes [`auto_parallel`] results for one search, keyed by model index
/// in the search's model list, device count, minimal parallel sizes and
/// reserved bytes. Also memoizes transition plans, which depend only on the
/// strategy pair within a search.
#[derive(Default)]
pub struct StrategyCache {
    entries: Mutex<HashMap<CacheKey, Arc<Option<StrategyChoice>>>>,
    transitions: Mutex<HashMap<TransitionKey, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl StrategyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn get_or_compute(
        &self,
        model_index: usize,
        a: u32,
        min: MinParallel,
        job: &ModelJob,
        ctx: &CostContext,
        reserved: f64,
    ) -> Arc<Option<StrategyChoice>> {
        let key = (model_index, a, min, reserved.to_bits());
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Arc::clone(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let mut transition = |m: &ModelSpec, t: &TrainStrategy, g: &GenStrategy| {
            if let Some(s) = self.transitions.lock().unwrap().get(&(*t, *g)) {
                return *s;
            }
            let s = transition_seconds(m, t, g, ctx);
            self.transitions.lock().unwrap().insert((*t, *g), s);
            s
        };
        let value = Arc::new(auto_parallel_with(a, min, job, ctx, reserved, &mut transition));
        let mut entries = self.entries.lock().unwrap();
        Arc::clone(entries.entry(key).or_insert(value))
    }
}
