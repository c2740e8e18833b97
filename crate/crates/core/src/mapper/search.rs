use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::min_alloc::{get_min_alloc, SetMinimum};
use super::placement::{enum_alloc, get_placements, Placement};
use super::strategy::{
    auto_parallel, evaluate_strategy, CostContext, MinParallel, ModelStrategy, OpCost, StrategyCache, StrategyChoice,
};
use super::{model_jobs, MapperError, ModelJob};
use crate::cost::{ClusterSpec, ModelSpec, SimError, SimTime, WorkloadSpec};
use crate::dataflow::{Algorithm, DataflowGraph, ModelRole, StageKind};
use crate::topology::Engine;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapperOptions {
    /// Allocations are multiples of this many GPUs.
    pub granularity: u32,
    pub engine: Engine,
    pub cache: bool,
}

impl Default for MapperOptions {
    fn default() -> Self {
        Self {
            granularity: 1,
            engine: Engine::Hybrid,
            cache: true,
        }
    }
}

/// Per-stage cost of each set: a set's cost in a stage is the sum of its
/// members' op latencies there (colocated models time-share the devices).
pub fn stage_costs(per_model: &[[SimTime; 3]], sets: &[Vec<usize>]) -> Vec<[SimTime; 3]> {
    sets.iter()
        .map(|set| {
            let mut row = [SimTime::ZERO; 3];
            for &m in set {
                for (acc, v) in row.iter_mut().zip(per_model[m]) {
                    *acc += v;
                }
            }
            row
        })
        .collect()
}

/// Iteration latency: sets run in parallel within a stage, stages run in
/// sequence.
pub fn d_cost(table: &[[SimTime; 3]]) -> SimTime {
    (0..3)
        .map(|s| table.iter().map(|row| row[s]).max().unwrap_or(SimTime::ZERO))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacedSet {
    pub models: Vec<String>,
    pub devices: u32,
    /// First global device of the set; sets are laid out in order.
    pub offset: u32,
    pub min_devices: u32,
    pub min_parallel: MinParallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelAssignment {
    pub name: String,
    pub role: ModelRole,
    pub set: usize,
    pub strategy: ModelStrategy,
    /// Bytes per rank reserved for colocated models.
    pub reserved_bytes: u64,
    pub ops: Vec<OpCost>,
    pub transition: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCostRow {
    pub stage: StageKind,
    pub per_set: Vec<SimTime>,
    pub cost: SimTime,
}

/// Best mapping found by the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mapping {
    pub algorithm: Algorithm,
    pub engine: Engine,
    pub n_gpus: u32,
    pub granularity: u32,
    /// Position of the placement in canonical order.
    pub placement_index: usize,
    pub sets: Vec<PlacedSet>,
    pub models: Vec<ModelAssignment>,
    pub stage_costs: Vec<StageCostRow>,
    pub total_ticks: SimTime,
    pub total_seconds: f64,
}

impl Mapping {
    pub fn model(&self, name: &str) -> Option<&ModelAssignment> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn is_colocate_all(&self) -> bool {
        self.sets.len() == 1
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchStats {
    pub placements: u64,
    /// Placements with at least one allocation where every model fits.
    pub feasible_placements: u64,
    pub allocations: u64,
    pub strategy_queries: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub mapping: Mapping,
    pub stats: SearchStats,
}

struct Candidate {
    cost: SimTime,
    placement: usize,
    allocation: usize,
    devices: Vec<u32>,
    minima: Vec<SetMinimum>,
    choices: Vec<Arc<Option<StrategyChoice>>>,
}

impl Candidate {
    fn key(&self) -> (SimTime, usize, usize) {
        (self.cost, self.placement, self.allocation)
    }
}

#[derive(Default)]
struct PlacementReport {
    best: Option<Candidate>,
    min_alloc_error: Option<String>,
    min_demand: Option<u32>,
    allocations: u64,
    queries: u64,
}

/// Exhaustive search over placements × allocations with per-model
/// [`auto_parallel`], returning the cheapest mapping by [`d_cost`]. Ties go
/// to the earlier placement in canonical order, then the earlier
/// allocation.
pub fn find_best_mapping(
    graph: &DataflowGraph,
    models: &[ModelSpec],
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    options: &MapperOptions,
) -> Result<SearchOutcome, MapperError> {
    let jobs = model_jobs(graph, models)?;
    let placements = get_placements(jobs.len());
    find_best_mapping_with(graph.algorithm, &jobs, &placements, workload, cluster, options)
}

/// [`find_best_mapping`] over an explicit model list and placement list.
pub fn find_best_mapping_with(
    algorithm: Algorithm,
    jobs: &[ModelJob],
    placements: &[Placement],
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    options: &MapperOptions,
) -> Result<SearchOutcome, MapperError> {
    cluster.validate().map_err(MapperError::Invalid)?;
    workload.validate().map_err(MapperError::Invalid)?;
    for j in jobs {
        j.spec.validate().map_err(MapperError::Invalid)?;
    }
    if jobs.is_empty() {
        return Err(MapperError::Invalid("no models to place".into()));
    }
    if options.granularity == 0 || !cluster.n_gpus.is_multiple_of(options.granularity) {
        return Err(MapperError::Invalid(format!(
            "granularity {} must be positive and divide {} GPUs",
            options.granularity, cluster.n_gpus
        )));
    }
    let ctx = CostContext {
        cluster: cluster.clone(),
        workload: workload.clone(),
        engine: options.engine,
    };
    let cache = StrategyCache::new();

    let reports: Vec<PlacementReport> = placements
        .par_iter()
        .enumerate()
        .map(|(pi, placement)| search_placement(pi, placement, jobs, &ctx, options, &cache))
        .collect();

    let mut stats = SearchStats {
        placements: placements.len() as u64,
        ..Default::default()
    };
    let mut best: Option<Candidate> = None;
    let mut memory_error = None;
    let mut smallest_demand: Option<u32> = None;
    for report in reports {
        stats.allocations += report.allocations;
        stats.strategy_queries += report.queries;
        if report.best.is_some() {
            stats.feasible_placements += 1;
        }
        if let Some(e) = report.min_alloc_error {
            memory_error.get_or_insert(e);
        }
        if let Some(d) = report.min_demand {
            smallest_demand = Some(smallest_demand.map_or(d, |s: u32| s.min(d)));
        }
        if let Some(c) = report.best {
            if best.as_ref().is_none_or(|b| c.key() < b.key()) {
                best = Some(c);
            }
        }
    }
    if options.cache {
        stats.cache_hits = cache.hits();
        stats.cache_misses = cache.misses();
    }

    let Some(best) = best else {
        let reason = match (smallest_demand, memory_error) {
            (Some(d), _) if d > cluster.n_gpus => format!(
                "device count: the smallest minimal allocation needs {d} GPUs but only {} are available",
                cluster.n_gpus
            ),
            (Some(_), _) => "memory: no allocation admits a strategy that fits every colocated set".to_string(),
            (None, Some(e)) => format!("memory: {e}"),
            (None, None) => "no placement to evaluate".to_string(),
        };
        return Err(MapperError::Infeasible(reason));
    };
    let mut strategies: Vec<Option<ModelStrategy>> = vec![None; jobs.len()];
    let members = placements[best.placement].sets.iter().flatten();
    for (&m, choice) in members.zip(&best.choices) {
        strategies[m] = choice.as_ref().as_ref().map(|c| c.strategy);
    }
    let strategies: Vec<ModelStrategy> = strategies.into_iter().map(|s| s.expect("feasible candidate")).collect();
    let mapping = assemble_mapping(
        algorithm,
        jobs,
        &placements[best.placement],
        best.placement,
        &best.devices,
        &best.minima,
        &strategies,
        &ctx,
        options.granularity,
    )
    .map_err(|e| MapperError::Invalid(format!("re-pricing the best mapping failed: {e}")))?;
    debug_assert_eq!(mapping.total_ticks, best.cost);
    Ok(SearchOutcome { mapping, stats })
}

fn search_placement(
    pi: usize,
    placement: &Placement,
    jobs: &[ModelJob],
    ctx: &CostContext,
    options: &MapperOptions,
    cache: &StrategyCache,
) -> PlacementReport {
    let mut report = PlacementReport::default();
    let minima = match get_min_alloc(placement, jobs, &ctx.cluster, &ctx.workload, options.granularity) {
        Ok(m) => m,
        Err(e) => {
            report.min_alloc_error = Some(e);
            return report;
        }
    };
    report.min_demand = Some(minima.iter().map(|m| m.devices).sum());
    let lows: Vec<u32> = minima.iter().map(|m| m.devices).collect();
    let allocations = enum_alloc(ctx.cluster.n_gpus, &lows, options.granularity);
    report.allocations = allocations.len() as u64;

    // flattened (set, member) order
    let members: Vec<(usize, usize, usize)> = placement
        .sets
        .iter()
        .enumerate()
        .flat_map(|(s, set)| set.iter().enumerate().map(move |(k, &m)| (s, k, m)))
        .collect();
    let mut per_model = vec![[SimTime::ZERO; 3]; jobs.len()];

    'alloc: for (ai, devices) in allocations.into_iter().enumerate() {
        let mut choices = Vec::with_capacity(members.len());
        for &(s, k, m) in &members {
            report.queries += 1;
            let reserved = minima[s].reserved[k] as f64;
            let choice = if options.cache {
                cache.get_or_compute(m, devices[s], minima[s].min, &jobs[m], ctx, reserved)
            } else {
                Arc::new(auto_parallel(devices[s], minima[s].min, &jobs[m], ctx, reserved))
            };
            match choice.as_ref() {
                Some(c) => per_model[m] = c.cost.stages(),
                None => continue 'alloc,
            }
            choices.push(choice);
        }
        let cost = d_cost(&stage_costs(&per_model, &placement.sets));
        if report.best.as_ref().is_none_or(|b| cost < b.cost) {
            report.best = Some(Candidate {
                cost,
                placement: pi,
                allocation: ai,
                devices,
                minima: minima.clone(),
                choices,
            });
        }
    }
    report
}

/// Prices `strategies` (indexed like `jobs`) under `placement` and
/// `devices`, and lays the sets out on consecutive devices.
#[allow(clippy::too_many_arguments)]
pub fn assemble_mapping(
    algorithm: Algorithm,
    jobs: &[ModelJob],
    placement: &Placement,
    placement_index: usize,
    devices: &[u32],
    minima: &[SetMinimum],
    strategies: &[ModelStrategy],
    ctx: &CostContext,
    granularity: u32,
) -> Result<Mapping, SimError> {
    let mut sets = Vec::new();
    let mut offset = 0;
    for (s, set) in placement.sets.iter().enumerate() {
        sets.push(PlacedSet {
            models: set.iter().map(|&m| jobs[m].spec.name.clone()).collect(),
            devices: devices[s],
            offset,
            min_devices: minima[s].devices,
            min_parallel: minima[s].min,
        });
        offset += devices[s];
    }
    let mut models: Vec<Option<ModelAssignment>> = vec![None; jobs.len()];
    let mut per_model = vec![[SimTime::ZERO; 3]; jobs.len()];
    for (s, set) in placement.sets.iter().enumerate() {
        for (k, &m) in set.iter().enumerate() {
            let reserved = minima[s].reserved[k];
            let cost = evaluate_strategy(&jobs[m], &strategies[m], ctx, reserved as f64)?;
            per_model[m] = cost.stages();
            models[m] = Some(ModelAssignment {
                name: jobs[m].spec.name.clone(),
                role: jobs[m].spec.role,
                set: s,
                strategy: strategies[m],
                reserved_bytes: reserved,
                ops: cost.ops,
                transition: cost.transition,
            });
        }
    }
    let table = stage_costs(&per_model, &placement.sets);
    let stage_rows = StageKind::ORDER
        .iter()
        .enumerate()
        .map(|(i, &stage)| {
            let per_set: Vec<SimTime> = table.iter().map(|row| row[i]).collect();
            let cost = per_set.iter().copied().max().unwrap_or(SimTime::ZERO);
            StageCostRow { stage, per_set, cost }
        })
        .collect();
    let total = d_cost(&table);
    Ok(Mapping {
        algorithm,
        engine: ctx.engine,
        n_gpus: ctx.cluster.n_gpus,
        granularity,
        placement_index,
        sets,
        models: models.into_iter().map(|m| m.expect("placement covers every model")).collect(),
        stage_costs: stage_rows,
        total_ticks: total,
        total_seconds: total.as_secs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: u64) -> SimTime {
        SimTime(x)
    }

    #[test]
    fn two_set_example() {
        let table = [[t(2), t(3), t(5)], [t(0), t(4), t(4)]];
        assert_eq!(d_cost(&table), t(11));
    }

    #[test]
    fn single_set_is_plain_sum() {
        let per_model = [[t(1), t(2), t(3)], [t(4), t(5), t(6)]];
        let table = stage_costs(&per_model, &[vec![0, 1]]);
        assert_eq!(d_cost(&table), t(21));
    }

    #[test]
    fn empty_stages_contribute_nothing() {
        let table = [[t(0), t(7), t(0)], [t(0), t(1), t(0)]];
        assert_eq!(d_cost(&table), t(7));
        assert_eq!(d_cost(&[]), t(0));
    }
}
