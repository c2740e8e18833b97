use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CliError, PlanReport, RunConfig};
use crate::cost::SimTime;
use crate::dataflow::{build_dataflow, OpKind, StageKind};
use crate::mapper::Mapping;
use crate::runtime::{checksum, execute_iteration, reference_outputs, IterationResult, RuntimeError, SimOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageBreakdown {
    pub stage: StageKind,
    pub start: SimTime,
    pub end: SimTime,
    /// Busy time of each pool within the stage.
    pub pool_busy: Vec<SimTime>,
    /// Most pools running at the same instant.
    pub max_concurrency: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub algorithm: String,
    pub engine: String,
    pub seed: u64,
    pub toy_batch: usize,
    pub makespan: SimTime,
    /// Stage aggregation of the op costs plus any KVCache offload time.
    pub d_cost: SimTime,
    pub makespan_equals_d_cost: bool,
    pub outputs_match_reference: bool,
    pub output_checksum: u64,
    pub transition: SimTime,
    pub generation: SimTime,
    pub transition_bytes: u64,
    pub moved_bytes: u64,
    pub stages: Vec<StageBreakdown>,
}

impl SimulateReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "simulate: {} engine {}, seed {}, toy batch {}",
            self.algorithm, self.engine, self.seed, self.toy_batch
        );
        let _ = writeln!(
            out,
            "  {:<12} {:>12} {:>12} {:>6}  pool busy (s)",
            "stage", "start(s)", "end(s)", "conc"
        );
        for s in &self.stages {
            let busy: Vec<String> = s.pool_busy.iter().map(|b| format!("{:.6}", b.as_secs())).collect();
            let _ = writeln!(
                out,
                "  {:<12} {:>12.6} {:>12.6} {:>6}  [{}]",
                s.stage.to_string(),
                s.start.as_secs(),
                s.end.as_secs(),
                s.max_concurrency,
                busy.join(", ")
            );
        }
        let _ = writeln!(
            out,
            "transition {:.6} s, generation {:.6} s, transition bytes {}",
            self.transition.as_secs(),
            self.generation.as_secs(),
            self.transition_bytes
        );
        let _ = writeln!(out, "makespan {:.6} s ({} ps)", self.makespan.as_secs(), self.makespan.0);
        let _ = writeln!(out, "d_cost   {:.6} s ({} ps)", self.d_cost.as_secs(), self.d_cost.0);
        let _ = writeln!(out, "makespan == d_cost: {}", self.makespan_equals_d_cost);
        let _ = writeln!(out, "outputs match reference: {}", self.outputs_match_reference);
        out
    }
}

/// Reads a mapping from either a plan report or a bare mapping document.
pub fn load_mapping(text: &str) -> Result<Mapping, CliError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("mapping file: {e}")))?;
    let precise = |prefix: &str, e: serde_path_to_error::Error<serde_json::Error>| {
        CliError::Config(format!("mapping file: {prefix}{}: {}", e.path(), e.inner()))
    };
    if value.get("mapping").is_some() {
        let report: PlanReport = serde_path_to_error::deserialize(value).map_err(|e| precise("", e))?;
        Ok(report.mapping)
    } else {
        serde_path_to_error::deserialize(value).map_err(|e| precise("", e))
    }
}

fn classify(e: RuntimeError) -> CliError {
    match e {
        RuntimeError::Models(_)
        | RuntimeError::InvalidMapping(_)
        | RuntimeError::Topology(_)
        | RuntimeError::Cost { .. }
        | RuntimeError::StaleCost { .. }
        | RuntimeError::Registry(_) => CliError::Config(format!("mapping file: {e}")),
        other => CliError::Consistency(other.to_string()),
    }
}

/// Executes one iteration of `mapping` and checks it against the cost
/// model and a sequential reference run.
pub fn run_simulate(config: &RunConfig, mapping: &Mapping) -> Result<(SimulateReport, IterationResult), CliError> {
    if mapping.algorithm != config.algorithm {
        return Err(CliError::Config(format!(
            "mapping file: algorithm is {} but the config says {}",
            mapping.algorithm.as_str(),
            config.algorithm.as_str()
        )));
    }
    if mapping.n_gpus != config.cluster.n_gpus {
        return Err(CliError::Config(format!(
            "mapping file: n_gpus is {} but cluster.n_gpus is {}",
            mapping.n_gpus, config.cluster.n_gpus
        )));
    }
    let graph = build_dataflow(config.algorithm);
    let options = SimOptions {
        seed: config.seed,
        toy_batch: config.simulate.toy_batch,
        kv_offload: config.kv_offload(),
    };
    let result = execute_iteration(
        &graph,
        mapping,
        &config.models,
        &config.workload,
        &config.cluster,
        &options,
    )
    .map_err(classify)?;

    let trace = &result.trace;
    let transitions = trace.events.iter().filter(|e| e.op == "actor_transition").count() as u64;
    let expected = result.d_cost + SimTime(options.kv_offload.0 * transitions);
    let reference = reference_outputs(&graph, &result.prompts, config.workload.response_len)
        .map_err(|e| CliError::Consistency(e.to_string()))?;
    let generation_ops: Vec<&str> = graph
        .ops
        .iter()
        .filter(|o| o.kind == OpKind::Generation)
        .map(|o| o.id.as_str())
        .collect();
    let duration = |pred: &dyn Fn(&str) -> bool| -> SimTime {
        trace.events.iter().filter(|e| pred(&e.op)).map(|e| e.end - e.start).sum()
    };
    let stages = trace
        .stages
        .iter()
        .map(|span| {
            let pool_busy = (0..mapping.sets.len())
                .map(|p| {
                    trace
                        .events
                        .iter()
                        .filter(|e| e.stage == span.stage && e.pool == Some(p))
                        .map(|e| e.end - e.start)
                        .sum()
                })
                .collect();
            StageBreakdown {
                stage: span.stage,
                start: span.start,
                end: span.end,
                pool_busy,
                max_concurrency: trace.max_concurrency(span.stage),
            }
        })
        .collect();
    let final_checksum = result.outputs.values().fold(0u64, |acc, v| acc.rotate_left(7) ^ checksum(v));
    let report = SimulateReport {
        algorithm: config.algorithm.as_str().to_string(),
        engine: mapping.engine.to_string(),
        seed: config.seed,
        toy_batch: result.prompts.len(),
        makespan: trace.makespan,
        d_cost: expected,
        makespan_equals_d_cost: trace.makespan == expected,
        outputs_match_reference: result.outputs == reference,
        output_checksum: final_checksum,
        transition: duration(&|op| op == "actor_transition"),
        generation: duration(&|op| generation_ops.contains(&op)),
        transition_bytes: trace
            .events
            .iter()
            .filter(|e| e.op == "actor_transition")
            .map(|e| e.bytes)
            .sum(),
        moved_bytes: trace.events.iter().filter(|e| e.op != "actor_transition").map(|e| e.bytes).sum(),
        stages,
    };
    if let Err(o) = trace.check_mutual_exclusion() {
        return Err(CliError::Consistency(format!(
            "ops `{}` and `{}` overlap on device {}",
            o.first, o.second, o.device
        )));
    }
    if !report.makespan_equals_d_cost {
        return Err(CliError::Consistency(format!(
            "makespan {} differs from d_cost {}",
            report.makespan, report.d_cost
        )));
    }
    if !report.outputs_match_reference {
        return Err(CliError::Consistency("op outputs differ from the reference run".into()));
    }
    Ok((report, result))
}
