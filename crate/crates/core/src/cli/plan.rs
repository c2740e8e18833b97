use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CliError, RunConfig};
use crate::dataflow::build_dataflow;
use crate::mapper::{find_best_mapping, Mapping, SearchStats};

/// Canonical plan output. Wall time is kept out so that reruns are
/// byte-identical; the text report carries it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanReport {
    pub mapping: Mapping,
    pub stats: SearchStats,
}

impl PlanReport {
    pub fn text(&self, wall_secs: Option<f64>) -> String {
        let m = &self.mapping;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "plan: {} on {} GPUs, engine {}, granularity {}",
            m.algorithm.as_str(),
            m.n_gpus,
            m.engine,
            m.granularity
        );
        let _ = writeln!(
            out,
            "placement #{} of {}{}",
            m.placement_index,
            self.stats.placements,
            if m.is_colocate_all() { " (colocate all)" } else { "" }
        );
        for (i, s) in m.sets.iter().enumerate() {
            let _ = writeln!(
                out,
                "  set {i}: GPUs {}..{} ({} devices, minimum {}): {}",
                s.offset,
                s.offset + s.devices,
                s.devices,
                s.min_devices,
                s.models.join(", ")
            );
        }
        let _ = writeln!(out, "\nstrategies");
        let _ = writeln!(
            out,
            "  {:<12} {:<10} {:<4} {:<8} {:<10} {:>14} {:>12}",
            "model", "role", "set", "train", "generate", "reserved(GB)", "trans(s)"
        );
        for a in &m.models {
            let gen = a.strategy.gen.map_or("-".to_string(), |g| g.to_string());
            let _ = writeln!(
                out,
                "  {:<12} {:<10} {:<4} {:<8} {:<10} {:>14.3} {:>12.6}",
                a.name,
                a.role.as_str(),
                a.set,
                a.strategy.train.to_string(),
                gen,
                a.reserved_bytes as f64 / 1e9,
                a.transition.as_secs()
            );
        }
        let _ = writeln!(out, "\nstage costs (s)");
        let mut header = format!("  {:<12}", "stage");
        for i in 0..m.sets.len() {
            let _ = write!(header, " {:>12}", format!("set {i}"));
        }
        let _ = writeln!(out, "{header} {:>12}", "stage max");
        for row in &m.stage_costs {
            let mut line = format!("  {:<12}", row.stage.to_string());
            for c in &row.per_set {
                let _ = write!(line, " {:>12.6}", c.as_secs());
            }
            let _ = writeln!(out, "{line} {:>12.6}", row.cost.as_secs());
        }
        let _ = writeln!(out, "  total {:.6} s ({} ps)", m.total_ticks.as_secs(), m.total_ticks.0);
        let s = &self.stats;
        let _ = writeln!(
            out,
            "\ncandidates: {} placements ({} feasible), {} allocations, {} strategy queries, cache {} hits / {} misses",
            s.placements, s.feasible_placements, s.allocations, s.strategy_queries, s.cache_hits, s.cache_misses
        );
        if let Some(w) = wall_secs {
            let _ = writeln!(out, "search wall time: {w:.3} s");
        }
        out
    }
}

/// Runs the mapping search for `config`. Returns the report and the search
/// wall time in seconds.
pub fn run_plan(config: &RunConfig) -> Result<(PlanReport, f64), CliError> {
    let graph = build_dataflow(config.algorithm);
    let started = Instant::now();
    let outcome = find_best_mapping(
        &graph,
        &config.models,
        &config.workload,
        &config.cluster,
        &config.mapper_options(),
    )?;
    let wall = started.elapsed().as_secs_f64();
    Ok((
        PlanReport {
            mapping: outcome.mapping,
            stats: outcome.stats,
        },
        wall,
    ))
}
