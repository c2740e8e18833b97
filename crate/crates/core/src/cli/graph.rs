use std::fmt::Write as _;

use serde::Serialize;

use super::{CliError, RunConfig};
use crate::dataflow::{build_dataflow, ops_in_stage, validate, DataflowGraph, StageKind};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphReport {
    pub graph: DataflowGraph,
    pub edges: Vec<(String, String)>,
}

impl GraphReport {
    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dataflow {}: {} ops, {} edges",
            self.graph.algorithm.as_str(),
            self.graph.ops.len(),
            self.edges.len()
        );
        for stage in StageKind::ORDER {
            let _ = writeln!(out, "{stage}");
            for op in ops_in_stage(&self.graph, stage) {
                let role = op.role.map_or("controller", |r| r.as_str());
                let inputs = if op.inputs.is_empty() {
                    "prompts".to_string()
                } else {
                    op.inputs.join(", ")
                };
                let _ = writeln!(out, "  {:<22} {:<11} {:<11} <- {}", op.id, role, op.kind.to_string(), inputs);
            }
        }
        out
    }
}

pub fn run_graph(config: &RunConfig) -> Result<GraphReport, CliError> {
    let graph = build_dataflow(config.algorithm);
    let violations = validate(&graph);
    if !violations.is_empty() {
        return Err(CliError::Consistency(format!("dataflow is malformed: {violations:?}")));
    }
    let edges = graph.edges();
    Ok(GraphReport { graph, edges })
}
