//! Placement, allocation and per-model parallelism search over an RLHF
//! dataflow.

mod min_alloc;
mod placement;
mod search;
mod strategy;

pub use min_alloc::{get_min_alloc, set_footprint, SetMinimum};
pub use placement::{enum_alloc, get_placements, Placement};
pub use search::{
    assemble_mapping, d_cost, find_best_mapping, find_best_mapping_with, stage_costs, Mapping, MapperOptions, ModelAssignment,
    PlacedSet, SearchOutcome, SearchStats, StageCostRow,
};
pub use strategy::{
    auto_parallel, evaluate_strategy, generation_candidates, training_candidates, transition_seconds, CostContext,
    MinParallel, ModelStrategy, OpCost, StrategyChoice, StrategyCache, StrategyCost,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::ModelSpec;
use crate::dataflow::{DataflowGraph, ModelRole, OpKind, StageKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapperError {
    #[error("dataflow uses role `{0}` but no model was given for it")]
    MissingModel(ModelRole),
    #[error("model `{name}` has role `{role}`, which the dataflow does not use")]
    UnusedModel { name: String, role: ModelRole },
    #[error("two models share role `{0}`")]
    DuplicateRole(ModelRole),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JobOp {
    pub id: String,
    pub kind: OpKind,
    pub stage: StageKind,
}

/// A model together with the dataflow ops it executes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelJob {
    pub spec: ModelSpec,
    pub ops: Vec<JobOp>,
}

impl ModelJob {
    pub fn generates(&self) -> bool {
        self.ops.iter().any(|o| o.kind == OpKind::Generation)
    }
}

/// Pairs each role of the dataflow with its model, in the dataflow's role
/// order.
pub fn model_jobs(graph: &DataflowGraph, models: &[ModelSpec]) -> Result<Vec<ModelJob>, MapperError> {
    let roles = graph.roles();
    for (i, m) in models.iter().enumerate() {
        if models[..i].iter().any(|o| o.role == m.role) {
            return Err(MapperError::DuplicateRole(m.role));
        }
        if !roles.contains(&m.role) {
            return Err(MapperError::UnusedModel {
                name: m.name.clone(),
                role: m.role,
            });
        }
    }
    roles
        .into_iter()
        .map(|role| {
            let spec = models
                .iter()
                .find(|m| m.role == role)
                .ok_or(MapperError::MissingModel(role))?;
            let ops = graph
                .ops_of_role(role)
                .map(|o| JobOp {
                    id: o.id.clone(),
                    kind: o.kind,
                    stage: o.stage,
                })
                .collect();
            Ok(ModelJob {
                spec: spec.clone(),
                ops,
            })
        })
        .collect()
}
