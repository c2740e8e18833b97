//! RLHF algorithms as staged dataflow graphs over model roles.
//!
//! Every graph has the same three stages (generation, preparation,
//! training). Stage membership is stored explicitly on each op rather than
//! inferred from dependencies, because cost aggregation iterates stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Actor,
    Critic,
    Reference,
    Reward,
    Cost,
}

impl ModelRole {
    pub const ALL: [ModelRole; 5] = [
        ModelRole::Actor,
        ModelRole::Critic,
        ModelRole::Reference,
        ModelRole::Reward,
        ModelRole::Cost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Actor => "actor",
            ModelRole::Critic => "critic",
            ModelRole::Reference => "reference",
            ModelRole::Reward => "reward",
            ModelRole::Cost => "cost",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelRole {
    type Err = DataflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| DataflowError::UnknownRole(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Generation,
    Preparation,
    Training,
}

impl StageKind {
    /// Stages in execution order.
    pub const ORDER: [StageKind; 3] = [
        StageKind::Generation,
        StageKind::Preparation,
        StageKind::Training,
    ];

    pub fn index(self) -> usize {
        match self {
            StageKind::Generation => 0,
            StageKind::Preparation => 1,
            StageKind::Training => 2,
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StageKind::Generation => "Generation",
            StageKind::Preparation => "Preparation",
            StageKind::Training => "Training",
        };
        f.write_str(s)
    }
}

/// What kind of computation an op performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Generation,
    Inference,
    Training,
    /// Controller-side arithmetic with no model forward pass.
    Numerical,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Generation => "generation",
            OpKind::Inference => "inference",
            OpKind::Training => "training",
            OpKind::Numerical => "numerical",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpName {
    GenerateSequences,
    ComputeLogProb,
    ComputeValues,
    ComputeRefLogProb,
    ComputeReward,
    ComputeAdvantage,
    UpdateActor,
    UpdateCritic,
    ComputeLoss,
}

impl OpName {
    /// The computation kind each primitive performs.
    pub fn kind(self) -> OpKind {
        match self {
            OpName::GenerateSequences => OpKind::Generation,
            OpName::ComputeLogProb
            | OpName::ComputeValues
            | OpName::ComputeRefLogProb
            | OpName::ComputeReward
            | OpName::ComputeLoss => OpKind::Inference,
            OpName::ComputeAdvantage => OpKind::Numerical,
            OpName::UpdateActor | OpName::UpdateCritic => OpKind::Training,
        }
    }

    /// Roles allowed to own this primitive. `None` in the list means the
    /// controller.
    fn allowed_roles(self) -> &'static [Option<ModelRole>] {
        match self {
            OpName::GenerateSequences
            | OpName::ComputeLogProb
            | OpName::ComputeLoss
            | OpName::UpdateActor => &[Some(ModelRole::Actor)],
            OpName::ComputeValues | OpName::UpdateCritic => &[Some(ModelRole::Critic)],
            OpName::ComputeRefLogProb => &[Some(ModelRole::Reference)],
            OpName::ComputeReward => &[Some(ModelRole::Reward), Some(ModelRole::Cost)],
            OpName::ComputeAdvantage => &[None],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpName::GenerateSequences => "generate_sequences",
            OpName::ComputeLogProb => "compute_log_prob",
            OpName::ComputeValues => "compute_values",
            OpName::ComputeRefLogProb => "compute_ref_log_prob",
            OpName::ComputeReward => "compute_reward",
            OpName::ComputeAdvantage => "compute_advantage",
            OpName::UpdateActor => "update_actor",
            OpName::UpdateCritic => "update_critic",
            OpName::ComputeLoss => "compute_loss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ppo")]
    Ppo,
    #[serde(rename = "remax")]
    ReMax,
    #[serde(rename = "safe_rlhf")]
    SafeRlhf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ppo, Algorithm::ReMax, Algorithm::SafeRlhf];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::ReMax => "remax",
            Algorithm::SafeRlhf => "safe_rlhf",
        }
    }

    /// Model roles taking part in the algorithm, in canonical order.
    pub fn roles(self) -> Vec<ModelRole> {
        match self {
            Algorithm::Ppo => vec![
                ModelRole::Actor,
                ModelRole::Critic,
                ModelRole::Reference,
                ModelRole::Reward,
            ],
            Algorithm::ReMax => vec![ModelRole::Actor, ModelRole::Reference, ModelRole::Reward],
            Algorithm::SafeRlhf => vec![
                ModelRole::Actor,
                ModelRole::Critic,
                ModelRole::Reference,
                ModelRole::Reward,
                ModelRole::Cost,
            ],
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = DataflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ppo" => Ok(Algorithm::Ppo),
            "remax" => Ok(Algorithm::ReMax),
            "safe_rlhf" | "saferlhf" => Ok(Algorithm::SafeRlhf),
            _ => Err(DataflowError::UnknownAlgorithm(s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataflowError {
    #[error("unknown algorithm `{0}` (expected ppo, remax or safe_rlhf)")]
    UnknownAlgorithm(String),
    #[error("unknown model role `{0}`")]
    UnknownRole(String),
}

/// One invocation of a model primitive (or the controller) in the dataflow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOp {
    /// Unique identifier within the graph.
    pub id: String,
    pub name: OpName,
    /// `None` for controller-side ops.
    pub role: Option<ModelRole>,
    pub kind: OpKind,
    pub stage: StageKind,
    pub inputs: Vec<String>,
}

impl ModelOp {
    fn new(id: &str, name: OpName, role: Option<ModelRole>, stage: StageKind, inputs: &[&str]) -> Self {
        Self {
            id: id.to_string(),
            name,
            role,
            kind: name.kind(),
            stage,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Ops that run on the controller occupy no model devices.
    pub fn is_controller_op(&self) -> bool {
        self.role.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataflowOptions {
    /// Keep the actor's `compute_log_prob` pass (optional in PPO).
    pub include_log_prob: bool,
}

impl Default for DataflowOptions {
    fn default() -> Self {
        Self {
            include_log_prob: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowGraph {
    pub algorithm: Algorithm,
    pub ops: Vec<ModelOp>,
}

/// A structural problem found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    DuplicateOp(String),
    UnknownInput { op: String, input: String },
    KindMismatch { op: String, expected: OpKind, found: OpKind },
    TrainingOutsideTrainingStage(String),
    GenerationOutsideGenerationStage(String),
    RoleMismatch { op: String, role: Option<ModelRole> },
    RoleNotInAlgorithm { op: String, role: ModelRole },
    InputFromLaterStage { op: String, input: String },
    Cycle(Vec<String>),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateOp(id) => write!(f, "duplicate op id `{id}`"),
            Violation::UnknownInput { op, input } => {
                write!(f, "op `{op}` depends on unknown op `{input}`")
            }
            Violation::KindMismatch { op, expected, found } => {
                write!(f, "op `{op}` has kind {found:?}, expected {expected:?}")
            }
            Violation::TrainingOutsideTrainingStage(op) => {
                write!(f, "training op outside Training stage: `{op}`")
            }
            Violation::GenerationOutsideGenerationStage(op) => {
                write!(f, "generation op outside Generation stage: `{op}`")
            }
            Violation::RoleMismatch { op, role } => match role {
                Some(r) => write!(f, "op `{op}` cannot be owned by role {r}"),
                None => write!(f, "op `{op}` must be owned by a model"),
            },
            Violation::RoleNotInAlgorithm { op, role } => {
                write!(f, "op `{op}` uses role {role} which is not part of the algorithm")
            }
            Violation::InputFromLaterStage { op, input } => {
                write!(f, "op `{op}` consumes `{input}` from a later stage")
            }
            Violation::Cycle(ops) => write!(f, "cycle among ops [{}]", ops.join(", ")),
        }
    }
}

/// Canonical staged graph for a built-in algorithm.
pub fn build_dataflow(algorithm: Algorithm) -> DataflowGraph {
    build_dataflow_with(algorithm, DataflowOptions::default())
}

pub fn build_dataflow_with(algorithm: Algorithm, opts: DataflowOptions) -> DataflowGraph {
    use ModelRole::*;
    use OpName::*;
    use StageKind::*;

    let mut ops = Vec::new();
    let mut advantage_inputs: Vec<&str> = Vec::new();

    ops.push(ModelOp::new("generate_sequences", GenerateSequences, Some(Actor), Generation, &[]));
    let gen_outputs: &[&str] = if algorithm == Algorithm::ReMax {
        // Greedy baseline rollout used for variance reduction.
        ops.push(ModelOp::new(
            "generate_sequences_greedy",
            GenerateSequences,
            Some(Actor),
            Generation,
            &[],
        ));
        &["generate_sequences", "generate_sequences_greedy"]
    } else {
        &["generate_sequences"]
    };

    if algorithm != Algorithm::ReMax {
        ops.push(ModelOp::new("compute_values", ComputeValues, Some(Critic), Preparation, &["generate_sequences"]));
        advantage_inputs.push("compute_values");
    }
    ops.push(ModelOp::new("compute_ref_log_prob", ComputeRefLogProb, Some(Reference), Preparation, &["generate_sequences"]));
    advantage_inputs.push("compute_ref_log_prob");
    ops.push(ModelOp::new("compute_reward", ComputeReward, Some(Reward), Preparation, gen_outputs));
    advantage_inputs.push("compute_reward");
    if algorithm == Algorithm::SafeRlhf {
        ops.push(ModelOp::new("compute_cost", ComputeReward, Some(Cost), Preparation, &["generate_sequences"]));
        advantage_inputs.push("compute_cost");
    }
    if opts.include_log_prob {
        ops.push(ModelOp::new("compute_log_prob", ComputeLogProb, Some(Actor), Preparation, &["generate_sequences"]));
        advantage_inputs.push("compute_log_prob");
    }
    if algorithm == Algorithm::SafeRlhf {
        // Pretrain (ptx) loss on the pretraining corpus; no rollout input.
        ops.push(ModelOp::new("compute_loss", ComputeLoss, Some(Actor), Preparation, &[]));
    }
    ops.push(ModelOp::new("compute_advantage", ComputeAdvantage, None, Preparation, &advantage_inputs));

    let actor_inputs: &[&str] = if algorithm == Algorithm::SafeRlhf {
        &["compute_advantage", "compute_loss"]
    } else {
        &["compute_advantage"]
    };
    ops.push(ModelOp::new("update_actor", UpdateActor, Some(Actor), Training, actor_inputs));
    if algorithm != Algorithm::ReMax {
        ops.push(ModelOp::new("update_critic", UpdateCritic, Some(Critic), Training, &["compute_advantage"]));
    }

    DataflowGraph { algorithm, ops }
}

/// Structural checks; returns every violation found (empty = valid).
pub fn validate(graph: &DataflowGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, op) in graph.ops.iter().enumerate() {
        if index.insert(op.id.as_str(), i).is_some() {
            out.push(Violation::DuplicateOp(op.id.clone()));
        }
    }
    let roles: BTreeSet<ModelRole> = graph.algorithm.roles().into_iter().collect();

    for op in &graph.ops {
        let expected = op.name.kind();
        if op.kind != expected {
            out.push(Violation::KindMismatch {
                op: op.id.clone(),
                expected,
                found: op.kind,
            });
        }
        if op.kind == OpKind::Training && op.stage != StageKind::Training {
            out.push(Violation::TrainingOutsideTrainingStage(op.id.clone()));
        }
        if op.kind == OpKind::Generation && op.stage != StageKind::Generation {
            out.push(Violation::GenerationOutsideGenerationStage(op.id.clone()));
        }
        if !op.name.allowed_roles().contains(&op.role) {
            out.push(Violation::RoleMismatch {
                op: op.id.clone(),
                role: op.role,
            });
        }
        if let Some(role) = op.role {
            if !roles.contains(&role) {
                out.push(Violation::RoleNotInAlgorithm {
                    op: op.id.clone(),
                    role,
                });
            }
        }
        for input in &op.inputs {
            match index.get(input.as_str()) {
                None => out.push(Violation::UnknownInput {
                    op: op.id.clone(),
                    input: input.clone(),
                }),
                Some(&j) => {
                    if graph.ops[j].stage > op.stage {
                        out.push(Violation::InputFromLaterStage {
                            op: op.id.clone(),
                            input: input.clone(),
                        });
                    }
                }
            }
        }
    }

    if let Err(cycle) = topo_order(graph, |_| true) {
        out.push(Violation::Cycle(cycle));
    }
    out
}

/// Kahn's algorithm over the ops selected by `keep`, ties broken by
/// declaration order. Edges from unselected or unknown ops are ignored.
/// On a cycle, returns the ids that could not be ordered.
fn topo_order<F>(graph: &DataflowGraph, keep: F) -> Result<Vec<usize>, Vec<String>>
where
    F: Fn(&ModelOp) -> bool,
{
    let selected: Vec<usize> = (0..graph.ops.len()).filter(|&i| keep(&graph.ops[i])).collect();
    let pos: BTreeMap<&str, usize> = selected
        .iter()
        .map(|&i| (graph.ops[i].id.as_str(), i))
        .collect();
    let mut indegree: BTreeMap<usize, usize> = selected.iter().map(|&i| (i, 0)).collect();
    let mut users: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &selected {
        for input in &graph.ops[i].inputs {
            if let Some(&j) = pos.get(input.as_str()) {
                *indegree.get_mut(&i).unwrap() += 1;
                users.entry(j).or_default().push(i);
            }
        }
    }
    let mut ready: BTreeSet<usize> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&i, _)| i).collect();
    let mut order = Vec::with_capacity(selected.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &u in users.get(&i).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indegree.get_mut(&u).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(u);
            }
        }
    }
    if order.len() == selected.len() {
        Ok(order)
    } else {
        let done: BTreeSet<usize> = order.into_iter().collect();
        Err(selected
            .into_iter()
            .filter(|i| !done.contains(i))
            .map(|i| graph.ops[i].id.clone())
            .collect())
    }
}

impl DataflowGraph {
    /// Number of stages; always three.
    pub fn num_stages(&self) -> usize {
        StageKind::ORDER.len()
    }

    pub fn op(&self, id: &str) -> Option<&ModelOp> {
        self.ops.iter().find(|o| o.id == id)
    }

    /// Distinct model roles in first-appearance order.
    pub fn roles(&self) -> Vec<ModelRole> {
        let mut seen = Vec::new();
        for role in self.ops.iter().filter_map(|o| o.role) {
            if !seen.contains(&role) {
                seen.push(role);
            }
        }
        seen
    }

    pub fn ops_of_role(&self, role: ModelRole) -> impl Iterator<Item = &ModelOp> {
        self.ops.iter().filter(move |o| o.role == Some(role))
    }

    /// Dependency pairs `(producer, consumer)`.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.ops
            .iter()
            .flat_map(|o| o.inputs.iter().map(move |i| (i.clone(), o.id.clone())))
            .collect()
    }
}

/// All ops of a stage, controller ops included, in deterministic topological
/// order. Cyclic subgraphs fall back to declaration order.
pub fn ops_in_stage(graph: &DataflowGraph, stage: StageKind) -> Vec<&ModelOp> {
    match topo_order(graph, |o| o.stage == stage) {
        Ok(order) => order.into_iter().map(|i| &graph.ops[i]).collect(),
        Err(_) => graph.ops.iter().filter(|o| o.stage == stage).collect(),
    }
}

/// Like [`ops_in_stage`] but without controller-side ops, i.e. only the ops
/// that occupy model devices.
pub fn model_ops_in_stage(graph: &DataflowGraph, stage: StageKind) -> Vec<&ModelOp> {
    ops_in_stage(graph, stage)
        .into_iter()
        .filter(|o| !o.is_controller_op())
        .collect()
}
