use std::collections::BTreeMap;

use thiserror::Error;

use super::protocol::Protocol;
use crate::dataflow::{DataflowGraph, OpKind};
use crate::topology::Engine;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("op `{0}` is not in the dataflow")]
    UnknownOp(String),
    #[error("op `{op}` is already registered with {existing}")]
    AlreadyRegistered { op: String, existing: Protocol },
    #[error("op `{0}` has no registered transfer protocol")]
    Unregistered(String),
}

/// Transfer protocol of every model op.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<String, Protocol>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, graph: &DataflowGraph, op: &str, protocol: Protocol) -> Result<(), RegistryError> {
        if graph.op(op).is_none() {
            return Err(RegistryError::UnknownOp(op.to_string()));
        }
        if let Some(&existing) = self.entries.get(op) {
            return Err(RegistryError::AlreadyRegistered {
                op: op.to_string(),
                existing,
            });
        }
        self.entries.insert(op.to_string(), protocol);
        Ok(())
    }

    pub fn protocol(&self, op: &str) -> Result<Protocol, RegistryError> {
        self.entries
            .get(op)
            .copied()
            .ok_or_else(|| RegistryError::Unregistered(op.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Protocol)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Generation under the zero-redundancy engine uses 3D_ALL_MICRO_DP;
    /// every other model op uses 3D_PROTO.
    pub fn default_for(graph: &DataflowGraph, engine: Engine) -> Self {
        let mut reg = Registry::new();
        for op in graph.ops.iter().filter(|o| !o.is_controller_op()) {
            let protocol = match (op.kind, engine) {
                (OpKind::Generation, Engine::Hybrid) => Protocol::ThreeDAllMicroDp,
                _ => Protocol::ThreeD,
            };
            reg.register(graph, &op.id, protocol).expect("fresh registry");
        }
        reg
    }
}
