//! Single-controller execution of a mapped dataflow in virtual time.

mod executor;
mod payload;
mod protocol;
mod registry;
mod trace;
mod transition;

pub use executor::{
    execute_iteration, execute_with_registry, worker_groups, IterationResult, RuntimeError, SimOptions, WorkerGroup,
};
pub use payload::{apply_op, checksum, reference_outputs, synth_prompts, MisalignedInputs, Record, RECORD_BYTES};
pub use protocol::{collect, designated_ranks, distribute, distribute_per_rank, Collected, Protocol, ProtocolError};
pub use registry::{Registry, RegistryError};
pub use trace::{ExecutionTrace, Overlap, StageSpan, TraceEvent};
pub use transition::{
    execute_transition, execute_transition_groups, TransitionError, TransitionMessage, TransitionReport,
};
