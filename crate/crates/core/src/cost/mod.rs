//! Analytical latency and memory models for training, inference and
//! generation, plus transition cost. Every latency used by the mapper and
//! the runtime comes from here.

mod memory;
mod simu;
mod time;
mod transition;

pub use memory::{memory_footprint, MemoryBreakdown};
pub use simu::{simu, simu_reserved, CostEstimate, GenerationBreakdown, SimError};
pub use time::SimTime;
pub use transition::{gather_span, transition_cost, transition_cost_with_span, GatherSpan};

use serde::{Deserialize, Serialize};

use crate::dataflow::ModelRole;

/// Homogeneous cluster profile. Defaults describe 8×80 GB A100-class
/// machines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSpec {
    pub n_gpus: u32,
    pub gpus_per_machine: u32,
    /// Bytes of device memory per GPU.
    pub mem_per_gpu: f64,
    /// FLOP/s.
    pub flops_peak: f64,
    /// Device memory bandwidth, bytes/s.
    pub hbm_bw: f64,
    /// Intra-machine interconnect, bytes/s.
    pub intra_bw: f64,
    /// Inter-machine network, bytes/s.
    pub inter_bw: f64,
    pub mfu_train: f64,
    pub mfu_infer: f64,
    /// Per-hop latency of a ring collective step, seconds.
    pub collective_latency: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            n_gpus: 16,
            gpus_per_machine: 8,
            mem_per_gpu: 80e9,
            flops_peak: 312e12,
            hbm_bw: 2.0e12,
            intra_bw: 300e9,
            inter_bw: 25e9,
            mfu_train: 0.5,
            mfu_infer: 0.5,
            collective_latency: 10e-6,
        }
    }
}

impl ClusterSpec {
    pub fn with_gpus(mut self, n: u32) -> Self {
        self.n_gpus = n;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_gpus == 0 || self.gpus_per_machine == 0 {
            return Err("n_gpus and gpus_per_machine must be positive".into());
        }
        if !self.n_gpus.is_multiple_of(self.gpus_per_machine) {
            return Err(format!(
                "n_gpus ({}) must be divisible by gpus_per_machine ({})",
                self.n_gpus, self.gpus_per_machine
            ));
        }
        let rates = [
            ("flops_peak", self.flops_peak),
            ("hbm_bw", self.hbm_bw),
            ("intra_bw", self.intra_bw),
            ("inter_bw", self.inter_bw),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be a positive number"));
            }
        }
        for (name, v) in [("mfu_train", self.mfu_train), ("mfu_infer", self.mfu_infer)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must lie in (0, 1]"));
            }
        }
        if [self.mem_per_gpu, self.collective_latency].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err("mem_per_gpu and collective_latency must be non-negative".into());
        }
        Ok(())
    }
}

fn default_bytes_infer() -> u32 {
    2
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub role: ModelRole,
    pub params: u64,
    pub layers: u32,
    pub hidden: u32,
    pub kv_heads: u32,
    pub head_dim: u32,
    #[serde(default = "default_bytes_infer")]
    pub bytes_param_infer: u32,
    pub trainable: bool,
}

impl ModelSpec {
    /// Llama-shaped presets; `billions` ∈ {7, 13, 34, 70} picks the layer
    /// shapes, anything else gets 7B shapes with the given size.
    pub fn llama(name: &str, role: ModelRole, billions: u64) -> Self {
        let (layers, hidden, kv_heads) = match billions {
            13 => (40, 5120, 40),
            34 => (48, 8192, 8),
            70 => (80, 8192, 8),
            _ => (32, 4096, 32),
        };
        Self {
            name: name.to_string(),
            role,
            params: billions * 1_000_000_000,
            layers,
            hidden,
            kv_heads,
            head_dim: 128,
            bytes_param_infer: 2,
            trainable: matches!(role, ModelRole::Actor | ModelRole::Critic),
        }
    }

    /// KV bytes per token per sequence over the whole model.
    pub fn kv_bytes_per_token(&self) -> f64 {
        2.0 * self.layers as f64 * self.kv_heads as f64 * self.head_dim as f64 * 2.0
    }

    /// Inference-precision weight bytes of the whole model.
    pub fn weight_bytes(&self) -> f64 {
        self.params as f64 * self.bytes_param_infer as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.params == 0 {
            return Err(format!("model `{}`: params must be positive", self.name));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(format!("model `{}`: layers and hidden must be at least 1", self.name));
        }
        Ok(())
    }
}

fn default_micro_batch() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub global_batch: u32,
    pub prompt_len: u32,
    pub response_len: u32,
    pub update_iters: u32,
    #[serde(default = "default_micro_batch")]
    pub micro_batch_size: u32,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            global_batch: 1024,
            prompt_len: 1024,
            response_len: 1024,
            update_iters: 1,
            micro_batch_size: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn tokens(&self) -> f64 {
        self.global_batch as f64 * (self.prompt_len + self.response_len) as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("global_batch", self.global_batch),
            ("prompt_len", self.prompt_len),
            ("response_len", self.response_len),
            ("update_iters", self.update_iters),
            ("micro_batch_size", self.micro_batch_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(format!("workload.{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Workload class evaluated by [`simu`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkKind {
    Training,
    Inference,
    Generation,
}
