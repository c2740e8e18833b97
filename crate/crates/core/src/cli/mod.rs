//! Configuration loading and the report-producing subcommands.

mod graph;
mod plan;
mod protocols;
mod reshard;
mod simulate;

pub use graph::{run_graph, GraphReport};
pub use plan::{run_plan, PlanReport};
pub use protocols::{run_protocol_suite, ProtocolCaseFailure, ProtocolSuiteReport, ProtocolTally};
pub use reshard::{reshard_table, run_reshard, ReshardReport, ReshardRow};
pub use simulate::{load_mapping, run_simulate, SimulateReport, StageBreakdown};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{ClusterSpec, ModelSpec, SimTime, WorkloadSpec};
use crate::dataflow::Algorithm;
use crate::mapper::{MapperError, MapperOptions};
use crate::topology::{Engine, GenStrategy, TrainStrategy};
use crate::units::{serde_units, units, Units};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Consistency(_) => 4,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<MapperError> for CliError {
    fn from(e: MapperError) -> Self {
        match e {
            MapperError::Infeasible(_) => CliError::Infeasible(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapperConfig {
    #[serde(default = "one")]
    pub granularity: u32,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default = "yes")]
    pub cache: bool,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

fn default_engine() -> Engine {
    Engine::Hybrid
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            granularity: 1,
            engine: Engine::Hybrid,
            cache: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for report files; nothing is written when unset.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Sizes for the `reshard` subcommand. `gen` is `p_g-t_g` or
/// `p_g-t_g-d_g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReshardConfig {
    pub train: String,
    pub gen: String,
    #[serde(with = "serde_units", default = "unit_weights")]
    pub weight_units: Units,
}

fn unit_weights() -> Units {
    units(1)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub toy_batch: Option<u32>,
    /// Seconds added to every weight transition.
    #[serde(default)]
    pub kv_offload_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub mapper: MapperConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub reshard: Option<ReshardConfig>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Command-line values that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub engine: Option<Engine>,
    pub granularity: Option<u32>,
    pub seed: Option<u64>,
    pub no_cache: bool,
}

impl RunConfig {
    /// Parses JSON, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::Config(inner.to_string())
            } else {
                CliError::Config(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(dir) = &o.out {
            self.output.dir = Some(dir.clone());
        }
        if let Some(e) = o.engine {
            self.mapper.engine = e;
        }
        if let Some(g) = o.granularity {
            self.mapper.granularity = g;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.no_cache {
            self.mapper.cache = false;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: String| move |msg: String| CliError::Config(format!("{name}: {msg}"));
        self.cluster.validate().map_err(field("cluster".into()))?;
        self.workload.validate().map_err(field("workload".into()))?;
        for (i, m) in self.models.iter().enumerate() {
            m.validate().map_err(field(format!("models[{i}]")))?;
        }
        let g = self.mapper.granularity;
        if g == 0 || !self.cluster.n_gpus.is_multiple_of(g) {
            return Err(CliError::Config(format!(
                "mapper.granularity: {g} must be positive and divide cluster.n_gpus = {}",
                self.cluster.n_gpus
            )));
        }
        if !self.simulate.kv_offload_secs.is_finite() || self.simulate.kv_offload_secs < 0.0 {
            return Err(CliError::Config("simulate.kv_offload_secs: must be a finite non-negative number".into()));
        }
        if self.simulate.toy_batch == Some(0) {
            return Err(CliError::Config("simulate.toy_batch: must be positive".into()));
        }
        if let Some(r) = &self.reshard {
            r.strategies()?;
            if r.weight_units <= units(0) {
                return Err(CliError::Config("reshard.weight_units: must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn mapper_options(&self) -> MapperOptions {
        MapperOptions {
            granularity: self.mapper.granularity,
            engine: self.mapper.engine,
            cache: self.mapper.cache,
        }
    }

    pub fn kv_offload(&self) -> SimTime {
        SimTime::from_secs(self.simulate.kv_offload_secs)
    }
}

fn parse_sizes(field: &str, s: &str, arity: &[usize]) -> Result<Vec<u32>, CliError> {
    let parts: Result<Vec<u32>, _> = s.split('-').map(|x| x.trim().parse::<u32>()).collect();
    match parts {
        Ok(v) if arity.contains(&v.len()) => Ok(v),
        _ => Err(CliError::Config(format!(
            "{field}: expected {} dash-separated positive integers, got `{s}`",
            arity.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" or ")
        ))),
    }
}

impl ReshardConfig {
    pub fn strategies(&self) -> Result<(TrainStrategy, GenStrategy), CliError> {
        let t = parse_sizes("reshard.train", &self.train, &[3])?;
        let train = TrainStrategy::new(t[0], t[1], t[2]).map_err(|e| CliError::Config(format!("reshard.train: {e}")))?;
        let g = parse_sizes("reshard.gen", &self.gen, &[2, 3])?;
        let gen =
            GenStrategy::for_training(&train, g[0], g[1]).map_err(|e| CliError::Config(format!("reshard.gen: {e}")))?;
        if g.len() == 3 && g[2] != gen.d_g {
            return Err(CliError::Config(format!(
                "reshard.gen: micro data-parallel size {} should be {} for training {}",
                g[2], gen.d_g, train
            )));
        }
        Ok((train, gen))
    }
}

/// Writes `files` under `dir`, creating it first.
pub fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| CliError::Io { path, source })?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}
