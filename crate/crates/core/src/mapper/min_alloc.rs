use num_integer::Integer;
use serde::{Deserialize, Serialize};

use super::strategy::MinParallel;
use super::{ModelJob, Placement};
use crate::cost::{memory_footprint, ClusterSpec, WorkKind, WorkloadSpec};
use crate::topology::{GenStrategy, TrainStrategy};

/// Minimal allocation of one colocated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMinimum {
    /// Smallest device count: the least multiple of the granularity that
    /// the minimal model-parallel size divides.
    pub devices: u32,
    pub min: MinParallel,
    /// Per member (in set order), bytes per rank held by the other members
    /// at the minimal parallel sizes.
    pub reserved: Vec<u64>,
}

/// `(resident, transient)` bytes per rank of each member at model-parallel
/// size `min`. Transient bytes are the generation weights and one
/// sequence's KVCache, live only while generating.
pub fn set_footprint(jobs: &[&ModelJob], min: MinParallel, workload: &WorkloadSpec) -> Vec<(f64, f64)> {
    let train = TrainStrategy {
        p: min.p_min,
        t: min.t_min,
        d: 1,
    };
    jobs.iter()
        .map(|job| {
            let resident = memory_footprint(&job.spec, &train, WorkKind::Training, None, workload).resident();
            let transient = if job.generates() {
                let gen = GenStrategy::identity(&train);
                let m = memory_footprint(&job.spec, &train, WorkKind::Generation, Some(&gen), workload);
                m.gen_weights + m.kv_per_sequence
            } else {
                0.0
            };
            (resident, transient)
        })
        .collect()
}

fn candidate_sizes(cluster: &ClusterSpec) -> Vec<u32> {
    let u = cluster.gpus_per_machine;
    let n = cluster.n_gpus;
    let mut sizes: Vec<u32> = (1..=u.min(n)).collect();
    sizes.extend((2..=n / u).map(|k| k * u));
    sizes
}

/// Smallest device count per set such that the members' resident state plus
/// the largest transient need fits in `Q`. Errors name the first set that
/// fits at no model-parallel size up to `N`.
pub fn get_min_alloc(
    placement: &Placement,
    jobs: &[ModelJob],
    cluster: &ClusterSpec,
    workload: &WorkloadSpec,
    granularity: u32,
) -> Result<Vec<SetMinimum>, String> {
    let g = granularity.max(1);
    let sizes = candidate_sizes(cluster);
    let mut out = Vec::with_capacity(placement.sets.len());
    for set in &placement.sets {
        let members: Vec<&ModelJob> = set.iter().map(|&i| &jobs[i]).collect();
        let mut best: Option<SetMinimum> = None;
        let mut fits_somewhere = false;
        for &c in &sizes {
            let min = MinParallel::for_size(c, cluster.gpus_per_machine);
            let fp = set_footprint(&members, min, workload);
            let resident: f64 = fp.iter().map(|f| f.0).sum();
            let transient = fp.iter().map(|f| f.1).fold(0.0, f64::max);
            if resident + transient > cluster.mem_per_gpu {
                continue;
            }
            fits_somewhere = true;
            let devices = c.lcm(&g);
            if devices > cluster.n_gpus || best.as_ref().is_some_and(|b| b.devices <= devices) {
                continue;
            }
            let reserved = fp.iter().map(|f| (resident - f.0).max(0.0).ceil() as u64).collect();
            best = Some(SetMinimum { devices, min, reserved });
        }
        let names: Vec<&str> = members.iter().map(|j| j.spec.name.as_str()).collect();
        match best {
            Some(b) => out.push(b),
            None if fits_somewhere => {
                return Err(format!(
                    "set [{}] needs a model-parallel size whose granularity-{g} allocation exceeds {} GPUs",
                    names.join(", "),
                    cluster.n_gpus
                ))
            }
            None => {
                return Err(format!(
                    "set [{}] exceeds {} bytes per GPU at every model-parallel size up to {}",
                    names.join(", "),
                    cluster.mem_per_gpu,
                    cluster.n_gpus
                ))
            }
        }
    }
    Ok(out)
}
