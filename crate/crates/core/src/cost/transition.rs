use serde::{Deserialize, Serialize};

use super::ClusterSpec;
use crate::topology::{Rank, ReshardPlan};
use crate::units::to_f64;

/// Link class used for a gather group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatherSpan {
    Intra,
    Inter,
}

/// `Intra` when every rank of `group` sits on the same machine, ranks being
/// numbered machine by machine.
pub fn gather_span(group: &[Rank], cluster: &ClusterSpec) -> GatherSpan {
    let u = cluster.gpus_per_machine;
    match group.first() {
        Some(first) if group.iter().all(|r| r / u == first / u) => GatherSpan::Intra,
        Some(_) => GatherSpan::Inter,
        None => GatherSpan::Intra,
    }
}

fn bandwidth(span: GatherSpan, cluster: &ClusterSpec) -> f64 {
    match span {
        GatherSpan::Intra => cluster.intra_bw,
        GatherSpan::Inter => cluster.inter_bw,
    }
}

/// Seconds for the training → generation all-gather, with the plan's weight
/// units read as bytes: the slowest rank's received bytes over the
/// bandwidth of its gather group's link class.
pub fn transition_cost(plan: &ReshardPlan, cluster: &ClusterSpec) -> f64 {
    plan.ranks
        .iter()
        .map(|r| {
            let span = plan
                .gather_group_of(r.rank)
                .map_or(GatherSpan::Intra, |g| gather_span(g, cluster));
            to_f64(&r.recv) / bandwidth(span, cluster)
        })
        .fold(0.0, f64::max)
}

/// [`transition_cost`] with every gather group forced onto `span`.
pub fn transition_cost_with_span(plan: &ReshardPlan, cluster: &ClusterSpec, span: GatherSpan) -> f64 {
    to_f64(&plan.max_recv()) / bandwidth(span, cluster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{
        build_generation_groups_zero_redundancy, build_training_groups, reshard_plan, Engine, GenStrategy,
        TrainStrategy,
    };
    use crate::units::units;

    fn plan(train: (u32, u32, u32), tg: u32, engine: Engine, m: i128) -> ReshardPlan {
        let train = TrainStrategy::new(train.0, train.1, train.2).unwrap();
        let gen = GenStrategy::for_training(&train, 1, tg).unwrap();
        let tr = build_training_groups(&train, train.world()).unwrap();
        let ge = build_generation_groups_zero_redundancy(&train, &gen).unwrap();
        reshard_plan(&tr, &ge, engine, units(m)).unwrap()
    }

    #[test]
    fn identity_generation_costs_nothing() {
        let p = plan((1, 8, 1), 8, Engine::Hybrid, 1_000_000_000);
        assert_eq!(transition_cost(&p, &ClusterSpec::default()), 0.0);
    }

    #[test]
    fn dschat_eight_ranks_over_network() {
        let p = plan((1, 8, 1), 8, Engine::DsChat, 1_000_000_000);
        let c = ClusterSpec {
            inter_bw: 25e9,
            ..ClusterSpec::default()
        };
        let s = transition_cost_with_span(&p, &c, GatherSpan::Inter);
        assert!((s - 0.035).abs() < 1e-15, "{s}");
    }

    #[test]
    fn span_ratio_equals_bandwidth_ratio() {
        let p = plan((1, 4, 2), 2, Engine::Hybrid, 1_000_000_000);
        let c = ClusterSpec::default();
        let intra = transition_cost(&p, &c);
        let inter = transition_cost_with_span(&p, &c, GatherSpan::Inter);
        assert_eq!(gather_span(&p.gather_groups[0], &c), GatherSpan::Intra);
        assert!((inter / intra - c.intra_bw / c.inter_bw).abs() < 1e-12);
    }

    #[test]
    fn span_detects_machine_boundaries() {
        let c = ClusterSpec::default();
        assert_eq!(gather_span(&[0, 7], &c), GatherSpan::Intra);
        assert_eq!(gather_span(&[7, 8], &c), GatherSpan::Inter);
    }
}
