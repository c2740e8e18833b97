use std::fmt::Write as _;

use serde::Serialize;

use super::{CliError, RunConfig};
use crate::topology::{analytic_overhead, transition_plan, Engine, GenStrategy, OverheadTriple, TrainStrategy};
use crate::units::{render, serde_units, Units};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReshardRow {
    pub engine: Engine,
    pub analytic: OverheadTriple,
    pub measured: OverheadTriple,
    pub matches: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReshardReport {
    pub train: TrainStrategy,
    pub gen: GenStrategy,
    #[serde(with = "serde_units")]
    pub weight_units: Units,
    pub rows: Vec<ReshardRow>,
}

impl ReshardReport {
    pub fn all_match(&self) -> bool {
        self.rows.iter().all(|r| r.matches)
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "reshard: train {} -> generate {}, M = {}",
            self.train,
            self.gen,
            render(&self.weight_units)
        );
        let _ = writeln!(
            out,
            "  {:<7} {:>10} {:>10}  {:>10} {:>10}  {:>10} {:>10}  check",
            "engine", "comm", "(brute)", "peak", "(brute)", "redund.", "(brute)"
        );
        for r in &self.rows {
            let (a, m) = (&r.analytic, &r.measured);
            let _ = writeln!(
                out,
                "  {:<7} {:>10} {:>10}  {:>10} {:>10}  {:>10} {:>10}  {}",
                r.engine.as_str(),
                render(&a.comm_volume),
                render(&m.comm_volume),
                render(&a.peak_mem),
                render(&m.peak_mem),
                render(&a.redundancy),
                render(&m.redundancy),
                if r.matches { "ok" } else { "MISMATCH" }
            );
        }
        out
    }
}

/// Builds the three-engine overhead table for explicit sizes, closed form
/// next to the slice-level accounting.
pub fn reshard_table(train: TrainStrategy, gen: GenStrategy, m: Units) -> Result<ReshardReport, CliError> {
    let rows = Engine::ALL
        .into_iter()
        .map(|engine| {
            let analytic = analytic_overhead(&train, &gen, engine, m);
            let measured = transition_plan(&train, &gen, engine, m)
                .map_err(|e| CliError::Config(format!("reshard: {e}")))?
                .measured();
            Ok(ReshardRow {
                engine,
                analytic,
                measured,
                matches: analytic == measured,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(ReshardReport {
        train,
        gen,
        weight_units: m,
        rows,
    })
}

/// Reads the sizes from the config's `reshard` section.
pub fn run_reshard(config: &RunConfig) -> Result<ReshardReport, CliError> {
    let section = config
        .reshard
        .as_ref()
        .ok_or_else(|| CliError::Config("reshard: section missing (needs train, gen)".into()))?;
    let (train, gen) = section.strategies()?;
    let report = reshard_table(train, gen, section.weight_units)?;
    if !report.all_match() {
        return Err(CliError::Consistency(format!(
            "analytic and slice-level overheads disagree\n{}",
            report.text()
        )));
    }
    Ok(report)
}
