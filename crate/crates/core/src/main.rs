use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowmap::cli::{
    canonical_json, load_mapping, run_graph, run_plan, run_protocol_suite, run_reshard, run_simulate, write_outputs,
    CliError, Overrides, RunConfig,
};
use flowmap::topology::Engine;

#[derive(Parser)]
#[command(name = "flowmap", version, about = "Plan and simulate device mappings for RLHF dataflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for the cheapest placement, allocation and parallelism.
    Plan(Common),
    /// Execute one iteration of a planned mapping in virtual time.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Plan report (or bare mapping) to execute.
        #[arg(long)]
        mapping: PathBuf,
    },
    /// Compare transition overheads of the three actor engines.
    Reshard(Common),
    /// Run the randomized transfer-protocol property suite.
    Protocols {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        cases: u32,
    },
    /// Dump the dataflow graph.
    Graph(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// dschat, hf-v or hf
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long)]
    granularity: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_cache: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            out: self.out.clone(),
            engine: self.engine,
            granularity: self.granularity,
            seed: self.seed,
            no_cache: self.no_cache,
        })?;
        Ok(cfg)
    }
}

fn emit(cfg: &RunConfig, text: &str, files: &[(&str, String)]) -> Result<(), CliError> {
    print!("{text}");
    if let Some(dir) = &cfg.output.dir {
        write_outputs(dir, files)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan(common) => {
            let cfg = common.load()?;
            let (report, wall) = run_plan(&cfg)?;
            let text = report.text(Some(wall));
            emit(&cfg, &text, &[("plan.json", canonical_json(&report)), ("plan.txt", text.clone())])
        }
        Command::Simulate { common, mapping } => {
            let cfg = common.load()?;
            let raw = std::fs::read_to_string(&mapping)
                .map_err(|e| CliError::Config(format!("{}: {e}", mapping.display())))?;
            let mapping = load_mapping(&raw)?;
            let (report, result) = run_simulate(&cfg, &mapping)?;
            let mut text = report.text();
            text.push('\n');
            text.push_str(&result.trace.gantt(60));
            emit(
                &cfg,
                &text,
                &[
                    ("simulate.json", canonical_json(&report)),
                    ("trace.jsonl", result.trace.to_jsonl()),
                    ("simulate.txt", text.clone()),
                ],
            )
        }
        Command::Reshard(common) => {
            let cfg = common.load()?;
            let report = run_reshard(&cfg)?;
            let text = report.text();
            emit(&cfg, &text, &[("reshard.json", canonical_json(&report)), ("reshard.txt", text.clone())])
        }
        Command::Protocols { common, cases } => {
            let cfg = common.load()?;
            let report = run_protocol_suite(cfg.seed, cases);
            let text = report.text();
            emit(&cfg, &text, &[("protocols.json", canonical_json(&report))])?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Consistency(format!("{} protocol cases failed", report.failures.len())))
            }
        }
        Command::Graph(common) => {
            let cfg = common.load()?;
            let report = run_graph(&cfg)?;
            let text = report.text();
            emit(&cfg, &text, &[("graph.json", canonical_json(&report))])
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
