use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbdrift_cli::plotdata::{emit_plotdata, to_csv};
use fbdrift_cli::record::read_records;
use fbdrift_cli::{run, verify, CliResult, Kind, Overrides};

#[derive(Parser)]
#[command(name = "fbdrift", version, about = "Form-bounded drift laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML, or JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory of experiment outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Form-bound estimate on a test-function family.
    Formbound(RunArgs),
    /// Mollified approximation sequence.
    Mollify(RunArgs),
    /// Energy cascade on a grid.
    PdeCascade(RunArgs),
    /// Euler-Maruyama ensemble.
    Simulate(RunArgs),
    /// Occupation functionals.
    Krylov(RunArgs),
    /// Flow and Malliavin derivative norms.
    Flow(RunArgs),
    /// Coupled regularity moduli.
    Regularity(RunArgs),
    /// Coupled convergence across mollification levels.
    Converge(RunArgs),
    /// Collapse fractions across form-bounds.
    Criticality(RunArgs),
    /// Acceptance battery.
    Verify {
        /// fast or full.
        #[arg(long)]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Plot-ready CSV from stored records.
    Plotdata {
        #[arg(long)]
        records: PathBuf,
        /// prop2i, prop1 or criticality.
        #[arg(long)]
        view: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn experiment(kind: Kind, a: RunArgs) -> CliResult<bool> {
    let o = Overrides {
        seed: a.seed,
        workers: a.workers,
        output: a.out,
    };
    let out = run(Some(kind), &a.config, &o)?;
    println!(
        "{} {} records -> {}",
        out.experiment_id,
        out.records.len(),
        out.dir.display()
    );
    Ok(true)
}

fn dispatch(cmd: Command) -> CliResult<bool> {
    match cmd {
        Command::Formbound(a) => experiment(Kind::Formbound, a),
        Command::Mollify(a) => experiment(Kind::Mollify, a),
        Command::PdeCascade(a) => experiment(Kind::PdeCascade, a),
        Command::Simulate(a) => experiment(Kind::Simulate, a),
        Command::Krylov(a) => experiment(Kind::Krylov, a),
        Command::Flow(a) => experiment(Kind::Flow, a),
        Command::Regularity(a) => experiment(Kind::Regularity, a),
        Command::Converge(a) => experiment(Kind::Converge, a),
        Command::Criticality(a) => experiment(Kind::Criticality, a),
        Command::Verify {
            suite,
            seed,
            out,
            workers,
        } => {
            let v = verify(&suite, seed, workers, out, |c| println!("{}", c.line()))?;
            println!(
                "{} -> {}",
                if v.report.passed {
                    "all criteria passed"
                } else {
                    "some criteria failed"
                },
                v.dir.display()
            );
            Ok(v.report.passed)
        }
        Command::Plotdata { records, view, out } => {
            let recs = read_records(&records)?;
            let csv = to_csv(&emit_plotdata(&recs, &view)?)?;
            match out {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let report = e.report();
            eprintln!(
                "{}",
                serde_json::to_string(&report).unwrap_or_else(|_| e.to_string())
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
