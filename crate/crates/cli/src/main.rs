use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dcpriv_core::dpbudget::{budget_lhs, calibrate_c, BudgetInput};
use dcpriv_harness::{
    ppsc_check, read_json, reproduce, resolve_out_dir, run_experiment, Example, ExperimentConfig, HarnessError,
    PpscCheckConfig, RunArtifacts,
};
use serde_json::json;

/// Distributed solvers, privacy mechanisms and eavesdropper attacks.
#[derive(Parser)]
#[command(name = "dcpriv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol of an experiment config (any attack section is ignored).
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the protocol and the attack of an experiment config.
    Attack {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check sum consistency, graph compliance and hiding of a mechanism.
    PpscCheck { config: PathBuf },
    /// Privacy budget arithmetic.
    Dp {
        #[command(subcommand)]
        command: DpCommand,
    },
    /// Regenerate one of the worked examples.
    Reproduce {
        #[arg(value_enum)]
        example: ExampleArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DpCommand {
    /// Evaluate the budget bound for a BudgetInput JSON (with `c`).
    Budget { input: PathBuf },
    /// Smallest noise base `c` certifying the target epsilon.
    Calibrate {
        input: PathBuf,
        #[arg(long)]
        eps: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleArg {
    Example2,
    Example3,
    Example4,
}

impl From<ExampleArg> for Example {
    fn from(e: ExampleArg) -> Self {
        match e {
            ExampleArg::Example2 => Example::Example2,
            ExampleArg::Example3 => Example::Example3,
            ExampleArg::Example4 => Example::Example4,
        }
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn print_artifacts(art: &RunArtifacts) {
    for c in &art.checks {
        println!("{c}");
    }
    for n in &art.notes {
        println!("note: {n}");
    }
    println!("wrote {} files under {}", art.files.len(), art.root.display());
    println!("manifest: {}", art.manifest.display());
}

fn experiment(path: &Path, out: Option<PathBuf>, with_attack: bool) -> Result<u8, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.outputs = Some(resolve_out_dir(out, cfg.outputs.take()));
    if with_attack && cfg.attack.is_none() {
        return Err(HarnessError::Config {
            field: "attack".into(),
            message: "the attack command needs an attack section".into(),
        });
    }
    if !with_attack {
        cfg.attack = None;
    }
    let art = run_experiment(&cfg.validate()?)?;
    let diverged = art.trials.iter().filter(|t| t.diverged).count();
    println!("{} trials, {diverged} diverged", art.trials.len());
    if !with_attack {
        print_artifacts(&art);
        return Ok(0);
    }
    let ok = art.trials.iter().filter(|t| t.attack.as_ref().is_some_and(|a| a.success)).count();
    println!("attack succeeded in {ok}/{} trials", art.trials.len());
    print_artifacts(&art);
    Ok(if ok == art.trials.len() { 0 } else { 1 })
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    match cli.command {
        Command::Simulate { config, out } => experiment(&config, out, false),
        Command::Attack { config, out } => experiment(&config, out, true),
        Command::PpscCheck { config } => {
            let cfg: PpscCheckConfig = read_json(&config)?;
            let rep = ppsc_check(&cfg)?;
            print_json(&serde_json::to_value(&rep).map_err(dcpriv_core::Error::from)?);
            Ok(if rep.passed { 0 } else { 1 })
        }
        Command::Dp { command } => {
            let bad_input = |e: dcpriv_core::Error| HarnessError::Config {
                field: "input".into(),
                message: e.to_string(),
            };
            match command {
                DpCommand::Budget { input } => {
                    let inp: BudgetInput = read_json(&input)?;
                    let lhs = budget_lhs(&inp).map_err(bad_input)?;
                    print_json(&json!({ "budget_lhs": lhs }));
                }
                DpCommand::Calibrate { input, eps } => {
                    let inp: BudgetInput = read_json(&input)?;
                    let c = calibrate_c(eps, &inp).map_err(bad_input)?;
                    print_json(&json!({ "epsilon": eps, "c": c }));
                }
            }
            Ok(0)
        }
        Command::Reproduce { example, out } => {
            let example = Example::from(example);
            let dir = out.unwrap_or_else(|| resolve_out_dir(None, None).join(example.name()));
            let art = reproduce(example, &dir)?;
            print_artifacts(&art);
            Ok(if art.all_checks_passed() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
