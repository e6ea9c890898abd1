//! Command-line front end for training and evaluating triplet and vanilla GANs.

pub mod args;
pub mod checks;
pub mod commands;
pub mod config;
pub mod manifest;

use args::{Cli, Command};
use commands::{cmd_check, cmd_eval, cmd_train, CliError, EvalSummary};

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Train(a) => {
            for s in cmd_train(&a.options())? {
                let last = s.last.map_or(String::new(), |r| {
                    format!(", final critic {:.5} generator {:.5}", r.critic_loss, r.generator_loss)
                });
                println!("{}: {} steps{last}", s.dir.display(), s.steps);
            }
            Ok(0)
        }
        Command::Eval(a) => {
            let opts = a.options()?;
            match cmd_eval(&opts)? {
                EvalSummary::Ring(r) => println!(
                    "covered_modes {} / {}, hq_fraction {:.4}  -> {}",
                    r.covered_modes,
                    r.per_mode_counts.len(),
                    r.hq_fraction,
                    opts.out.join("mode_report.csv").display()
                ),
                EvalSummary::Mnist {
                    report,
                    classifier_accuracy,
                } => println!(
                    "entropy {:.4}, l2_to_uniform {:.4} (classifier accuracy {classifier_accuracy:.4})  -> {}",
                    report.entropy,
                    report.l2_to_uniform,
                    opts.out.join("class_report.csv").display()
                ),
            }
            Ok(0)
        }
        Command::Check(a) => {
            let rows = cmd_check(&a.options());
            for r in &rows {
                println!("{r}");
            }
            let failed = rows.iter().filter(|r| !r.pass).count();
            println!("{} checks, {failed} failed", rows.len());
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}
