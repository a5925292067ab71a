use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pandora_core::corpus::Dataset;
use pandora_core::metrics::Lexicon;
use pandora_core::plan::ExperimentPlan;
use pandora_core::runner::{self, ReportOptions, ReportSources, RunnerError};
use pandora_core::session::BatchOptions;
use pandora_core::stats::DEFAULT_PERMUTATIONS;

/// Persona persuasion experiments: generate stances, run sessions, report metrics.
#[derive(Debug, Parser)]
#[command(name = "pandora", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment plan (TOML).
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    /// Output location; overrides the plan's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict the plan to one named backend.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one supporting and one refuting stance per claim.
    GeneratePersuasion,
    /// Run the plan's sessions and judgments, resuming any earlier progress.
    Run {
        /// Stop after this many cells.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Compute every report table from run directories and verdict files.
    Report {
        /// Run directories; defaults to the plan's output directory.
        run_dirs: Vec<PathBuf>,
        /// Human verdict files in the import format.
        #[arg(long = "verdicts")]
        verdicts: Vec<PathBuf>,
        /// Claim files supplying truth labels.
        #[arg(long = "claims")]
        claims: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        permutations: usize,
        /// Report on runs that have not finished.
        #[arg(long)]
        allow_partial: bool,
        /// Lexicon file replacing the bundled one.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Normalise a human verdict file into judgment records.
    ImportVerdicts { input: PathBuf },
    /// Mean token counts of claims and stances.
    TokenStats {
        #[arg(long)]
        claims: Option<PathBuf>,
        #[arg(long)]
        stances: Option<PathBuf>,
    },
    /// Check a lexicon file and list its categories.
    LexiconValidate { path: PathBuf },
    /// Convert a raw dataset file into canonical claim and stance files.
    Convert {
        #[arg(long)]
        format: Dataset,
        input: PathBuf,
        #[arg(long)]
        claims_out: PathBuf,
        #[arg(long)]
        stances_out: PathBuf,
    },
}

fn load_plan(global: &Global) -> Result<ExperimentPlan, RunnerError> {
    let path = global
        .plan
        .as_deref()
        .ok_or_else(|| RunnerError::Validation("--plan is required for this command".into()))?;
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(seed) = global.seed {
        plan.seed = seed;
    }
    if let Some(n) = global.concurrency {
        plan.concurrency = n;
    }
    if let Some(name) = &global.backend {
        plan.select_backend(name)?;
    }
    plan.validate()?;
    Ok(plan)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn execute(cli: Cli) -> Result<(), RunnerError> {
    let g = &cli.global;
    match cli.command {
        Command::GeneratePersuasion => {
            let plan = load_plan(g)?;
            let out = g.out.clone().unwrap_or_else(|| runner::default_stance_path(&plan));
            let summary = runner::cmd_generate_persuasion(&plan, &out)?;
            print_json(&summary);
        }
        Command::Run { stop_after } => {
            let mut plan = load_plan(g)?;
            if let Some(out) = &g.out {
                plan.output = out.clone();
            }
            let summary = runner::cmd_run(&plan, &BatchOptions { stop_after })?;
            print_json(&summary);
        }
        Command::Report {
            run_dirs,
            verdicts,
            mut claims,
            permutations,
            allow_partial,
            lexicon,
        } => {
            let mut run_dirs = run_dirs;
            if run_dirs.is_empty() && verdicts.is_empty() {
                let plan = load_plan(g)?;
                run_dirs.push(plan.output.clone());
                claims.push(plan.corpus.claims.clone());
            }
            let out = g.out.clone().unwrap_or_else(|| match run_dirs.first() {
                Some(d) => d.join("report"),
                None => PathBuf::from("report"),
            });
            let options = ReportOptions {
                permutations,
                seed: g.seed.unwrap_or(0),
                allow_partial,
                lexicon: match lexicon {
                    Some(p) => Lexicon::load(&p).map_err(|e| RunnerError::Validation(e.to_string()))?,
                    None => Lexicon::default(),
                },
                ..ReportOptions::default()
            };
            let sources = ReportSources {
                run_dirs,
                verdict_files: verdicts,
                claims_files: claims,
            };
            let report = runner::cmd_report(&sources, &options, &out)?;
            print!("{}", report.summary());
            println!("written to {}", out.display());
        }
        Command::ImportVerdicts { input } => {
            let out = g
                .out
                .clone()
                .ok_or_else(|| RunnerError::Validation("--out is required for import-verdicts".into()))?;
            let records = runner::cmd_import_verdicts(&input, &out)?;
            println!("{} verdicts written to {}", records.len(), out.display());
        }
        Command::TokenStats { claims, stances } => {
            let (claims, stances) = match claims {
                Some(c) => (c, stances),
                None => {
                    let plan = load_plan(g)?;
                    (plan.corpus.claims.clone(), stances.or(plan.corpus.stances.clone()))
                }
            };
            print_json(&runner::cmd_token_stats(&claims, stances.as_deref())?);
        }
        Command::LexiconValidate { path } => {
            let summary = runner::cmd_lexicon_validate(&path)?;
            print_json(&summary);
            if !summary.missing_for_dimensions.is_empty() {
                return Err(RunnerError::Validation(format!(
                    "lexicon lacks categories {:?}",
                    summary.missing_for_dimensions
                )));
            }
        }
        Command::Convert {
            format,
            input,
            claims_out,
            stances_out,
        } => {
            let (claims, stances) = runner::cmd_convert(&input, format, &claims_out, &stances_out)?;
            println!("{claims} claims, {stances} stances");
        }
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.global.verbose);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use std::path::Path;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_parse_after_the_subcommand() {
        let cli = Cli::try_parse_from(["pandora", "run", "--plan", "p.toml", "--seed", "9", "--concurrency", "2"]).unwrap();
        assert_eq!(cli.global.plan.as_deref(), Some(Path::new("p.toml")));
        assert_eq!(cli.global.seed, Some(9));
        assert!(matches!(cli.command, Command::Run { stop_after: None }));
    }
}
