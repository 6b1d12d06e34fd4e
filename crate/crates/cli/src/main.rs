//! `mkvfbsde`: run, compare and audit McKean-Vlasov FBSDE solves.
//!
//! Exit codes: 0 converged / clean, 2 not converged / warnings, 1 error.

mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Common, InitValues, EXIT_ERROR};
use settings::{parse_f64_list, Settings};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Parser, Debug)]
#[command(
    name = "mkvfbsde",
    version,
    about = "Fixed-point solver for McKean-Vlasov FBSDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Registered problem, optionally with parameters: `counterexample?A=1&R=10`.
    #[arg(long, env = "MKVFBSDE_PROBLEM")]
    problem: String,

    /// TOML file with dotted sections (`[grid] n_t = 200`, `[solver] theta = 0.5`).
    #[arg(long, env = "MKVFBSDE_CONFIG")]
    config: Option<PathBuf>,

    /// `key=value` override, repeatable; bare keys are problem parameters.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long, env = "MKVFBSDE_SEED")]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, env = "MKVFBSDE_THREADS")]
    threads: Option<usize>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem and write its run directory.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "mkvfbsde-out")]
        out: PathBuf,
    },
    /// Solve from several initializations and count distinct solutions.
    Multistart {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated members of the problem's initialization family.
        #[arg(
            long = "values",
            visible_alias = "A-values",
            allow_hyphen_values = true,
            conflicts_with = "random"
        )]
        values: Option<String>,
        /// Draw this many family members uniformly from [-2, 2].
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value = "mkvfbsde-out")]
        out: PathBuf,
    },
    /// Probe the standing assumptions of a problem's coefficients.
    Validate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// W2 distance between two CSV clouds (`x_1..x_k[,weight]`).
    W2 {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn common(run: &RunArgs) -> mkv_fbsde::Result<Common> {
    let mut settings = Settings::default();
    if let Some(path) = &run.config {
        settings.load_toml(path)?;
    }
    settings.load_env(std::env::vars());
    settings.load_overrides(&run.set)?;
    let threads = run
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(mkv_fbsde::Error::Config(
            "--threads must be at least 1".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| mkv_fbsde::Error::Config(format!("cannot start the thread pool: {e}")))?;
    Ok(Common {
        problem: run.problem.clone(),
        settings,
        seed: run.seed,
        threads,
        format: run.format,
    })
}

fn run(cli: Cli) -> mkv_fbsde::Result<i32> {
    match cli.command {
        Command::Solve { run, out } => commands::cmd_solve(&common(&run)?, &out),
        Command::Multistart {
            run,
            values,
            random,
            out,
        } => {
            let values = match (values, random) {
                (Some(v), _) => InitValues::List(parse_f64_list(&v).map_err(|_| {
                    mkv_fbsde::Error::Config(format!("--values: cannot parse `{v}`"))
                })?),
                (None, Some(n)) => InitValues::Random(n),
                (None, None) => {
                    return Err(mkv_fbsde::Error::Config(
                        "multistart needs --values or --random".into(),
                    ))
                }
            };
            commands::cmd_multistart(&common(&run)?, values, &out)
        }
        Command::Validate { run, out } => commands::cmd_validate(&common(&run)?, out.as_ref()),
        Command::W2 { a, b, format } => commands::cmd_w2(&a, &b, format),
    }
}

fn main() -> ExitCode {
    // Usage errors exit 1 like every other failure; clap's default is 2,
    // which would read as non-convergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
