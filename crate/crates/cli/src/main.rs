//! Command-line front end: dataset generation, self-supervised training,
//! ordering export, downstream evaluation, and solver benchmarks.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 1 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pointrank_cli::config::{self, Usage};
use pointrank_cli::commands;

#[derive(Parser)]
#[command(
    name = "pointrank",
    version,
    about = "Self-supervised point-cloud ordering: train a scorer/sorter without labels, \
             export orderings, and evaluate subsets against random and FPS baselines"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON config file of flat dotted keys (see --dump-defaults)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set train.epochs=10 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Master seed: pins data.seed, train.seed, and eval.seed at once
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory for all artifacts
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Worker-thread cap for per-cloud evaluation work
    #[arg(long, global = true, value_name = "INT", default_value_t = 1)]
    threads: usize,

    /// Print the complete default configuration as flat JSON and exit
    #[arg(long, global = true)]
    dump_defaults: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest
    GenData,
    /// Train the self-supervised ordering model
    Train {
        /// Dataset directory (defaults to <out>/dataset)
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Resume from a checkpoint instead of initializing fresh
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        /// Also write a checkpoint every N epochs
        #[arg(long, value_name = "N")]
        save_every: Option<usize>,
    },
    /// Order the points of one XYZ file with a trained model
    Order {
        /// Trained checkpoint
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Input cloud (XYZ text)
        #[arg(long, value_name = "PATH")]
        cloud: PathBuf,
        /// Output ordering file (defaults to <out>/ordering.txt)
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Evaluate random, FPS, and learned subsets on frozen task networks
    Eval {
        /// Trained checkpoint
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset directory (defaults to <out>/dataset)
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Time the transport solver and the scorer across cloud sizes
    Bench,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version print and succeed; real parse errors are usage
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let cfg = config::load(g.config.as_deref(), &g.set, g.seed)?;

    if g.dump_defaults {
        let defaults = config::RunConfig::default().to_flat();
        println!("{}", serde_json::to_string_pretty(&serde_json::Value::Object(defaults))?);
        return Ok(());
    }

    let Some(command) = cli.command else {
        return Err(config::usage_err(
            "missing subcommand (gen-data, train, order, eval, bench); see --help",
        ));
    };

    match command {
        Command::GenData => commands::gen_data(&cfg, &g.out),
        Command::Train { data, resume, save_every } => {
            let data_dir = data.unwrap_or_else(|| commands::default_data_dir(&g.out));
            commands::train(&cfg, &g.out, &data_dir, resume.as_deref(), save_every)
        }
        Command::Order { checkpoint, cloud, output } => {
            commands::order(&g.out, &checkpoint, &cloud, output.as_deref())
        }
        Command::Eval { checkpoint, data } => {
            let data_dir = data.unwrap_or_else(|| commands::default_data_dir(&g.out));
            commands::eval(&cfg, &g.out, &checkpoint, &data_dir, g.threads)
        }
        Command::Bench => commands::bench(&cfg, &g.out),
    }
}
