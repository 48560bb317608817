use aup_cli::{
    cmd_bench, cmd_init, cmd_report, cmd_run, cmd_setup, cmd_stop, cmd_submit, print_result, CliError, InitArgs,
    ReportArgs, RunArgs, SetupArgs, DEFAULT_ENV_FILE,
};
use aup_core::resources::RemoteConfig;
use clap::{Parser, Subcommand};
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "aup", version, about = "Hyperparameter search over executable training scripts")]
struct Cli {
    /// Environment file (resources, database, workdir)
    #[arg(long, global = true, env = "AUP_ENV", default_value = DEFAULT_ENV_FILE)]
    env: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create the environment file
    Setup {
        /// Number of local cpu slots
        #[arg(long)]
        cpu: Option<usize>,
        /// Comma-separated gpu device indices
        #[arg(long, value_delimiter = ',')]
        gpu: Vec<String>,
        /// Comma-separated remote hosts
        #[arg(long, value_delimiter = ',')]
        node: Vec<String>,
        /// Number of passive slots (results submitted by hand)
        #[arg(long)]
        passive: Option<usize>,
        #[arg(long, default_value = "aup.db")]
        db: PathBuf,
        #[arg(long, default_value = "aup_runs")]
        workdir: PathBuf,
        #[arg(long, default_value = "ssh")]
        remote_shell: String,
        #[arg(long, default_value = "scp")]
        remote_copy: String,
        #[arg(long, default_value = "/tmp")]
        remote_dir: String,
        /// Overwrite an existing environment file
        #[arg(long)]
        force: bool,
        #[arg(long, short)]
        interactive: bool,
    },
    /// Write an experiment config scaffold
    Init {
        #[arg(long, default_value = "random")]
        proposer: String,
        #[arg(long, default_value = "./train.sh")]
        script: PathBuf,
        #[arg(long, default_value = "cpu")]
        resource: String,
        #[arg(long, default_value_t = 1)]
        n_parallel: usize,
        #[arg(long, default_value_t = 100)]
        n_samples: usize,
        /// Placeholder max_budget for hyperband and bohb
        #[arg(long, default_value_t = 81)]
        max_budget: u64,
        #[arg(long, default_value = "min")]
        target: String,
        #[arg(long, short, default_value = "experiment.json")]
        output: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long, short)]
        interactive: bool,
    },
    /// Run an experiment
    Run {
        config: PathBuf,
        /// Override proposer_options.random_seed
        #[arg(long)]
        seed: Option<u64>,
        /// Validate everything without launching jobs
        #[arg(long)]
        dry_run: bool,
        /// Only print the final summary
        #[arg(long, short)]
        quiet: bool,
    },
    /// Ask a running experiment to stop
    Stop {
        eid: i64,
        /// Kill in-flight jobs instead of waiting for them
        #[arg(long)]
        kill: bool,
    },
    /// Summarize or export an experiment
    Report {
        eid: i64,
        /// Write the job table as CSV (`-` for stdout)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the best-so-far series as JSON (`-` for stdout)
        #[arg(long)]
        json: Option<PathBuf>,
        /// Print the k best jobs
        #[arg(long)]
        top: Option<usize>,
    },
    /// Submit the result of a job on a passive resource
    Submit {
        eid: i64,
        jid: u64,
        #[arg(allow_negative_numbers = true)]
        score: f64,
        aux: Option<String>,
    },
    /// Run a benchmark harness and print its regret table
    Bench {
        harness: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print a result line for a score
    Result {
        #[arg(allow_negative_numbers = true)]
        args: Vec<String>,
    },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Setup {
            cpu,
            gpu,
            node,
            passive,
            db,
            workdir,
            remote_shell,
            remote_copy,
            remote_dir,
            force,
            interactive,
        } => {
            let args = SetupArgs {
                output: cli.env,
                cpu,
                gpu,
                node,
                passive,
                database: db,
                workdir,
                remote: RemoteConfig { shell: remote_shell, copy: remote_copy, remote_dir },
                force,
                interactive,
            };
            cmd_setup(args, &mut input, &mut out).map(|_| 0)
        }
        Command::Init { proposer, script, resource, n_parallel, n_samples, max_budget, target, output, force, interactive } => {
            let args = InitArgs {
                output,
                proposer,
                script,
                resource,
                n_parallel,
                n_samples,
                max_budget,
                target,
                force,
                interactive,
            };
            cmd_init(args, &mut input, &mut out).map(|_| 0)
        }
        Command::Run { config, seed, dry_run, quiet } => {
            cmd_run(&RunArgs { config, env: cli.env, seed, dry_run, quiet }, &mut out)
        }
        Command::Stop { eid, kill } => cmd_stop(&cli.env, eid, kill, &mut out).map(|_| 0),
        Command::Report { eid, csv, json, top } => {
            cmd_report(&ReportArgs { env: cli.env, eid, csv, json, top }, &mut out).map(|_| 0)
        }
        Command::Submit { eid, jid, score, aux } => cmd_submit(&cli.env, eid, jid, score, aux.as_deref()).map(|_| 0),
        Command::Bench { harness, output } => cmd_bench(&cli.env, &harness, output.as_deref(), &mut out).map(|_| 0),
        Command::Result { args } => Ok(print_result(&args)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("aup: {e}");
            e.code
        }
    };
    ExitCode::from(code as u8)
}
