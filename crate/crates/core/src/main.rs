use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esco::error::EscoError;
use esco::experiment::{cmd_ablate, cmd_report, cmd_run, cmd_sweep_memory, config_streams, ExperimentConfig};
use esco::Method;

#[derive(Parser)]
#[command(name = "esco", version, about = "Class-incremental span classification experiments")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, env = "ESCO_OUTPUT_ROOT", global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method over every task-order permutation.
    Run(ConfigArgs),
    /// Compare esco against its ablations on shared streams.
    Ablate(ConfigArgs),
    /// Final F1 of esco and replay-only across memory sizes.
    SweepMemory {
        #[command(flatten)]
        config: ConfigArgs,
        /// Exemplars per type to try.
        #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 15, 20, 25, 30, 35])]
        sizes: Vec<usize>,
    },
    /// Tabulate the summaries of finished runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    n_tasks: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    mem_per_type: Option<usize>,
    /// Read samples from a dump file instead of generating them.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Print the stream fingerprint of each permutation and exit.
    #[arg(long)]
    stream_fingerprint: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, EscoError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
                EscoError::Config(_) => e,
                other => EscoError::Config(other.to_string()),
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.permutations {
            c.permutations = v;
        }
        if let Some(v) = self.n_tasks {
            c.n_tasks = v;
        }
        if let Some(v) = self.epochs {
            c.hp.epochs = v;
        }
        if let Some(v) = self.mem_per_type {
            c.hp.mem_per_type = v;
        }
        if let Some(v) = &self.dump {
            c.data = esco::experiment::DataSource::Dump(v.clone());
        }
        if let Some(v) = &self.output {
            c.output_dir = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_fingerprints(config: &ExperimentConfig) -> Result<(), EscoError> {
    let (_, streams) = config_streams(config)?;
    for (p, s) in streams.iter().enumerate() {
        println!("{p}\t{}", s.fingerprint);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), EscoError> {
    let root = cli.output_root.as_deref();
    let prepare = |args: &ConfigArgs| -> Result<Option<(ExperimentConfig, PathBuf)>, EscoError> {
        let config = args.load()?;
        if args.stream_fingerprint {
            print_fingerprints(&config)?;
            return Ok(None);
        }
        let out = config.resolve_output(root);
        Ok(Some((config, out)))
    };
    match &cli.command {
        Command::Run(args) => {
            if let Some((config, out)) = prepare(args)? {
                let s = cmd_run(&config, &out)?;
                println!(
                    "{}: final F1 {:.2}  BWT {:.2}  FWT {:.2}  -> {}",
                    s.method,
                    100.0 * s.final_mean_f1,
                    s.bwt,
                    s.fwt,
                    out.display()
                );
            }
        }
        Command::Ablate(args) => {
            if let Some((config, out)) = prepare(args)? {
                let table = cmd_ablate(&config, &out)?;
                print!("{}", String::from_utf8_lossy(&table.to_csv()?));
            }
        }
        Command::SweepMemory { config, sizes } => {
            if let Some((config, out)) = prepare(config)? {
                for p in cmd_sweep_memory(&config, sizes, &out)? {
                    println!("{}\t{}\t{:.2}", p.size, p.method, p.final_f1);
                }
            }
        }
        Command::Report { dirs } => cmd_report(dirs, std::io::stdout().lock())?,
    }
    Ok(())
}

fn exit_code(err: &EscoError) -> u8 {
    match err {
        EscoError::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
