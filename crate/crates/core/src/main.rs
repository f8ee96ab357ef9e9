use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use offload_tuner::cli::{self, CliError, TuneOptions};
use offload_tuner::config::RunConfig;

/// Search for the set of `for` loops worth offloading to a GPU.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the source and probe which loops compile with a directive.
    Analyze { config: PathBuf },
    /// Run the genetic search and write the best variant.
    Tune {
        config: PathBuf,
        /// Overrides `ga.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Uses this cost model instead of compiling and running variants.
        #[arg(long, value_name = "MODEL_JSON")]
        sim: Option<PathBuf>,
    },
    /// Print the per-generation table of a finished run.
    Report {
        workdir: PathBuf,
        /// Also write a gnuplot data file.
        #[arg(long, value_name = "FILE")]
        gnuplot: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(path)?)
}

fn run(args: Args) -> anyhow::Result<()> {
    match args.command {
        Command::Analyze { config } => {
            let cfg = load(&config)?;
            let a = cli::cmd_analyze(&cfg)?;
            for l in &a.loops {
                let status = match (l.gene, l.reject_class) {
                    (Some(g), _) => format!("gene {g}"),
                    (None, Some(class)) => format!("rejected ({class:?})"),
                    (None, None) => "excluded by depth filter".into(),
                };
                println!("loop {:>3}  line {:>5}  depth {}  {}", l.id, l.line, l.depth, status);
            }
            println!("{} loops, gene length {}", a.loop_count, a.gene_length);
            if let Some(note) = &a.note {
                println!("{note}");
            }
        }
        Command::Tune { config, seed, sim } => {
            let cfg = load(&config)?;
            let out = cli::cmd_tune(&cfg, &TuneOptions { seed, sim })?;
            let s = &out.summary;
            println!(
                "baseline {:.6} s, best {:.6} s, speedup {:.2}x, genome {}",
                s.baseline_s, s.best_s, s.speedup, s.best_genome
            );
            println!(
                "{} distinct measurements ({} new), {} repeats",
                s.distinct_evals, out.evaluations_run, s.cache_hits
            );
            println!("artifacts in {}", cfg.workdir.display());
        }
        Command::Report { workdir, gnuplot } => {
            let report = cli::cmd_report(&workdir, gnuplot.as_deref())
                .with_context(|| format!("report for {}", workdir.display()))?;
            print!("{}", report.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<CliError>())
                .map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
