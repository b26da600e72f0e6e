use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mcrf_cli::{
    cmd_ablate, cmd_eval, cmd_explain, cmd_grid, cmd_stats, cmd_sweep, cmd_train, error_category, parse_span, stats_line,
    sweep_tsv, InputError, ReportRow, RunReport, STATS_HEADER,
};
use mcrf_core::config::Ablation;

#[derive(Parser)]
#[command(name = "mcrf", version, about = "Multi-CRF structured attention for aspect sentiment")]
struct Cli {
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes checkpoint, epoch log and config copy.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a labelled corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Map unseen words to <unk> instead of failing.
        #[arg(long)]
        allow_unknown: bool,
    },
    /// Per-head Yes-marginals for one sentence, as TSV on stdout.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        /// Character offsets START,END (end exclusive).
        #[arg(long)]
        aspect: String,
        /// Also write the JSON record here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Accuracy per number of CRF heads.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8,12,16")]
        heads: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train with one component removed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        flag: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid search over a TOML file of value lists.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Label counts per corpus file.
    Stats {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn print_run(r: &RunReport) {
    println!("{}", ReportRow::HEADER);
    for row in &r.rows {
        println!("{row}");
    }
    eprintln!("checkpoint {}", r.checkpoint.display());
    eprintln!("log {}", r.log.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed } => print_run(&cmd_train(&config, seed)?),
        Command::Eval {
            ckpt,
            test,
            allow_unknown,
        } => {
            let row = cmd_eval(&ckpt, &test, allow_unknown)?;
            println!("{}\n{row}", ReportRow::HEADER);
        }
        Command::Explain { ckpt, text, aspect, json } => {
            let e = cmd_explain(&ckpt, &text, parse_span(&aspect)?)?;
            print!("{}", e.export.to_tsv());
            if let Some(path) = json {
                std::fs::write(&path, e.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
            let p = e.prediction.probabilities;
            eprintln!("predicted {} ({:.4} {:.4} {:.4})", e.prediction.label, p[0], p[1], p[2]);
        }
        Command::Sweep { config, heads, seed } => print!("{}", sweep_tsv(&cmd_sweep(&config, &heads, seed)?)),
        Command::Ablate { config, flag, seed } => {
            let flag: Ablation = flag.parse().map_err(InputError)?;
            print_run(&cmd_ablate(&config, flag, seed)?);
        }
        Command::Grid { config, grid, seed } => {
            let (table, report) = cmd_grid(&config, &grid, seed)?;
            print!("{table}");
            eprintln!("best checkpoint {}", report.checkpoint.display());
        }
        Command::Stats { paths } => {
            println!("{STATS_HEADER}");
            let mut failed = 0;
            for (path, result) in paths.iter().zip(cmd_stats(&paths)) {
                match result {
                    Ok(s) => println!("{}", stats_line(&s)),
                    Err(e) => {
                        let (cat, _) = error_category(&e);
                        eprintln!("error[{cat}]: {}: {}", path.display(), one_line(&e));
                        failed += 1;
                    }
                }
            }
            if failed > 0 {
                return Err(InputError(format!("{failed} of {} corpora failed to parse", paths.len())).into());
            }
        }
    }
    Ok(())
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = error_category(&e);
            eprintln!("error[{cat}]: {}", one_line(&e));
            ExitCode::from(code as u8)
        }
    }
}
