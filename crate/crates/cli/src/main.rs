use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use privfed_cli::commands;
use privfed_cli::ExperimentConfig;

/// Federated cardiovascular-risk experiments with optional differential
/// privacy or homomorphic encryption of client updates.
#[derive(Parser)]
#[command(name = "privfed", version)]
struct Cli {
    /// Experiment config (JSON). Without it every key takes its default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set rounds=20` or
    /// `--set data.generate.scale_factor=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one CSV per site.
    GenerateData,
    /// Cross-validated baseline on the pooled data.
    RunCentral,
    /// Server and all clients in one process.
    RunSim,
    /// Networked coordinator.
    Server {
        #[arg(long, value_name = "HOST:PORT")]
        listen: Option<String>,
    },
    /// Networked participant for one site.
    Client {
        #[arg(long, value_name = "HOST:PORT")]
        connect: Option<String>,
        #[arg(long)]
        site: String,
    },
    /// Merge report.json / central.json files into one summary.csv.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Pooled LR AUC for a grid of coefficient multipliers.
    Calibrate {
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,1,1.25,1.5,2")]
        grid: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ExperimentConfig::load(cli.config.as_deref(), &cli.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let result = match &cli.command {
        Command::GenerateData => commands::generate_data(&cfg, &out).map(|_| ()),
        Command::RunCentral => commands::run_central(&cfg, &out).map(|r| {
            println!("cML {} AUC {:.4} ± {:.4} over {} folds", r.learner, r.summary.auc.mean, r.summary.auc.std, r.folds.len());
        }),
        Command::RunSim => commands::run_sim(&cfg, &out).map(print_run),
        Command::Server { listen } => commands::token_from_env().and_then(|token| {
            let listen = listen.as_deref().unwrap_or(&cfg.network.listen);
            commands::server(&cfg, &out, listen, token).map(print_run)
        }),
        Command::Client { connect, site } => commands::token_from_env().and_then(|token| {
            let connect = connect.as_deref().unwrap_or(&cfg.network.connect);
            commands::client(&cfg, connect, site, token).map(|s| {
                println!("{}: finished {} rounds as client {}", s.site, s.rounds, s.index);
            })
        }),
        Command::Report { inputs } => commands::report(inputs, &out).map(|rows| {
            for r in rows {
                println!("{:<10} {:<3} AUC {:.4} ± {:.4}", r.method, r.learner, r.auc_mean, r.auc_std);
            }
        }),
        Command::Calibrate { grid } => commands::calibrate(&cfg, grid).map(|rows| {
            println!("multiplier,auc");
            for (k, auc) in rows {
                println!("{k},{auc:.4}");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_run(r: privfed_core::eval::RunReport) {
    match &r.cross_site {
        Some(t) => println!(
            "{} {} after {} rounds: cross-site AUC {:.4} ± {:.4}",
            r.method,
            r.learner,
            r.rounds.len(),
            t.summary.auc.mean,
            t.summary.auc.std
        ),
        None => println!("{} {}: no cross-site results", r.method, r.learner),
    }
}
