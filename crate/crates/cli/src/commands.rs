//! The subcommands, as library functions so tests can drive them directly.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use privfed_core::data::{
    generate_cohort, generate_site, kfold_split, partition_sites, pool, read_csv, split_train_valid, write_csv,
    CohortDataset, GeneratorSpec, SitePartition,
};
use privfed_core::eval::{
    emit_central_report, emit_report, evaluate_model, read_json, sort_summary_rows, summarize, write_csv_rows,
    CentralReport, MetricSet, RunReport, SummaryRow, SUMMARY_COLUMNS,
};
use privfed_core::learners::{init_params, train_local, TrainConfig};
use privfed_core::rng::derive_seed;
use privfed_core::ModelKind;
use privfed_federation::{
    accept_clients, client_run, run_sim as federate, server_run, tcp_connect, tcp_incoming, ClientSetup,
    ClientSummary, ServerOptions,
};

use crate::config::{DataSource, ExperimentConfig};

/// Stream tags for seeds owned by the CLI.
const CENTRAL_INIT: u64 = 0x43_494e;
const CENTRAL_TRAIN: u64 = 0x43_5452;
const CENTRAL_FOLDS: u64 = 0x43_464f;

/// Environment variable holding the join token for networked runs.
pub const TOKEN_ENV: &str = "PRIVFED_TOKEN";

pub fn token_from_env() -> Result<String> {
    match std::env::var(TOKEN_ENV) {
        Ok(t) if !t.is_empty() => Ok(t),
        _ => bail!("{TOKEN_ENV} must be set to the shared join token"),
    }
}

/// Every site's full dataset, in client-index order.
pub fn load_sites(cfg: &ExperimentConfig) -> Result<Vec<(String, CohortDataset)>> {
    match &cfg.data {
        DataSource::Generate(g) => Ok(generate_cohort(g, cfg.exec())?),
        DataSource::Csv(sites) => sites
            .iter()
            .map(|s| Ok((s.name.clone(), read_csv(&s.path).with_context(|| format!("site `{}`", s.name))?)))
            .collect(),
    }
}

/// One site's train/validation split, built exactly as [`partition_sites`]
/// would build it from the full cohort, without loading the other sites.
pub fn load_partition(cfg: &ExperimentConfig, site: &str) -> Result<SitePartition> {
    let names = cfg.site_names();
    let Some(index) = names.iter().position(|n| n == site) else {
        bail!("site `{site}` is not in the config (known: {})", names.join(", "));
    };
    let ds = match &cfg.data {
        DataSource::Generate(g) => {
            g.validate()?;
            generate_site(g, index)?
        }
        DataSource::Csv(sites) => read_csv(&sites[index].path)?,
    };
    let (train, valid) = split_train_valid(&ds, cfg.train_frac, derive_seed(cfg.seed, &[index as u64]))?;
    Ok(SitePartition { name: site.to_string(), train, valid })
}

pub fn partitions(cfg: &ExperimentConfig) -> Result<Vec<SitePartition>> {
    Ok(partition_sites(&load_sites(cfg)?, cfg.train_frac, cfg.seed)?)
}

/// Writes `<out>/<site>.csv` for every site.
pub fn generate_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (name, ds) in load_sites(cfg)? {
        let path = out.join(format!("{name}.csv"));
        write_csv(&ds, &path)?;
        eprintln!("{name}: {} negatives, {} positives -> {}", ds.n_negative(), ds.n_positive(), path.display());
        written.push(path);
    }
    Ok(written)
}

fn central_train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.central.batch_size.unwrap_or(cfg.batch_size),
        local_epochs: cfg.central.epochs.unwrap_or(cfg.rounds * cfg.local_epochs),
        l2_penalty: cfg.l2_penalty,
        seed: 0,
        exec: cfg.exec(),
    }
}

/// Trains on `train` from the learner's initial parameters and scores `test`.
fn fit_and_score(
    kind: ModelKind,
    train: &CohortDataset,
    test: &CohortDataset,
    tc: &TrainConfig,
    init_seed: u64,
    threshold: f64,
) -> Result<MetricSet> {
    let init = init_params(kind, init_seed);
    let (params, _) = train_local(kind, &init, train, tc)?;
    Ok(evaluate_model(kind, &params, test, threshold, tc.exec)?)
}

/// Stratified k-fold cross-validation on all sites pooled together.
pub fn run_central(cfg: &ExperimentConfig, out: &Path) -> Result<CentralReport> {
    let started = Instant::now();
    let sites = load_sites(cfg)?;
    let pooled = pool(sites.iter().map(|(_, d)| d));
    let folds = kfold_split(&pooled, cfg.central.folds, derive_seed(cfg.seed, &[CENTRAL_FOLDS]))?;
    let base = central_train_config(cfg);
    let init_seed = derive_seed(cfg.seed, &[CENTRAL_INIT]);
    let metrics = cfg
        .exec()
        .map_range(folds.len(), |f| {
            let (train, test) = &folds[f];
            let tc = TrainConfig { seed: derive_seed(cfg.seed, &[CENTRAL_TRAIN, f as u64]), ..base.clone() };
            fit_and_score(cfg.learner, train, test, &tc, init_seed, cfg.threshold)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let report = CentralReport {
        method: "cML".into(),
        learner: cfg.learner.label().into(),
        config: cfg.snapshot(),
        summary: summarize(&metrics),
        folds: metrics,
        total_wall_seconds: started.elapsed().as_secs_f64(),
    };
    emit_central_report(&report, out)?;
    Ok(report)
}

fn server_options(cfg: &ExperimentConfig, token: String) -> ServerOptions {
    let mut opts = ServerOptions::new(cfg.site_names(), token);
    opts.round_timeout = cfg.round_timeout();
    opts.exec = cfg.exec();
    opts.config_snapshot = Some(cfg.snapshot());
    opts
}

fn finish_run(report: RunReport, out: &Path) -> Result<RunReport> {
    emit_report(&report, out)?;
    if let Some(msg) = &report.aborted {
        bail!(
            "run aborted after {} completed round(s): {msg} (partial report in {})",
            report.rounds.len(),
            out.display()
        );
    }
    Ok(report)
}

/// Server plus one client thread per site, in one process.
pub fn run_sim(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let token = std::env::var(TOKEN_ENV).unwrap_or_else(|_| "in-process".into());
    let spec = cfg.run_spec();
    let opts = server_options(cfg, token);
    let (report, clients) = federate(&spec, partitions(cfg)?, &opts, cfg.exec())?;
    for c in clients {
        if let Err(e) = c {
            if report.aborted.is_none() {
                bail!("client failed: {e}");
            }
        }
    }
    finish_run(report, out)
}

/// Networked coordinator: waits for every configured site, runs the rounds
/// and writes the report.
pub fn server(cfg: &ExperimentConfig, out: &Path, listen: &str, token: String) -> Result<RunReport> {
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let spec = cfg.run_spec();
    let opts = server_options(cfg, token);
    let deadline = Instant::now() + Duration::from_secs_f64(cfg.network.join_timeout_secs);
    let links = accept_clients(&spec, &opts, tcp_incoming(&listener, deadline, opts.round_timeout))?;
    eprintln!("all {} sites joined", links.len());
    finish_run(server_run(&spec, &opts, links)?, out)
}

pub fn client(cfg: &ExperimentConfig, connect: &str, site: &str, token: String) -> Result<ClientSummary> {
    let partition = load_partition(cfg, site)?;
    let link = tcp_connect(connect, Duration::from_secs_f64(cfg.network.connect_retry_secs))
        .with_context(|| format!("connecting to {connect}"))?;
    let setup = ClientSetup { site: partition, spec: cfg.run_spec(), token, exec: cfg.exec() };
    Ok(client_run(link, setup)?)
}

/// Reads `report.json` or `central.json` from each input (a file or a
/// directory holding one) and writes one combined `summary.csv`.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for input in inputs {
        let files: Vec<PathBuf> = if input.is_dir() {
            ["report.json", "central.json"].iter().map(|f| input.join(f)).filter(|p| p.is_file()).collect()
        } else {
            vec![input.clone()]
        };
        if files.is_empty() {
            bail!("{} holds neither report.json nor central.json", input.display());
        }
        for file in files {
            let value: serde_json::Value = read_json(&file)?;
            if value.get("folds").is_some() {
                rows.push(serde_json::from_value::<CentralReport>(value)?.summary_row());
            } else {
                let run: RunReport = serde_json::from_value(value).with_context(|| file.display().to_string())?;
                match run.summary_row() {
                    Some(r) => rows.push(r),
                    None => eprintln!("skipping {}: run has no cross-site results", file.display()),
                }
            }
        }
    }
    sort_summary_rows(&mut rows);
    std::fs::create_dir_all(out)?;
    write_csv_rows(&out.join("summary.csv"), &rows, Some(&SUMMARY_COLUMNS))?;
    Ok(rows)
}

/// Pooled logistic-regression validation AUC when the generator's
/// coefficients are multiplied by each factor in `grid`.
pub fn calibrate(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let DataSource::Generate(base) = &cfg.data else {
        bail!("calibrate needs generated data");
    };
    let tc = TrainConfig { seed: derive_seed(cfg.seed, &[CENTRAL_TRAIN]), ..central_train_config(cfg) };
    grid.iter()
        .map(|&k| {
            let spec = GeneratorSpec { beta: base.beta.map(|b| b * k), ..base.clone() };
            let sites = generate_cohort(&spec, cfg.exec())?;
            let pooled = pool(sites.iter().map(|(_, d)| d));
            let (train, valid) = split_train_valid(&pooled, cfg.train_frac, cfg.seed)?;
            let m = fit_and_score(ModelKind::LogisticRegression, &train, &valid, &tc, 0, cfg.threshold)?;
            Ok((k, m.auc))
        })
        .collect()
}
