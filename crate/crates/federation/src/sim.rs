use std::thread;

use privfed_core::data::SitePartition;
use privfed_core::eval::RunReport;
use privfed_core::Exec;

use crate::channel::sim_pair;
use crate::client::{client_run, ClientSetup, ClientSummary};
use crate::server::{accept_clients, server_run, ServerOptions};
use crate::spec::RunSpec;
use crate::FedError;

/// Runs the server coordinator on the calling thread and one thread per site,
/// all connected by in-process links.
pub fn run_sim(
    spec: &RunSpec,
    sites: Vec<SitePartition>,
    opts: &ServerOptions,
    client_exec: Exec,
) -> Result<(RunReport, Vec<Result<ClientSummary, FedError>>), FedError> {
    spec.validate()?;
    let mut server_ends = Vec::with_capacity(sites.len());
    let mut handles = Vec::with_capacity(sites.len());
    for site in sites {
        let (server_end, client_end) = sim_pair();
        server_ends.push(Ok(server_end));
        let setup = ClientSetup { site, spec: spec.clone(), token: opts.token.clone(), exec: client_exec };
        handles.push(thread::spawn(move || client_run(client_end, setup)));
    }
    let links = accept_clients(spec, opts, server_ends)?;
    let report = server_run(spec, opts, links)?;
    let clients = handles
        .into_iter()
        .map(|h| h.join().unwrap_or_else(|_| Err(FedError::Protocol("client thread panicked".into()))))
        .collect();
    Ok((report, clients))
}
