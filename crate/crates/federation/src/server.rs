use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use privfed_ckks::{deserialize_ct, serialize_ct, Ciphertext};
use privfed_core::eval::{ClientRoundRecord, CrossSiteRow, CrossSiteTable, RoundRecord, RunReport};
use privfed_core::learners::init_params;
use privfed_core::param::{apply_update, flatten, unflatten};
use privfed_core::rng::derive_seed;
use privfed_core::{Exec, FlatVector, ParamSet};

use crate::aggregate::{aggregate_encrypted, aggregate_plain};
use crate::channel::{FrameSink, Link};
use crate::frame::{Frame, FrameError, MsgType};
use crate::spec::{tags, PrivacyMode, RunSpec};
use crate::wire::{decode_body, encode_body, BroadcastMeta, DoneMeta, ErrorMeta, JoinAckMeta, JoinMeta, Payload, UpdateMeta};
use crate::FedError;

pub const DEFAULT_ROUND_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Clone, Debug)]
pub struct ServerOptions {
    /// Expected sites, in the order that fixes client indices.
    pub sites: Vec<String>,
    pub token: String,
    /// Longest wait for all payloads of one round (or for all joins).
    pub round_timeout: Duration,
    pub exec: Exec,
    /// Stored verbatim in the report; defaults to the run spec without the HE
    /// key seed.
    pub config_snapshot: Option<serde_json::Value>,
}

impl ServerOptions {
    pub fn new(sites: Vec<String>, token: impl Into<String>) -> Self {
        ServerOptions {
            sites,
            token: token.into(),
            round_timeout: DEFAULT_ROUND_TIMEOUT,
            exec: Exec::default(),
            config_snapshot: None,
        }
    }
}

fn error_frame(round: u32, message: &str) -> Frame {
    Frame::new(MsgType::Error, round, encode_body(&ErrorMeta { message: message.to_string() }, &Payload::Empty))
}

/// Runs the join handshake on incoming links until every expected site has
/// joined. Links with a bad token, an unknown or duplicate site, or a
/// mismatched run spec get an ERROR frame and are dropped.
pub fn accept_clients<I>(spec: &RunSpec, opts: &ServerOptions, incoming: I) -> Result<Vec<Link>, FedError>
where
    I: IntoIterator<Item = Result<Link, FedError>>,
{
    let spec_json = spec.public_view();
    let he = matches!(spec.privacy, crate::spec::PrivacySpec::He(_));
    let mut fingerprint: Option<String> = None;
    let mut joined: BTreeMap<usize, Link> = BTreeMap::new();
    let n = opts.sites.len();
    for link in incoming {
        let mut link = link?;
        let frame = match link.recv() {
            Ok(f) => f,
            Err(_) => continue,
        };
        let verdict = (|| -> Result<usize, String> {
            if frame.msg_type != MsgType::Join {
                return Err(format!("expected JOIN, got {:?}", frame.msg_type));
            }
            let (join, _): (JoinMeta, Payload) = decode_body(&frame.body).map_err(|e| e.to_string())?;
            if join.token != opts.token {
                return Err("authentication failed: token mismatch".into());
            }
            let idx = opts
                .sites
                .iter()
                .position(|s| *s == join.site)
                .ok_or_else(|| format!("unknown site `{}`", join.site))?;
            if joined.contains_key(&idx) {
                return Err(format!("site `{}` already joined", join.site));
            }
            if join.spec != spec_json {
                return Err(format!("site `{}` runs a different configuration than the server", join.site));
            }
            if he {
                let fp = join.key_fingerprint.ok_or("HE mode requires a public key fingerprint")?;
                match &fingerprint {
                    Some(expected) if *expected != fp => {
                        return Err(format!("site `{}` holds a different HE key pair than the other sites", join.site))
                    }
                    _ => fingerprint = Some(fp),
                }
            }
            Ok(idx)
        })();
        match verdict {
            Ok(idx) => {
                let ack = JoinAckMeta { client_index: idx, n_clients: n };
                if link.send(&Frame::new(MsgType::JoinAck, 0, encode_body(&ack, &Payload::Empty))).is_ok() {
                    joined.insert(idx, link);
                }
            }
            Err(msg) => {
                let _ = link.send(&error_frame(0, &msg));
            }
        }
        if joined.len() == n {
            return Ok(joined.into_values().collect());
        }
    }
    Err(FedError::Protocol(format!("only {} of {n} sites joined", joined.len())))
}

struct Hub {
    sinks: Vec<Box<dyn FrameSink>>,
    rx: Receiver<(usize, Result<Frame, FrameError>)>,
    names: Vec<String>,
    timeout: Duration,
}

impl Hub {
    /// One reader thread per link feeds a single queue, so payloads from all
    /// clients register on the coordinator in arrival order.
    fn new(links: Vec<Link>, names: Vec<String>, timeout: Duration) -> Self {
        let (tx, rx) = mpsc::channel();
        let mut sinks = Vec::with_capacity(links.len());
        for (i, link) in links.into_iter().enumerate() {
            sinks.push(link.sink);
            let mut source = link.source;
            let tx = tx.clone();
            thread::spawn(move || loop {
                let r = source.recv();
                let stop = r.is_err();
                if tx.send((i, r)).is_err() || stop {
                    break;
                }
            });
        }
        Hub { sinks, rx, names, timeout }
    }

    fn broadcast(&mut self, frame: &Frame) -> Result<(), String> {
        for (i, s) in self.sinks.iter_mut().enumerate() {
            s.send(frame).map_err(|e| format!("sending to `{}`: {e}", self.names[i]))?;
        }
        Ok(())
    }

    fn notify_all(&mut self, frame: &Frame) {
        for s in &mut self.sinks {
            let _ = s.send(frame);
        }
    }

    /// Waits until every client has sent one `want` frame for `round`.
    /// Returns the frames in client order with their arrival offsets.
    fn collect(&self, want: MsgType, round: u32, since: Instant) -> Result<Vec<(Frame, f64)>, String> {
        let n = self.sinks.len();
        let deadline = Instant::now() + self.timeout;
        let mut got: Vec<Option<(Frame, f64)>> = vec![None; n];
        let mut remaining = n;
        while remaining > 0 {
            let wait = deadline.saturating_duration_since(Instant::now());
            let (i, r) = match self.rx.recv_timeout(wait) {
                Ok(x) => x,
                Err(RecvTimeoutError::Timeout) => {
                    let missing: Vec<&str> =
                        (0..n).filter(|&i| got[i].is_none()).map(|i| self.names[i].as_str()).collect();
                    return Err(format!(
                        "round {round}: timed out after {:?} waiting for {}",
                        self.timeout,
                        missing.join(", ")
                    ));
                }
                Err(RecvTimeoutError::Disconnected) => return Err("all client connections closed".into()),
            };
            let name = &self.names[i];
            let frame = r.map_err(|e| format!("round {round}: connection to `{name}` failed: {e}"))?;
            if frame.msg_type == MsgType::Error {
                let msg = decode_body::<ErrorMeta>(&frame.body).map(|m| m.0.message).unwrap_or_default();
                return Err(format!("round {round}: `{name}` reported: {msg}"));
            }
            if frame.msg_type != want || frame.round != round || got[i].is_some() {
                return Err(format!(
                    "round {round}: unexpected {:?} for round {} from `{name}`",
                    frame.msg_type, frame.round
                ));
            }
            got[i] = Some((frame, since.elapsed().as_secs_f64()));
            remaining -= 1;
        }
        Ok(got.into_iter().map(|g| g.expect("all received")).collect())
    }
}

/// Coordinates a full run over already-joined links (ordered by site index)
/// and returns the report. A client failure or timeout ends the run early with
/// the completed rounds and an abort marker instead of an error.
pub fn server_run(spec: &RunSpec, opts: &ServerOptions, links: Vec<Link>) -> Result<RunReport, FedError> {
    spec.validate()?;
    if links.len() != opts.sites.len() || links.is_empty() {
        return Err(FedError::Config(format!("{} links for {} sites", links.len(), opts.sites.len())));
    }
    let mode = PrivacyMode::for_server(&spec.privacy, opts.exec)?;
    let started = Instant::now();
    let initial = init_params(spec.learner, derive_seed(spec.seed, &[tags::INIT]));
    let manifest = initial.manifest();
    let mut report = RunReport {
        method: spec.privacy.method().to_string(),
        learner: spec.learner.label().to_string(),
        config: opts.config_snapshot.clone().unwrap_or_else(|| spec.public_view()),
        initial_params: initial.clone(),
        rounds: Vec::new(),
        cross_site: None,
        final_params: None,
        aborted: None,
        total_wall_seconds: 0.0,
    };
    let mut hub = Hub::new(links, opts.sites.clone(), opts.round_timeout);
    let mut global: ParamSet = initial;
    let mut outgoing = Payload::Plain(flatten(&global).0);

    let outcome = (|| -> Result<(), String> {
        for round in 0..spec.rounds {
            let r32 = round as u32;
            let t0 = Instant::now();
            hub.broadcast(&Frame::new(MsgType::Broadcast, r32, encode_body(&BroadcastMeta { last: false }, &outgoing)))?;
            let frames = hub.collect(MsgType::Update, r32, t0)?;
            let aggregation_offset_seconds = t0.elapsed().as_secs_f64();
            let agg_start = Instant::now();

            let mut clients = Vec::with_capacity(frames.len());
            let mut payloads = Vec::with_capacity(frames.len());
            let mut weights = Vec::with_capacity(frames.len());
            for (frame, arrival) in &frames {
                let (meta, payload): (UpdateMeta, Payload) = decode_body(&frame.body).map_err(|e| e.to_string())?;
                weights.push(meta.weight);
                clients.push(ClientRoundRecord {
                    client: meta.client,
                    pre_train: meta.pre_train,
                    post_train: meta.post_train,
                    steps: meta.steps,
                    weight: meta.weight,
                    payload_bytes: payload.wire_len() as u64,
                    train_seconds: meta.train_seconds,
                    privacy_seconds: meta.privacy_seconds,
                    decrypt_seconds: meta.decrypt_seconds,
                    arrival_offset_seconds: *arrival,
                });
                payloads.push(payload);
            }

            outgoing = match &mode {
                PrivacyMode::He(rt) => {
                    let cts = payloads
                        .iter()
                        .map(|p| match p {
                            Payload::Encrypted(chunks) => chunks
                                .iter()
                                .map(|b| deserialize_ct(&rt.ctx, b).map_err(|e| e.to_string()))
                                .collect::<Result<Vec<Ciphertext>, _>>(),
                            _ => Err("plaintext update in HE mode".to_string()),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let agg = aggregate_encrypted(&rt.ctx, &cts, &weights).map_err(|e| e.to_string())?;
                    Payload::Encrypted(agg.iter().map(|c| serialize_ct(&rt.ctx, c)).collect())
                }
                _ => {
                    let deltas = payloads
                        .into_iter()
                        .map(|p| match p {
                            Payload::Plain(v) if v.len() == manifest.total_len() => Ok(v),
                            _ => Err("malformed plaintext update".to_string()),
                        })
                        .collect::<Result<Vec<FlatVector>, _>>()?;
                    let agg = aggregate_plain(&deltas, &weights).map_err(|e| e.to_string())?;
                    global = apply_update(&global, &agg, &manifest).map_err(|e| e.to_string())?;
                    Payload::Plain(flatten(&global).0)
                }
            };
            report.rounds.push(RoundRecord {
                round,
                clients,
                aggregation_offset_seconds,
                aggregation_seconds: agg_start.elapsed().as_secs_f64(),
            });
        }

        let last = spec.rounds as u32;
        let t0 = Instant::now();
        hub.broadcast(&Frame::new(MsgType::Broadcast, last, encode_body(&BroadcastMeta { last: true }, &outgoing)))?;
        let frames = hub.collect(MsgType::RoundDone, last, t0)?;
        let mut rows = Vec::with_capacity(frames.len());
        for (i, (frame, _)) in frames.iter().enumerate() {
            let (meta, payload): (DoneMeta, Payload) = decode_body(&frame.body).map_err(|e| e.to_string())?;
            rows.push(CrossSiteRow { site: meta.client, metrics: meta.metrics });
            // In HE mode the first site acts as the designated decryptor.
            if i == 0 && matches!(mode, PrivacyMode::He(_)) {
                match &payload {
                    Payload::Plain(flat) => global = unflatten(flat, &manifest).map_err(|e| e.to_string())?,
                    _ => return Err(format!("`{}` sent no decrypted final model", rows[0].site)),
                }
            }
        }
        report.cross_site = Some(CrossSiteTable::from_rows(rows));
        report.final_params = Some(global.clone());
        Ok(())
    })();

    match outcome {
        Ok(()) => hub.notify_all(&Frame::empty(MsgType::Shutdown, spec.rounds as u32)),
        Err(msg) => {
            hub.notify_all(&error_frame(report.rounds.len() as u32, &format!("run aborted: {msg}")));
            report.aborted = Some(msg);
        }
    }
    report.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
