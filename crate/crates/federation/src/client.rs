use std::sync::Arc;
use std::time::Instant;

use privfed_ckks::{decrypt_update, deserialize_ct, encrypt_update, serialize_ct, Ciphertext};
use privfed_core::data::SitePartition;
use privfed_core::dp::svt_filter;
use privfed_core::eval::{evaluate_model, MetricSet};
use privfed_core::learners::train_local;
use privfed_core::param::{apply_update, compute_delta, flatten, unflatten};
use privfed_core::rng::{derive_seed, rng_for};
use privfed_core::{Exec, LayoutManifest, ParamSet};

use crate::channel::Link;
use crate::frame::{Frame, FrameError, MsgType};
use crate::spec::{tags, HeRuntime, PrivacyMode, RunSpec, Weighting};
use crate::wire::{
    decode_body, encode_body, BroadcastMeta, DoneMeta, ErrorMeta, JoinAckMeta, JoinMeta, Payload, UpdateMeta,
};
use crate::FedError;

/// One site's participant: its data, its copy of the global model and its
/// privacy pipeline.
pub struct ClientState {
    index: usize,
    site: SitePartition,
    spec: Arc<RunSpec>,
    mode: PrivacyMode,
    manifest: LayoutManifest,
    global: Option<ParamSet>,
    next_round: usize,
    exec: Exec,
}

/// What a client sends back for one round.
#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub meta: UpdateMeta,
    pub payload: Payload,
}

impl ClientState {
    pub fn new(index: usize, site: SitePartition, spec: Arc<RunSpec>, exec: Exec) -> Result<Self, FedError> {
        spec.validate()?;
        let mode = PrivacyMode::for_client(&spec.privacy, exec)?;
        let manifest = privfed_core::learners::init_params(spec.learner, 0).manifest();
        Ok(ClientState { index, site, spec, mode, manifest, global: None, next_round: 0, exec })
    }

    pub fn site_name(&self) -> &str {
        &self.site.name
    }

    pub fn global(&self) -> Option<&ParamSet> {
        self.global.as_ref()
    }

    fn he(&self) -> Result<&HeRuntime, FedError> {
        match &self.mode {
            PrivacyMode::He(rt) => Ok(rt),
            _ => Err(FedError::Protocol("encrypted payload outside HE mode".into())),
        }
    }

    /// Installs a broadcast: plain parameters replace the global model, an
    /// encrypted aggregate is decrypted and added to it. Returns decrypt time.
    fn install(&mut self, payload: &Payload) -> Result<f64, FedError> {
        match payload {
            Payload::Plain(flat) => {
                self.global = Some(unflatten(flat, &self.manifest)?);
                Ok(0.0)
            }
            Payload::Encrypted(bytes) => {
                let rt = self.he()?;
                let base = self.global.as_ref().ok_or_else(|| {
                    FedError::Protocol("encrypted aggregate arrived before any plaintext model".into())
                })?;
                let start = Instant::now();
                let keys = rt.keys.as_ref().expect("client runtimes hold keys");
                let cts = bytes.iter().map(|b| deserialize_ct(&rt.ctx, b)).collect::<Result<Vec<Ciphertext>, _>>()?;
                let delta = decrypt_update(&rt.ctx, &cts, &keys.secret, &self.manifest)?;
                let updated = apply_update(base, &delta, &self.manifest)?;
                self.global = Some(updated);
                Ok(start.elapsed().as_secs_f64())
            }
            Payload::Empty => Err(FedError::Protocol("broadcast without a model".into())),
        }
    }

    fn evaluate(&self, params: &ParamSet) -> Result<MetricSet, FedError> {
        Ok(evaluate_model(self.spec.learner, params, &self.site.valid, self.spec.threshold, self.exec)?)
    }

    /// Install, evaluate, train, evaluate, diff, privatize.
    pub fn execute_round(&mut self, round: usize, incoming: &Payload) -> Result<RoundOutput, FedError> {
        if round != self.next_round {
            return Err(FedError::Protocol(format!("expected round {}, got {round}", self.next_round)));
        }
        let decrypt_seconds = self.install(incoming)?;
        let before = self.global.clone().expect("installed above");
        let pre_train = self.evaluate(&before)?;

        let spec = &self.spec;
        let mut cfg = spec.train.clone();
        cfg.seed = derive_seed(spec.seed, &[tags::TRAIN, self.index as u64, round as u64]);
        cfg.batch_size = spec.batch_size_for(&self.site.name);
        cfg.exec = self.exec;
        let (after, stats) = train_local(spec.learner, &before, &self.site.train, &cfg)?;
        let post_train = self.evaluate(&after)?;
        let (mut delta, _) = flatten(&compute_delta(&after, &before)?);

        let start = Instant::now();
        if let PrivacyMode::Dp(svt) = &self.mode {
            let mut rng = rng_for(spec.seed, &[tags::DP, self.index as u64, round as u64]);
            delta = svt_filter(&delta, stats.steps as u64, svt, &mut rng)?;
        }
        let weight = match spec.weighting {
            Weighting::Unit => 1.0,
            Weighting::ExampleCount => self.site.train.len() as f64,
        };
        if weight != 1.0 {
            delta = delta.scaled(weight);
        }
        let payload = match &self.mode {
            PrivacyMode::He(rt) => {
                let keys = rt.keys.as_ref().expect("client runtimes hold keys");
                let seed = derive_seed(spec.seed, &[tags::ENCRYPT, self.index as u64, round as u64]);
                let cts = encrypt_update(&rt.ctx, &delta, &self.manifest, rt.packing, &keys.public, seed)?;
                Payload::Encrypted(cts.iter().map(|c| serialize_ct(&rt.ctx, c)).collect())
            }
            _ => Payload::Plain(delta),
        };
        let privacy_seconds = match self.mode {
            PrivacyMode::Plain => 0.0,
            _ => start.elapsed().as_secs_f64(),
        };
        self.next_round += 1;
        Ok(RoundOutput {
            meta: UpdateMeta {
                client: self.site.name.clone(),
                steps: stats.steps,
                weight,
                pre_train,
                post_train,
                train_seconds: stats.wall_time,
                privacy_seconds,
                decrypt_seconds,
            },
            payload,
        })
    }

    /// Installs the final broadcast and evaluates it on the local validation
    /// split. In HE mode the decrypted final parameters travel back as well,
    /// since the server never holds them in the clear.
    pub fn finish(&mut self, incoming: &Payload) -> Result<(DoneMeta, Payload), FedError> {
        let decrypt_seconds = self.install(incoming)?;
        let global = self.global.as_ref().expect("installed above");
        let metrics = self.evaluate(global)?;
        let payload = match self.mode {
            PrivacyMode::He(_) => Payload::Plain(flatten(global).0),
            _ => Payload::Empty,
        };
        Ok((DoneMeta { client: self.site.name.clone(), metrics, decrypt_seconds }, payload))
    }
}

/// Join credentials and local data for a networked or simulated client.
pub struct ClientSetup {
    pub site: SitePartition,
    pub spec: RunSpec,
    pub token: String,
    pub exec: Exec,
}

/// Outcome of a client session that ran to the server's shutdown.
#[derive(Clone, Debug)]
pub struct ClientSummary {
    pub site: String,
    pub index: usize,
    pub rounds: usize,
    pub final_params: Option<ParamSet>,
}

fn send_error(link: &mut Link, round: u32, message: &str) {
    let body = encode_body(&ErrorMeta { message: message.to_string() }, &Payload::Empty);
    let _ = link.send(&Frame::new(MsgType::Error, round, body));
}

/// Joins, then follows the server's broadcasts until shutdown. Local
/// failures are reported to the server as an ERROR frame before returning.
pub fn client_run(mut link: Link, setup: ClientSetup) -> Result<ClientSummary, FedError> {
    let spec_json = setup.spec.public_view();
    // Keys are derived before joining so the server can check that every
    // client holds the same pair; the index is fixed once the server assigns it.
    let mut state = ClientState::new(0, setup.site, Arc::new(setup.spec), setup.exec)?;
    let key_fingerprint = match &state.mode {
        PrivacyMode::He(rt) => rt.keys.as_ref().map(|k| k.public.fingerprint()),
        _ => None,
    };
    let join = JoinMeta { site: state.site.name.clone(), token: setup.token, spec: spec_json, key_fingerprint };
    link.send(&Frame::new(MsgType::Join, 0, encode_body(&join, &Payload::Empty)))?;
    let ack = link.recv()?;
    let ack: JoinAckMeta = match ack.msg_type {
        MsgType::JoinAck => decode_body(&ack.body)?.0,
        MsgType::Error => return Err(FedError::Rejected(decode_body::<ErrorMeta>(&ack.body)?.0.message)),
        other => return Err(FedError::Protocol(format!("expected JOIN_ACK, got {other:?}"))),
    };
    state.index = ack.client_index;
    let mut rounds = 0;
    loop {
        let frame = match link.recv() {
            Ok(f) => f,
            Err(FrameError::Closed) => return Err(FedError::Protocol("server closed the connection".into())),
            Err(e) => return Err(e.into()),
        };
        let mut step = || -> Result<Option<Frame>, FedError> {
            match frame.msg_type {
                MsgType::Broadcast => {
                    let (meta, payload): (BroadcastMeta, Payload) = decode_body(&frame.body)?;
                    if meta.last {
                        let (done, payload) = state.finish(&payload)?;
                        Ok(Some(Frame::new(MsgType::RoundDone, frame.round, encode_body(&done, &payload))))
                    } else {
                        let out = state.execute_round(frame.round as usize, &payload)?;
                        rounds += 1;
                        Ok(Some(Frame::new(MsgType::Update, frame.round, encode_body(&out.meta, &out.payload))))
                    }
                }
                MsgType::Shutdown => Ok(None),
                MsgType::Error => Err(FedError::Remote(decode_body::<ErrorMeta>(&frame.body)?.0.message)),
                other => Err(FedError::Protocol(format!("unexpected {other:?} from server"))),
            }
        };
        match step() {
            Ok(Some(reply)) => link.send(&reply)?,
            Ok(None) => {
                return Ok(ClientSummary {
                    site: state.site_name().to_string(),
                    index: ack.client_index,
                    rounds,
                    final_params: state.global().cloned(),
                })
            }
            Err(e) => {
                if !matches!(e, FedError::Remote(_)) {
                    send_error(&mut link, frame.round, &e.to_string());
                }
                return Err(e);
            }
        }
    }
}
