//! Federated averaging over simulated or TCP links, with an optional privacy
//! pipeline on every client update: none, a sparse-vector DP filter, or CKKS
//! encryption with server-side encrypted summation.

mod aggregate;
mod channel;
mod client;
mod frame;
mod net;
mod server;
mod sim;
mod spec;
mod wire;

pub use aggregate::{aggregate_encrypted, aggregate_plain};
pub use channel::{sim_pair, tcp_link, FrameSink, FrameSource, Link};
pub use client::{client_run, ClientSetup, ClientState, ClientSummary, RoundOutput};
pub use frame::{frame_decode, frame_encode, read_frame, write_frame, Frame, FrameError, MsgType, HEADER_LEN, MAX_BODY};
pub use net::{tcp_connect, tcp_incoming};
pub use server::{accept_clients, server_run, ServerOptions, DEFAULT_ROUND_TIMEOUT};
pub use sim::run_sim;
pub use spec::{HeRuntime, HeSpec, PrivacyMode, PrivacySpec, RunSpec, Weighting};
pub use wire::{decode_body, encode_body, Payload, UpdateMeta};

use privfed_ckks::CkksError;
use privfed_core::dp::DpError;
use privfed_core::eval::EvalError;
use privfed_core::learners::LearnerError;
use privfed_core::param::ParamError;

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("join rejected: {0}")]
    Rejected(String),
    #[error("peer reported: {0}")]
    Remote(String),
    #[error("timed out {0}")]
    Timeout(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Ckks(#[from] CkksError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Dp(#[from] DpError),
}

impl From<std::io::Error> for FedError {
    fn from(e: std::io::Error) -> Self {
        FedError::Frame(FrameError::Io(e))
    }
}
