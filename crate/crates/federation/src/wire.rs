//! Frame bodies: a length-prefixed JSON metadata block followed by a binary
//! payload. Numeric vectors never go through JSON.
//!
//! Payload encoding: tag byte, then
//! - `0`: nothing,
//! - `1`: count (u64) and that many f64,
//! - `2`: count (u32) and that many serialized ciphertexts, each prefixed by
//!   its byte length (u64).

use privfed_core::eval::MetricSet;
use privfed_core::FlatVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::FedError;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Empty,
    Plain(FlatVector),
    Encrypted(Vec<Vec<u8>>),
}

impl Payload {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Payload::Empty => out.push(0),
            Payload::Plain(v) => {
                out.push(1);
                out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                for x in v.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::Encrypted(cts) => {
                out.push(2);
                out.extend_from_slice(&(cts.len() as u32).to_le_bytes());
                for ct in cts {
                    out.extend_from_slice(&(ct.len() as u64).to_le_bytes());
                    out.extend_from_slice(ct);
                }
            }
        }
    }

    /// Encoded size in bytes, tag included.
    pub fn wire_len(&self) -> usize {
        match self {
            Payload::Empty => 1,
            Payload::Plain(v) => 1 + 8 + 8 * v.len(),
            Payload::Encrypted(cts) => 1 + 4 + cts.iter().map(|c| 8 + c.len()).sum::<usize>(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FedError> {
        let mut r = Cursor { bytes, pos: 0 };
        let payload = match r.take(1)?[0] {
            0 => Payload::Empty,
            1 => {
                let n = r.u64()? as usize;
                if n > r.remaining() / 8 {
                    return Err(malformed("f64 count exceeds the body"));
                }
                let raw = r.take(8 * n)?;
                Payload::Plain(FlatVector(
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect(),
                ))
            }
            2 => {
                let n = r.u32()? as usize;
                let mut cts = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let len = r.u64()? as usize;
                    cts.push(r.take(len)?.to_vec());
                }
                Payload::Encrypted(cts)
            }
            t => return Err(malformed(&format!("unknown payload tag {t}"))),
        };
        if r.remaining() != 0 {
            return Err(malformed("trailing bytes after payload"));
        }
        Ok(payload)
    }
}

fn malformed(msg: &str) -> FedError {
    FedError::Protocol(format!("malformed body: {msg}"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FedError> {
        if n > self.remaining() {
            return Err(malformed("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64, FedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

pub fn encode_body<M: Serialize>(meta: &M, payload: &Payload) -> Vec<u8> {
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(4 + json.len() + payload.wire_len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    payload.encode_into(&mut out);
    out
}

pub fn decode_body<M: DeserializeOwned>(body: &[u8]) -> Result<(M, Payload), FedError> {
    let mut r = Cursor { bytes: body, pos: 0 };
    let len = r.u32()? as usize;
    let meta = serde_json::from_slice(r.take(len)?).map_err(|e| malformed(&e.to_string()))?;
    Ok((meta, Payload::decode(&body[r.pos..])?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinMeta {
    pub site: String,
    pub token: String,
    /// The client's view of the run, without secrets; must equal the server's.
    pub spec: serde_json::Value,
    /// HE mode: digest of the client's public key. All clients must agree.
    #[serde(default)]
    pub key_fingerprint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinAckMeta {
    pub client_index: usize,
    pub n_clients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMeta {
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BroadcastMeta {
    /// Set on the broadcast that follows the last round: install, evaluate
    /// and report instead of training.
    pub last: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateMeta {
    pub client: String,
    pub steps: usize,
    pub weight: f64,
    pub pre_train: MetricSet,
    pub post_train: MetricSet,
    pub train_seconds: f64,
    pub privacy_seconds: f64,
    pub decrypt_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoneMeta {
    pub client: String,
    /// Final global model on the client's validation split.
    pub metrics: MetricSet,
    pub decrypt_seconds: f64,
}
