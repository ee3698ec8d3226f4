//! A minimal leveled CKKS scheme: encoding of real vectors, public-key
//! encryption, ciphertext addition and one plaintext-scalar multiplication
//! with rescale. Enough to sum encrypted model updates and normalize the sum
//! without ever dividing a ciphertext.

mod arith;
mod cipher;
mod encoding;
mod ntt;
mod pack;
mod params;
mod serial;

pub use cipher::{add, decrypt, encrypt, keygen, mul_scalar_rescale, Ciphertext, KeyPair, PublicKey, RnsPoly, SecretKey};
pub use encoding::{decode, encode, encode_with_scale, PlainPoly};
pub use ntt::NttTable;
pub use pack::{chunk_ranges, decrypt_update, encrypt_update, pack_update, pack_with_layout, unpack_update, PackingLayout};
pub use params::{CkksContext, CkksParams};
pub use serial::{deserialize_ct, serialize_ct, serialized_len, HEADER_LEN};

#[derive(Debug, thiserror::Error)]
pub enum CkksError {
    #[error("invalid CKKS parameters: {0}")]
    InvalidParams(String),
    #[error("{values} values exceed the {slots} available slots")]
    Capacity { values: usize, slots: usize },
    #[error("non-finite value cannot be encoded")]
    NonFinite,
    #[error("encoded magnitude exceeds the ciphertext modulus")]
    Overflow,
    #[error("ciphertext levels differ ({left} vs {right})")]
    LevelMismatch { left: usize, right: usize },
    #[error("ciphertext scales differ (2^{left} vs 2^{right})")]
    ScaleMismatch { left: u32, right: u32 },
    #[error("no level left to rescale into")]
    DepthExhausted,
    #[error("operand was produced under different parameters")]
    ParamsMismatch,
    #[error("malformed ciphertext bytes: {0}")]
    Decode(String),
    #[error("{0}")]
    Structural(String),
}
