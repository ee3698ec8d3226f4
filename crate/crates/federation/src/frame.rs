//! Length-prefixed frames: magic `PFD1`, message type (u8), round (u32),
//! body length (u64), body. Integers are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PFD1";
pub const HEADER_LEN: usize = 4 + 1 + 4 + 8;
pub const MAX_BODY: u64 = 256 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Join = 0,
    JoinAck = 1,
    Broadcast = 2,
    Update = 3,
    RoundDone = 4,
    Shutdown = 5,
    Error = 6,
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(b: u8) -> Result<Self, FrameError> {
        Ok(match b {
            0 => MsgType::Join,
            1 => MsgType::JoinAck,
            2 => MsgType::Broadcast,
            3 => MsgType::Update,
            4 => MsgType::RoundDone,
            5 => MsgType::Shutdown,
            6 => MsgType::Error,
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub round: u32,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, round: u32, body: Vec<u8>) -> Self {
        Frame { msg_type, round, body }
    }

    pub fn empty(msg_type: MsgType, round: u32) -> Self {
        Frame::new(msg_type, round, Vec::new())
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("body of {0} bytes exceeds the 256 MiB limit")]
    Oversize(u64),
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{0} trailing bytes after the frame")]
    Trailing(usize),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn frame_encode(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frame.body.len());
    out.extend_from_slice(&MAGIC);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&frame.round.to_le_bytes());
    out.extend_from_slice(&(frame.body.len() as u64).to_le_bytes());
    out.extend_from_slice(&frame.body);
    out
}

struct Header {
    msg_type: MsgType,
    round: u32,
    body_len: usize,
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<Header, FrameError> {
    let magic: [u8; 4] = h[..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let msg_type = MsgType::try_from(h[4])?;
    let round = u32::from_le_bytes(h[5..9].try_into().expect("four bytes"));
    let body_len = u64::from_le_bytes(h[9..17].try_into().expect("eight bytes"));
    if body_len > MAX_BODY {
        return Err(FrameError::Oversize(body_len));
    }
    Ok(Header { msg_type, round, body_len: body_len as usize })
}

/// Decodes exactly one frame occupying the whole buffer.
pub fn frame_decode(bytes: &[u8]) -> Result<Frame, FrameError> {
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(FrameError::Truncated { need: HEADER_LEN, have: bytes.len() })?;
    let h = parse_header(header)?;
    let need = HEADER_LEN + h.body_len;
    if bytes.len() < need {
        return Err(FrameError::Truncated { need, have: bytes.len() });
    }
    if bytes.len() > need {
        return Err(FrameError::Trailing(bytes.len() - need));
    }
    Ok(Frame { msg_type: h.msg_type, round: h.round, body: bytes[HEADER_LEN..].to_vec() })
}

/// Reads one frame from a stream. A clean end of stream before the first
/// header byte is reported as [`FrameError::Closed`].
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Truncated { need: HEADER_LEN, have: got }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = parse_header(&header)?;
    let mut body = vec![0u8; h.body_len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated { need: HEADER_LEN + h.body_len, have: HEADER_LEN },
        _ => FrameError::Io(e),
    })?;
    Ok(Frame { msg_type: h.msg_type, round: h.round, body })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), FrameError> {
    w.write_all(&frame_encode(frame))?;
    w.flush()?;
    Ok(())
}
