//! Two interchangeable carriers for frames: an in-process pair that passes
//! encoded bytes over channels, and TCP.

use std::io::BufReader;
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender};
use std::time::Duration;

use crate::frame::{frame_decode, frame_encode, read_frame, write_frame, Frame, FrameError};

pub trait FrameSink: Send {
    fn send(&mut self, frame: &Frame) -> Result<(), FrameError>;
}

pub trait FrameSource: Send {
    /// Blocks until the next frame, the end of the stream or an error.
    fn recv(&mut self) -> Result<Frame, FrameError>;
}

/// Both halves of one ordered, reliable connection.
pub struct Link {
    pub sink: Box<dyn FrameSink>,
    pub source: Box<dyn FrameSource>,
}

impl Link {
    pub fn send(&mut self, frame: &Frame) -> Result<(), FrameError> {
        self.sink.send(frame)
    }

    pub fn recv(&mut self) -> Result<Frame, FrameError> {
        self.source.recv()
    }
}

struct SimSink(Sender<Vec<u8>>);
struct SimSource(Receiver<Vec<u8>>);

impl FrameSink for SimSink {
    fn send(&mut self, frame: &Frame) -> Result<(), FrameError> {
        self.0.send(frame_encode(frame)).map_err(|_| FrameError::Closed)
    }
}

impl FrameSource for SimSource {
    fn recv(&mut self) -> Result<Frame, FrameError> {
        let bytes = self.0.recv().map_err(|_| FrameError::Closed)?;
        frame_decode(&bytes)
    }
}

/// Two connected in-process endpoints. Frames cross as encoded bytes so the
/// codec is exercised exactly as it is over TCP.
pub fn sim_pair() -> (Link, Link) {
    let (a_tx, a_rx) = mpsc::channel();
    let (b_tx, b_rx) = mpsc::channel();
    (
        Link { sink: Box::new(SimSink(a_tx)), source: Box::new(SimSource(b_rx)) },
        Link { sink: Box::new(SimSink(b_tx)), source: Box::new(SimSource(a_rx)) },
    )
}

struct TcpSink(TcpStream);
struct TcpSource(BufReader<TcpStream>);

impl FrameSink for TcpSink {
    fn send(&mut self, frame: &Frame) -> Result<(), FrameError> {
        write_frame(&mut self.0, frame)
    }
}

impl Drop for TcpSink {
    fn drop(&mut self) {
        let _ = self.0.shutdown(Shutdown::Write);
    }
}

impl FrameSource for TcpSource {
    fn recv(&mut self) -> Result<Frame, FrameError> {
        read_frame(&mut self.0)
    }
}

/// Wraps a connected stream. `idle_timeout` bounds how long a read may block.
pub fn tcp_link(stream: TcpStream, idle_timeout: Option<Duration>) -> Result<Link, FrameError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(idle_timeout)?;
    let reader = stream.try_clone()?;
    Ok(Link { sink: Box::new(TcpSink(stream)), source: Box::new(TcpSource(BufReader::new(reader))) })
}
