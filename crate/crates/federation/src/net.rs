//! TCP endpoints for the networked roles.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use crate::channel::{tcp_link, Link};
use crate::FedError;

/// Accepted connections until `deadline`; after that a single timeout error.
/// Reads on accepted links block for at most `idle`.
pub fn tcp_incoming(
    listener: &TcpListener,
    deadline: Instant,
    idle: Duration,
) -> impl Iterator<Item = Result<Link, FedError>> + '_ {
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        if let Err(e) = listener.set_nonblocking(true) {
            done = true;
            return Some(Err(e.into()));
        }
        loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    let link = stream
                        .set_nonblocking(false)
                        .map_err(FedError::from)
                        .and_then(|_| tcp_link(stream, Some(idle)).map_err(FedError::from));
                    return Some(link);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        done = true;
                        return Some(Err(FedError::Timeout("waiting for clients to join".into())));
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                Err(e) => {
                    done = true;
                    return Some(Err(e.into()));
                }
            }
        }
    })
}

/// Connects, retrying refused connections until `retry_for` has passed so
/// clients may start before the server.
pub fn tcp_connect<A: ToSocketAddrs>(addr: A, retry_for: Duration) -> Result<Link, FedError> {
    let deadline = Instant::now() + retry_for;
    loop {
        match TcpStream::connect(&addr) {
            Ok(stream) => return Ok(tcp_link(stream, None)?),
            Err(e) if Instant::now() < deadline && matches!(e.kind(), ErrorKind::ConnectionRefused | ErrorKind::ConnectionReset) => {
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e.into()),
        }
    }
}
