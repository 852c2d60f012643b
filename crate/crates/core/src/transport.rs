//! Byte transports carrying protocol frames.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer disconnected")]
    Disconnected,
    #[error("reconnect is not supported by this transport")]
    ReconnectUnsupported,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reliable, ordered byte pipe. Frame boundaries are not preserved; readers
/// run received chunks through a [`crate::protocol::StreamDecoder`].
pub trait Transport {
    fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError>;

    /// Wait up to `timeout` for the next chunk. `Ok(None)` means nothing
    /// arrived in time.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, TransportError>;

    fn reconnect(&mut self) -> Result<(), TransportError> {
        Err(TransportError::ReconnectUnsupported)
    }
}

/// In-process transport over a pair of channels.
#[derive(Debug)]
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl ChannelTransport {
    /// Two connected endpoints.
    pub fn pair() -> (ChannelTransport, ChannelTransport) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            ChannelTransport { tx: a_tx, rx: a_rx },
            ChannelTransport { tx: b_tx, rx: b_rx },
        )
    }

    pub fn from_parts(tx: Sender<Vec<u8>>, rx: Receiver<Vec<u8>>) -> Self {
        Self { tx, rx }
    }
}

impl Transport for ChannelTransport {
    fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.tx
            .send(bytes.to_vec())
            .map_err(|_| TransportError::Disconnected)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, TransportError> {
        if timeout.is_zero() {
            return match self.rx.try_recv() {
                Ok(b) => Ok(Some(b)),
                Err(TryRecvError::Empty) => Ok(None),
                Err(TryRecvError::Disconnected) => Err(TransportError::Disconnected),
            };
        }
        match self.rx.recv_timeout(timeout) {
            Ok(b) => Ok(Some(b)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected),
        }
    }
}

/// Stream-socket transport that can re-dial its peer.
#[derive(Debug)]
pub struct TcpTransport {
    addr: SocketAddr,
    stream: Option<TcpStream>,
    buf: Vec<u8>,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(ErrorKind::InvalidInput, "no address"))?;
        let mut t = TcpTransport {
            addr,
            stream: None,
            buf: vec![0; 4096],
        };
        t.reconnect()?;
        Ok(t)
    }

    /// Wrap an accepted connection.
    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        let addr = stream.peer_addr()?;
        stream.set_nodelay(true)?;
        Ok(TcpTransport {
            addr,
            stream: Some(stream),
            buf: vec![0; 4096],
        })
    }

    pub fn peer(&self) -> SocketAddr {
        self.addr
    }

    fn stream(&mut self) -> Result<&mut TcpStream, TransportError> {
        self.stream.as_mut().ok_or(TransportError::Disconnected)
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        let res = self.stream()?.write_all(bytes);
        res.map_err(|e| {
            self.stream = None;
            match e.kind() {
                ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted => {
                    TransportError::Disconnected
                }
                _ => TransportError::Io(e),
            }
        })
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, TransportError> {
        let timeout = timeout.max(Duration::from_micros(1));
        let stream = self.stream.as_mut().ok_or(TransportError::Disconnected)?;
        stream.set_read_timeout(Some(timeout))?;
        match stream.read(&mut self.buf) {
            Ok(0) => {
                self.stream = None;
                Err(TransportError::Disconnected)
            }
            Ok(n) => Ok(Some(self.buf[..n].to_vec())),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => {
                self.stream = None;
                Err(TransportError::Io(e))
            }
        }
    }

    fn reconnect(&mut self) -> Result<(), TransportError> {
        let stream = TcpStream::connect_timeout(&self.addr, Duration::from_secs(2))?;
        stream.set_nodelay(true)?;
        self.stream = Some(stream);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn channel_pair_is_bidirectional() {
        let (mut a, mut b) = ChannelTransport::pair();
        a.send(b"ping").unwrap();
        assert_eq!(b.recv(Duration::ZERO).unwrap().unwrap(), b"ping");
        assert!(b.recv(Duration::from_millis(1)).unwrap().is_none());
        drop(a);
        assert!(matches!(b.recv(Duration::ZERO), Err(TransportError::Disconnected)));
        assert!(matches!(b.reconnect(), Err(TransportError::ReconnectUnsupported)));
    }

    #[test]
    fn tcp_round_trip_and_close() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let mut client = TcpTransport::connect(addr).unwrap();
        let (server_stream, _) = listener.accept().unwrap();
        let mut server = TcpTransport::from_stream(server_stream).unwrap();
        client.send(b"hello").unwrap();
        let got = server.recv(Duration::from_secs(1)).unwrap().unwrap();
        assert_eq!(got, b"hello");
        drop(server);
        let mut saw_disconnect = false;
        for _ in 0..10 {
            match client.recv(Duration::from_millis(50)) {
                Err(TransportError::Disconnected) => {
                    saw_disconnect = true;
                    break;
                }
                Err(_) => break,
                Ok(_) => {}
            }
        }
        assert!(saw_disconnect);
    }
}
