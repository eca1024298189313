//! Stream transport: one TCP connection per directed link.
//!
//! Each frame goes on the stream behind a 4-byte big-endian length. TCP already
//! delivers reliably and in order, so there is no application-level ack.
//! Reader threads only decode and enqueue; domain logic runs elsewhere.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::{self, JoinHandle};

use super::{decode, encode, DecodeError, Envelope};

/// Frames larger than this are treated as corrupt streams.
pub const MAX_FRAME: usize = 64 << 20;

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> io::Result<()> {
    let bytes = encode(env).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(&(bytes.len() as u32).to_be_bytes())?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Reads one framed envelope. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Result<Envelope, DecodeError>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(Some(decode(&buf)))
}

/// Sending end of a directed link.
pub struct SocketSender {
    stream: TcpStream,
    pub bytes_sent: u64,
}

impl SocketSender {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, bytes_sent: 0 })
    }

    pub fn send(&mut self, env: &Envelope) -> io::Result<()> {
        write_frame(&mut self.stream, env)?;
        self.bytes_sent += env.wire_len() as u64;
        Ok(())
    }
}

/// Something received on an inbound link.
#[derive(Debug)]
pub enum Inbound {
    Frame(SocketAddr, Envelope),
    /// Undecodable frame; counted and dropped by the consumer.
    Malformed(SocketAddr, DecodeError),
    Closed(SocketAddr),
}

/// Accepts inbound links and funnels their frames into one queue.
pub struct SocketListener {
    addr: SocketAddr,
    rx: Receiver<Inbound>,
    _accept: JoinHandle<()>,
}

impl SocketListener {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let tx = tx.clone();
                thread::spawn(move || pump(stream, tx));
            }
        });
        Ok(Self { addr, rx, _accept: accept })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn queue(&self) -> &Receiver<Inbound> {
        &self.rx
    }
}

fn pump(mut stream: TcpStream, tx: Sender<Inbound>) {
    let Ok(peer) = stream.peer_addr() else { return };
    loop {
        let item = match read_frame(&mut stream) {
            Ok(Some(Ok(env))) => Inbound::Frame(peer, env),
            Ok(Some(Err(e))) => Inbound::Malformed(peer, e),
            Ok(None) | Err(_) => {
                let _ = tx.send(Inbound::Closed(peer));
                return;
            }
        };
        if tx.send(item).is_err() {
            return;
        }
    }
}
