//! TCP pub/sub for distributed runs.
//!
//! Each message is two length-prefixed frames: the UTF-8 topic, then the
//! payload. A length prefix is a little-endian `u32`. Subscribers filter by
//! topic on their side and only receive messages sent after they connected.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use parking_lot::Mutex;

use crate::{Error, Result};

/// Refuse frames above this size when reading.
pub const MAX_FRAME_LEN: usize = 64 << 20;

pub fn write_message<W: Write>(w: &mut W, topic: &str, payload: &[u8]) -> io::Result<()> {
    for frame in [topic.as_bytes(), payload] {
        let len = u32::try_from(frame.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(frame)?;
    }
    w.flush()
}

fn read_frame<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes"),
        ));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads one message. `Ok(None)` on a clean end of stream.
pub fn read_message<R: Read>(r: &mut R) -> io::Result<Option<(String, Vec<u8>)>> {
    let topic = match read_frame(r) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    };
    let topic = String::from_utf8(topic)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "topic is not UTF-8"))?;
    let payload = read_frame(r)?;
    Ok(Some((topic, payload)))
}

type Clients = Arc<Mutex<Vec<BufWriter<TcpStream>>>>;

pub struct TcpPublisher {
    addr: SocketAddr,
    clients: Clients,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpPublisher {
    /// Binds and starts accepting subscribers. Use port 0 for an ephemeral
    /// port and read it back with [`TcpPublisher::local_addr`].
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener =
            TcpListener::bind(addr).map_err(|e| Error::Pipeline(format!("bind: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Pipeline(e.to_string()))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::Pipeline(e.to_string()))?;
        let clients: Clients = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let clients = Arc::clone(&clients);
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((s, _)) => {
                            let _ = s.set_nodelay(true);
                            let _ = s.set_nonblocking(false);
                            clients.lock().push(BufWriter::new(s));
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                            thread::sleep(Duration::from_millis(2));
                        }
                        Err(_) => break,
                    }
                }
            })
        };
        Ok(Self {
            addr,
            clients,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn subscriber_count(&self) -> usize {
        self.clients.lock().len()
    }

    /// Sends to every connected subscriber; ones that fail are dropped.
    /// Returns how many received the message.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<usize> {
        if self.stop.load(Ordering::SeqCst) {
            return Err(Error::Closed);
        }
        let mut clients = self.clients.lock();
        clients.retain_mut(|c| write_message(c, topic, payload).is_ok());
        Ok(clients.len())
    }

    pub fn close(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        for c in self.clients.lock().drain(..) {
            let _ = c.get_ref().shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for TcpPublisher {
    fn drop(&mut self) {
        self.close();
    }
}

pub struct TcpSubscriber {
    reader: BufReader<TcpStream>,
    topics: Vec<String>,
}

impl TcpSubscriber {
    /// Connects and keeps messages whose topic is in `topics` (all topics
    /// when empty).
    pub fn connect(addr: impl ToSocketAddrs, topics: &[&str]) -> Result<Self> {
        let stream =
            TcpStream::connect(addr).map_err(|e| Error::Pipeline(format!("connect: {e}")))?;
        Ok(Self {
            reader: BufReader::new(stream),
            topics: topics.iter().map(|t| (*t).to_owned()).collect(),
        })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<()> {
        self.reader
            .get_ref()
            .set_read_timeout(timeout)
            .map_err(|e| Error::Pipeline(e.to_string()))
    }

    /// Next matching message; [`Error::Closed`] once the publisher is gone.
    pub fn recv(&mut self) -> Result<(String, Vec<u8>)> {
        loop {
            match read_message(&mut self.reader) {
                Ok(Some((topic, payload))) => {
                    if self.topics.is_empty() || self.topics.contains(&topic) {
                        return Ok((topic, payload));
                    }
                }
                Ok(None) => return Err(Error::Closed),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(Error::Timeout(0))
                }
                Err(e) => return Err(Error::Codec(e.to_string())),
            }
        }
    }
}
