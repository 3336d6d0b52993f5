//! Framed one-shot distribution of a payload over TCP.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! offset 0  magic   4 bytes  "CKD1" (0x43 0x4B 0x44 0x31)
//! offset 4  version 1 byte   0x01
//! offset 5  count   4 bytes  number of words M
//! offset 9  body    8*M      IEEE-754 bit patterns
//! ```
//!
//! A server writes exactly one frame to every client and closes the connection.

use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::watermark::WatermarkedPayload;

pub const MAGIC: [u8; 4] = *b"CKD1";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 9;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub fn serialize(payload: &WatermarkedPayload) -> Result<Vec<u8>> {
    let count = u32::try_from(payload.len())
        .map_err(|_| Error::contract(format!("payload of {} words does not fit a frame", payload.len())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&count.to_be_bytes());
    for w in payload.words() {
        out.extend_from_slice(&w.to_be_bytes());
    }
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<WatermarkedPayload> {
    if bytes.len() < 4 {
        return Err(Error::parse("magic", 0, "truncated magic"));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::parse("magic", 0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    let version = *bytes.get(4).ok_or_else(|| Error::parse("version", 4, "truncated version"))?;
    if version != VERSION {
        return Err(Error::parse("version", 4, format!("unsupported version {version:#04x}")));
    }
    let count_bytes: [u8; 4] = bytes
        .get(5..9)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::parse("count", 5, "truncated count"))?;
    let count = u32::from_be_bytes(count_bytes) as usize;
    let body = &bytes[HEADER_LEN..];
    let need = count
        .checked_mul(8)
        .ok_or_else(|| Error::parse("count", 5, "count overflows"))?;
    if body.len() < need {
        return Err(Error::parse(
            "body",
            HEADER_LEN + body.len(),
            format!("truncated body: {need} bytes announced, {} present", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::parse(
            "body",
            HEADER_LEN + need,
            format!("{} trailing bytes after the body", body.len() - need),
        ));
    }
    let words = body
        .chunks_exact(8)
        .map(|c| u64::from_be_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(WatermarkedPayload::from_words(words))
}

/// A running payload server. Dropping the handle does not stop it; call [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves `payload` on a background thread, one thread per client.
pub fn spawn_server(addr: impl ToSocketAddrs, payload: &WatermarkedPayload) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let frame: Arc<[u8]> = serialize(payload)?.into();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let thread = thread::spawn(move || accept_loop(listener, frame, &flag, None));
    Ok(ServerHandle {
        addr: local,
        stop,
        thread: Some(thread),
    })
}

/// Serves `payload` on the calling thread. Returns after `max_clients` connections, or never.
pub fn serve(addr: impl ToSocketAddrs, payload: &WatermarkedPayload, max_clients: Option<usize>) -> Result<()> {
    let listener = TcpListener::bind(addr)?;
    let frame: Arc<[u8]> = serialize(payload)?.into();
    accept_loop(listener, frame, &AtomicBool::new(false), max_clients);
    Ok(())
}

fn accept_loop(listener: TcpListener, frame: Arc<[u8]>, stop: &AtomicBool, max_clients: Option<usize>) {
    let mut workers = Vec::new();
    let mut served = 0usize;
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let frame = Arc::clone(&frame);
        workers.push(thread::spawn(move || {
            let _ = send_frame(stream, &frame);
        }));
        served += 1;
        if max_clients.is_some_and(|m| served >= m) {
            break;
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn send_frame(mut stream: TcpStream, frame: &[u8]) -> std::io::Result<()> {
    stream.set_write_timeout(Some(DEFAULT_TIMEOUT))?;
    stream.write_all(frame)?;
    stream.flush()?;
    stream.shutdown(Shutdown::Write)
}

pub fn fetch(addr: impl ToSocketAddrs) -> Result<WatermarkedPayload> {
    fetch_with_timeout(addr, DEFAULT_TIMEOUT)
}

/// Connects, reads one frame until the server closes, and parses it.
pub fn fetch_with_timeout(addr: impl ToSocketAddrs, timeout: Duration) -> Result<WatermarkedPayload> {
    let mut last_err = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(mut stream) => {
                stream.set_read_timeout(Some(timeout))?;
                let mut bytes = Vec::new();
                match stream.read_to_end(&mut bytes) {
                    Ok(_) => return deserialize(&bytes),
                    Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {
                        return Err(Error::Io(std::io::Error::new(
                            ErrorKind::TimedOut,
                            format!("no complete frame from {a} within {timeout:?}"),
                        )))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err
        .unwrap_or_else(|| std::io::Error::new(ErrorKind::InvalidInput, "address resolved to nothing"))
        .into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WatermarkedPayload {
        WatermarkedPayload::from_words(vec![0x3FE0_0000_0000_0000, 0xC01F_FFFF_FFFF_FFFF, 7])
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = serialize(&sample()).unwrap();
        assert_eq!(&bytes[..9], &[0x43, 0x4B, 0x44, 0x31, 0x01, 0, 0, 0, 3]);
        assert_eq!(&bytes[9..17], &[0x3F, 0xE0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes.len(), 9 + 24);
        assert_eq!(deserialize(&bytes).unwrap(), sample());
    }

    #[test]
    fn empty_input_names_magic() {
        let err = deserialize(&[]).unwrap_err();
        assert!(matches!(err, Error::Parse { field: "magic", offset: 0, .. }));
        assert!(err.to_string().contains("truncated magic"));
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = serialize(&sample()).unwrap();
        bytes[4] = 0x02;
        let err = deserialize(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { field: "version", offset: 4, .. }));
        assert!(err.to_string().contains("unsupported version"));
    }

    #[test]
    fn rejects_bad_magic_and_short_frames() {
        let bytes = serialize(&sample()).unwrap();
        assert!(matches!(deserialize(b"XKD1\x01"), Err(Error::Parse { field: "magic", .. })));
        assert!(matches!(deserialize(&bytes[..4]), Err(Error::Parse { field: "version", .. })));
        assert!(matches!(deserialize(&bytes[..7]), Err(Error::Parse { field: "count", offset: 5, .. })));
        assert!(matches!(
            deserialize(&bytes[..20]),
            Err(Error::Parse { field: "body", offset: 20, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(deserialize(&long), Err(Error::Parse { field: "body", .. })));
    }

    #[test]
    fn empty_payload_round_trips() {
        let p = WatermarkedPayload::from_words(vec![]);
        assert_eq!(deserialize(&serialize(&p).unwrap()).unwrap(), p);
    }
}
