use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{deliver, wire, Connection, Counters, MessageLog, TransportError};
use crate::protocol::Message;

/// Envelopes larger than this are treated as corrupt rather than allocated.
const MAX_PAYLOAD: u32 = 1 << 30;

/// A socket connection. A background reader frames whole envelopes off the
/// stream; `recv` decodes them in order.
pub struct TcpConnection {
    id: u32,
    writer: Mutex<TcpStream>,
    rx: Receiver<Result<Vec<u8>, TransportError>>,
    counters: Arc<Counters>,
    log: Option<Arc<MessageLog>>,
}

/// Listening side: hands out one [`TcpConnection`] per accepted peer.
pub struct TcpHub {
    listener: TcpListener,
}

impl TcpHub {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Ok(Self { listener: TcpListener::bind(addr)? })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn accept(&self, local_id: u32, log: Option<Arc<MessageLog>>) -> Result<TcpConnection, TransportError> {
        let (stream, _) = self.listener.accept()?;
        TcpConnection::from_stream(stream, local_id, log)
    }
}

impl TcpConnection {
    pub fn connect(
        addr: impl ToSocketAddrs,
        local_id: u32,
        log: Option<Arc<MessageLog>>,
    ) -> Result<Self, TransportError> {
        Self::from_stream(TcpStream::connect(addr)?, local_id, log)
    }

    pub fn from_stream(stream: TcpStream, local_id: u32, log: Option<Arc<MessageLog>>) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || read_frames(reader, tx));
        Ok(Self { id: local_id, writer: Mutex::new(stream), rx, counters: Arc::default(), log })
    }
}

/// Reads exactly `buf.len()` bytes. `Ok(false)` means a clean EOF before the
/// first byte.
fn read_full(stream: &mut TcpStream, buf: &mut [u8], offset: usize) -> Result<bool, TransportError> {
    let mut got = 0;
    while got < buf.len() {
        match stream.read(&mut buf[got..]) {
            Ok(0) if got == 0 && offset == 0 => return Ok(false),
            Ok(0) => {
                return Err(TransportError::Decode {
                    offset: offset + got,
                    reason: "stream ended inside an envelope".into(),
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(_) if got == 0 && offset == 0 => return Ok(false),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

fn read_frames(mut stream: TcpStream, tx: Sender<Result<Vec<u8>, TransportError>>) {
    loop {
        let mut header = [0u8; wire::HEADER_LEN];
        let frame = match read_full(&mut stream, &mut header, 0) {
            Ok(false) => Err(TransportError::ConnectionClosed),
            Err(e) => Err(e),
            Ok(true) => wire::decode_header(&header).and_then(|h| {
                if h.payload_len > MAX_PAYLOAD {
                    return Err(TransportError::Decode {
                        offset: 14,
                        reason: format!("payload_len {} exceeds limit", h.payload_len),
                    });
                }
                let mut bytes = header.to_vec();
                bytes.resize(wire::HEADER_LEN + h.payload_len as usize, 0);
                read_full(&mut stream, &mut bytes[wire::HEADER_LEN..], wire::HEADER_LEN)?;
                Ok(bytes)
            }),
        };
        let stop = frame.is_err();
        if tx.send(frame).is_err() || stop {
            return;
        }
    }
}

impl Connection for TcpConnection {
    fn local_id(&self) -> u32 {
        self.id
    }

    fn send(&self, msg: &Message) -> Result<(), TransportError> {
        let bytes = wire::encode(msg, self.id);
        self.writer.lock().unwrap().write_all(&bytes).map_err(|e| match e.kind() {
            ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted => {
                TransportError::ConnectionClosed
            }
            _ => e.into(),
        })?;
        self.counters.on_send(bytes.len());
        if let Some(log) = &self.log {
            log.push(self.id, msg);
        }
        Ok(())
    }

    fn recv(&self, timeout: Option<Duration>) -> Result<Message, TransportError> {
        let frame = match timeout {
            None => self.rx.recv().map_err(|_| TransportError::ConnectionClosed)?,
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout,
                RecvTimeoutError::Disconnected => TransportError::ConnectionClosed,
            })?,
        };
        deliver(&frame?, &self.counters)
    }

    fn counters(&self) -> Arc<Counters> {
        self.counters.clone()
    }
}

impl Drop for TcpConnection {
    fn drop(&mut self) {
        if let Ok(w) = self.writer.lock() {
            let _ = w.shutdown(Shutdown::Both);
        }
    }
}
