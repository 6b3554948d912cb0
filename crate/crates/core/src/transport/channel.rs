use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use super::{deliver, wire, Connection, Counters, MessageLog, TransportError};
use crate::protocol::Message;

/// One end of an in-process pipe carrying encoded envelopes.
pub struct ChannelConnection {
    id: u32,
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    counters: Arc<Counters>,
    log: Option<Arc<MessageLog>>,
}

/// Two connected endpoints with ids `a` and `b`.
pub fn channel_pair(a: u32, b: u32, log: Option<Arc<MessageLog>>) -> (ChannelConnection, ChannelConnection) {
    let (tx_ab, rx_ab) = mpsc::channel();
    let (tx_ba, rx_ba) = mpsc::channel();
    let end = |id, tx, rx| ChannelConnection { id, tx, rx, counters: Arc::default(), log: log.clone() };
    (end(a, tx_ab, rx_ba), end(b, tx_ba, rx_ab))
}

impl Connection for ChannelConnection {
    fn local_id(&self) -> u32 {
        self.id
    }

    fn send(&self, msg: &Message) -> Result<(), TransportError> {
        let bytes = wire::encode(msg, self.id);
        let len = bytes.len();
        self.tx.send(bytes).map_err(|_| TransportError::ConnectionClosed)?;
        self.counters.on_send(len);
        if let Some(log) = &self.log {
            log.push(self.id, msg);
        }
        Ok(())
    }

    fn recv(&self, timeout: Option<Duration>) -> Result<Message, TransportError> {
        let bytes = match timeout {
            None => self.rx.recv().map_err(|_| TransportError::ConnectionClosed)?,
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout,
                RecvTimeoutError::Disconnected => TransportError::ConnectionClosed,
            })?,
        };
        deliver(&bytes, &self.counters)
    }

    fn counters(&self) -> Arc<Counters> {
        self.counters.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_deadline_times_out() {
        let (a, _b) = channel_pair(0, 1, None);
        assert_eq!(a.recv(Some(Duration::ZERO)).unwrap_err(), TransportError::Timeout);
    }

    #[test]
    fn in_order_and_counted() {
        let log = MessageLog::new();
        let (a, b) = channel_pair(0, 1, Some(log.clone()));
        for r in 0..5 {
            a.send(&Message::TrainRequest { round: r }).unwrap();
        }
        b.send(&Message::Shutdown).unwrap();
        for r in 0..5 {
            assert_eq!(b.recv(None).unwrap(), Message::TrainRequest { round: r });
        }
        assert_eq!(a.recv(None).unwrap(), Message::Shutdown);
        let (sa, sb) = (a.counters().snapshot(), b.counters().snapshot());
        assert_eq!(sa.bytes_sent, 5 * 22);
        assert_eq!(sa.bytes_sent, sb.bytes_received);
        assert_eq!(sb.bytes_sent, sa.bytes_received);
        assert_eq!(log.offline_bytes(), sa.bytes_sent + sb.bytes_sent);
    }

    #[test]
    fn dropped_peer_closes() {
        let (a, b) = channel_pair(0, 1, None);
        drop(b);
        assert_eq!(a.recv(None).unwrap_err(), TransportError::ConnectionClosed);
        assert_eq!(a.send(&Message::Shutdown).unwrap_err(), TransportError::ConnectionClosed);
    }
}
