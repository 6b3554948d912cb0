//! Wire format plus two interchangeable connection types: in-process channels
//! and TCP sockets. Both carry the same encoded envelopes, so byte counters
//! agree across transports.

mod channel;
mod tcp;
pub mod wire;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::protocol::Message;

pub use channel::{channel_pair, ChannelConnection};
pub use tcp::{TcpConnection, TcpHub};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("malformed envelope at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },
    #[error("unsupported wire version {found}")]
    Version { found: u8 },
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("connection closed")]
    ConnectionClosed,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Monotone per-endpoint counters; every value is whole envelopes
/// (header + payload).
#[derive(Debug, Default)]
pub struct Counters {
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
    msgs_sent: AtomicU64,
    msgs_received: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub msgs_sent: u64,
    pub msgs_received: u64,
}

impl CounterSnapshot {
    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
            msgs_sent: self.msgs_sent - earlier.msgs_sent,
            msgs_received: self.msgs_received - earlier.msgs_received,
        }
    }
}

impl Counters {
    pub(crate) fn on_send(&self, bytes: usize) {
        self.bytes_sent.fetch_add(bytes as u64, Ordering::Relaxed);
        self.msgs_sent.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn on_recv(&self, bytes: usize) {
        self.bytes_received.fetch_add(bytes as u64, Ordering::Relaxed);
        self.msgs_received.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            bytes_sent: self.bytes_sent.load(Ordering::Relaxed),
            bytes_received: self.bytes_received.load(Ordering::Relaxed),
            msgs_sent: self.msgs_sent.load(Ordering::Relaxed),
            msgs_received: self.msgs_received.load(Ordering::Relaxed),
        }
    }
}

/// Every message handed to `send`, in send order per endpoint.
#[derive(Debug, Default)]
pub struct MessageLog {
    entries: Mutex<Vec<(u32, Message)>>,
}

impl MessageLog {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub(crate) fn push(&self, sender: u32, msg: &Message) {
        self.entries.lock().unwrap().push((sender, msg.clone()));
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<(u32, Message)> {
        self.entries.lock().unwrap().clone()
    }

    /// Re-serializes every logged message and sums the envelope sizes.
    pub fn offline_bytes(&self) -> u64 {
        self.entries.lock().unwrap().iter().map(|(s, m)| wire::encode(m, *s).len() as u64).sum()
    }
}

/// A bidirectional, ordered, exactly-once message pipe.
pub trait Connection: Send {
    /// Id written into the envelope `sender` field.
    fn local_id(&self) -> u32;
    fn send(&self, msg: &Message) -> Result<(), TransportError>;
    /// Waits up to `timeout` (forever when `None`).
    fn recv(&self, timeout: Option<Duration>) -> Result<Message, TransportError>;
    fn counters(&self) -> Arc<Counters>;
}

/// Shared bookkeeping for a decoded, delivered envelope.
fn deliver(bytes: &[u8], counters: &Counters) -> Result<Message, TransportError> {
    let (_, msg) = wire::decode(bytes)?;
    counters.on_recv(bytes.len());
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{FeatureRows, ParamPayload};
    use crate::secure::{encryption_rng, he_keygen, FixedPointCodec};
    use proptest::prelude::*;

    fn arb_rows() -> impl Strategy<Value = FeatureRows> {
        (0u32..6, prop::collection::vec(-1e6f32..1e6, 0..24))
            .prop_map(|(dim, values)| FeatureRows::Plain { dim, values })
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<u32>(), any::<u32>(), any::<u32>())
                .prop_map(|(trainer_id, n_local, n_train)| Message::Register { trainer_id, n_local, n_train }),
            (any::<u64>(), any::<u32>(), any::<u32>()).prop_map(|(seed, d, k)| Message::Projection { seed, d, k }),
            any::<u8>().prop_map(|hop| Message::PretrainRequest { hop }),
            (
                any::<u32>(),
                any::<u8>(),
                any::<bool>(),
                prop::collection::vec(any::<u32>(), 0..8),
                prop::collection::vec(any::<u32>(), 0..8),
                arb_rows()
            )
                .prop_map(|(trainer_id, hop, projected, request, nodes, rows)| {
                    Message::FeatureContribution { trainer_id, hop, projected, request, nodes, rows }
                }),
            (any::<u8>(), prop::collection::vec(any::<u32>(), 0..8), arb_rows())
                .prop_map(|(hop, nodes, rows)| Message::AggregatedFeatures { hop, nodes, rows }),
            (any::<u32>(), prop::collection::vec(any::<f32>().prop_filter("nan", |x| !x.is_nan()), 0..64))
                .prop_map(|(round, params)| Message::ModelBroadcast { round, params }),
            any::<u32>().prop_map(|round| Message::TrainRequest { round }),
            (
                any::<u32>(),
                any::<u32>(),
                any::<u32>(),
                any::<bool>(),
                0.0f64..1e6,
                any::<u64>(),
                any::<u64>(),
                prop::collection::vec(-1e3f32..1e3, 0..64)
            )
                .prop_map(|(round, trainer_id, n_train, delta, train_ms, bytes_sent, bytes_received, p)| {
                    Message::LocalUpdate {
                        round,
                        trainer_id,
                        n_train,
                        delta,
                        train_ms,
                        bytes_sent,
                        bytes_received,
                        params: ParamPayload::Plain(p),
                    }
                }),
            (any::<u32>(), any::<u32>(), any::<u32>(), any::<u32>())
                .prop_map(|(round, trainer_id, correct, total)| Message::EvalReport { round, trainer_id, correct, total }),
            Just(Message::Shutdown),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn roundtrip(msg in arb_message(), sender in any::<u32>()) {
            let bytes = wire::encode(&msg, sender);
            let (h, back) = wire::decode(&bytes).unwrap();
            prop_assert_eq!(h.sender, sender);
            prop_assert_eq!(h.payload_len as usize, bytes.len() - wire::HEADER_LEN);
            prop_assert_eq!(back, msg);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = wire::decode(&bytes);
        }
    }

    #[test]
    fn ciphertext_messages_roundtrip() {
        let key = he_keygen(512, 11).unwrap();
        let mut rng = encryption_rng(3);
        let ct = key.encrypt_vector(&FixedPointCodec::default(), &[0.25, -7.5, 3.0, 1e-3], &mut rng).unwrap();
        let msgs = [
            Message::EncryptedModel { round: 4, weight_total: 90, params: ct.clone() },
            Message::LocalUpdate {
                round: 1,
                trainer_id: 2,
                n_train: 30,
                delta: false,
                train_ms: 1.5,
                bytes_sent: 10,
                bytes_received: 20,
                params: ParamPayload::Cipher(ct.clone()),
            },
            Message::AggregatedFeatures { hop: 1, nodes: vec![3, 4], rows: FeatureRows::Cipher { dim: 2, values: ct } },
        ];
        for m in msgs {
            assert_eq!(wire::decode(&wire::encode(&m, 0)).unwrap().1, m);
        }
    }
}
