//! Byte-exact envelope and message encoding, version 1.
//!
//! Envelope (little-endian): magic `FGW1`, u8 version, u8 message type,
//! u32 round, u32 sender, u32 payload length, then the payload.

use num_bigint::BigUint;

use super::TransportError;
use crate::protocol::{FeatureRows, Message, MessageType, ParamPayload};
use crate::secure::{CiphertextVector, FixedPointCodec};

pub const MAGIC: [u8; 4] = *b"FGW1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;

const ROWS_PLAIN: u8 = 0;
const ROWS_CIPHER: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub msg_type: MessageType,
    pub round: u32,
    pub sender: u32,
    pub payload_len: u32,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("wire arrays are limited to u32::MAX elements"));
    }
    fn u32s(&mut self, v: &[u32]) {
        self.len(v.len());
        for &x in v {
            self.u32(x);
        }
    }
    fn f32s(&mut self, v: &[f32]) {
        self.len(v.len());
        for &x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn ciphertext(&mut self, ct: &CiphertextVector) {
        self.len(ct.len());
        self.u8(ct.codec.frac_bits);
        self.u64(ct.codec.max_summands);
        self.i64(ct.codec.clamp);
        self.len(ct.width);
        for e in &ct.elements {
            let bytes = e.to_bytes_be();
            assert!(bytes.len() <= ct.width, "ciphertext element wider than its declared width");
            self.0.resize(self.0.len() + ct.width - bytes.len(), 0);
            self.0.extend_from_slice(&bytes);
        }
    }
    fn rows(&mut self, rows: &FeatureRows) {
        match rows {
            FeatureRows::Plain { dim, values } => {
                self.u8(ROWS_PLAIN);
                self.u32(*dim);
                self.f32s(values);
            }
            FeatureRows::Cipher { dim, values } => {
                self.u8(ROWS_CIPHER);
                self.u32(*dim);
                self.ciphertext(values);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf[0]` within the whole envelope, for diagnostics.
    base: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> TransportError {
        TransportError::Decode { offset: self.base + self.pos, reason: reason.into() }
    }
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TransportError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8, TransportError> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32, TransportError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64, TransportError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn i64(&mut self, what: &str) -> Result<i64, TransportError> {
        Ok(i64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64, TransportError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn bool(&mut self, what: &str) -> Result<bool, TransportError> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.err(format!("{what}: invalid bool {b}"))),
        }
    }
    /// Element count, checked against the bytes actually left.
    fn count(&mut self, elem_size: usize, what: &str) -> Result<usize, TransportError> {
        let n = self.u32(what)? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(self.err(format!("{what}: {n} elements exceed the remaining payload")));
        }
        Ok(n)
    }
    fn u32s(&mut self, what: &str) -> Result<Vec<u32>, TransportError> {
        let n = self.count(4, what)?;
        let raw = self.take(4 * n, what)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn f32s(&mut self, what: &str) -> Result<Vec<f32>, TransportError> {
        let n = self.count(4, what)?;
        let raw = self.take(4 * n, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn ciphertext(&mut self, what: &str) -> Result<CiphertextVector, TransportError> {
        let n = self.u32(what)? as usize;
        let frac_bits = self.u8(what)?;
        let max_summands = self.u64(what)?;
        let clamp = self.i64(what)?;
        let width = self.u32(what)? as usize;
        if width == 0 {
            return Err(self.err(format!("{what}: zero ciphertext width")));
        }
        if n.saturating_mul(width) > self.buf.len() - self.pos {
            return Err(self.err(format!("{what}: {n} ciphertexts of {width} bytes exceed the payload")));
        }
        let elements = (0..n)
            .map(|_| self.take(width, what).map(BigUint::from_bytes_be))
            .collect::<Result<_, _>>()?;
        Ok(CiphertextVector { codec: FixedPointCodec { frac_bits, clamp, max_summands }, width, elements })
    }
    fn rows(&mut self, what: &str) -> Result<FeatureRows, TransportError> {
        match self.u8(what)? {
            ROWS_PLAIN => Ok(FeatureRows::Plain { dim: self.u32(what)?, values: self.f32s(what)? }),
            ROWS_CIPHER => Ok(FeatureRows::Cipher { dim: self.u32(what)?, values: self.ciphertext(what)? }),
            k => Err(self.err(format!("{what}: unknown row encoding {k}"))),
        }
    }
    fn params(&mut self) -> Result<ParamPayload, TransportError> {
        match self.u8("params kind")? {
            ROWS_PLAIN => Ok(ParamPayload::Plain(self.f32s("params")?)),
            ROWS_CIPHER => Ok(ParamPayload::Cipher(self.ciphertext("params")?)),
            k => Err(self.err(format!("unknown params encoding {k}"))),
        }
    }
    fn finish(&self) -> Result<(), TransportError> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_payload(msg: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match msg {
        Message::Register { trainer_id, n_local, n_train } => {
            w.u32(*trainer_id);
            w.u32(*n_local);
            w.u32(*n_train);
        }
        Message::Projection { seed, d, k } => {
            w.u64(*seed);
            w.u32(*d);
            w.u32(*k);
        }
        Message::PretrainRequest { hop } => w.u8(*hop),
        Message::FeatureContribution { trainer_id, hop, projected, request, nodes, rows } => {
            w.u32(*trainer_id);
            w.u8(*hop);
            w.u8(*projected as u8);
            w.u32s(request);
            w.u32s(nodes);
            w.rows(rows);
        }
        Message::AggregatedFeatures { hop, nodes, rows } => {
            w.u8(*hop);
            w.u32s(nodes);
            w.rows(rows);
        }
        Message::ModelBroadcast { round, params } => {
            w.u32(*round);
            w.f32s(params);
        }
        Message::EncryptedModel { round, weight_total, params } => {
            w.u32(*round);
            w.u64(*weight_total);
            w.ciphertext(params);
        }
        Message::TrainRequest { round } => w.u32(*round),
        Message::LocalUpdate {
            round,
            trainer_id,
            n_train,
            delta,
            train_ms,
            bytes_sent,
            bytes_received,
            params,
        } => {
            w.u32(*round);
            w.u32(*trainer_id);
            w.u32(*n_train);
            w.u8(*delta as u8);
            w.f64(*train_ms);
            w.u64(*bytes_sent);
            w.u64(*bytes_received);
            match params {
                ParamPayload::Plain(v) => {
                    w.u8(ROWS_PLAIN);
                    w.f32s(v);
                }
                ParamPayload::Cipher(c) => {
                    w.u8(ROWS_CIPHER);
                    w.ciphertext(c);
                }
            }
        }
        Message::EvalReport { round, trainer_id, correct, total } => {
            w.u32(*round);
            w.u32(*trainer_id);
            w.u32(*correct);
            w.u32(*total);
        }
        Message::Shutdown => {}
    }
    w.0
}

/// Full envelope for `msg` sent by `sender`.
pub fn encode(msg: &Message, sender: u32) -> Vec<u8> {
    let payload = encode_payload(msg);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.message_type() as u8);
    out.extend_from_slice(&msg.round().to_le_bytes());
    out.extend_from_slice(&sender.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode_header(bytes: &[u8]) -> Result<Header, TransportError> {
    let mut r = Reader { buf: bytes, pos: 0, base: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(TransportError::Decode { offset: 0, reason: "bad magic".into() });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(TransportError::Version { found: version });
    }
    let tag = r.u8("message type")?;
    let msg_type = MessageType::from_tag(tag)
        .ok_or_else(|| TransportError::Decode { offset: 5, reason: format!("unknown message type {tag:#04x}") })?;
    Ok(Header { msg_type, round: r.u32("round")?, sender: r.u32("sender")?, payload_len: r.u32("payload length")? })
}

pub fn decode_payload(header: &Header, payload: &[u8]) -> Result<Message, TransportError> {
    let mut r = Reader { buf: payload, pos: 0, base: HEADER_LEN };
    let msg = match header.msg_type {
        MessageType::Register => Message::Register {
            trainer_id: r.u32("trainer_id")?,
            n_local: r.u32("n_local")?,
            n_train: r.u32("n_train")?,
        },
        MessageType::Projection => Message::Projection { seed: r.u64("seed")?, d: r.u32("d")?, k: r.u32("k")? },
        MessageType::PretrainRequest => Message::PretrainRequest { hop: r.u8("hop")? },
        MessageType::FeatureContribution => Message::FeatureContribution {
            trainer_id: r.u32("trainer_id")?,
            hop: r.u8("hop")?,
            projected: r.bool("projected")?,
            request: r.u32s("request")?,
            nodes: r.u32s("nodes")?,
            rows: r.rows("rows")?,
        },
        MessageType::AggregatedFeatures => {
            Message::AggregatedFeatures { hop: r.u8("hop")?, nodes: r.u32s("nodes")?, rows: r.rows("rows")? }
        }
        MessageType::ModelBroadcast => Message::ModelBroadcast { round: r.u32("round")?, params: r.f32s("params")? },
        MessageType::EncryptedModel => Message::EncryptedModel {
            round: r.u32("round")?,
            weight_total: r.u64("weight_total")?,
            params: r.ciphertext("params")?,
        },
        MessageType::TrainRequest => Message::TrainRequest { round: r.u32("round")? },
        MessageType::LocalUpdate => Message::LocalUpdate {
            round: r.u32("round")?,
            trainer_id: r.u32("trainer_id")?,
            n_train: r.u32("n_train")?,
            delta: r.bool("delta")?,
            train_ms: r.f64("train_ms")?,
            bytes_sent: r.u64("bytes_sent")?,
            bytes_received: r.u64("bytes_received")?,
            params: r.params()?,
        },
        MessageType::EvalReport => Message::EvalReport {
            round: r.u32("round")?,
            trainer_id: r.u32("trainer_id")?,
            correct: r.u32("correct")?,
            total: r.u32("total")?,
        },
        MessageType::Shutdown => Message::Shutdown,
    };
    r.finish()?;
    Ok(msg)
}

/// Decodes one complete envelope, returning the header and the message.
pub fn decode(bytes: &[u8]) -> Result<(Header, Message), TransportError> {
    let header = decode_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != header.payload_len as usize {
        return Err(TransportError::Decode {
            offset: 14,
            reason: format!("payload_len {} but {} payload bytes", header.payload_len, body.len()),
        });
    }
    let msg = decode_payload(&header, body)?;
    Ok((header, msg))
}

/// Serialized ciphertext vector on its own: u32 count, u8 fractional bits,
/// u64 max summands, i64 clamp, u32 element width, then fixed-width
/// big-endian elements.
pub fn encode_ciphertext(ct: &CiphertextVector) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.ciphertext(ct);
    w.0
}

pub fn decode_ciphertext(bytes: &[u8]) -> Result<CiphertextVector, TransportError> {
    let mut r = Reader { buf: bytes, pos: 0, base: 0 };
    let ct = r.ciphertext("ciphertext")?;
    r.finish()?;
    Ok(ct)
}

/// Bytes of ciphertext header preceding the elements.
pub const CIPHERTEXT_HEADER_LEN: usize = 4 + 1 + 8 + 8 + 4;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secure::{he_keygen, encryption_rng, FixedPointCodec};

    #[test]
    fn shutdown_is_header_only() {
        let bytes = encode(&Message::Shutdown, 3);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], b"FGW1");
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 0);
        assert_eq!(decode(&bytes).unwrap().1, Message::Shutdown);
    }

    #[test]
    fn model_broadcast_size() {
        for p in [0usize, 1, 340, 1000] {
            let msg = Message::ModelBroadcast { round: 7, params: vec![0.5; p] };
            assert_eq!(encode_payload(&msg).len(), 4 + 4 + 4 * p);
        }
    }

    #[test]
    fn header_fields() {
        let bytes = encode(&Message::TrainRequest { round: 0x01020304 }, 9);
        let h = decode_header(&bytes).unwrap();
        assert_eq!(h, Header { msg_type: MessageType::TrainRequest, round: 0x01020304, sender: 9, payload_len: 4 });
        assert_eq!(&bytes[6..10], &[4, 3, 2, 1]);
    }

    #[test]
    fn version_and_type_rejected() {
        let mut bytes = encode(&Message::Shutdown, 0);
        bytes[4] = 2;
        assert_eq!(decode(&bytes).unwrap_err(), TransportError::Version { found: 2 });
        let mut bytes = encode(&Message::Shutdown, 0);
        bytes[5] = 0x7F;
        assert!(matches!(decode(&bytes), Err(TransportError::Decode { offset: 5, .. })));
    }

    #[test]
    fn truncation_never_panics() {
        let msg = Message::FeatureContribution {
            trainer_id: 1,
            hop: 1,
            projected: false,
            request: vec![1, 2],
            nodes: vec![5, 6, 7],
            rows: FeatureRows::Plain { dim: 2, values: vec![1.0; 6] },
        };
        let bytes = encode(&msg, 1);
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err());
        }
        // a lying length field
        let mut bad = bytes.clone();
        bad[HEADER_LEN + 6] = 0xFF;
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn ciphertext_layout() {
        let key = he_keygen(512, 5).unwrap();
        let mut rng = encryption_rng(1);
        let ct = key.encrypt_vector(&FixedPointCodec::default(), &[1.0, -2.0, 0.0], &mut rng).unwrap();
        let bytes = encode_ciphertext(&ct);
        assert_eq!(bytes.len(), CIPHERTEXT_HEADER_LEN + 3 * 128);
        assert_eq!(decode_ciphertext(&bytes).unwrap(), ct);
        assert!(decode_ciphertext(&bytes[..bytes.len() - 1]).is_err());
    }
}
