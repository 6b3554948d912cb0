use crate::secure::CiphertextVector;

/// Wire tags for every protocol message. The transport encodes exactly these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageType {
    Register = 0x01,
    Projection = 0x02,
    PretrainRequest = 0x03,
    FeatureContribution = 0x04,
    AggregatedFeatures = 0x05,
    ModelBroadcast = 0x06,
    EncryptedModel = 0x07,
    TrainRequest = 0x08,
    LocalUpdate = 0x09,
    EvalReport = 0x0A,
    Shutdown = 0x0B,
}

impl MessageType {
    pub const ALL: [MessageType; 11] = [
        MessageType::Register,
        MessageType::Projection,
        MessageType::PretrainRequest,
        MessageType::FeatureContribution,
        MessageType::AggregatedFeatures,
        MessageType::ModelBroadcast,
        MessageType::EncryptedModel,
        MessageType::TrainRequest,
        MessageType::LocalUpdate,
        MessageType::EvalReport,
        MessageType::Shutdown,
    ];

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| *t as u8 == tag)
    }
}

/// Rows of node features, either in the clear or encrypted element-wise.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureRows {
    /// Row-major `nodes.len() × dim` values.
    Plain { dim: u32, values: Vec<f32> },
    Cipher { dim: u32, values: CiphertextVector },
}

impl FeatureRows {
    pub fn dim(&self) -> u32 {
        match self {
            FeatureRows::Plain { dim, .. } | FeatureRows::Cipher { dim, .. } => *dim,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FeatureRows::Plain { values, .. } => values.len(),
            FeatureRows::Cipher { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened model parameters (`W1, b1, W2, b2`).
#[derive(Debug, Clone, PartialEq)]
pub enum ParamPayload {
    Plain(Vec<f32>),
    Cipher(CiphertextVector),
}

impl ParamPayload {
    pub fn len(&self) -> usize {
        match self {
            ParamPayload::Plain(v) => v.len(),
            ParamPayload::Cipher(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Register { trainer_id: u32, n_local: u32, n_train: u32 },
    /// Seed and shape from which every trainer regenerates the projection.
    Projection { seed: u64, d: u32, k: u32 },
    PretrainRequest { hop: u8 },
    /// A trainer's partial neighbor-feature sums for the nodes in `nodes`,
    /// plus the ids of its own boundary nodes it wants totals for.
    FeatureContribution {
        trainer_id: u32,
        hop: u8,
        projected: bool,
        request: Vec<u32>,
        nodes: Vec<u32>,
        rows: FeatureRows,
    },
    AggregatedFeatures { hop: u8, nodes: Vec<u32>, rows: FeatureRows },
    ModelBroadcast { round: u32, params: Vec<f32> },
    /// Encrypted `Σ nᵢ·θᵢ` (or `Σ nᵢ·δᵢ` in delta mode) and `Σ nᵢ`.
    EncryptedModel { round: u32, weight_total: u64, params: CiphertextVector },
    TrainRequest { round: u32 },
    LocalUpdate {
        round: u32,
        trainer_id: u32,
        n_train: u32,
        /// `params` is a difference from the broadcast model, not the model.
        delta: bool,
        train_ms: f64,
        bytes_sent: u64,
        bytes_received: u64,
        params: ParamPayload,
    },
    EvalReport { round: u32, trainer_id: u32, correct: u32, total: u32 },
    Shutdown,
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::Register { .. } => MessageType::Register,
            Message::Projection { .. } => MessageType::Projection,
            Message::PretrainRequest { .. } => MessageType::PretrainRequest,
            Message::FeatureContribution { .. } => MessageType::FeatureContribution,
            Message::AggregatedFeatures { .. } => MessageType::AggregatedFeatures,
            Message::ModelBroadcast { .. } => MessageType::ModelBroadcast,
            Message::EncryptedModel { .. } => MessageType::EncryptedModel,
            Message::TrainRequest { .. } => MessageType::TrainRequest,
            Message::LocalUpdate { .. } => MessageType::LocalUpdate,
            Message::EvalReport { .. } => MessageType::EvalReport,
            Message::Shutdown => MessageType::Shutdown,
        }
    }

    /// Round number carried in the envelope; zero for round-less messages.
    pub fn round(&self) -> u32 {
        match self {
            Message::ModelBroadcast { round, .. }
            | Message::EncryptedModel { round, .. }
            | Message::TrainRequest { round }
            | Message::LocalUpdate { round, .. }
            | Message::EvalReport { round, .. } => *round,
            Message::PretrainRequest { hop }
            | Message::FeatureContribution { hop, .. }
            | Message::AggregatedFeatures { hop, .. } => *hop as u32,
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_are_unique_and_invertible() {
        for t in MessageType::ALL {
            assert_eq!(MessageType::from_tag(t as u8), Some(t));
        }
        let mut tags: Vec<u8> = MessageType::ALL.iter().map(|&t| t as u8).collect();
        tags.dedup();
        assert_eq!(tags.len(), MessageType::ALL.len());
        assert_eq!(MessageType::from_tag(0), None);
        assert_eq!(MessageType::from_tag(0xFF), None);
    }
}
