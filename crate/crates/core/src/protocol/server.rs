use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use super::trainer::type_name;
use super::{fedavg_aggregate, protocol_codec, select_clients, FeatureRows, Message, ParamPayload, ProtocolError};
use crate::data::{Method, SamplingType};
use crate::gnn::GcnModel;
use crate::monitor::{peak_rss_bytes, CommModel, Monitor, Phase, PhaseMetrics, SERVER};
use crate::secure::{encryption_rng, CiphertextVector, Encryptor, PublicKey};
use crate::transport::{Connection, CounterSnapshot, Counters, TransportError};

const INIT_STREAM: u64 = 0x1417;
const SELECT_STREAM: u64 = 0x5E1E;
const PROJECTION_STREAM: u64 = 0x9807;
const ENCRYPT_STREAM: u64 = 0xE7C5;

#[derive(Debug, Clone)]
pub struct ServerSettings {
    pub method: Method,
    pub rounds: usize,
    pub sample_ratio: f64,
    pub sampling_type: SamplingType,
    pub hops: u8,
    pub lowrank: Option<usize>,
    pub feature_dim: usize,
    pub classes: usize,
    pub hidden: usize,
    /// Set when updates travel encrypted.
    pub he: Option<PublicKey>,
    pub delta: bool,
    pub seed: u64,
    pub timeout: Duration,
}

impl ServerSettings {
    /// Width of layer-1 input after optional projection.
    pub fn input_dim(&self) -> usize {
        match (self.method, self.lowrank) {
            (Method::FedGcn, Some(k)) => k,
            _ => self.feature_dim,
        }
    }

    pub fn projection_seed(&self) -> u64 {
        projection_seed(self.seed)
    }
}

/// Seed of the shared low-rank projection for an experiment seed.
pub fn projection_seed(seed: u64) -> u64 {
    seed ^ PROJECTION_STREAM.wrapping_mul(0x2545_F491_4F6C_DD1D)
}

/// Glorot-initialized global model shared by federated and centralized runs.
pub fn initial_model(in_dim: usize, hidden: usize, classes: usize, seed: u64) -> GcnModel<f32> {
    GcnModel::glorot(in_dim, hidden, classes, &mut ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM))
}

#[derive(Debug, Clone)]
pub struct ServerOutcome {
    /// Test accuracy after the initial sync and after each round.
    pub accuracy: Vec<f64>,
    pub phases: Vec<PhaseMetrics>,
    pub comm_model: CommModel,
    /// Final global parameters; `None` under encryption (the server never
    /// sees them).
    pub global: Option<Vec<f32>>,
}

pub struct Server {
    settings: ServerSettings,
    conns: Vec<Box<dyn Connection>>,
    n_train: Vec<u64>,
    monitor: Monitor,
    global: Vec<f32>,
    select_rng: ChaCha8Rng,
    encryptor: Option<(Encryptor, ChaCha20Rng)>,
    rows_up: u64,
    rows_down: u64,
    accuracy: Vec<f64>,
    /// Trainer-reported compute time within the current phase.
    trainer_ms: Vec<f64>,
}

impl Server {
    /// `conns` may be in any order; trainers identify themselves on registration.
    pub fn new(settings: ServerSettings, conns: Vec<Box<dyn Connection>>) -> Self {
        let encryptor = settings.he.as_ref().map(|pk| {
            let mut rng = encryption_rng(settings.seed ^ ENCRYPT_STREAM);
            (Encryptor::new(pk, &mut rng), rng)
        });
        let global =
            initial_model(settings.input_dim(), settings.hidden, settings.classes, settings.seed).flatten();
        Self {
            select_rng: ChaCha8Rng::seed_from_u64(settings.seed ^ SELECT_STREAM),
            settings,
            n_train: Vec::new(),
            trainer_ms: vec![0.0; conns.len()],
            conns,
            monitor: Monitor::new(),
            global,
            encryptor,
            rows_up: 0,
            rows_down: 0,
            accuracy: Vec::new(),
        }
    }

    fn num_trainers(&self) -> usize {
        self.conns.len()
    }

    /// Runs `f` as `phase`, recording per-trainer link traffic and the
    /// server's wall time.
    fn phase<R>(&mut self, phase: Phase, f: impl FnOnce(&mut Self) -> Result<R, ProtocolError>) -> Result<R, ProtocolError> {
        let start: Vec<(Arc<Counters>, CounterSnapshot)> =
            self.conns.iter().map(|c| (c.counters(), c.counters().snapshot())).collect();
        self.trainer_ms.iter_mut().for_each(|t| *t = 0.0);
        let t0 = Instant::now();
        let out = f(self)?;
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        for (i, c) in self.conns.iter().enumerate() {
            let counters = c.counters();
            let before = start.iter().find(|(a, _)| Arc::ptr_eq(a, &counters)).map(|(_, s)| *s).unwrap_or_default();
            let d = counters.snapshot().since(&before);
            self.monitor.record(PhaseMetrics {
                wall_ms: self.trainer_ms[i],
                bytes_up: d.bytes_received,
                bytes_down: d.bytes_sent,
                msgs_up: d.msgs_received,
                msgs_down: d.msgs_sent,
                ..PhaseMetrics::new(phase, i as u32)
            })?;
        }
        self.monitor.record(PhaseMetrics {
            wall_ms,
            peak_rss_bytes: peak_rss_bytes(),
            ..PhaseMetrics::new(phase, SERVER)
        })?;
        Ok(out)
    }

    pub fn run(mut self) -> Result<ServerOutcome, ProtocolError> {
        self.phase(Phase::Setup, Self::register)?;
        if self.settings.method == Method::FedGcn {
            self.phase(Phase::Pretrain, Self::pretrain)?;
        }
        self.phase(Phase::Eval(0), |s| {
            s.broadcast(0)?;
            s.collect_eval(0)
        })?;
        for r in 0..self.settings.rounds as u32 {
            self.phase(Phase::TrainRound(r), |s| s.train_round(r))?;
            self.phase(Phase::Eval(r + 1), |s| s.collect_eval(r + 1))?;
        }
        self.phase(Phase::Teardown, |s| {
            for c in &s.conns {
                c.send(&Message::Shutdown)?;
            }
            Ok(())
        })?;
        let comm_model = CommModel {
            pretrain_rows_up: self.rows_up,
            pretrain_rows_down: self.rows_down,
            row_dim: self.settings.input_dim(),
            trainers: self.num_trainers(),
            selected_per_round: (self.num_trainers() as f64 * self.settings.sample_ratio).floor() as usize,
            rounds: self.settings.rounds,
            params: self.global.len(),
            he: self.settings.he.is_some(),
            expansion: self.settings.he.as_ref().map_or(1.0, |pk| pk.expansion_factor()),
        };
        Ok(ServerOutcome {
            accuracy: self.accuracy,
            phases: self.monitor.finalize(),
            comm_model,
            global: if self.settings.he.is_some() { None } else { Some(self.global) },
        })
    }

    /// Registration only; the pre-train runs before any model is sent.
    fn register(&mut self) -> Result<(), ProtocolError> {
        let m = self.num_trainers();
        let mut slots: Vec<Option<(Box<dyn Connection>, u64)>> = (0..m).map(|_| None).collect();
        for conn in self.conns.drain(..) {
            match conn.recv(Some(self.settings.timeout))? {
                Message::Register { trainer_id, n_train, .. } => {
                    let id = trainer_id as usize;
                    if id >= m || slots[id].is_some() {
                        return Err(ProtocolError::Registration(format!("bad or duplicate trainer id {trainer_id}")));
                    }
                    slots[id] = Some((conn, n_train as u64));
                }
                other => return Err(ProtocolError::Unexpected { expected: "Register", got: type_name(&other) }),
            }
        }
        for (conn, n) in slots.into_iter().flatten() {
            self.conns.push(conn);
            self.n_train.push(n);
        }
        Ok(())
    }

    /// Next message from trainer `t` that is not a leftover from an
    /// earlier round.
    fn next_from(&self, t: usize, update_round: u32, eval_round: u32) -> Result<Message, ProtocolError> {
        loop {
            match self.conns[t].recv(Some(self.settings.timeout))? {
                Message::LocalUpdate { round, .. } if round < update_round => continue,
                Message::EvalReport { round, .. } if round < eval_round => continue,
                m => return Ok(m),
            }
        }
    }

    fn pretrain(&mut self) -> Result<(), ProtocolError> {
        let m = self.num_trainers();
        let d = self.settings.feature_dim;
        if let Some(k) = self.settings.lowrank {
            let msg = Message::Projection { seed: self.settings.projection_seed(), d: d as u32, k: k as u32 };
            for c in &self.conns {
                c.send(&msg)?;
            }
        }
        let dim = self.settings.input_dim();
        for hop in 1..=self.settings.hops {
            for c in &self.conns {
                c.send(&Message::PretrainRequest { hop })?;
            }
            let mut requests = Vec::with_capacity(m);
            let mut plain: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            let mut cipher: BTreeMap<u32, CiphertextVector> = BTreeMap::new();
            for t in 0..m {
                let (request, nodes, rows) = match self.next_from(t, 0, 0)? {
                    Message::FeatureContribution { trainer_id, hop: h, request, nodes, rows, .. }
                        if trainer_id as usize == t && h == hop =>
                    {
                        (request, nodes, rows)
                    }
                    other => {
                        return Err(ProtocolError::Unexpected { expected: "FeatureContribution", got: type_name(&other) })
                    }
                };
                if rows.dim() as usize != dim || rows.len() != nodes.len() * dim {
                    return Err(ProtocolError::Shape(format!("trainer {t} sent rows of the wrong shape")));
                }
                self.rows_up += nodes.len() as u64;
                match rows {
                    FeatureRows::Plain { values, .. } => {
                        for (j, &node) in nodes.iter().enumerate() {
                            let acc = plain.entry(node).or_insert_with(|| vec![0.0; dim]);
                            for (a, &v) in acc.iter_mut().zip(&values[j * dim..(j + 1) * dim]) {
                                *a += v as f64;
                            }
                        }
                    }
                    FeatureRows::Cipher { values, .. } => {
                        let pk = self.settings.he.as_ref().ok_or(ProtocolError::Unexpected {
                            expected: "plaintext rows",
                            got: "ciphertext rows",
                        })?;
                        for (j, &node) in nodes.iter().enumerate() {
                            let row = CiphertextVector {
                                codec: values.codec,
                                width: values.width,
                                elements: values.elements[j * dim..(j + 1) * dim].to_vec(),
                            };
                            match cipher.get_mut(&node) {
                                Some(acc) => pk.add_assign(acc, &row)?,
                                None => {
                                    cipher.insert(node, row);
                                }
                            }
                        }
                    }
                }
                requests.push(request);
            }
            for (t, request) in requests.into_iter().enumerate() {
                let missing = |node: u32| ProtocolError::MissingContribution { node, trainer: t as u32 };
                let rows = if self.settings.he.is_some() {
                    let mut acc: Option<CiphertextVector> = None;
                    for &node in &request {
                        let row = cipher.get(&node).ok_or_else(|| missing(node))?;
                        match &mut acc {
                            Some(a) => a.elements.extend_from_slice(&row.elements),
                            None => acc = Some(row.clone()),
                        }
                    }
                    let values = acc.unwrap_or_else(|| CiphertextVector {
                        codec: protocol_codec(),
                        width: self.settings.he.as_ref().unwrap().ciphertext_width(),
                        elements: Vec::new(),
                    });
                    FeatureRows::Cipher { dim: dim as u32, values }
                } else {
                    let mut values = Vec::with_capacity(request.len() * dim);
                    for &node in &request {
                        values.extend(plain.get(&node).ok_or_else(|| missing(node))?.iter().map(|&v| v as f32));
                    }
                    FeatureRows::Plain { dim: dim as u32, values }
                };
                self.rows_down += request.len() as u64;
                self.conns[t].send(&Message::AggregatedFeatures { hop, nodes: request, rows })?;
            }
        }
        Ok(())
    }

    /// Sends the current model to every trainer: in the clear, or as an
    /// encryption of the model with unit weight.
    fn broadcast(&mut self, round: u32) -> Result<(), ProtocolError> {
        let msg = match &mut self.encryptor {
            Some((enc, rng)) => {
                let v: Vec<f64> = self.global.iter().map(|&x| x as f64).collect();
                Message::EncryptedModel { round, weight_total: 1, params: enc.encrypt_vector(&protocol_codec(), &v, rng)? }
            }
            None => Message::ModelBroadcast { round, params: self.global.clone() },
        };
        for c in &self.conns {
            c.send(&msg)?;
        }
        Ok(())
    }

    fn collect_eval(&mut self, round: u32) -> Result<(), ProtocolError> {
        let (mut correct, mut total) = (0u64, 0u64);
        for t in 0..self.num_trainers() {
            match self.next_from(t, round, round)? {
                Message::EvalReport { round: r, trainer_id, correct: c, total: n } if r == round && trainer_id as usize == t => {
                    correct += c as u64;
                    total += n as u64;
                }
                other => return Err(ProtocolError::Unexpected { expected: "EvalReport", got: type_name(&other) }),
            }
        }
        self.accuracy.push(if total == 0 { 0.0 } else { correct as f64 / total as f64 });
        Ok(())
    }

    fn train_round(&mut self, round: u32) -> Result<(), ProtocolError> {
        let m = self.num_trainers();
        let selected = select_clients(m, self.settings.sample_ratio, self.settings.sampling_type, round as usize, &mut self.select_rng)?;
        let request = Message::TrainRequest { round };
        for &t in &selected {
            self.conns[t].send(&request)?;
        }
        let mut updates = Vec::with_capacity(selected.len());
        for &t in &selected {
            let mut retried = false;
            let msg = loop {
                match self.next_from(t, round, round + 1) {
                    Ok(msg) => break msg,
                    Err(ProtocolError::Transport(TransportError::Timeout)) if !retried => {
                        log::warn!("trainer {t} missed the deadline in round {round}; asking again");
                        retried = true;
                        self.conns[t].send(&request)?;
                    }
                    Err(ProtocolError::Transport(TransportError::Timeout)) => {
                        return Err(ProtocolError::Timeout { round, trainer: t as u32 })
                    }
                    Err(e) => return Err(e),
                }
            };
            match msg {
                Message::LocalUpdate { round: r, trainer_id, n_train, delta, train_ms, params, .. }
                    if r == round && trainer_id as usize == t =>
                {
                    if delta != self.settings.delta {
                        return Err(ProtocolError::Shape(format!("trainer {t} update mode disagrees with the server")));
                    }
                    if params.len() != self.global.len() {
                        return Err(ProtocolError::Shape(format!(
                            "trainer {t} sent {} parameters, model has {}",
                            params.len(),
                            self.global.len()
                        )));
                    }
                    self.trainer_ms[t] = train_ms;
                    updates.push((params, n_train as u64));
                }
                other => return Err(ProtocolError::Unexpected { expected: "LocalUpdate", got: type_name(&other) }),
            }
        }

        let weight_total: u64 = updates.iter().map(|(_, n)| n).sum();
        let msg = if let Some(pk) = &self.settings.he {
            let mut acc: Option<CiphertextVector> = None;
            for (p, _) in &updates {
                let ParamPayload::Cipher(ct) = p else {
                    return Err(ProtocolError::Unexpected { expected: "encrypted update", got: "plaintext update" });
                };
                match &mut acc {
                    Some(a) => pk.add_assign(a, ct)?,
                    None => acc = Some(ct.clone()),
                }
            }
            let params = acc.ok_or_else(|| ProtocolError::Shape("no updates to aggregate".into()))?;
            Message::EncryptedModel { round: round + 1, weight_total, params }
        } else {
            if weight_total > 0 {
                let mut plain = Vec::with_capacity(updates.len());
                for (p, n) in &updates {
                    let ParamPayload::Plain(v) = p else {
                        return Err(ProtocolError::Unexpected { expected: "plaintext update", got: "encrypted update" });
                    };
                    plain.push((v.as_slice(), *n));
                }
                let mean = fedavg_aggregate(&plain)?;
                if self.settings.delta {
                    self.global.iter_mut().zip(&mean).for_each(|(g, d)| *g += d);
                } else {
                    self.global = mean;
                }
            }
            Message::ModelBroadcast { round: round + 1, params: self.global.clone() }
        };
        for c in &self.conns {
            c.send(&msg)?;
        }
        Ok(())
    }
}
