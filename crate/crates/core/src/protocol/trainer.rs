use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use super::pretrain::{complete, local_sums, normalize_rows, outgoing_sums, CutPlan};
use super::{protocol_codec, FeatureRows, Message, ParamPayload, ProtocolError};
use crate::data::Method;
use crate::gnn::{
    backward, count_correct, forward, minibatch_sample, nll_loss_and_grad, FirstLayer, GcnModel, GnnError, Matrix,
    OptimizerKind, OptimizerState,
};
use crate::graph::{normalize_adjacency, LocalGraph, NormAdj, Split};
use crate::secure::{dp_noise, encryption_rng, gen_projection, project_features, Encryptor, HeKeypair};
use crate::transport::Connection;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpSettings {
    pub sigma: f64,
    pub clip: f64,
}

/// Injected misbehavior for failure-handling tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Ignore the first `TrainRequest` for this round.
    DropRequest(u32),
    /// Stop answering from this round on.
    Silent(u32),
}

#[derive(Debug, Clone)]
pub struct TrainerSettings {
    pub method: Method,
    pub local_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
    pub dropout: f64,
    /// 0 trains on the whole local graph each step.
    pub batch_size: usize,
    pub fanout: usize,
    pub dp: Option<DpSettings>,
    pub delta: bool,
    /// Shared keypair; the server only ever sees the public half.
    pub he: Option<HeKeypair>,
    pub seed: u64,
    pub fault: Option<Fault>,
}

/// Stream seeds derived from the experiment seed and the trainer id.
pub(crate) fn trainer_seed(seed: u64, id: u32, stream: u64) -> u64 {
    seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Elapsed CPU time of the calling thread, so that trainers sharing a core
/// are not charged for each other's work.
pub(crate) fn thread_cpu_ms() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 * 1e3 + ts.tv_nsec as f64 / 1e6
}

/// One client: its subgraph, model replica and pre-train state.
pub struct Trainer {
    pub id: u32,
    pub local: LocalGraph,
    settings: TrainerSettings,
    adj: NormAdj,
    plan: CutPlan,
    /// Raw (possibly projected) features.
    x: Matrix<f32>,
    projected: bool,
    /// `(A + I)^hops · x` for own nodes after pre-train.
    x_hat: Option<Matrix<f64>>,
    /// What layer 1 consumes.
    input: Matrix<f32>,
    global: Option<GcnModel<f32>>,
    opt: Option<OptimizerState<f32>>,
    rng: ChaCha8Rng,
    he: Option<(HeKeypair, Encryptor, ChaCha20Rng)>,
    cached: Option<(u32, Message)>,
    dropped_once: bool,
}

impl Trainer {
    pub fn new(id: u32, local: LocalGraph, settings: TrainerSettings) -> Self {
        let adj = normalize_adjacency(&local.graph);
        let plan = CutPlan::new(&local);
        let x = Matrix::from_vec(local.num_nodes(), local.graph.feature_dim(), local.graph.features().to_vec())
            .expect("graph features are n × d");
        let he = settings.he.clone().map(|key| {
            let mut rng = encryption_rng(trainer_seed(settings.seed, id, 2));
            let enc = Encryptor::new(&key.public, &mut rng);
            (key, enc, rng)
        });
        Self {
            id,
            rng: ChaCha8Rng::seed_from_u64(trainer_seed(settings.seed, id, 1)),
            input: x.clone(),
            x,
            local,
            settings,
            adj,
            plan,
            projected: false,
            x_hat: None,
            global: None,
            opt: None,
            he,
            cached: None,
            dropped_once: false,
        }
    }

    pub fn num_train(&self) -> usize {
        self.local.num_train()
    }

    /// Pre-aggregated features after pre-train, in local node order.
    pub fn pre_aggregated(&self) -> Option<&Matrix<f64>> {
        self.x_hat.as_ref()
    }

    pub fn global_model(&self) -> Option<&GcnModel<f32>> {
        self.global.as_ref()
    }

    fn mode(&self) -> FirstLayer {
        match self.settings.method {
            Method::FedAvg => FirstLayer::Propagate,
            Method::FedGcn => FirstLayer::PreAggregated,
        }
    }

    /// Serves messages until `Shutdown`; returns itself for inspection.
    pub fn run(mut self, conn: &dyn Connection) -> Result<Self, ProtocolError> {
        conn.send(&Message::Register {
            trainer_id: self.id,
            n_local: self.local.num_nodes() as u32,
            n_train: self.num_train() as u32,
        })?;
        loop {
            match conn.recv(None)? {
                Message::Projection { seed, d, k } => self.apply_projection(seed, d as usize, k as usize)?,
                Message::PretrainRequest { hop } => self.pretrain_hop(conn, hop)?,
                Message::ModelBroadcast { round, params } => {
                    self.set_global(&params)?;
                    self.report_eval(conn, round)?;
                }
                Message::EncryptedModel { round, weight_total, params } => {
                    let (key, _, _) = self.he.as_ref().ok_or(ProtocolError::Unexpected {
                        expected: "plaintext model",
                        got: "EncryptedModel",
                    })?;
                    let sum = key.decrypt_vector(&params)?;
                    if weight_total > 0 {
                        let mean: Vec<f32> = sum.iter().map(|s| (s / weight_total as f64) as f32).collect();
                        if self.settings.delta && round > 0 {
                            let mut g = self.global_flat()?;
                            g.iter_mut().zip(&mean).for_each(|(a, b)| *a += b);
                            self.set_global(&g)?;
                        } else {
                            self.set_global(&mean)?;
                        }
                    }
                    self.report_eval(conn, round)?;
                }
                Message::TrainRequest { round } => {
                    match self.settings.fault {
                        Some(Fault::Silent(r)) if round >= r => continue,
                        Some(Fault::DropRequest(r)) if round == r && !self.dropped_once => {
                            self.dropped_once = true;
                            continue;
                        }
                        _ => {}
                    }
                    if let Some((r, msg)) = &self.cached {
                        if *r == round {
                            conn.send(msg)?;
                            continue;
                        }
                    }
                    let snap = conn.counters().snapshot();
                    let t0 = thread_cpu_ms();
                    // a client without labelled nodes echoes the model with zero weight
                    let params = if self.num_train() == 0 { self.global_flat()? } else { self.local_train()? };
                    let train_ms = thread_cpu_ms() - t0;
                    let msg = self.package_update(round, params, train_ms, snap.bytes_sent, snap.bytes_received)?;
                    conn.send(&msg)?;
                    self.cached = Some((round, msg));
                }
                Message::Shutdown => return Ok(self),
                other => {
                    return Err(ProtocolError::Unexpected { expected: "server message", got: type_name(&other) })
                }
            }
        }
    }

    fn apply_projection(&mut self, seed: u64, d: usize, k: usize) -> Result<(), ProtocolError> {
        if d != self.x.cols() {
            return Err(ProtocolError::Shape(format!("projection for d={d}, features have {}", self.x.cols())));
        }
        let p = gen_projection(d, k, seed)?;
        self.x = project_features(&self.x, &p)?;
        self.input = self.x.clone();
        self.projected = true;
        Ok(())
    }

    fn pretrain_hop(&mut self, conn: &dyn Connection, hop: u8) -> Result<(), ProtocolError> {
        let h: Matrix<f64> = match &self.x_hat {
            Some(prev) if hop > 1 => prev.clone(),
            _ => self.x.cast(),
        };
        let dim = h.cols();
        let up = outgoing_sums(&self.local, &self.plan, &h);
        let rows = match &mut self.he {
            Some((_, enc, rng)) => FeatureRows::Cipher { dim: dim as u32, values: enc.encrypt_vector(&protocol_codec(), &up, rng)? },
            None => FeatureRows::Plain { dim: dim as u32, values: up.iter().map(|&v| v as f32).collect() },
        };
        conn.send(&Message::FeatureContribution {
            trainer_id: self.id,
            hop,
            projected: self.projected,
            request: self.plan.boundary.iter().map(|&g| g as u32).collect(),
            nodes: self.plan.external.iter().map(|&g| g as u32).collect(),
            rows,
        })?;
        let (nodes, rows) = match conn.recv(None)? {
            Message::AggregatedFeatures { hop: h2, nodes, rows } if h2 == hop => (nodes, rows),
            other => return Err(ProtocolError::Unexpected { expected: "AggregatedFeatures", got: type_name(&other) }),
        };
        let expected: Vec<u32> = self.plan.boundary.iter().map(|&g| g as u32).collect();
        if nodes != expected || rows.dim() as usize != dim || rows.len() != nodes.len() * dim {
            return Err(ProtocolError::Shape("aggregated rows do not match the request".into()));
        }
        let received: Vec<f64> = match rows {
            FeatureRows::Plain { values, .. } => values.iter().map(|&v| v as f64).collect(),
            FeatureRows::Cipher { values, .. } => {
                let (key, _, _) = self.he.as_ref().ok_or(ProtocolError::Unexpected {
                    expected: "plaintext rows",
                    got: "ciphertext rows",
                })?;
                key.decrypt_vector(&values)?
            }
        };
        let mut out = local_sums(&self.local, &h);
        complete(&mut out, &self.local, &received);
        self.input = normalize_rows(&out, &self.local.global_degree(), hop);
        self.x_hat = Some(out);
        Ok(())
    }

    /// Installs pre-aggregated features computed outside the protocol.
    pub(crate) fn set_input(&mut self, input: Matrix<f32>, x_hat: Matrix<f64>) {
        self.input = input;
        self.x_hat = Some(x_hat);
    }

    fn ensure_model(&mut self, len: usize) -> Result<(), ProtocolError> {
        if self.global.is_none() {
            let m = GcnModel::zeros(self.input.cols(), self.settings.hidden, self.local.graph.num_classes() as usize);
            if m.num_params() != len {
                return Err(ProtocolError::Shape(format!(
                    "broadcast has {len} parameters, local model has {}",
                    m.num_params()
                )));
            }
            self.opt = Some(OptimizerState::new(self.settings.optimizer, self.settings.lr, self.settings.weight_decay, &m));
            self.global = Some(m);
        }
        Ok(())
    }

    pub(crate) fn set_global(&mut self, flat: &[f32]) -> Result<(), ProtocolError> {
        self.ensure_model(flat.len())?;
        self.global.as_mut().unwrap().load_flat(flat)?;
        Ok(())
    }

    fn global_flat(&self) -> Result<Vec<f32>, ProtocolError> {
        Ok(self.global.as_ref().ok_or(ProtocolError::NotSynchronized)?.flatten())
    }

    /// Correct predictions and test-node count under the current global model.
    pub fn evaluate(&self, split: Split) -> Result<(usize, usize), ProtocolError> {
        let model = self.global.as_ref().ok_or(ProtocolError::NotSynchronized)?;
        let cache = forward::<f32, ChaCha8Rng>(model, &self.adj, &self.input, self.mode(), 0.0, None)?;
        Ok(count_correct(cache.log_probs(), self.local.graph.labels(), self.local.graph.mask(split)))
    }

    fn report_eval(&self, conn: &dyn Connection, round: u32) -> Result<(), ProtocolError> {
        let (correct, total) = self.evaluate(Split::Test)?;
        conn.send(&Message::EvalReport { round, trainer_id: self.id, correct: correct as u32, total: total as u32 })?;
        Ok(())
    }

    /// Runs the configured number of optimizer steps from the current global
    /// model and returns the updated flat parameters.
    pub fn local_train(&mut self) -> Result<Vec<f32>, ProtocolError> {
        if self.settings.method == Method::FedGcn && self.x_hat.is_none() {
            return Err(ProtocolError::NotSynchronized);
        }
        let mut model = self.global.clone().ok_or(ProtocolError::NotSynchronized)?;
        if self.num_train() == 0 {
            return Err(GnnError::NoTrainNodes.into());
        }
        let mode = self.mode();
        let opt = self.opt.as_mut().expect("optimizer exists with the model");
        let graph = &self.local.graph;
        for _ in 0..self.settings.local_steps {
            let grads = if self.settings.batch_size > 0 {
                let batch = minibatch_sample(graph, self.settings.batch_size, self.settings.fanout, &mut self.rng)?;
                let x = self.input.gather_rows(&batch.nodes);
                let labels: Vec<u32> = batch.nodes.iter().map(|&u| graph.labels()[u]).collect();
                let cache = forward(&model, &batch.adj, &x, mode, self.settings.dropout, Some(&mut self.rng))?;
                let (_, g) = nll_loss_and_grad(cache.log_probs(), &labels, &batch.seed_mask)?;
                backward(&model, &cache, &g)?
            } else {
                let cache = forward(&model, &self.adj, &self.input, mode, self.settings.dropout, Some(&mut self.rng))?;
                let (_, g) = nll_loss_and_grad(cache.log_probs(), graph.labels(), graph.mask(Split::Train))?;
                backward(&model, &cache, &g)?
            };
            opt.step(&mut model, &grads);
        }
        Ok(model.flatten())
    }

    fn package_update(
        &mut self,
        round: u32,
        params: Vec<f32>,
        train_ms: f64,
        bytes_sent: u64,
        bytes_received: u64,
    ) -> Result<Message, ProtocolError> {
        let global = self.global_flat()?;
        let mut delta: Vec<f32> = params.iter().zip(&global).map(|(a, b)| a - b).collect();
        if let Some(dp) = self.settings.dp {
            delta = dp_noise(&delta, dp.clip, dp.sigma, &mut self.rng);
        }
        let body: Vec<f32> = if self.settings.delta {
            delta
        } else if self.settings.dp.is_some() {
            global.iter().zip(&delta).map(|(g, d)| g + d).collect()
        } else {
            params
        };
        let n_train = self.num_train() as u32;
        let payload = match &mut self.he {
            Some((_, enc, rng)) => {
                let scaled: Vec<f64> = body.iter().map(|&v| v as f64 * n_train as f64).collect();
                ParamPayload::Cipher(enc.encrypt_vector(&protocol_codec(), &scaled, rng)?)
            }
            None => ParamPayload::Plain(body),
        };
        Ok(Message::LocalUpdate {
            round,
            trainer_id: self.id,
            n_train,
            delta: self.settings.delta,
            train_ms,
            bytes_sent,
            bytes_received,
            params: payload,
        })
    }
}

pub(crate) fn type_name(m: &Message) -> &'static str {
    match m {
        Message::Register { .. } => "Register",
        Message::Projection { .. } => "Projection",
        Message::PretrainRequest { .. } => "PretrainRequest",
        Message::FeatureContribution { .. } => "FeatureContribution",
        Message::AggregatedFeatures { .. } => "AggregatedFeatures",
        Message::ModelBroadcast { .. } => "ModelBroadcast",
        Message::EncryptedModel { .. } => "EncryptedModel",
        Message::TrainRequest { .. } => "TrainRequest",
        Message::LocalUpdate { .. } => "LocalUpdate",
        Message::EvalReport { .. } => "EvalReport",
        Message::Shutdown => "Shutdown",
    }
}
