use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::pretrain::{centralized_aggregate, normalize_rows};
use super::server::{initial_model, Server, ServerSettings};
use super::trainer::{DpSettings, Fault, Trainer, TrainerSettings};
use super::ProtocolError;
use crate::data::{load_dataset, ExperimentConfig, Method, TransportKind};
use crate::gnn::Matrix;
use crate::graph::{dirichlet_partition, extract_local_subgraph, Graph, PartitionSpec, Split};
use crate::monitor::{export, theoretical_comm, CommModel, ExperimentReport, ExportFormat, SERVER};
use crate::secure::{gen_projection, he_keygen, project_features, HeKeypair};
use crate::transport::{channel_pair, Connection, CounterSnapshot, MessageLog, TcpConnection, TcpHub};

const KEY_STREAM: u64 = 0x4B45_5953;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Records every message for offline byte accounting.
    pub log: Option<Arc<MessageLog>>,
    /// Overrides the keypair derived from the seed (tests use small keys).
    pub he_key: Option<HeKeypair>,
    pub faults: Vec<(u32, Fault)>,
}

pub struct RunOutput {
    pub report: ExperimentReport,
    /// Trainers after shutdown, indexed by id.
    pub trainers: Vec<Trainer>,
    /// Final plaintext global model (absent under encryption).
    pub global: Option<Vec<f32>>,
    pub partition: PartitionSpec,
    pub comm_model: CommModel,
    /// Final counters of each trainer's end of its link.
    pub trainer_counters: Vec<CounterSnapshot>,
}

pub(crate) fn trainer_settings(cfg: &ExperimentConfig, he: Option<HeKeypair>) -> TrainerSettings {
    TrainerSettings {
        method: cfg.method,
        local_steps: cfg.local_step,
        lr: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        optimizer: cfg.optimizer,
        hidden: cfg.hidden,
        dropout: cfg.dropout,
        batch_size: cfg.batch_size,
        fanout: cfg.fanout,
        dp: cfg.use_dp.then(|| DpSettings { sigma: cfg.dp_sigma(), clip: cfg.dp_clip() }),
        delta: cfg.delta_updates,
        he,
        seed: cfg.seed,
        fault: None,
    }
}

pub(crate) fn server_settings(cfg: &ExperimentConfig, graph: &Graph, he: Option<&HeKeypair>) -> ServerSettings {
    ServerSettings {
        method: cfg.method,
        rounds: cfg.global_rounds,
        sample_ratio: cfg.sample_ratio,
        sampling_type: cfg.sampling_type,
        hops: if cfg.method == Method::FedGcn { cfg.hops() } else { 0 },
        lowrank: if cfg.use_lowrank { cfg.rank } else { None },
        feature_dim: graph.feature_dim(),
        classes: graph.num_classes() as usize,
        hidden: cfg.hidden,
        he: he.map(|k| k.public.clone()),
        delta: cfg.delta_updates,
        seed: cfg.seed,
        timeout: Duration::from_millis(cfg.timeout_ms),
    }
}

/// Keypair for an encrypted run: the override, or one derived from the seed.
pub(crate) fn experiment_key(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Option<HeKeypair>, ProtocolError> {
    if !cfg.use_encryption {
        return Ok(None);
    }
    match &opts.he_key {
        Some(k) => Ok(Some(k.clone())),
        None => Ok(Some(he_keygen(cfg.he_key_bits, cfg.seed ^ KEY_STREAM)?)),
    }
}

/// Partitions `graph`, runs one server and `n_trainer` trainer threads to
/// completion and collects the report.
pub fn run_experiment(graph: &Graph, cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput, ProtocolError> {
    cfg.validate()?;
    if cfg.encrypt_projection {
        log::warn!("encrypt_projection is not supported; the projection matrix is sent in plaintext");
    }
    let m = cfg.n_trainer;
    let partition = dirichlet_partition(graph, m, cfg.iid_beta, cfg.seed)?;
    let key = experiment_key(cfg, &opts)?;
    let trainers: Vec<Trainer> = (0..m)
        .map(|c| {
            let mut s = trainer_settings(cfg, key.clone());
            s.fault = opts.faults.iter().find(|(id, _)| *id as usize == c).map(|(_, f)| *f);
            Trainer::new(c as u32, extract_local_subgraph(graph, &partition, c), s)
        })
        .collect();
    let settings = server_settings(cfg, graph, key.as_ref());
    let log = opts.log.clone();

    let (outcome, finished) = match cfg.transport {
        TransportKind::InProc => {
            let (server_ends, trainer_ends): (Vec<_>, Vec<_>) =
                (0..m).map(|c| channel_pair(SERVER, c as u32, log.clone())).unzip();
            let conns: Vec<Box<dyn Connection>> =
                server_ends.into_iter().map(|c| Box::new(c) as Box<dyn Connection>).collect();
            thread::scope(|s| {
                let handles: Vec<_> = trainers
                    .into_iter()
                    .zip(trainer_ends)
                    .map(|(t, conn)| {
                        s.spawn(move || {
                            let t = t.run(&conn)?;
                            Ok((t, conn.counters().snapshot()))
                        })
                    })
                    .collect();
                let outcome = Server::new(settings, conns).run();
                (outcome, handles.into_iter().map(|h| h.join().unwrap_or(Err(ProtocolError::Panicked))).collect::<Vec<_>>())
            })
        }
        TransportKind::Tcp => {
            let hub = TcpHub::bind(cfg.address.as_str())?;
            let addr = hub.local_addr()?;
            thread::scope(|s| {
                let handles: Vec<_> = trainers
                    .into_iter()
                    .map(|t| {
                        let log = log.clone();
                        s.spawn(move || {
                            let conn = TcpConnection::connect(addr, t.id, log)?;
                            let t = t.run(&conn)?;
                            Ok((t, conn.counters().snapshot()))
                        })
                    })
                    .collect();
                let outcome = (0..m)
                    .map(|_| hub.accept(SERVER, log.clone()).map(|c| Box::new(c) as Box<dyn Connection>))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(ProtocolError::from)
                    .and_then(|conns| Server::new(settings, conns).run());
                (outcome, handles.into_iter().map(|h| h.join().unwrap_or(Err(ProtocolError::Panicked))).collect::<Vec<_>>())
            })
        }
    };
    let outcome = outcome?;
    let (trainers, trainer_counters) = finished.into_iter().collect::<Result<Vec<_>, ProtocolError>>()?.into_iter().unzip();
    let report = ExperimentReport::new(
        cfg.to_pairs(),
        outcome.accuracy,
        outcome.phases,
        theoretical_comm(&outcome.comm_model),
    );
    Ok(RunOutput { report, trainers, global: outcome.global, partition, comm_model: outcome.comm_model, trainer_counters })
}

/// Loads the configured dataset, runs it and writes metrics to `output_dir`
/// when one is set.
pub fn run_fedgraph(cfg: &ExperimentConfig) -> Result<ExperimentReport, ProtocolError> {
    cfg.validate()?;
    let graph = load_dataset(&cfg.dataset)?;
    let out = run_experiment(&graph, cfg, RunOptions::default())?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(crate::monitor::MonitorError::from)?;
        export(&out.report, ExportFormat::Jsonl, &dir.join("metrics.jsonl"))?;
        export(&out.report, ExportFormat::Csv, &dir.join("metrics.csv"))?;
    }
    Ok(out.report)
}

/// Trains on the whole graph with the same model, initialization, optimizer
/// and step schedule as the federated run, without any messaging. Returns
/// the test accuracy series and the final parameters.
pub fn train_centralized(graph: &Graph, cfg: &ExperimentConfig) -> Result<(Vec<f64>, Vec<f32>), ProtocolError> {
    cfg.validate()?;
    let part = PartitionSpec::from_assignment(vec![0; graph.num_nodes()], 1, graph)?;
    let mut t = Trainer::new(0, extract_local_subgraph(graph, &part, 0), trainer_settings(cfg, None));
    let mut in_dim = graph.feature_dim();
    if cfg.method == Method::FedGcn {
        let mut x = Matrix::from_vec(graph.num_nodes(), graph.feature_dim(), graph.features().to_vec())?;
        if let (true, Some(k)) = (cfg.use_lowrank, cfg.rank) {
            let settings = server_settings(cfg, graph, None);
            x = project_features(&x, &gen_projection(graph.feature_dim(), k, settings.projection_seed())?)?;
            in_dim = k;
        }
        let x_hat = centralized_aggregate(graph, &x.cast(), cfg.hops());
        let degree: Vec<usize> = (0..graph.num_nodes()).map(|u| graph.degree(u)).collect();
        t.set_input(normalize_rows(&x_hat, &degree, cfg.hops()), x_hat);
    }
    t.set_global(&initial_model(in_dim, cfg.hidden, graph.num_classes() as usize, cfg.seed).flatten())?;
    let accuracy_now = |t: &Trainer| -> Result<f64, ProtocolError> {
        let (c, n) = t.evaluate(Split::Test)?;
        Ok(if n == 0 { 0.0 } else { c as f64 / n as f64 })
    };
    let mut accuracy = vec![accuracy_now(&t)?];
    for _ in 0..cfg.global_rounds {
        let params = t.local_train()?;
        t.set_global(&params)?;
        accuracy.push(accuracy_now(&t)?);
    }
    let global = t.global_model().ok_or(ProtocolError::NotSynchronized)?.flatten();
    Ok((accuracy, global))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sbm_generate, SbmParams};
    use crate::monitor::Phase;

    fn graph() -> Graph {
        sbm_generate(&SbmParams { blocks: 3, nodes_per_block: 30, p_in: 0.2, p_out: 0.02, feature_dim: 8, seed: 3 }).unwrap()
    }

    fn cfg(method: Method, m: usize, rounds: usize) -> ExperimentConfig {
        ExperimentConfig {
            dataset: "sbm:".into(),
            method,
            n_trainer: m,
            global_rounds: rounds,
            timeout_ms: 30_000,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn single_trainer_matches_centralized_training() {
        for method in [Method::FedAvg, Method::FedGcn] {
            let g = graph();
            let c = ExperimentConfig { dropout: 0.0, ..cfg(method, 1, 4) };
            let fed = run_experiment(&g, &c, RunOptions::default()).unwrap();
            let (acc, global) = train_centralized(&g, &c).unwrap();
            assert_eq!(fed.report.accuracy, acc, "{method}");
            assert_eq!(fed.global.unwrap(), global, "{method}");
        }
    }

    #[test]
    fn accounting_closes_and_pretrain_only_for_fedgcn() {
        for method in [Method::FedAvg, Method::FedGcn] {
            let log = MessageLog::new();
            let out = run_experiment(&graph(), &cfg(method, 3, 2), RunOptions { log: Some(log.clone()), ..Default::default() })
                .unwrap();
            let t = &out.report.totals;
            assert_eq!(t.total_bytes(), log.offline_bytes());
            assert_eq!(t.pretrain_bytes > 0, method == Method::FedGcn);
            assert_eq!(out.report.accuracy.len(), 3);
            assert!(out.report.phases.iter().any(|p| p.phase == Phase::Teardown));
        }
    }

    #[test]
    fn dropped_request_is_retried() {
        let c = ExperimentConfig { timeout_ms: 300, ..cfg(Method::FedAvg, 3, 3) };
        let opts = RunOptions { faults: vec![(1, Fault::DropRequest(1))], ..Default::default() };
        let out = run_experiment(&graph(), &c, opts).unwrap();
        assert_eq!(out.report.accuracy.len(), 4);
    }

    #[test]
    fn silent_trainer_times_out() {
        let c = ExperimentConfig { timeout_ms: 200, ..cfg(Method::FedAvg, 3, 3) };
        let opts = RunOptions { faults: vec![(2, Fault::Silent(1))], ..Default::default() };
        match run_experiment(&graph(), &c, opts) {
            Err(ProtocolError::Timeout { round: 1, trainer: 2 }) => {}
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("expected a timeout"),
        }
    }

    #[test]
    fn fedgcn_pretrain_matches_centralized_aggregation() {
        let g = graph();
        let c = ExperimentConfig { num_hops: Some(2), ..cfg(Method::FedGcn, 4, 0) };
        let out = run_experiment(&g, &c, RunOptions::default()).unwrap();
        let x = Matrix::from_vec(g.num_nodes(), g.feature_dim(), g.features().to_vec()).unwrap().cast::<f64>();
        let central = centralized_aggregate(&g, &x, 2);
        for t in &out.trainers {
            let got = t.pre_aggregated().unwrap();
            for (i, &gid) in t.local.global_ids.iter().enumerate() {
                for j in 0..g.feature_dim() {
                    assert!((got.get(i, j) - central.get(gid, j)).abs() < 1e-4);
                }
            }
        }
    }
}
