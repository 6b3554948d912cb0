use std::sync::Arc;

use fedgraph::data::{parse_config, ExperimentConfig, Method};
use fedgraph::graph::{sbm_generate, Graph, SbmParams};
use fedgraph::protocol::{initial_model, run_experiment, run_fedgraph, RunOptions};
use fedgraph::transport::MessageLog;

fn blocks() -> Graph {
    sbm_generate(&SbmParams { blocks: 4, nodes_per_block: 100, p_in: 0.1, p_out: 0.01, feature_dim: 16, seed: 7 }).unwrap()
}

fn config(method: Method, trainers: usize, rounds: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: "sbm:".into(),
        method,
        n_trainer: trainers,
        global_rounds: rounds,
        he_key_bits: 512,
        timeout_ms: 60_000,
        ..Default::default()
    }
}

fn trainer_globals(out: &fedgraph::protocol::RunOutput) -> Vec<Vec<f32>> {
    out.trainers.iter().map(|t| t.global_model().expect("synchronized").flatten()).collect()
}

#[test]
fn frozen_trainers_keep_the_initial_model() {
    let g = blocks();
    for method in [Method::FedAvg, Method::FedGcn] {
        for (steps, lr) in [(0, 0.01), (3, 0.0)] {
            let cfg = ExperimentConfig { local_step: steps, learning_rate: lr, ..config(method, 4, 3) };
            let out = run_experiment(&g, &cfg, RunOptions::default()).unwrap();
            let want = initial_model(g.feature_dim(), cfg.hidden, 4, cfg.seed).flatten();
            assert_eq!(out.global.as_deref(), Some(&want[..]), "{method} steps={steps} lr={lr}");
        }
    }
}

#[test]
fn ten_trainer_fedgcn_learns_the_blocks() {
    let cfg = ExperimentConfig { num_hops: Some(2), global_rounds: 100, ..config(Method::FedGcn, 10, 100) };
    let out = run_experiment(&blocks(), &cfg, RunOptions::default()).unwrap();
    let acc = out.report.final_accuracy.unwrap();
    assert!(acc >= 0.77, "{acc}");
    assert_eq!(out.report.accuracy.len(), 101);
}

#[test]
fn aggregation_modes_agree() {
    let g = blocks();
    let base = config(Method::FedAvg, 3, 4);
    let plain = trainer_globals(&run_experiment(&g, &base, RunOptions::default()).unwrap());
    let he = trainer_globals(
        &run_experiment(&g, &ExperimentConfig { use_encryption: true, ..base.clone() }, RunOptions::default()).unwrap(),
    );
    let dp = trainer_globals(
        &run_experiment(
            &g,
            &ExperimentConfig { use_dp: true, dp_sigma: Some(0.0), dp_clip: Some(1e9), ..base.clone() },
            RunOptions::default(),
        )
        .unwrap(),
    );
    for t in 0..3 {
        let worst = |other: &[f32]| plain[t].iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(worst(&he[t]) < 1e-4, "encrypted differs by {}", worst(&he[t]));
        assert!(worst(&dp[t]) < 1e-5, "noise-free dp differs by {}", worst(&dp[t]));
    }
}

#[test]
fn encrypted_pretrain_matches_plaintext() {
    let g = blocks();
    let cfg = ExperimentConfig { num_hops: Some(2), ..config(Method::FedGcn, 4, 1) };
    let plain = run_experiment(&g, &cfg, RunOptions::default()).unwrap();
    let he = run_experiment(&g, &ExperimentConfig { use_encryption: true, ..cfg }, RunOptions::default()).unwrap();
    for (a, b) in plain.trainers.iter().zip(&he.trainers) {
        let (a, b) = (a.pre_aggregated().unwrap(), b.pre_aggregated().unwrap());
        let scale = 1.0 + a.as_slice().iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(a.max_abs_diff(b) < 10.0 * 2f64.powi(-25) * scale);
    }
}

#[test]
fn observed_traffic_tracks_the_model() {
    let g = blocks();
    for method in [Method::FedAvg, Method::FedGcn] {
        for encrypted in [false, true] {
            let cfg = ExperimentConfig { use_encryption: encrypted, ..config(method, 4, 3) };
            let log = Arc::new(MessageLog::default());
            let out = run_experiment(&g, &cfg, RunOptions { log: Some(log.clone()), ..Default::default() }).unwrap();
            let t = &out.report.totals;
            let theory = &out.report.theoretical;
            let ratio = t.training_payload_bytes as f64 / theory.training_bytes;
            assert!((0.9..=1.1).contains(&ratio), "{method} he={encrypted}: training ratio {ratio}");
            if method == Method::FedGcn {
                let ratio = t.pretrain_payload_bytes as f64 / theory.pretrain_bytes;
                assert!((0.9..=1.1).contains(&ratio), "{method} he={encrypted}: pretrain ratio {ratio}");
            } else {
                assert_eq!(t.pretrain_payload_bytes, 0);
            }
        }
    }
}

#[test]
fn config_file_drives_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "# small smoke run\nfedgraph_task: NC\ndataset: sbm:blocks=3,n=30,p_in=0.2,p_out=0.02,d=8,seed=3\n\
         method: FedGCN\nn_trainer: 3\nglobal_rounds: 5\nnum_hops: 1\nseed: 11\noutput_dir: {}\n",
        dir.path().display()
    );
    let cfg = parse_config(&text).unwrap();
    let report = run_fedgraph(&cfg).unwrap();
    assert_eq!(report.config["method"], "FedGCN");
    assert_eq!(report.config["n_trainer"], "3");
    assert_eq!(report.config["seed"], "11");
    assert_eq!(report.accuracy.len(), 6);
    assert!(dir.path().join("metrics.jsonl").exists());
    assert!(dir.path().join("metrics.csv").exists());
    assert_eq!(run_fedgraph(&cfg).unwrap().accuracy, report.accuracy);
}
