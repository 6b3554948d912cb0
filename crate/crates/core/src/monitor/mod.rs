//! Per-phase time and byte accounting, the analytic communication model, and
//! JSONL/CSV export.

mod export;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export, import_jsonl, ExportFormat, Summary, CSV_COLUMNS};

/// Participant id used for the server's own entries.
pub const SERVER: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("monitor already finalized")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed metrics file: {0}")]
    Format(String),
}

/// Registration and initial model sync happen in `Setup`; `Teardown`
/// carries the shutdown messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Phase {
    Setup,
    Pretrain,
    TrainRound(u32),
    Eval(u32),
    Teardown,
}

impl Phase {
    pub fn round(&self) -> Option<u32> {
        match self {
            Phase::TrainRound(r) | Phase::Eval(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_pretrain(&self) -> bool {
        matches!(self, Phase::Pretrain)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Setup => write!(f, "setup"),
            Phase::Pretrain => write!(f, "pretrain"),
            Phase::TrainRound(r) => write!(f, "train_round({r})"),
            Phase::Eval(r) => write!(f, "eval({r})"),
            Phase::Teardown => write!(f, "teardown"),
        }
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let arg = |prefix: &str| {
            s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')).and_then(|r| r.parse::<u32>().ok())
        };
        match s {
            "setup" => Ok(Phase::Setup),
            "pretrain" => Ok(Phase::Pretrain),
            "teardown" => Ok(Phase::Teardown),
            _ => arg("train_round(")
                .map(Phase::TrainRound)
                .or_else(|| arg("eval(").map(Phase::Eval))
                .ok_or_else(|| format!("unknown phase {s:?}")),
        }
    }
}

impl From<Phase> for String {
    fn from(p: Phase) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Phase {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// One participant's share of one phase. For trainers the byte fields are
/// measured on the server side of that trainer's link (`up` = trainer to
/// server); server entries carry the phase wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub phase: Phase,
    pub participant: u32,
    pub wall_ms: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub msgs_up: u64,
    pub msgs_down: u64,
    pub peak_rss_bytes: Option<u64>,
}

impl PhaseMetrics {
    pub fn new(phase: Phase, participant: u32) -> Self {
        Self { phase, participant, wall_ms: 0.0, bytes_up: 0, bytes_down: 0, msgs_up: 0, msgs_down: 0, peak_rss_bytes: None }
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    /// Bytes excluding envelope headers.
    pub fn payload_bytes(&self) -> u64 {
        self.bytes().saturating_sub(crate::transport::wire::HEADER_LEN as u64 * (self.msgs_up + self.msgs_down))
    }
}

/// Sums over a set of entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub pretrain_bytes: u64,
    pub training_bytes: u64,
    pub pretrain_payload_bytes: u64,
    pub training_payload_bytes: u64,
    /// Server wall-clock per category.
    pub pretrain_ms: f64,
    pub training_ms: f64,
    /// Trainer-reported local compute time.
    pub local_train_ms: f64,
}

impl Totals {
    pub fn of(entries: &[PhaseMetrics]) -> Self {
        let mut t = Totals::default();
        for e in entries {
            if e.phase.is_pretrain() {
                t.pretrain_bytes += e.bytes();
                t.pretrain_payload_bytes += e.payload_bytes();
            } else {
                t.training_bytes += e.bytes();
                t.training_payload_bytes += e.payload_bytes();
            }
            match (e.participant == SERVER, e.phase.is_pretrain()) {
                (true, true) => t.pretrain_ms += e.wall_ms,
                (true, false) => t.training_ms += e.wall_ms,
                (false, _) if matches!(e.phase, Phase::TrainRound(_)) => t.local_train_ms += e.wall_ms,
                _ => {}
            }
        }
        t
    }

    pub fn total_bytes(&self) -> u64 {
        self.pretrain_bytes + self.training_bytes
    }

    pub fn total_payload_bytes(&self) -> u64 {
        self.pretrain_payload_bytes + self.training_payload_bytes
    }
}

/// Thread-safe append-only metrics sink.
#[derive(Debug, Default)]
pub struct Monitor {
    state: Mutex<(Vec<PhaseMetrics>, bool)>,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, m: PhaseMetrics) -> Result<(), MonitorError> {
        let mut s = self.state.lock().unwrap();
        if s.1 {
            return Err(MonitorError::Closed);
        }
        s.0.push(m);
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<PhaseMetrics> {
        self.state.lock().unwrap().0.clone()
    }

    pub fn totals(&self) -> Totals {
        Totals::of(&self.state.lock().unwrap().0)
    }

    /// Closes the sink; later `record` calls fail.
    pub fn finalize(&self) -> Vec<PhaseMetrics> {
        let mut s = self.state.lock().unwrap();
        s.1 = true;
        s.0.clone()
    }
}

/// High-water resident set size of this process, where the platform exposes it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Inputs to [`theoretical_comm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommModel {
    /// Feature rows uploaded / returned during pre-train, summed over hops.
    pub pretrain_rows_up: u64,
    pub pretrain_rows_down: u64,
    /// Width of a pre-train row: `k` under low rank, else `d`.
    pub row_dim: usize,
    pub trainers: usize,
    pub selected_per_round: usize,
    pub rounds: usize,
    pub params: usize,
    pub he: bool,
    /// Ciphertext bytes per 4-byte plaintext value; ignored unless `he`.
    pub expansion: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CommEstimate {
    pub pretrain_bytes: f64,
    pub training_bytes: f64,
}

impl CommEstimate {
    pub fn total(&self) -> f64 {
        self.pretrain_bytes + self.training_bytes
    }
}

/// Analytic payload volume, headers and index lists excluded:
///
/// * pre-train = (rows_up + rows_down) · row_dim · 4 · e
/// * training  = (rounds · selected + (rounds + 1) · trainers) · p · 4 · e
///
/// where `e` is the ciphertext expansion (1 in plaintext). The second
/// training term is the model sync to every trainer after each round plus
/// the initial one.
pub fn theoretical_comm(m: &CommModel) -> CommEstimate {
    let e = if m.he { m.expansion } else { 1.0 };
    let value = 4.0 * e;
    let pretrain_bytes = (m.pretrain_rows_up + m.pretrain_rows_down) as f64 * m.row_dim as f64 * value;
    let transfers = m.rounds * m.selected_per_round + (m.rounds + 1) * m.trainers;
    CommEstimate { pretrain_bytes, training_bytes: transfers as f64 * m.params as f64 * value }
}

/// Outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Resolved configuration, key by key.
    pub config: BTreeMap<String, String>,
    /// Test accuracy after the initial sync and after each round.
    pub accuracy: Vec<f64>,
    pub final_accuracy: Option<f64>,
    pub totals: Totals,
    pub theoretical: CommEstimate,
    pub phases: Vec<PhaseMetrics>,
}

impl ExperimentReport {
    pub fn new(
        config: BTreeMap<String, String>,
        accuracy: Vec<f64>,
        phases: Vec<PhaseMetrics>,
        theoretical: CommEstimate,
    ) -> Self {
        let final_accuracy = accuracy.last().copied();
        Self { config, final_accuracy, totals: Totals::of(&phases), theoretical, accuracy, phases }
    }

    /// Mean trainer-reported local training time per (trainer, round).
    pub fn mean_local_train_ms(&self) -> f64 {
        let v: Vec<f64> = self
            .phases
            .iter()
            .filter(|p| p.participant != SERVER && matches!(p.phase, Phase::TrainRound(_)))
            .map(|p| p.wall_ms)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}
