//! Synthetic load injection along a call path and detector evaluation over
//! (service, minute) pairs.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gae::ModelParams;
use crate::graph::{GraphError, GraphInput, GraphSnapshot, Profile, ServiceId};
use crate::scoring::{score_snapshot, AnomalyReport, ReferenceEmbedding, ScoreError, ServiceStatus};
use crate::telemetry::{Partition, SnapshotCorpus};

/// Upper bound on enumerated candidate paths.
pub const DEFAULT_CANDIDATE_CAP: usize = 4096;

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("no directed path with {0} services")]
    NoSuchPath(usize),
    #[error("snapshot at minute {minute} has no edge {src} -> {dst}")]
    MissingEdge { minute: i64, src: ServiceId, dst: ServiceId },
    #[error("invalid injection: {0}")]
    InvalidSpec(String),
    #[error("no snapshot at minute {0}")]
    MissingMinute(i64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Picks a simple directed path of `length` services. Candidates are
/// enumerated by a DFS whose start and neighbour order is shuffled under
/// `seed`, up to `cap` candidates; the one with the largest minimum edge TPS
/// wins, earliest-found on ties.
pub fn select_call_path(
    snapshot: &GraphSnapshot,
    length: usize,
    seed: u64,
    cap: usize,
) -> Result<Vec<ServiceId>, InjectError> {
    if length < 2 {
        return Err(InjectError::InvalidSpec(format!("path length {length} is below 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<ServiceId> = snapshot.edges().map(|e| e.0).collect();
    starts.dedup();
    starts.shuffle(&mut rng);

    let mut best: Option<(f64, Vec<ServiceId>)> = None;
    let mut found = 0usize;
    let mut path = Vec::with_capacity(length);
    for start in starts {
        if found >= cap {
            break;
        }
        path.clear();
        path.push(start);
        dfs(snapshot, length, f64::INFINITY, &mut path, &mut rng, cap, &mut found, &mut best);
    }
    best.map(|b| b.1).ok_or(InjectError::NoSuchPath(length))
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    snapshot: &GraphSnapshot,
    length: usize,
    min_tps: f64,
    path: &mut Vec<ServiceId>,
    rng: &mut ChaCha8Rng,
    cap: usize,
    found: &mut usize,
    best: &mut Option<(f64, Vec<ServiceId>)>,
) {
    if path.len() == length {
        *found += 1;
        if best.as_ref().is_none_or(|b| min_tps > b.0) {
            *best = Some((min_tps, path.clone()));
        }
        return;
    }
    let last = *path.last().expect("path starts non-empty");
    let mut next: Vec<(ServiceId, f64)> = snapshot.outgoing(last).filter(|(d, _)| !path.contains(d)).collect();
    next.shuffle(rng);
    for (d, w) in next {
        if *found >= cap {
            return;
        }
        path.push(d);
        dfs(snapshot, length, min_tps.min(w), path, rng, cap, found, best);
        path.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    pub path: Vec<ServiceId>,
    /// Relative TPS increase drawn uniformly from `[low, high]`.
    pub pct_low: f64,
    pub pct_high: f64,
    pub seed: u64,
}

impl InjectionSpec {
    pub fn validate(&self) -> Result<(), InjectError> {
        if self.path.len() < 2 {
            return Err(InjectError::InvalidSpec("path needs at least one edge".into()));
        }
        if !(self.pct_low.is_finite() && self.pct_high.is_finite() && 0.0 <= self.pct_low && self.pct_low <= self.pct_high)
        {
            return Err(InjectError::InvalidSpec(format!(
                "pct range ({}, {}) must satisfy 0 <= low <= high",
                self.pct_low, self.pct_high
            )));
        }
        Ok(())
    }

    pub fn edges(&self) -> impl Iterator<Item = (ServiceId, ServiceId)> + '_ {
        self.path.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub services: BTreeSet<ServiceId>,
    pub minutes: Vec<i64>,
}

impl GroundTruth {
    pub fn is_anomalous(&self, minute: i64, service: ServiceId) -> bool {
        self.minutes.contains(&minute) && self.services.contains(&service)
    }
}

/// Multiplies each path edge by `1 + u`, with `u` drawn per edge from a
/// stream keyed by the snapshot minute. The result is labelled Synthetic.
pub fn inject_path_load(
    snapshot: &GraphSnapshot,
    spec: &InjectionSpec,
) -> Result<(GraphSnapshot, GroundTruth), InjectError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(snapshot.timestamp as u64);
    let mut out = snapshot.clone();
    out.profile = Profile::Synthetic;
    for (src, dst) in spec.edges() {
        let tps = snapshot.tps(src, dst).ok_or(InjectError::MissingEdge {
            minute: snapshot.timestamp,
            src,
            dst,
        })?;
        let u = if spec.pct_low == spec.pct_high {
            spec.pct_low
        } else {
            rng.gen_range(spec.pct_low..=spec.pct_high)
        };
        out.set_edge(src, dst, tps * (1.0 + u))?;
    }
    let truth = GroundTruth {
        services: spec.path.iter().copied().collect(),
        minutes: vec![snapshot.timestamp],
    };
    Ok((out, truth))
}

/// Confusion counts over (service, minute) pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

/// A rate whose denominator may be zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Value(f64),
    /// Nothing in the denominator (for precision: nothing was flagged).
    NoPositives,
}

impl Rate {
    fn of(num: usize, den: usize) -> Self {
        if den == 0 {
            Rate::NoPositives
        } else {
            Rate::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Rate::Value(v) => Some(v),
            Rate::NoPositives => None,
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Value(v) => write!(f, "{v:.6}"),
            Rate::NoPositives => f.write_str("NoPositives"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub confusion: Confusion,
    pub precision: Rate,
    pub recall: Rate,
    pub false_positive_rate: Rate,
}

impl EvalMetrics {
    pub fn from_confusion(c: Confusion) -> Self {
        Self {
            confusion: c,
            precision: Rate::of(c.tp, c.tp + c.fp),
            recall: Rate::of(c.tp, c.tp + c.fn_),
            false_positive_rate: Rate::of(c.fp, c.fp + c.tn),
        }
    }

    /// Flat `key=value` lines.
    pub fn to_report(&self) -> String {
        let c = &self.confusion;
        format!(
            "precision={}\nrecall={}\nfalse_positive_rate={}\ntp={}\nfp={}\nfn={}\ntn={}\n",
            self.precision, self.recall, self.false_positive_rate, c.tp, c.fp, c.fn_, c.tn
        )
    }
}

/// Tallies one report's scored services against the truth. Services without
/// a cosine score are outside the universe.
pub fn confusion_for(report: &AnomalyReport, truth: &GroundTruth) -> Confusion {
    let mut c = Confusion::default();
    for s in &report.services {
        if !matches!(s.status, ServiceStatus::Scored(_)) {
            continue;
        }
        match (s.flagged, truth.is_anomalous(report.test_timestamp, s.service)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn evaluate(reports: &[AnomalyReport], truth: &GroundTruth) -> EvalMetrics {
    let c = reports
        .iter()
        .map(|r| confusion_for(r, truth))
        .fold(Confusion::default(), Confusion::merge);
    EvalMetrics::from_confusion(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionConfig {
    pub path_length: usize,
    pub pct_low: f64,
    pub pct_high: f64,
    pub seed: u64,
    /// Minutes to perturb. Empty means the first `minute_count` reference minutes.
    pub minutes: Vec<i64>,
    pub minute_count: usize,
    pub tau: f64,
    pub candidate_cap: usize,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            path_length: 5,
            pct_low: 0.2,
            pct_high: 1.0,
            seed: 0,
            minutes: Vec::new(),
            minute_count: 30,
            tau: crate::scoring::DEFAULT_TAU,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InjectionOutcome {
    pub path: Vec<ServiceId>,
    pub truth: GroundTruth,
    pub perturbed: Vec<GraphSnapshot>,
    pub reports: Vec<AnomalyReport>,
    pub metrics: EvalMetrics,
}

/// Selects a path on the first target minute, injects it into every target
/// minute, scores each perturbed snapshot, and evaluates.
pub fn run_injection(
    params: &ModelParams,
    corpus: &SnapshotCorpus,
    reference: &ReferenceEmbedding,
    config: &InjectionConfig,
) -> Result<InjectionOutcome, InjectError> {
    let minutes: Vec<i64> = if config.minutes.is_empty() {
        corpus
            .partition(Partition::Reference)
            .take(config.minute_count)
            .map(|s| s.timestamp)
            .collect()
    } else {
        config.minutes.clone()
    };
    let snapshots = minutes
        .iter()
        .map(|&m| corpus.snapshot_at(m).ok_or(InjectError::MissingMinute(m)))
        .collect::<Result<Vec<_>, _>>()?;
    let first = snapshots
        .first()
        .ok_or_else(|| InjectError::InvalidSpec("no target minutes".into()))?;
    let path = select_call_path(first, config.path_length, config.seed, config.candidate_cap)?;
    let spec = InjectionSpec {
        path: path.clone(),
        pct_low: config.pct_low,
        pct_high: config.pct_high,
        seed: config.seed,
    };
    let n = corpus.registry.len();
    let mut perturbed = Vec::with_capacity(snapshots.len());
    let mut reports = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let (p, _) = inject_path_load(snap, &spec)?;
        let input = GraphInput::from_snapshot(&p, n)?;
        reports.push(score_snapshot(params, &input, reference, config.tau)?);
        perturbed.push(p);
    }
    let truth = GroundTruth {
        services: path.iter().copied().collect(),
        minutes,
    };
    let metrics = evaluate(&reports, &truth);
    Ok(InjectionOutcome {
        path,
        truth,
        perturbed,
        reports,
        metrics,
    })
}
