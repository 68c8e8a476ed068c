//! Inference-side analytics: reference embeddings, cosine scoring against a
//! threshold, fan-out ratio diagnostics, and PCA of embeddings.

use thiserror::Error;

use crate::gae::{encode_matrix, ModelError, ModelParams};
use crate::graph::{GraphInput, GraphSnapshot, Profile, ServiceId, ServiceRegistry};
use crate::linalg::{dot, norm2, symmetric_eigen, Matrix};

/// Default flagging threshold.
pub const DEFAULT_TAU: f64 = 0.98;
/// Rows with a smaller L2 norm are not cosine-scored.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("no reference snapshots")]
    EmptyReference,
    #[error("reference snapshot at minute {0} is {1}, expected event")]
    NonEventReference(i64, Profile),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("covariance rank {achievable} is below the requested {requested} components")]
    DegenerateData { requested: usize, achievable: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-service mean embedding over the reference snapshots in which the
/// service had nonzero degree.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEmbedding {
    pub z_ref: Matrix,
    pub presence: Vec<usize>,
    pub timestamps: Vec<i64>,
}

impl ReferenceEmbedding {
    pub fn is_present(&self, service: ServiceId) -> bool {
        self.presence[service.index()] > 0
    }
}

pub fn build_reference(params: &ModelParams, references: &[GraphInput]) -> Result<ReferenceEmbedding, ScoreError> {
    let first = references.first().ok_or(ScoreError::EmptyReference)?;
    let n = first.n();
    let d = params.w1.cols();
    let mut sum = Matrix::zeros(n, d);
    let mut presence = vec![0usize; n];
    for r in references {
        if r.profile != Profile::Event {
            return Err(ScoreError::NonEventReference(r.timestamp, r.profile));
        }
        let z = encode_matrix(params, &r.propagation)?;
        for i in (0..n).filter(|&i| r.presence[i]) {
            presence[i] += 1;
            for (s, v) in sum.row_mut(i).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
    }
    for (i, &count) in presence.iter().enumerate() {
        if count > 0 {
            for s in sum.row_mut(i) {
                *s /= count as f64;
            }
        }
    }
    Ok(ReferenceEmbedding {
        z_ref: sum,
        presence,
        timestamps: references.iter().map(|r| r.timestamp).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cosine {
    Score(f64),
    /// One of the two rows has (near-)zero norm.
    Degenerate,
}

pub fn cosine_scores(z_test: &Matrix, z_ref: &Matrix) -> Result<Vec<Cosine>, ScoreError> {
    if z_test.shape() != z_ref.shape() {
        return Err(ScoreError::ShapeMismatch(format!(
            "test embeddings are {}x{}, reference is {}x{}",
            z_test.rows(),
            z_test.cols(),
            z_ref.rows(),
            z_ref.cols()
        )));
    }
    Ok((0..z_test.rows())
        .map(|i| {
            let (a, b) = (z_test.row(i), z_ref.row(i));
            let (na, nb) = (norm2(a), norm2(b));
            if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
                Cosine::Degenerate
            } else {
                Cosine::Score((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresenceKind {
    /// Active in the test snapshot, never in the reference.
    NewInTest,
    /// Seen in the reference, inactive in the test snapshot.
    MissingInTest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceStatus {
    Scored(f64),
    Degenerate,
    /// Inactive on both sides.
    Absent,
    Presence(PresenceKind),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceScore {
    pub service: ServiceId,
    pub status: ServiceStatus,
    pub flagged: bool,
}

impl ServiceScore {
    pub fn score(&self) -> Option<f64> {
        match self.status {
            ServiceStatus::Scored(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub tau: f64,
    pub test_timestamp: i64,
    pub reference_timestamps: Vec<i64>,
    pub services: Vec<ServiceScore>,
    pub presence_anomalies: Vec<(ServiceId, PresenceKind)>,
}

impl AnomalyReport {
    pub fn flagged(&self) -> impl Iterator<Item = ServiceId> + '_ {
        self.services.iter().filter(|s| s.flagged).map(|s| s.service)
    }

    /// Services that received a cosine score.
    pub fn scored(&self) -> impl Iterator<Item = (ServiceId, f64)> + '_ {
        self.services.iter().filter_map(|s| s.score().map(|v| (s.service, v)))
    }

    /// `service_name<TAB>score<TAB>flag<TAB>note`
    pub fn to_tsv(&self, registry: &ServiceRegistry) -> String {
        let mut out = String::from("service_name\tscore\tflag\tnote\n");
        for s in &self.services {
            let name = registry.name(s.service).unwrap_or("?");
            let (score, note) = match s.status {
                ServiceStatus::Scored(v) => (format!("{v:.6}"), ""),
                ServiceStatus::Degenerate => ("NA".to_owned(), "degenerate"),
                ServiceStatus::Absent => ("NA".to_owned(), "absent"),
                ServiceStatus::Presence(PresenceKind::NewInTest) => ("NA".to_owned(), "presence:new-in-test"),
                ServiceStatus::Presence(PresenceKind::MissingInTest) => {
                    ("NA".to_owned(), "presence:missing-in-test")
                }
            };
            out.push_str(&format!("{name}\t{score}\t{}\t{note}\n", u8::from(s.flagged)));
        }
        out
    }
}

/// Flags every scored service with `s < tau`. Presence anomalies are listed
/// separately and never flagged.
pub fn flag_anomalies(statuses: &[ServiceStatus], tau: f64) -> Result<AnomalyReport, ScoreError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ScoreError::InvalidThreshold(tau));
    }
    let services: Vec<ServiceScore> = statuses
        .iter()
        .enumerate()
        .map(|(i, &status)| ServiceScore {
            service: ServiceId(i),
            status,
            flagged: matches!(status, ServiceStatus::Scored(s) if s < tau),
        })
        .collect();
    let presence_anomalies = services
        .iter()
        .filter_map(|s| match s.status {
            ServiceStatus::Presence(kind) => Some((s.service, kind)),
            _ => None,
        })
        .collect();
    Ok(AnomalyReport {
        tau,
        test_timestamp: 0,
        reference_timestamps: Vec::new(),
        services,
        presence_anomalies,
    })
}

/// Encodes `test`, compares each service against the reference, and flags.
pub fn score_snapshot(
    params: &ModelParams,
    test: &GraphInput,
    reference: &ReferenceEmbedding,
    tau: f64,
) -> Result<AnomalyReport, ScoreError> {
    let z = encode_matrix(params, &test.propagation)?;
    let cos = cosine_scores(&z, &reference.z_ref)?;
    let statuses: Vec<ServiceStatus> = cos
        .iter()
        .enumerate()
        .map(|(i, c)| match (test.presence[i], reference.presence[i] > 0) {
            (false, false) => ServiceStatus::Absent,
            (true, false) => ServiceStatus::Presence(PresenceKind::NewInTest),
            (false, true) => ServiceStatus::Presence(PresenceKind::MissingInTest),
            (true, true) => match c {
                Cosine::Score(s) => ServiceStatus::Scored(*s),
                Cosine::Degenerate => ServiceStatus::Degenerate,
            },
        })
        .collect();
    let mut report = flag_anomalies(&statuses, tau)?;
    report.test_timestamp = test.timestamp;
    report.reference_timestamps = reference.timestamps.clone();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    /// The service has no incoming traffic.
    Undefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FanoutRatios {
    pub service: ServiceId,
    pub incoming_total: f64,
    /// Per outgoing edge: `tps(edge) / incoming_total`.
    pub outgoing: Vec<(ServiceId, Ratio)>,
    /// Per incoming edge: its share of `incoming_total`.
    pub incoming_share: Vec<(ServiceId, f64)>,
}

pub fn fanout_ratios(snapshot: &GraphSnapshot, service: ServiceId) -> FanoutRatios {
    let incoming: Vec<(ServiceId, f64)> = snapshot.incoming(service).collect();
    let incoming_total: f64 = incoming.iter().map(|e| e.1).sum();
    let outgoing = snapshot
        .outgoing(service)
        .map(|(d, w)| {
            let r = if incoming_total > 0.0 {
                Ratio::Value(w / incoming_total)
            } else {
                Ratio::Undefined
            };
            (d, r)
        })
        .collect();
    let incoming_share = incoming
        .into_iter()
        .map(|(s, w)| (s, w / incoming_total))
        .collect();
    FanoutRatios {
        service,
        incoming_total,
        outgoing,
        incoming_share,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeChange {
    Compared {
        ratio_a: f64,
        ratio_b: f64,
        /// `|a - b| / a × 100`
        abs_pct_diff: f64,
    },
    /// Edge only in the second snapshot.
    Appeared,
    /// Edge only in the first snapshot.
    Disappeared,
    /// Present in both, but the service had no incoming traffic in one of them.
    Undefined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FanoutDiff {
    pub service: ServiceId,
    pub edges: Vec<(ServiceId, EdgeChange)>,
}

impl FanoutDiff {
    pub fn max_pct_diff(&self) -> Option<f64> {
        self.edges
            .iter()
            .filter_map(|(_, c)| match c {
                EdgeChange::Compared { abs_pct_diff, .. } => Some(*abs_pct_diff),
                _ => None,
            })
            .reduce(f64::max)
    }

    /// `edge<TAB>ratio_a<TAB>ratio_b<TAB>abs_pct_diff`
    pub fn to_tsv(&self, registry: &ServiceRegistry) -> String {
        let src = registry.name(self.service).unwrap_or("?");
        let mut out = String::from("edge\tratio_a\tratio_b\tabs_pct_diff\n");
        for (dst, change) in &self.edges {
            let edge = format!("{src}->{}", registry.name(*dst).unwrap_or("?"));
            let cols = match change {
                EdgeChange::Compared {
                    ratio_a,
                    ratio_b,
                    abs_pct_diff,
                } => format!("{ratio_a:.6}\t{ratio_b:.6}\t{abs_pct_diff:.3}"),
                EdgeChange::Appeared => "NA\tNA\tappeared".to_owned(),
                EdgeChange::Disappeared => "NA\tNA\tdisappeared".to_owned(),
                EdgeChange::Undefined => "NA\tNA\tundefined".to_owned(),
            };
            out.push_str(&format!("{edge}\t{cols}\n"));
        }
        out
    }
}

pub fn fanout_diff(a: &GraphSnapshot, b: &GraphSnapshot, service: ServiceId) -> FanoutDiff {
    let ra = fanout_ratios(a, service);
    let rb = fanout_ratios(b, service);
    let mut dsts: Vec<ServiceId> = ra.outgoing.iter().chain(&rb.outgoing).map(|e| e.0).collect();
    dsts.sort();
    dsts.dedup();
    let lookup = |r: &FanoutRatios, d: ServiceId| r.outgoing.iter().find(|e| e.0 == d).map(|e| e.1);
    let edges = dsts
        .into_iter()
        .map(|d| {
            let change = match (lookup(&ra, d), lookup(&rb, d)) {
                (Some(Ratio::Value(x)), Some(Ratio::Value(y))) => EdgeChange::Compared {
                    ratio_a: x,
                    ratio_b: y,
                    abs_pct_diff: (x - y).abs() / x * 100.0,
                },
                (Some(_), Some(_)) => EdgeChange::Undefined,
                (None, Some(_)) => EdgeChange::Appeared,
                (Some(_), None) => EdgeChange::Disappeared,
                (None, None) => unreachable!("destination came from one of the two sides"),
            };
            (d, change)
        })
        .collect();
    FanoutDiff { service, edges }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `n × k` projected coordinates.
    pub coords: Matrix,
    /// `d × k`; column `c` is the unit direction of component `c`.
    pub components: Matrix,
    /// Share of total variance per component, non-increasing.
    pub explained: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Projects mean-centred rows of `z` onto the top-`k` covariance eigenvectors.
/// Each component is oriented so its first non-negligible entry is positive.
pub fn pca_project(z: &Matrix, k: usize) -> Result<PcaProjection, ScoreError> {
    let (n, d) = z.shape();
    if k == 0 || k > d || n < k {
        return Err(ScoreError::ShapeMismatch(format!(
            "cannot take {k} components of {n} points in {d} dimensions"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| z[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let centred = Matrix::from_fn(n, d, |i, j| z[(i, j)] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = centred.t_matmul(&centred).scale(1.0 / denom);
    let eig = symmetric_eigen(&cov);
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let top = eig.values.first().copied().unwrap_or(0.0);
    let rank = eig.values.iter().filter(|&&v| v > 1e-10 * top.max(f64::MIN_POSITIVE) && top > 0.0).count();
    if rank < k {
        return Err(ScoreError::DegenerateData {
            requested: k,
            achievable: rank,
        });
    }
    let mut components = Matrix::from_fn(d, k, |i, c| eig.vectors[(i, c)]);
    for c in 0..k {
        let first = (0..d).map(|i| components[(i, c)]).find(|v| v.abs() > 1e-12);
        if first.is_some_and(|v| v < 0.0) {
            for i in 0..d {
                components[(i, c)] = -components[(i, c)];
            }
        }
    }
    let coords = centred.matmul(&components);
    let explained = eig.values[..k].iter().map(|v| v.max(0.0) / total).collect();
    Ok(PcaProjection {
        coords,
        components,
        explained,
        mean,
    })
}

/// Mean pairwise Euclidean distance between points with equal labels, and
/// between points with different labels.
pub fn label_separation(coords: &Matrix, labels: &[usize]) -> (f64, f64) {
    let n = coords.rows();
    let (mut intra, mut intra_n, mut inter, mut inter_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = coords
                .row(i)
                .iter()
                .zip(coords.row(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if labels[i] == labels[j] {
                intra += dist;
                intra_n += 1;
            } else {
                inter += dist;
                inter_n += 1;
            }
        }
    }
    (intra / intra_n.max(1) as f64, inter / inter_n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_snapshot;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        let z = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 2.0]]);
        for c in cosine_scores(&z, &z).unwrap() {
            let Cosine::Score(s) = c else { panic!() };
            assert!((s - 1.0).abs() < 1e-12);
        }
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let b = Matrix::from_rows(&[vec![0.0, 1.0]]);
        assert_eq!(cosine_scores(&a, &b).unwrap(), vec![Cosine::Score(0.0)]);
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let b = Matrix::from_rows(&[vec![2.0, 4.0, 6.0]]);
        let Cosine::Score(s) = cosine_scores(&a, &b).unwrap()[0] else { panic!() };
        assert!((s - 1.0).abs() < 1e-12);
        let zero = Matrix::zeros(1, 3);
        assert_eq!(cosine_scores(&zero, &b).unwrap(), vec![Cosine::Degenerate]);
        assert!(matches!(cosine_scores(&a, &Matrix::zeros(2, 3)), Err(ScoreError::ShapeMismatch(_))));
    }

    #[test]
    fn threshold_examples() {
        let r = flag_anomalies(&[ServiceStatus::Scored(0.999), ServiceStatus::Scored(0.97)], 0.98).unwrap();
        assert_eq!(r.flagged().collect::<Vec<_>>(), vec![ServiceId(1)]);
        let r = flag_anomalies(&[ServiceStatus::Scored(0.98)], 0.98).unwrap();
        assert_eq!(r.flagged().count(), 0);
        let r = flag_anomalies(&[ServiceStatus::Scored(1.0); 4], 0.98).unwrap();
        assert_eq!(r.flagged().count(), 0);
        assert_eq!(flag_anomalies(&[], 1.0), Err(ScoreError::InvalidThreshold(1.0)));
        assert_eq!(flag_anomalies(&[], 0.0), Err(ScoreError::InvalidThreshold(0.0)));
        let r = flag_anomalies(
            &[ServiceStatus::Presence(PresenceKind::NewInTest), ServiceStatus::Degenerate],
            0.98,
        )
        .unwrap();
        assert_eq!(r.flagged().count(), 0);
        assert_eq!(r.presence_anomalies, vec![(ServiceId(0), PresenceKind::NewInTest)]);
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..8),
            other in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 8),
            c in 0.01f64..100.0,
        ) {
            let a = Matrix::from_rows(&rows);
            let b = Matrix::from_rows(&other[..rows.len()]);
            let s1 = cosine_scores(&a, &b).unwrap();
            let s2 = cosine_scores(&a.scale(c), &b).unwrap();
            for (x, y) in s1.iter().zip(&s2) {
                match (x, y) {
                    (Cosine::Score(x), Cosine::Score(y)) => prop_assert!((x - y).abs() <= 1e-12),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }

        #[test]
        fn flagging_is_monotone_in_tau(
            scores in prop::collection::vec(-1.0f64..=1.0, 1..20),
            t1 in 0.01f64..0.99,
            t2 in 0.01f64..0.99,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let statuses: Vec<_> = scores.iter().map(|&s| ServiceStatus::Scored(s)).collect();
            let a: Vec<_> = flag_anomalies(&statuses, lo).unwrap().flagged().collect();
            let b: Vec<_> = flag_anomalies(&statuses, hi).unwrap().flagged().collect();
            prop_assert!(a.iter().all(|s| b.contains(s)));
        }

        #[test]
        fn pca_variance_fractions(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 8..20),
        ) {
            let z = Matrix::from_rows(&rows);
            if let Ok(p) = pca_project(&z, 3) {
                prop_assert!(p.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
                for w in p.explained.windows(2) {
                    prop_assert!(w[0] + 1e-15 >= w[1]);
                }
            }
        }
    }

    #[test]
    fn reference_mean_and_presence() {
        let mut reg = ServiceRegistry::new();
        let s1 = build_snapshot(&mut reg, 0, Profile::Event, [("a", "b", 2.0), ("b", "c", 1.0)]).unwrap();
        reg.register("d").unwrap();
        let n = reg.len();
        let g1 = GraphInput::from_snapshot(&s1, n).unwrap();
        let mut cfg = crate::gae::ModelConfig::for_registry(n);
        cfg.hidden_dim = 3;
        cfg.embed_dim = 2;
        let (params, _) = crate::gae::init_params(&cfg).unwrap();
        let r1 = build_reference(&params, std::slice::from_ref(&g1)).unwrap();
        let z1 = encode_matrix(&params, &g1.propagation).unwrap();
        for i in 0..3 {
            assert_eq!(r1.z_ref.row(i), z1.row(i));
        }
        assert_eq!(r1.presence, vec![1, 1, 1, 0]);
        assert!(!r1.is_present(ServiceId(3)));
        let mut g2 = g1.clone();
        g2.timestamp = 1;
        let r2 = build_reference(&params, &[g1.clone(), g2]).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((r2.z_ref[(i, j)] - z1[(i, j)]).abs() < 1e-15);
            }
        }
        assert_eq!(build_reference(&params, &[]), Err(ScoreError::EmptyReference));
        let mut base = g1.clone();
        base.profile = Profile::Baseline;
        assert!(matches!(build_reference(&params, &[base]), Err(ScoreError::NonEventReference(..))));

        let report = score_snapshot(&params, &g1, &r1, 0.98).unwrap();
        assert_eq!(report.flagged().count(), 0);
        assert_eq!(report.services[3].status, ServiceStatus::Absent);
    }

    #[test]
    fn presence_anomalies_listed() {
        let mut reg = ServiceRegistry::new();
        let s_ref = build_snapshot(&mut reg, 0, Profile::Event, [("a", "b", 2.0)]).unwrap();
        let s_test = build_snapshot(&mut reg, 1, Profile::Gameday, [("a", "c", 2.0)]).unwrap();
        let n = reg.len();
        let mut cfg = crate::gae::ModelConfig::for_registry(n);
        cfg.hidden_dim = 2;
        cfg.embed_dim = 2;
        let (params, _) = crate::gae::init_params(&cfg).unwrap();
        let reference = build_reference(&params, &[GraphInput::from_snapshot(&s_ref, n).unwrap()]).unwrap();
        let report = score_snapshot(&params, &GraphInput::from_snapshot(&s_test, n).unwrap(), &reference, 0.98).unwrap();
        assert_eq!(
            report.presence_anomalies,
            vec![(ServiceId(1), PresenceKind::MissingInTest), (ServiceId(2), PresenceKind::NewInTest)]
        );
        let tsv = report.to_tsv(&reg);
        assert!(tsv.lines().any(|l| l == "c\tNA\t0\tpresence:new-in-test"), "{tsv}");
    }

    #[test]
    fn fanout_examples() {
        let mut reg = ServiceRegistry::new();
        let s = build_snapshot(
            &mut reg,
            0,
            Profile::Baseline,
            [("A", "B", 60.0), ("C", "B", 40.0), ("B", "D", 30.0), ("E", "F", 10.0)],
        )
        .unwrap();
        let b = reg.id("B").unwrap();
        let r = fanout_ratios(&s, b);
        assert_eq!(r.outgoing, vec![(reg.id("D").unwrap(), Ratio::Value(0.3))]);
        assert_eq!(r.incoming_share, vec![(reg.id("A").unwrap(), 0.6), (reg.id("C").unwrap(), 0.4)]);
        let e = fanout_ratios(&s, reg.id("E").unwrap());
        assert_eq!(e.outgoing, vec![(reg.id("F").unwrap(), Ratio::Undefined)]);
        assert!(fanout_ratios(&s, reg.id("D").unwrap()).outgoing.is_empty());
    }

    #[test]
    fn fanout_diff_examples() {
        let mut reg = ServiceRegistry::new();
        let a = build_snapshot(&mut reg, 0, Profile::Baseline, [("A", "B", 100.0), ("B", "C", 30.0)]).unwrap();
        let b = build_snapshot(
            &mut reg,
            1,
            Profile::Baseline,
            [("A", "B", 100.0), ("B", "C", 40.0), ("B", "D", 5.0)],
        )
        .unwrap();
        let d = fanout_diff(&a, &b, reg.id("B").unwrap());
        match d.edges[0].1 {
            EdgeChange::Compared { abs_pct_diff, .. } => assert!((abs_pct_diff - 33.3).abs() < 0.1),
            other => panic!("{other:?}"),
        }
        assert_eq!(d.edges[1], (reg.id("D").unwrap(), EdgeChange::Appeared));
        let same = fanout_diff(&a, &a, reg.id("B").unwrap());
        assert_eq!(same.max_pct_diff(), Some(0.0));
        let back = fanout_diff(&b, &a, reg.id("B").unwrap());
        assert_eq!(back.edges[1].1, EdgeChange::Disappeared);
    }

    #[test]
    fn pca_rank_one_is_degenerate() {
        let z = Matrix::from_fn(6, 3, |i, j| (i as f64) * [1.0, 2.0, -1.0][j]);
        assert_eq!(
            pca_project(&z, 2),
            Err(ScoreError::DegenerateData { requested: 2, achievable: 1 })
        );
        let p = pca_project(&z, 1).unwrap();
        assert!((p.explained[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_full_basis_reconstructs() {
        let z = Matrix::from_fn(10, 4, |i, j| ((i * 31 + j * 17) % 13) as f64 * 0.1 + (j as f64));
        let p = pca_project(&z, 4).unwrap();
        let back = p.coords.matmul_t(&p.components);
        for i in 0..10 {
            for j in 0..4 {
                assert!((back[(i, j)] + p.mean[j] - z[(i, j)]).abs() < 1e-8);
            }
        }
        for c in 0..4 {
            let first = (0..4).map(|i| p.components[(i, c)]).find(|v| v.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn separation_of_two_clusters() {
        let coords = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.1, 5.0]]);
        let (intra, inter) = label_separation(&coords, &[0, 0, 1, 1]);
        assert!(intra < inter);
    }
}
