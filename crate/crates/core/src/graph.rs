//! Service registry, per-minute call-graph snapshots, and the dense matrices
//! the autoencoder consumes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("self-edge on service {0}")]
    SelfEdge(String),
    #[error("non-positive weight {tps} on edge {src} -> {dst}")]
    NonPositiveWeight { src: String, dst: String, tps: f64 },
    #[error("snapshot at minute {0} has no edges")]
    EmptySnapshot(i64),
    #[error("invalid service name {0:?}")]
    InvalidServiceName(String),
    #[error("service id {id} is outside a registry of {size} services")]
    UnknownServiceId { id: usize, size: usize },
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error("unsupported format version {found:?} (expected {expected:?})")]
    FormatVersionMismatch { found: String, expected: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServiceId(pub usize);

impl ServiceId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Append-only mapping from service names to dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceRegistry {
    names: Vec<String>,
    ids: HashMap<String, ServiceId>,
}

impl ServiceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing id for `name`, or assigns the next dense id.
    pub fn register(&mut self, name: &str) -> Result<ServiceId, GraphError> {
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        validate_name(name)?;
        let id = ServiceId(self.names.len());
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ServiceId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: ServiceId) -> Option<&str> {
        self.names.get(id.0).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ServiceId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (ServiceId(i), n.as_str()))
    }

    /// Stable content hash used to tie model files to the registry they were
    /// trained against.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (id, name) in self.iter() {
            hasher.update(format!("{id}\t{name}\n").as_bytes());
        }
        hex16(&hasher.finalize())
    }

    /// Registry file: one `id<TAB>name` line per service.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, name) in self.iter() {
            out.push_str(&format!("{id}\t{name}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, GraphError> {
        let mut reg = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| GraphError::Format(format!("registry line {}: missing tab", lineno + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| GraphError::Format(format!("registry line {}: bad id {id:?}", lineno + 1)))?;
            if id != reg.len() || reg.id(name).is_some() {
                return Err(GraphError::Format(format!(
                    "registry line {}: ids must be dense and names unique",
                    lineno + 1
                )));
            }
            reg.register(name)?;
        }
        Ok(reg)
    }
}

fn validate_name(name: &str) -> Result<(), GraphError> {
    if name.is_empty() || name.contains(['\t', '\n', '\r', ',']) {
        return Err(GraphError::InvalidServiceName(name.to_owned()));
    }
    Ok(())
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Profile {
    Baseline,
    Event,
    Gameday,
    Synthetic,
}

impl Profile {
    pub const ALL: [Profile; 4] = [
        Profile::Baseline,
        Profile::Event,
        Profile::Gameday,
        Profile::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Baseline => "baseline",
            Profile::Event => "event",
            Profile::Gameday => "gameday",
            Profile::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| GraphError::UnknownProfile(s.to_owned()))
    }
}

/// One minute of traffic: directed edges weighted by TPS.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub timestamp: i64,
    pub profile: Profile,
    edges: BTreeMap<(ServiceId, ServiceId), f64>,
}

pub const SNAPSHOT_MAGIC: &str = "svcgraph-snapshot";
pub const SNAPSHOT_VERSION: &str = "v1";

impl GraphSnapshot {
    pub fn new(timestamp: i64, profile: Profile) -> Self {
        Self {
            timestamp,
            profile,
            edges: BTreeMap::new(),
        }
    }

    /// Adds `tps` to the `src -> dst` edge, creating it if needed.
    pub fn add_edge(&mut self, src: ServiceId, dst: ServiceId, tps: f64) -> Result<(), GraphError> {
        if src == dst {
            return Err(GraphError::SelfEdge(src.to_string()));
        }
        if !(tps.is_finite() && tps > 0.0) {
            return Err(GraphError::NonPositiveWeight {
                src: src.to_string(),
                dst: dst.to_string(),
                tps,
            });
        }
        *self.edges.entry((src, dst)).or_insert(0.0) += tps;
        Ok(())
    }

    /// Overwrites an existing edge weight. Used by perturbation code.
    pub fn set_edge(&mut self, src: ServiceId, dst: ServiceId, tps: f64) -> Result<(), GraphError> {
        if src == dst {
            return Err(GraphError::SelfEdge(src.to_string()));
        }
        if !(tps.is_finite() && tps > 0.0) {
            return Err(GraphError::NonPositiveWeight {
                src: src.to_string(),
                dst: dst.to_string(),
                tps,
            });
        }
        self.edges.insert((src, dst), tps);
        Ok(())
    }

    pub fn tps(&self, src: ServiceId, dst: ServiceId) -> Option<f64> {
        self.edges.get(&(src, dst)).copied()
    }

    /// Edges in `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (ServiceId, ServiceId, f64)> + '_ {
        self.edges.iter().map(|(&(s, d), &w)| (s, d, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn total_tps(&self) -> f64 {
        self.edges.values().sum()
    }

    pub fn max_tps(&self) -> Option<f64> {
        self.edges.values().copied().reduce(f64::max)
    }

    pub fn max_service_id(&self) -> Option<ServiceId> {
        self.edges.keys().map(|&(s, d)| s.max(d)).max()
    }

    /// Services with nonzero degree, as a dense mask over `n` ids.
    pub fn presence(&self, n: usize) -> Vec<bool> {
        let mut present = vec![false; n];
        for &(s, d) in self.edges.keys() {
            if s.0 < n {
                present[s.0] = true;
            }
            if d.0 < n {
                present[d.0] = true;
            }
        }
        present
    }

    pub fn outgoing(&self, service: ServiceId) -> impl Iterator<Item = (ServiceId, f64)> + '_ {
        self.edges
            .range((service, ServiceId(0))..=(service, ServiceId(usize::MAX)))
            .map(|(&(_, d), &w)| (d, w))
    }

    pub fn incoming(&self, service: ServiceId) -> impl Iterator<Item = (ServiceId, f64)> + '_ {
        self.edges
            .iter()
            .filter(move |(&(_, d), _)| d == service)
            .map(|(&(s, _), &w)| (s, w))
    }

    /// Text form: a header line then `src<TAB>dst<TAB>tps` per edge.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} {} {}\n",
            self.timestamp, self.profile
        );
        for (s, d, w) in self.edges() {
            // `{}` on f64 prints the shortest string that round-trips.
            out.push_str(&format!("{s}\t{d}\t{w}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| GraphError::Format("empty snapshot file".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 4 || parts[0] != SNAPSHOT_MAGIC {
            return Err(GraphError::Format(format!("bad header {header:?}")));
        }
        if parts[1] != SNAPSHOT_VERSION {
            return Err(GraphError::FormatVersionMismatch {
                found: parts[1].to_owned(),
                expected: SNAPSHOT_VERSION.to_owned(),
            });
        }
        let timestamp: i64 = parts[2]
            .parse()
            .map_err(|_| GraphError::Format(format!("bad timestamp {:?}", parts[2])))?;
        let profile: Profile = parts[3].parse()?;
        let mut snap = GraphSnapshot::new(timestamp, profile);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || GraphError::Format(format!("edge line {}: {line:?}", i + 2));
            if fields.len() != 3 {
                return Err(bad());
            }
            let s: usize = fields[0].parse().map_err(|_| bad())?;
            let d: usize = fields[1].parse().map_err(|_| bad())?;
            let w: f64 = fields[2].parse().map_err(|_| bad())?;
            if snap.edges.contains_key(&(ServiceId(s), ServiceId(d))) {
                return Err(bad());
            }
            snap.add_edge(ServiceId(s), ServiceId(d), w)?;
        }
        Ok(snap)
    }
}

/// Builds a snapshot from named edges, registering unseen names. Duplicate
/// `(src, dst)` pairs are summed.
pub fn build_snapshot<'a>(
    registry: &mut ServiceRegistry,
    timestamp: i64,
    profile: Profile,
    edges: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
) -> Result<GraphSnapshot, GraphError> {
    let mut snap = GraphSnapshot::new(timestamp, profile);
    for (src, dst, tps) in edges {
        if src == dst {
            return Err(GraphError::SelfEdge(src.to_owned()));
        }
        if !(tps.is_finite() && tps > 0.0) {
            return Err(GraphError::NonPositiveWeight {
                src: src.to_owned(),
                dst: dst.to_owned(),
                tps,
            });
        }
        let s = registry.register(src)?;
        let d = registry.register(dst)?;
        snap.add_edge(s, d, tps)?;
    }
    Ok(snap)
}

/// Snapshot weights divided by the snapshot's maximum edge weight.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSnapshot {
    pub timestamp: i64,
    pub profile: Profile,
    /// Maximum edge weight of the source snapshot.
    pub scale: f64,
    /// Directed `n×n` matrix with entries in `[0, 1]`.
    pub adjacency: Matrix,
}

pub fn normalize_weights(snapshot: &GraphSnapshot, n: usize) -> Result<NormalizedSnapshot, GraphError> {
    let scale = snapshot
        .max_tps()
        .ok_or(GraphError::EmptySnapshot(snapshot.timestamp))?;
    if let Some(id) = snapshot.max_service_id() {
        if id.0 >= n {
            return Err(GraphError::UnknownServiceId { id: id.0, size: n });
        }
    }
    let mut adjacency = Matrix::zeros(n, n);
    for (s, d, w) in snapshot.edges() {
        adjacency[(s.0, d.0)] = w / scale;
    }
    Ok(NormalizedSnapshot {
        timestamp: snapshot.timestamp,
        profile: snapshot.profile,
        scale,
        adjacency,
    })
}

impl NormalizedSnapshot {
    /// `(A + Aᵀ) / 2`, the reconstruction target.
    pub fn symmetric_target(&self) -> Matrix {
        symmetrize(&self.adjacency)
    }

    pub fn propagation(&self) -> Matrix {
        propagation_matrix(&self.adjacency)
    }
}

fn symmetrize(a: &Matrix) -> Matrix {
    let n = a.rows();
    Matrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) / 2.0)
}

/// `D̃^(-1/2) (S + I) D̃^(-1/2)` with `S` the symmetrized adjacency and `D̃`
/// the row sums of `S + I`.
pub fn propagation_matrix(adjacency: &Matrix) -> Matrix {
    let n = adjacency.rows();
    let mut s = symmetrize(adjacency);
    for i in 0..n {
        s[(i, i)] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / s.row(i).iter().sum::<f64>().sqrt())
        .collect();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = inv_sqrt[i] * s[(i, j)] * inv_sqrt[j];
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    p
}

/// Model-ready view of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub timestamp: i64,
    pub profile: Profile,
    pub propagation: Matrix,
    pub target: Matrix,
    pub presence: Vec<bool>,
}

impl GraphInput {
    pub fn from_snapshot(snapshot: &GraphSnapshot, n: usize) -> Result<Self, GraphError> {
        let norm = normalize_weights(snapshot, n)?;
        Ok(Self {
            timestamp: snapshot.timestamp,
            profile: snapshot.profile,
            propagation: norm.propagation(),
            target: norm.symmetric_target(),
            presence: snapshot.presence(n),
        })
    }

    pub fn n(&self) -> usize {
        self.propagation.rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn register_is_dense_and_idempotent() {
        let mut r = ServiceRegistry::new();
        assert_eq!(r.register("edge-gw").unwrap(), ServiceId(0));
        assert_eq!(r.register("edge-gw").unwrap(), ServiceId(0));
        assert_eq!(r.register("playback").unwrap(), ServiceId(1));
        assert_eq!(r.len(), 2);
        assert!(r.register("").is_err());
        assert!(r.register("a\tb").is_err());
    }

    #[test]
    fn duplicate_edges_sum() {
        let mut r = ServiceRegistry::new();
        let s = build_snapshot(&mut r, 0, Profile::Baseline, [("A", "B", 60.0), ("A", "B", 40.0)]).unwrap();
        assert_eq!(s.edge_count(), 1);
        assert_eq!(s.tps(ServiceId(0), ServiceId(1)), Some(100.0));
    }

    #[test]
    fn self_edge_and_bad_weight_rejected() {
        let mut r = ServiceRegistry::new();
        assert_eq!(
            build_snapshot(&mut r, 0, Profile::Baseline, [("A", "A", 5.0)]),
            Err(GraphError::SelfEdge("A".into()))
        );
        assert!(matches!(
            build_snapshot(&mut r, 0, Profile::Baseline, [("A", "B", 0.0)]),
            Err(GraphError::NonPositiveWeight { .. })
        ));
    }

    #[test]
    fn three_edges_four_services() {
        let mut r = ServiceRegistry::new();
        let s = build_snapshot(
            &mut r,
            0,
            Profile::Baseline,
            [("A", "B", 60.0), ("C", "B", 40.0), ("B", "D", 30.0)],
        )
        .unwrap();
        assert_eq!(s.edge_count(), 3);
        assert_eq!(r.len(), 4);
    }

    #[test]
    fn normalization_divides_by_max() {
        let mut r = ServiceRegistry::new();
        let s = build_snapshot(&mut r, 0, Profile::Baseline, [("A", "B", 100.0), ("B", "D", 30.0)]).unwrap();
        let norm = normalize_weights(&s, r.len()).unwrap();
        assert_eq!(norm.scale, 100.0);
        assert_eq!(norm.adjacency[(0, 1)], 1.0);
        assert_eq!(norm.adjacency[(1, 2)], 0.3);

        let single = build_snapshot(&mut r, 1, Profile::Baseline, [("A", "B", 7.0)]).unwrap();
        assert_eq!(normalize_weights(&single, r.len()).unwrap().adjacency[(0, 1)], 1.0);

        let empty = GraphSnapshot::new(5, Profile::Baseline);
        assert_eq!(normalize_weights(&empty, 3), Err(GraphError::EmptySnapshot(5)));
    }

    #[test]
    fn propagation_two_nodes() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let p = propagation_matrix(&a);
        let expected = [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p[(i, j)] - expected[i][j]).abs() < 1e-4);
            }
        }
        assert_eq!(propagation_matrix(&Matrix::zeros(1, 1)), Matrix::identity(1));
    }

    #[test]
    fn snapshot_text_roundtrip() {
        let mut s = GraphSnapshot::new(42, Profile::Gameday);
        s.add_edge(ServiceId(0), ServiceId(2), 0.1 + 0.2).unwrap();
        s.add_edge(ServiceId(2), ServiceId(1), 1e-300).unwrap();
        let text = s.to_text();
        assert!(text.starts_with("svcgraph-snapshot v1 42 gameday\n"));
        assert_eq!(GraphSnapshot::from_text(&text).unwrap(), s);
        let v2 = text.replace(" v1 ", " v2 ");
        assert!(matches!(
            GraphSnapshot::from_text(&v2),
            Err(GraphError::FormatVersionMismatch { .. })
        ));
    }

    #[test]
    fn registry_tsv_roundtrip_unicode() {
        let mut r = ServiceRegistry::new();
        for n in ["edge-gw", "ストア", "plåyback"] {
            r.register(n).unwrap();
        }
        let back = ServiceRegistry::from_tsv(&r.to_tsv()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.fingerprint(), r.fingerprint());
    }

    fn random_snapshot() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
        (2usize..10).prop_flat_map(|n| {
            let edge = (0..n, 0..n, 0.01f64..1000.0);
            (Just(n), prop::collection::vec(edge, 1..30))
        })
    }

    fn snapshot_from(edges: &[(usize, usize, f64)], factor: f64) -> Option<GraphSnapshot> {
        let mut s = GraphSnapshot::new(0, Profile::Baseline);
        for &(a, b, w) in edges {
            if a != b {
                s.set_edge(ServiceId(a), ServiceId(b), w * factor).unwrap();
            }
        }
        (!s.is_empty()).then_some(s)
    }

    proptest! {
        #[test]
        fn normalization_roundtrip_and_bounds((n, edges) in random_snapshot()) {
            let Some(s) = snapshot_from(&edges, 1.0) else { return Ok(()) };
            let norm = normalize_weights(&s, n).unwrap();
            let mut max = 0.0f64;
            for i in 0..n {
                prop_assert_eq!(norm.adjacency[(i, i)], 0.0);
                for j in 0..n {
                    let v = norm.adjacency[(i, j)];
                    prop_assert!((0.0..=1.0).contains(&v));
                    max = max.max(v);
                }
            }
            prop_assert_eq!(max, 1.0);
            for (a, b, w) in s.edges() {
                let back = norm.adjacency[(a.0, b.0)] * norm.scale;
                prop_assert!((back - w).abs() <= 1e-12 * w);
            }
        }

        #[test]
        fn normalization_is_scale_free((n, edges) in random_snapshot(), c in 0.001f64..1000.0) {
            let Some(s1) = snapshot_from(&edges, 1.0) else { return Ok(()) };
            let s2 = snapshot_from(&edges, c).unwrap();
            let a1 = normalize_weights(&s1, n).unwrap().adjacency;
            let a2 = normalize_weights(&s2, n).unwrap().adjacency;
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((a1[(i, j)] - a2[(i, j)]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn propagation_symmetric_and_contractive((n, edges) in random_snapshot()) {
            let Some(s) = snapshot_from(&edges, 1.0) else { return Ok(()) };
            let p = normalize_weights(&s, n).unwrap().propagation();
            prop_assert!(p.is_symmetric());
            for i in 0..n {
                prop_assert!(p[(i, i)] > 0.0);
            }
            prop_assert!(crate::linalg::power_iteration(&p, 500) <= 1.0 + 1e-9);
        }

        #[test]
        fn ingestion_order_does_not_change_matrix(
            (n, edges) in random_snapshot(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut reg = ServiceRegistry::new();
            let names: Vec<String> = (0..n).map(|i| format!("svc-{i}")).collect();
            for name in &names {
                reg.register(name).unwrap();
            }
            let named: Vec<(&str, &str, f64)> = edges
                .iter()
                .filter(|(a, b, _)| a != b)
                .map(|&(a, b, w)| (names[a].as_str(), names[b].as_str(), w))
                .collect();
            if named.is_empty() {
                return Ok(());
            }
            let mut shuffled = named.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = build_snapshot(&mut reg, 0, Profile::Baseline, named).unwrap();
            let b = build_snapshot(&mut reg, 0, Profile::Baseline, shuffled).unwrap();
            let na = normalize_weights(&a, n).unwrap().adjacency;
            let nb = normalize_weights(&b, n).unwrap().adjacency;
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((na[(i, j)] - nb[(i, j)]).abs() <= 1e-12);
                }
            }
        }
    }
}
