//! Raw `(timestamp, source, destination, tps)` records, minute bucketing, and
//! on-disk snapshot corpora.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{GraphError, GraphInput, GraphSnapshot, Profile, ServiceId, ServiceRegistry};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("non-positive tps {0}")]
    NonPositiveWeight(f64),
    #[error("self-edge on {0}")]
    SelfEdge(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Graph {
        path: PathBuf,
        #[source]
        source: GraphError,
    },
    #[error("format version mismatch in {path}: found {found:?}")]
    FormatVersionMismatch { path: PathBuf, found: String },
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    /// Seconds since epoch.
    pub timestamp: i64,
    pub source: String,
    pub destination: String,
    pub tps: f64,
}

/// Parses one `timestamp,source,destination,tps` line.
pub fn parse_record(line: &str) -> Result<TelemetryRecord, TelemetryError> {
    let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    let malformed = || TelemetryError::MalformedLine(line.to_owned());
    if fields.len() != 4 || fields[1].is_empty() || fields[2].is_empty() {
        return Err(malformed());
    }
    let timestamp: i64 = fields[0].parse().map_err(|_| malformed())?;
    let tps: f64 = fields[3].parse().map_err(|_| malformed())?;
    if !tps.is_finite() {
        return Err(malformed());
    }
    if tps <= 0.0 {
        return Err(TelemetryError::NonPositiveWeight(tps));
    }
    if fields[1] == fields[2] {
        return Err(TelemetryError::SelfEdge(fields[1].to_owned()));
    }
    Ok(TelemetryRecord {
        timestamp,
        source: fields[1].to_owned(),
        destination: fields[2].to_owned(),
        tps,
    })
}

/// Records read from CSV text plus the lines that were skipped.
#[derive(Debug, Default)]
pub struct ParsedTelemetry {
    pub records: Vec<TelemetryRecord>,
    /// `(1-based line number, reason)`
    pub skipped: Vec<(usize, String)>,
}

pub fn read_csv(reader: impl BufRead) -> io::Result<ParsedTelemetry> {
    let mut out = ParsedTelemetry::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_record(trimmed) {
            Ok(r) => out.records.push(r),
            Err(e) => out.skipped.push((i + 1, e.to_string())),
        }
    }
    Ok(out)
}

pub fn write_csv(records: &[TelemetryRecord]) -> String {
    let mut out = String::from("# timestamp,source,destination,tps\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.timestamp, r.source, r.destination, r.tps));
    }
    out
}

/// Buckets records by `floor(timestamp / 60)` and sums tps per `(src, dst)`
/// within each minute. All snapshots are labelled Baseline.
pub fn aggregate_minutes<'a>(
    records: impl IntoIterator<Item = &'a TelemetryRecord>,
    registry: &mut ServiceRegistry,
) -> Result<Vec<GraphSnapshot>, GraphError> {
    aggregate_minutes_with(records, registry, |_| Profile::Baseline)
}

/// As [`aggregate_minutes`], labelling each minute with `profile_of(minute)`.
///
/// Output is independent of record order: keys are grouped in sorted order,
/// new names are registered in that order, and each bucket is summed over its
/// contributions sorted by value.
pub fn aggregate_minutes_with<'a>(
    records: impl IntoIterator<Item = &'a TelemetryRecord>,
    registry: &mut ServiceRegistry,
    profile_of: impl Fn(i64) -> Profile,
) -> Result<Vec<GraphSnapshot>, GraphError> {
    let mut buckets: BTreeMap<(i64, &str, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        buckets
            .entry((r.timestamp.div_euclid(60), r.source.as_str(), r.destination.as_str()))
            .or_default()
            .push(r.tps);
    }
    let mut snapshots: Vec<GraphSnapshot> = Vec::new();
    for ((minute, src, dst), mut parts) in buckets {
        parts.sort_by(f64::total_cmp);
        let tps: f64 = parts.iter().sum();
        if snapshots.last().map(|s| s.timestamp) != Some(minute) {
            snapshots.push(GraphSnapshot::new(minute, profile_of(minute)));
        }
        let s = registry.register(src)?;
        let d = registry.register(dst)?;
        snapshots.last_mut().unwrap().add_edge(s, d, tps)?;
    }
    Ok(snapshots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Reference,
    Evaluate,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Reference => "reference",
            Partition::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "reference" => Ok(Partition::Reference),
            "evaluate" => Ok(Partition::Evaluate),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

/// Default split: all Baseline plus four of every five Event minutes train;
/// the fifth Event minute is reference; Gameday and Synthetic evaluate.
pub fn auto_partition(snapshots: &[GraphSnapshot]) -> Vec<Partition> {
    let mut event_seen = 0usize;
    snapshots
        .iter()
        .map(|s| match s.profile {
            Profile::Baseline => Partition::Train,
            Profile::Event => {
                event_seen += 1;
                if event_seen.is_multiple_of(5) {
                    Partition::Reference
                } else {
                    Partition::Train
                }
            }
            Profile::Gameday | Profile::Synthetic => Partition::Evaluate,
        })
        .collect()
}

/// Registry, time-ordered snapshots, and their partition labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotCorpus {
    pub registry: ServiceRegistry,
    pub snapshots: Vec<GraphSnapshot>,
    pub partitions: Vec<Partition>,
    /// Topology layer per service id, when the corpus came from the simulator.
    pub layers: Option<Vec<usize>>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const REGISTRY_FILE: &str = "registry.tsv";
pub const LAYERS_FILE: &str = "layers.tsv";

impl SnapshotCorpus {
    pub fn new(
        registry: ServiceRegistry,
        snapshots: Vec<GraphSnapshot>,
        partitions: Vec<Partition>,
    ) -> Result<Self, TelemetryError> {
        let corpus = Self {
            registry,
            snapshots,
            partitions,
            layers: None,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn with_auto_partition(registry: ServiceRegistry, snapshots: Vec<GraphSnapshot>) -> Result<Self, TelemetryError> {
        let partitions = auto_partition(&snapshots);
        Self::new(registry, snapshots, partitions)
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        let bad = |m: String| Err(TelemetryError::InvalidCorpus(m));
        if self.partitions.len() != self.snapshots.len() {
            return bad("partition count differs from snapshot count".into());
        }
        for w in self.snapshots.windows(2) {
            if w[0].timestamp >= w[1].timestamp {
                return bad(format!(
                    "timestamps not strictly increasing at minute {}",
                    w[1].timestamp
                ));
            }
        }
        let n = self.registry.len();
        for (s, p) in self.snapshots.iter().zip(&self.partitions) {
            if let Some(id) = s.max_service_id() {
                if id.index() >= n {
                    return bad(format!("minute {}: service id {id} not in registry", s.timestamp));
                }
            }
            if *p == Partition::Reference && s.profile != Profile::Event {
                return bad(format!(
                    "minute {}: reference snapshots must be event profile, found {}",
                    s.timestamp, s.profile
                ));
            }
        }
        if let Some(layers) = &self.layers {
            if layers.len() != n {
                return bad("layer labels do not cover the registry".into());
            }
        }
        Ok(())
    }

    pub fn partition(&self, part: Partition) -> impl Iterator<Item = &GraphSnapshot> {
        self.snapshots
            .iter()
            .zip(&self.partitions)
            .filter(move |(_, p)| **p == part)
            .map(|(s, _)| s)
    }

    /// Model inputs over the full registry for one partition, in time order.
    pub fn inputs(&self, part: Partition) -> Result<Vec<GraphInput>, GraphError> {
        let n = self.registry.len();
        self.partition(part).map(|s| GraphInput::from_snapshot(s, n)).collect()
    }

    pub fn snapshot_at(&self, minute: i64) -> Option<&GraphSnapshot> {
        self.snapshots
            .binary_search_by_key(&minute, |s| s.timestamp)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    pub fn count_by_profile(&self) -> BTreeMap<Profile, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.snapshots {
            *counts.entry(s.profile).or_insert(0) += 1;
        }
        counts
    }
}

pub fn snapshot_file_name(timestamp: i64) -> String {
    format!("minute-{timestamp:010}.snap")
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn save_corpus(corpus: &SnapshotCorpus, dir: &Path) -> Result<(), TelemetryError> {
    corpus.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let reg_path = dir.join(REGISTRY_FILE);
    write_atomic(&reg_path, corpus.registry.to_tsv().as_bytes()).map_err(io_err(&reg_path))?;
    let mut manifest = String::new();
    for (snap, part) in corpus.snapshots.iter().zip(&corpus.partitions) {
        let name = snapshot_file_name(snap.timestamp);
        let path = dir.join(&name);
        write_atomic(&path, snap.to_text().as_bytes()).map_err(io_err(&path))?;
        manifest.push_str(&format!("{name}\t{part}\n"));
    }
    if let Some(layers) = &corpus.layers {
        let path = dir.join(LAYERS_FILE);
        let text: String = layers
            .iter()
            .enumerate()
            .map(|(id, layer)| format!("{id}\t{layer}\n"))
            .collect();
        write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    }
    let man_path = dir.join(MANIFEST_FILE);
    write_atomic(&man_path, manifest.as_bytes()).map_err(io_err(&man_path))
}

pub fn load_corpus(dir: &Path) -> Result<SnapshotCorpus, TelemetryError> {
    let reg_path = dir.join(REGISTRY_FILE);
    let reg_text = fs::read_to_string(&reg_path).map_err(io_err(&reg_path))?;
    let registry = ServiceRegistry::from_tsv(&reg_text).map_err(|source| TelemetryError::Graph {
        path: reg_path.clone(),
        source,
    })?;

    let man_path = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&man_path).map_err(io_err(&man_path))?;
    let mut snapshots = Vec::new();
    let mut partitions = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (name, part) = line.split_once('\t').ok_or_else(|| {
            TelemetryError::InvalidCorpus(format!("{}: line {} lacks a tab", man_path.display(), i + 1))
        })?;
        let part: Partition = part.parse().map_err(TelemetryError::InvalidCorpus)?;
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let snap = GraphSnapshot::from_text(&text).map_err(|source| match source {
            GraphError::FormatVersionMismatch { found, .. } => TelemetryError::FormatVersionMismatch {
                path: path.clone(),
                found,
            },
            source => TelemetryError::Graph {
                path: path.clone(),
                source,
            },
        })?;
        snapshots.push(snap);
        partitions.push(part);
    }

    let layers_path = dir.join(LAYERS_FILE);
    let layers = if layers_path.exists() {
        let text = fs::read_to_string(&layers_path).map_err(io_err(&layers_path))?;
        let mut layers = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let layer = line
                .split_once('\t')
                .and_then(|(_, l)| l.parse().ok())
                .ok_or_else(|| TelemetryError::InvalidCorpus(format!("bad layers line {line:?}")))?;
            layers.push(layer);
        }
        Some(layers)
    } else {
        None
    };

    let corpus = SnapshotCorpus {
        registry,
        snapshots,
        partitions,
        layers,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Per-service layer label, if known.
pub fn layer_of(corpus: &SnapshotCorpus, id: ServiceId) -> Option<usize> {
    corpus.layers.as_ref().and_then(|l| l.get(id.index()).copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(ts: i64, s: &str, d: &str, tps: f64) -> TelemetryRecord {
        TelemetryRecord {
            timestamp: ts,
            source: s.into(),
            destination: d.into(),
            tps,
        }
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_record("60,A,B,12.5").unwrap(), rec(60, "A", "B", 12.5));
        assert!(matches!(parse_record("60,A,A,5"), Err(TelemetryError::SelfEdge(_))));
        assert!(matches!(parse_record("60,A,B,-1"), Err(TelemetryError::NonPositiveWeight(_))));
        assert!(matches!(parse_record("60,A,B"), Err(TelemetryError::MalformedLine(_))));
        assert!(matches!(parse_record("x,A,B,1"), Err(TelemetryError::MalformedLine(_))));
        assert!(matches!(parse_record("1,A,B,nan"), Err(TelemetryError::MalformedLine(_))));
    }

    #[test]
    fn csv_skips_and_counts() {
        let text = "# comment\n60,A,B,1\n\nbogus\n61,A,A,2\n62,B,C,3\n";
        let parsed = read_csv(text.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![4, 5]);
    }

    #[test]
    fn same_minute_sums() {
        let mut reg = ServiceRegistry::new();
        let snaps = aggregate_minutes(&[rec(10, "A", "B", 3.0), rec(59, "A", "B", 4.0)], &mut reg).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].timestamp, 0);
        assert_eq!(snaps[0].tps(ServiceId(0), ServiceId(1)), Some(7.0));
    }

    #[test]
    fn minute_boundary_splits() {
        let mut reg = ServiceRegistry::new();
        let snaps = aggregate_minutes(&[rec(59, "A", "B", 1.0), rec(60, "A", "B", 1.0)], &mut reg).unwrap();
        assert_eq!(snaps.iter().map(|s| s.timestamp).collect::<Vec<_>>(), vec![0, 1]);
        for s in &snaps {
            assert_eq!(s.tps(ServiceId(0), ServiceId(1)), Some(1.0));
        }
    }

    #[test]
    fn negative_timestamps_floor() {
        let mut reg = ServiceRegistry::new();
        let snaps = aggregate_minutes(&[rec(-1, "A", "B", 1.0)], &mut reg).unwrap();
        assert_eq!(snaps[0].timestamp, -1);
    }

    fn arb_records() -> impl Strategy<Value = Vec<TelemetryRecord>> {
        let names = prop::sample::select(vec!["a", "b", "c", "d", "e"]);
        prop::collection::vec((0i64..600, names.clone(), names, 0.001f64..100.0), 1..200).prop_map(|v| {
            v.into_iter()
                .filter(|(_, s, d, _)| s != d)
                .map(|(t, s, d, w)| rec(t, s, d, w))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn aggregation_is_order_independent_and_preserves_sum(
            records in arb_records(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut r1 = ServiceRegistry::new();
            let mut r2 = ServiceRegistry::new();
            let a = aggregate_minutes(&records, &mut r1).unwrap();
            let b = aggregate_minutes(&shuffled, &mut r2).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&r1, &r2);
            let raw: f64 = records.iter().map(|r| r.tps).sum();
            let agg: f64 = a.iter().map(GraphSnapshot::total_tps).sum();
            prop_assert!((raw - agg).abs() <= 1e-9 * raw.max(1.0));
        }
    }

    #[test]
    fn group_by_oracle_on_1000_records() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let names = ["gw", "auth", "play", "cat", "store", "bill"];
        let records: Vec<TelemetryRecord> = (0..1000)
            .map(|_| {
                let s = rng.gen_range(0..names.len());
                let d = (s + rng.gen_range(1..names.len())) % names.len();
                rec(rng.gen_range(0..3600), names[s], names[d], rng.gen_range(0.1..50.0))
            })
            .collect();
        let mut oracle: std::collections::HashMap<(i64, &str, &str), f64> = Default::default();
        for r in &records {
            *oracle
                .entry((r.timestamp / 60, r.source.as_str(), r.destination.as_str()))
                .or_default() += r.tps;
        }
        let mut reg = ServiceRegistry::new();
        let snaps = aggregate_minutes(&records, &mut reg).unwrap();
        let mut seen = 0;
        for s in &snaps {
            for (a, b, w) in s.edges() {
                let key = (s.timestamp, reg.name(a).unwrap(), reg.name(b).unwrap());
                let expected = oracle[&key];
                assert!((w - expected).abs() <= 1e-9 * expected);
                seen += 1;
            }
        }
        assert_eq!(seen, oracle.len());
    }

    fn sample_corpus() -> SnapshotCorpus {
        let mut reg = ServiceRegistry::new();
        let recs = [
            rec(0, "edge-gw", "ストア", 10.0),
            rec(61, "edge-gw", "plåyback", 0.1 + 0.2),
            rec(125, "plåyback", "ストア", 1e-7),
        ];
        let mut snaps = aggregate_minutes(&recs, &mut reg).unwrap();
        snaps[1].profile = Profile::Event;
        snaps[2].profile = Profile::Gameday;
        SnapshotCorpus::new(
            reg,
            snaps,
            vec![Partition::Train, Partition::Reference, Partition::Evaluate],
        )
        .unwrap()
    }

    #[test]
    fn corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = sample_corpus();
        save_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.registry.name(ServiceId(1)), Some("ストア"));
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&sample_corpus(), dir.path()).unwrap();
        let missing = snapshot_file_name(1);
        fs::remove_file(dir.path().join(&missing)).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(matches!(err, TelemetryError::Io { .. }));
        assert!(err.to_string().contains(&missing), "{err}");
    }

    #[test]
    fn version_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&sample_corpus(), dir.path()).unwrap();
        let path = dir.path().join(snapshot_file_name(0));
        let text = fs::read_to_string(&path).unwrap().replace(" v1 ", " v9 ");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(TelemetryError::FormatVersionMismatch { .. })
        ));
    }

    #[test]
    fn reference_must_be_event() {
        let mut c = sample_corpus();
        c.partitions[0] = Partition::Reference;
        assert!(c.validate().is_err());
    }

    #[test]
    fn auto_partition_rule() {
        let snaps: Vec<GraphSnapshot> = (0..12)
            .map(|t| {
                let p = match t {
                    0..=1 => Profile::Baseline,
                    2..=11 => Profile::Event,
                    _ => unreachable!(),
                };
                GraphSnapshot::new(t, p)
            })
            .chain([GraphSnapshot::new(12, Profile::Gameday)])
            .collect();
        let parts = auto_partition(&snaps);
        let refs = parts.iter().filter(|p| **p == Partition::Reference).count();
        assert_eq!(refs, 2);
        assert_eq!(parts[0], Partition::Train);
        assert_eq!(parts[12], Partition::Evaluate);
    }
}
