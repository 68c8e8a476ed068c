//! Synthetic layered microservice topologies and minute-level traffic.
//!
//! Traffic enters at layer 0 and flows downstream: every service forwards its
//! total inflow across its outgoing edges according to per-edge routing
//! ratios. Baseline and Event minutes differ only in volume, which per-snapshot
//! normalization removes; Gameday minutes additionally skew the routing ratios.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`), seeded from the scenario
//! seed. Per-minute noise uses the minute index as the ChaCha stream id, so any
//! minute can be generated independently of the others.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{GraphSnapshot, Profile, ServiceId, ServiceRegistry};
use crate::kv::{parse_list, parse_value, KvError, KvFile};
use crate::telemetry::{auto_partition, SnapshotCorpus, TelemetryRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("infeasible density {density} between layers {layer} and {next}", next = .layer + 1)]
    InfeasibleDensity { layer: usize, density: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Config(#[from] KvError),
}

const STREAM_TOPOLOGY: u64 = u64::MAX;
const STREAM_SIGNS: u64 = u64::MAX - 1;

/// Edge-probability settings for [`generate_topology`].
#[derive(Debug, Clone, PartialEq)]
pub struct Densities {
    /// Probability of each edge from layer `k` to layer `k + 1`; one entry per
    /// adjacent pair of layers.
    pub inter: Vec<f64>,
    /// Probability of each forward edge between two services of the same
    /// interior layer.
    pub intra: f64,
}

impl Densities {
    /// Sparse at both ends, densest in the middle.
    pub fn default_for(layer_count: usize) -> Self {
        let transitions = layer_count.saturating_sub(1).max(1);
        let inter = (0..transitions)
            .map(|k| {
                let x = (k as f64 + 0.5) / transitions as f64;
                0.15 + 0.35 * (1.0 - (2.0 * x - 1.0).abs())
            })
            .collect();
        Self { inter, intra: 0.05 }
    }

    pub fn full(layer_count: usize) -> Self {
        Self {
            inter: vec![1.0; layer_count.saturating_sub(1)],
            intra: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceTopology {
    pub layer_sizes: Vec<usize>,
    /// Layer index per service id. Ids are assigned layer by layer.
    pub layer_of: Vec<usize>,
    /// Directed edges sorted by `(src, dst)`.
    pub edges: Vec<(ServiceId, ServiceId)>,
    /// Fraction of the source's outflow carried by each edge.
    pub base_ratio: Vec<f64>,
    /// Fraction of entry traffic each layer-0 service receives.
    pub entry_share: Vec<f64>,
    out_edges: Vec<Vec<usize>>,
}

impl ServiceTopology {
    /// Builds a topology from explicit edges and ratios. Edges must go from a
    /// layer to the next one, or forward within a layer.
    pub fn from_edges(
        layer_sizes: Vec<usize>,
        mut edges: Vec<(ServiceId, ServiceId, f64)>,
    ) -> Result<Self, SimError> {
        if layer_sizes.len() < 3 || layer_sizes.contains(&0) {
            return Err(SimError::InvalidTopology(
                "need at least 3 layers, each with at least one service".into(),
            ));
        }
        let layer_of: Vec<usize> = layer_sizes
            .iter()
            .enumerate()
            .flat_map(|(l, &size)| std::iter::repeat_n(l, size))
            .collect();
        let n = layer_of.len();
        edges.sort_by_key(|&(s, d, _)| (s, d));
        edges.dedup_by_key(|e| (e.0, e.1));
        let mut out_edges = vec![Vec::new(); n];
        for (i, &(s, d, r)) in edges.iter().enumerate() {
            if s.0 >= n || d.0 >= n {
                return Err(SimError::InvalidTopology(format!("edge {s}->{d} outside {n} services")));
            }
            let (ls, ld) = (layer_of[s.0], layer_of[d.0]);
            if !(ld == ls + 1 || (ld == ls && d.0 > s.0)) {
                return Err(SimError::InvalidTopology(format!(
                    "edge {s}->{d} must go to the next layer or forward within a layer"
                )));
            }
            if !(r > 0.0 && r <= 1.0) {
                return Err(SimError::InvalidTopology(format!("ratio {r} on edge {s}->{d}")));
            }
            out_edges[s.0].push(i);
        }
        for (s, outs) in out_edges.iter().enumerate() {
            if outs.is_empty() {
                continue;
            }
            let total: f64 = outs.iter().map(|&i| edges[i].2).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidTopology(format!(
                    "ratios out of service {s} sum to {total}"
                )));
            }
        }
        let entry = layer_sizes[0];
        Ok(Self {
            layer_sizes,
            layer_of,
            base_ratio: edges.iter().map(|e| e.2).collect(),
            edges: edges.into_iter().map(|(s, d, _)| (s, d)).collect(),
            entry_share: vec![1.0 / entry as f64; entry],
            out_edges,
        })
    }

    pub fn service_count(&self) -> usize {
        self.layer_of.len()
    }

    /// Edge indices leaving `service`, ordered by destination.
    pub fn outgoing(&self, service: ServiceId) -> &[usize] {
        &self.out_edges[service.0]
    }

    pub fn out_degree(&self, service: ServiceId) -> usize {
        self.out_edges[service.0].len()
    }

    pub fn mean_out_degree(&self, layer: usize) -> f64 {
        let members: Vec<usize> = (0..self.service_count()).filter(|&s| self.layer_of[s] == layer).collect();
        members.iter().map(|&s| self.out_edges[s].len()).sum::<usize>() as f64 / members.len() as f64
    }

    pub fn service_name(&self, service: ServiceId) -> String {
        let layer = self.layer_of[service.0];
        let first = self.layer_sizes[..layer].iter().sum::<usize>();
        format!("svc-L{layer}-{:02}", service.0 - first)
    }

    /// Registry whose ids match topology ids.
    pub fn registry(&self) -> ServiceRegistry {
        let mut reg = ServiceRegistry::new();
        for s in 0..self.service_count() {
            reg.register(&self.service_name(ServiceId(s)))
                .expect("generated names are valid");
        }
        reg
    }

    /// Services reachable from layer 0.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.service_count()];
        seen[..self.layer_sizes[0]].fill(true);
        // Ids are a topological order.
        for s in 0..self.service_count() {
            if seen[s] {
                for &e in &self.out_edges[s] {
                    seen[self.edges[e].1 .0] = true;
                }
            }
        }
        seen
    }
}

pub fn generate_topology(
    layer_sizes: &[usize],
    densities: &Densities,
    seed: u64,
) -> Result<ServiceTopology, SimError> {
    if layer_sizes.len() < 3 || layer_sizes.contains(&0) {
        return Err(SimError::InvalidTopology(
            "need at least 3 layers, each with at least one service".into(),
        ));
    }
    if densities.inter.len() != layer_sizes.len() - 1 {
        return Err(SimError::InvalidTopology(format!(
            "{} layers need {} inter-layer densities, got {}",
            layer_sizes.len(),
            layer_sizes.len() - 1,
            densities.inter.len()
        )));
    }
    for (layer, &density) in densities.inter.iter().enumerate() {
        if !(density > 0.0 && density <= 1.0) {
            return Err(SimError::InfeasibleDensity { layer, density });
        }
    }
    if !(0.0..=1.0).contains(&densities.intra) {
        return Err(SimError::InvalidTopology(format!("intra density {}", densities.intra)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_TOPOLOGY);
    let starts: Vec<usize> = layer_sizes
        .iter()
        .scan(0, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect();
    let n: usize = layer_sizes.iter().sum();
    let mut adj = vec![vec![false; n]; n];

    for k in 0..layer_sizes.len() - 1 {
        let src: Vec<usize> = (starts[k]..starts[k] + layer_sizes[k]).collect();
        let dst: Vec<usize> = (starts[k + 1]..starts[k + 1] + layer_sizes[k + 1]).collect();
        for &s in &src {
            for &d in &dst {
                if rng.gen::<f64>() < densities.inter[k] {
                    adj[s][d] = true;
                }
            }
        }
        for &d in &dst {
            if !src.iter().any(|&s| adj[s][d]) {
                adj[src[rng.gen_range(0..src.len())]][d] = true;
            }
        }
        for &s in &src {
            if !dst.iter().any(|&d| adj[s][d]) {
                adj[s][dst[rng.gen_range(0..dst.len())]] = true;
            }
        }
    }
    for k in 1..layer_sizes.len() - 1 {
        let members: Vec<usize> = (starts[k]..starts[k] + layer_sizes[k]).collect();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if rng.gen::<f64>() < densities.intra {
                    adj[a][b] = true;
                }
            }
        }
    }

    let mut edges = Vec::new();
    for (s, row) in adj.iter().enumerate() {
        let targets: Vec<usize> = (0..n).filter(|&d| row[d]).collect();
        let weights: Vec<f64> = targets.iter().map(|_| 0.5 + rng.gen::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        for (&d, w) in targets.iter().zip(weights) {
            edges.push((ServiceId(s), ServiceId(d), w / total));
        }
    }
    let mut topo = ServiceTopology::from_edges(layer_sizes.to_vec(), edges)?;
    let weights: Vec<f64> = (0..layer_sizes[0]).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    topo.entry_share = weights.into_iter().map(|w| w / total).collect();
    Ok(topo)
}

/// Volume and noise knobs shared by all profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficParams {
    pub base_tps: f64,
    /// Relative amplitude of the daily sinusoid.
    pub daily_amplitude: f64,
    /// Volume multiplier during Event windows.
    pub event_surge: f64,
    /// Flat volume multiplier during Gameday windows.
    pub gameday_level: f64,
    /// Relative per-edge noise amplitude.
    pub jitter: f64,
    /// Relative per-edge routing skew during Gameday windows.
    pub gameday_distortion: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            base_tps: 1000.0,
            daily_amplitude: 0.3,
            event_surge: 2.5,
            gameday_level: 3.0,
            jitter: 0.02,
            gameday_distortion: 0.30,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_owned()));
        if !(self.base_tps.is_finite() && self.base_tps > 0.0) {
            return bad("base_tps must be positive");
        }
        if !(0.0..1.0).contains(&self.daily_amplitude) {
            return bad("daily_amplitude must be in [0, 1)");
        }
        if !(self.event_surge > 0.0 && self.gameday_level > 0.0) {
            return bad("event_surge and gameday_level must be positive");
        }
        if !(0.0..1.0).contains(&self.jitter) || !(0.0..1.0).contains(&self.gameday_distortion) {
            return bad("jitter and gameday_distortion must be in [0, 1)");
        }
        Ok(())
    }

    /// Total entry traffic at `minute` under `profile`. Always positive.
    pub fn entry_tps(&self, profile: Profile, minute: i64) -> f64 {
        let daily = 1.0 + self.daily_amplitude * (2.0 * PI * minute as f64 / 1440.0).sin();
        match profile {
            Profile::Baseline | Profile::Synthetic => self.base_tps * daily,
            Profile::Event => self.base_tps * daily * self.event_surge,
            Profile::Gameday => self.base_tps * self.gameday_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileWindow {
    /// Inclusive.
    pub start: i64,
    /// Exclusive.
    pub end: i64,
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentShift {
    pub minute: i64,
    pub service: ServiceId,
    /// Replacement ratios, ordered like the service's outgoing edges.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: ServiceTopology,
    pub params: TrafficParams,
    /// Minutes not covered by a window are Baseline.
    pub schedule: Vec<ProfileWindow>,
    pub shifts: Vec<DeploymentShift>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(topology: ServiceTopology, seed: u64) -> Self {
        Self {
            topology,
            params: TrafficParams::default(),
            schedule: Vec::new(),
            shifts: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        let mut windows = self.schedule.clone();
        windows.sort_by_key(|w| w.start);
        for w in &windows {
            if w.start >= w.end {
                return Err(SimError::InvalidScenario(format!("empty window {}..{}", w.start, w.end)));
            }
            if w.profile == Profile::Synthetic {
                return Err(SimError::InvalidScenario("synthetic windows are produced by injection".into()));
            }
        }
        for pair in windows.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(SimError::InvalidScenario(format!(
                    "windows overlap at minute {}",
                    pair[1].start
                )));
            }
        }
        for shift in &self.shifts {
            let n = self.topology.service_count();
            if shift.service.0 >= n {
                return Err(SimError::InvalidScenario(format!("shift names unknown service {}", shift.service)));
            }
            let degree = self.topology.out_degree(shift.service);
            if shift.ratios.len() != degree {
                return Err(SimError::InvalidScenario(format!(
                    "shift for service {} has {} ratios, service has {degree} outgoing edges",
                    shift.service,
                    shift.ratios.len()
                )));
            }
            let total: f64 = shift.ratios.iter().sum();
            if shift.ratios.iter().any(|r| r.is_nan() || *r < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(SimError::InvalidScenario(format!(
                    "shift ratios for service {} must be non-negative and sum to 1",
                    shift.service
                )));
            }
        }
        Ok(())
    }

    pub fn profile_at(&self, minute: i64) -> Profile {
        self.schedule
            .iter()
            .find(|w| w.start <= minute && minute < w.end)
            .map_or(Profile::Baseline, |w| w.profile)
    }

    /// Fixed ±1 per edge. Every service with two or more outgoing edges gets
    /// at least one of each sign so the skew is never a no-op after
    /// renormalization.
    fn distortion_signs(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_SIGNS);
        let mut signs: Vec<f64> = (0..self.topology.edges.len())
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        for outs in &self.topology.out_edges {
            if outs.len() >= 2 && outs.iter().all(|&e| signs[e] == signs[outs[0]]) {
                let flip = outs[rng.gen_range(0..outs.len())];
                signs[flip] = -signs[flip];
            }
        }
        signs
    }

    /// Routing ratios in force at `minute`, per edge.
    pub fn ratios_at(&self, minute: i64, profile: Profile) -> Vec<f64> {
        let topo = &self.topology;
        let mut ratios = topo.base_ratio.clone();
        for s in 0..topo.service_count() {
            let latest = self
                .shifts
                .iter()
                .filter(|sh| sh.service.0 == s && sh.minute <= minute)
                .max_by_key(|sh| sh.minute);
            if let Some(shift) = latest {
                for (&e, &r) in topo.out_edges[s].iter().zip(&shift.ratios) {
                    ratios[e] = r;
                }
            }
        }
        if profile == Profile::Gameday && self.params.gameday_distortion > 0.0 {
            let signs = self.distortion_signs();
            for outs in &topo.out_edges {
                if outs.is_empty() {
                    continue;
                }
                for &e in outs {
                    ratios[e] *= 1.0 + self.params.gameday_distortion * signs[e];
                }
                let total: f64 = outs.iter().map(|&e| ratios[e]).sum();
                if total > 0.0 {
                    for &e in outs {
                        ratios[e] /= total;
                    }
                }
            }
        }
        ratios
    }

    /// Per-edge tps for one minute, indexed like `topology.edges`.
    pub fn edge_flows(&self, minute: i64) -> Vec<f64> {
        let topo = &self.topology;
        let profile = self.profile_at(minute);
        let ratios = self.ratios_at(minute, profile);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(minute as u64);
        let noise: Vec<f64> = (0..topo.edges.len())
            .map(|_| self.params.jitter * (2.0 * rng.gen::<f64>() - 1.0))
            .collect();

        let entry = self.params.entry_tps(profile, minute);
        let mut inflow = vec![0.0; topo.service_count()];
        for (s, share) in topo.entry_share.iter().enumerate() {
            inflow[s] = entry * share;
        }
        let mut flows = vec![0.0; topo.edges.len()];
        for s in 0..topo.service_count() {
            for &e in &topo.out_edges[s] {
                let tps = inflow[s] * ratios[e] * (1.0 + noise[e]);
                flows[e] = tps;
                inflow[topo.edges[e].1 .0] += tps;
            }
        }
        flows
    }

    pub fn snapshot_at(&self, minute: i64) -> GraphSnapshot {
        let mut snap = GraphSnapshot::new(minute, self.profile_at(minute));
        for (&(s, d), tps) in self.topology.edges.iter().zip(self.edge_flows(minute)) {
            if tps > 0.0 {
                snap.add_edge(s, d, tps).expect("topology has no self-edges");
            }
        }
        snap
    }
}

/// One record per active edge per minute, stamped at the start of the minute.
pub fn generate_stream(scenario: &Scenario, duration_minutes: i64) -> Result<Vec<TelemetryRecord>, SimError> {
    if duration_minutes < 1 {
        return Err(SimError::InvalidScenario("duration must be at least one minute".into()));
    }
    scenario.validate()?;
    let names: Vec<String> = (0..scenario.topology.service_count())
        .map(|s| scenario.topology.service_name(ServiceId(s)))
        .collect();
    let mut records = Vec::new();
    for minute in 0..duration_minutes {
        for (&(s, d), tps) in scenario.topology.edges.iter().zip(scenario.edge_flows(minute)) {
            if tps > 0.0 {
                records.push(TelemetryRecord {
                    timestamp: minute * 60,
                    source: names[s.0].clone(),
                    destination: names[d.0].clone(),
                    tps,
                });
            }
        }
    }
    Ok(records)
}

/// Snapshots for minutes `0..duration_minutes`, auto-partitioned, with layer
/// labels attached.
pub fn simulate_corpus(scenario: &Scenario, duration_minutes: i64) -> Result<SnapshotCorpus, SimError> {
    if duration_minutes < 1 {
        return Err(SimError::InvalidScenario("duration must be at least one minute".into()));
    }
    scenario.validate()?;
    let snapshots: Vec<GraphSnapshot> = (0..duration_minutes).map(|m| scenario.snapshot_at(m)).collect();
    let partitions = auto_partition(&snapshots);
    let mut corpus = SnapshotCorpus::new(scenario.topology.registry(), snapshots, partitions)
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    corpus.layers = Some(scenario.topology.layer_of.clone());
    Ok(corpus)
}

/// Keys accepted in a scenario file.
pub const SCENARIO_KEYS: &[&str] = &[
    "seed",
    "layer_sizes",
    "densities",
    "intra_density",
    "duration_minutes",
    "base_tps",
    "daily_amplitude",
    "event_surge",
    "gameday_level",
    "jitter",
    "gameday_distortion",
    "window",
    "shift",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub duration_minutes: i64,
}

/// Parses a scenario file:
///
/// ```text
/// seed = 7
/// layer_sizes = 4,12,30,12,4
/// duration_minutes = 4320
/// window = 1440,1500,event      # start,end,profile (repeatable)
/// shift = 2880,20,0.7;0.3       # minute,service_id,ratios (repeatable)
/// ```
///
/// `seed_override` replaces the file's seed when given.
pub fn parse_scenario(text: &str, seed_override: Option<u64>) -> Result<ScenarioFile, SimError> {
    let kv = KvFile::parse(text)?;
    kv.check_keys(SCENARIO_KEYS, &["window", "shift"])?;
    let seed = match (seed_override, kv.get("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => parse_value("seed", v)?,
        (None, None) => 0,
    };
    let layer_sizes: Vec<usize> = parse_list(
        "layer_sizes",
        kv.get("layer_sizes").ok_or_else(|| SimError::InvalidScenario("missing layer_sizes".into()))?,
        ',',
    )?;
    let mut densities = Densities::default_for(layer_sizes.len());
    if let Some(v) = kv.get("densities") {
        densities.inter = parse_list("densities", v, ',')?;
    }
    if let Some(v) = kv.get("intra_density") {
        densities.intra = parse_value("intra_density", v)?;
    }
    let topology = generate_topology(&layer_sizes, &densities, seed)?;

    let mut params = TrafficParams::default();
    let float_keys: [(&str, &mut f64); 6] = [
        ("base_tps", &mut params.base_tps),
        ("daily_amplitude", &mut params.daily_amplitude),
        ("event_surge", &mut params.event_surge),
        ("gameday_level", &mut params.gameday_level),
        ("jitter", &mut params.jitter),
        ("gameday_distortion", &mut params.gameday_distortion),
    ];
    for (key, slot) in float_keys {
        if let Some(v) = kv.get(key) {
            *slot = parse_value(key, v)?;
        }
    }

    let mut schedule = Vec::new();
    for v in kv.get_all("window") {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(KvError::InvalidValue {
                key: "window".into(),
                value: v.into(),
                reason: "expected start,end,profile".into(),
            }
            .into());
        }
        schedule.push(ProfileWindow {
            start: parse_value("window", parts[0])?,
            end: parse_value("window", parts[1])?,
            profile: parse_value("window", parts[2])?,
        });
    }
    let mut shifts = Vec::new();
    for v in kv.get_all("shift") {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(KvError::InvalidValue {
                key: "shift".into(),
                value: v.into(),
                reason: "expected minute,service_id,r1;r2;...".into(),
            }
            .into());
        }
        shifts.push(DeploymentShift {
            minute: parse_value("shift", parts[0])?,
            service: ServiceId(parse_value("shift", parts[1])?),
            ratios: parse_list("shift", parts[2], ';')?,
        });
    }
    let duration_minutes = match kv.get("duration_minutes") {
        Some(v) => parse_value("duration_minutes", v)?,
        None => 1440,
    };
    let scenario = Scenario {
        topology,
        params,
        schedule,
        shifts,
        seed,
    };
    scenario.validate()?;
    Ok(ScenarioFile {
        scenario,
        duration_minutes,
    })
}
