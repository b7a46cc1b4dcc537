//! Per-window traffic graphs: entities as nodes, aggregated flows as
//! directed edges, plus the symmetrically normalized adjacency consumed by
//! the graph convolution.
//!
//! Construction is canonical: node ids are sorted, edges are sorted by
//! (src, dst, service), and all aggregation runs over records in a fixed
//! total order, so shuffling the input window yields a bit-identical graph.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ingest::FlowRecord;
use crate::schema::SchemaSpec;

/// Names of the 25 per-node statistics, in row order.
///
/// Out/in sides are with respect to the entity: an outgoing flow has the
/// entity as source. Byte and packet totals attribute a flow's whole
/// two-way volume to its direction; fractions are over the set of incident
/// flows (a self-flow counts once); duration std is the population form;
/// inter-arrival means need at least two flows on that side, else 0.
/// Missing numeric fields count as zero.
pub const NODE_FEATURE_NAMES: [&str; 25] = [
    "out_degree",
    "in_degree",
    "out_peers",
    "in_peers",
    "out_flows",
    "in_flows",
    "out_bytes",
    "in_bytes",
    "out_packets",
    "in_packets",
    "out_duration_mean",
    "out_duration_std",
    "in_duration_mean",
    "in_duration_std",
    "out_interarrival_mean",
    "in_interarrival_mean",
    "frac_tcp",
    "frac_udp",
    "frac_other_proto",
    "frac_well_known_service",
    "failure_frac",
    "out_bytes_per_packet",
    "in_bytes_per_packet",
    "active_span",
    "unique_services",
];

pub const NODE_FEATURE_DIM: usize = 25;

/// Names of the 10 per-edge attributes, in attribute order. Codes index
/// the graph's sorted per-window service and state catalogs (protocol codes
/// index the configured class list, with unknown classes mapped past the
/// end). Sums aggregate over every flow of the edge; the codes come from
/// the earliest flow; the success flag is 1 when at least half the flows
/// ended in a success state.
pub const EDGE_ATTR_NAMES: [&str; 10] = [
    "duration_total",
    "protocol_code",
    "service_code",
    "packets_src_to_dst",
    "packets_dst_to_src",
    "bytes_src_to_dst",
    "bytes_dst_to_src",
    "state_code",
    "flow_count",
    "success_flag",
];

pub const EDGE_ATTR_DIM: usize = 10;

/// Maps graph statistics onto dataset columns. All names must exist in the
/// schema; `protocol_classes` must name exactly the two classes that get
/// their own fraction feature (everything else pools into "other").
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFeatureConfig {
    pub duration: String,
    pub src_bytes: String,
    pub dst_bytes: String,
    pub src_packets: String,
    pub dst_packets: String,
    pub protocol: String,
    pub service: String,
    pub state: String,
    /// Connection states counted as successful completions.
    pub success_states: Vec<String>,
    /// Services counted by the well-known-service fraction.
    pub well_known_services: Vec<String>,
    pub protocol_classes: Vec<String>,
}

impl Default for GraphFeatureConfig {
    fn default() -> Self {
        GraphFeatureConfig {
            duration: "duration".into(),
            src_bytes: "sbytes".into(),
            dst_bytes: "dbytes".into(),
            src_packets: "spkts".into(),
            dst_packets: "dpkts".into(),
            protocol: "proto".into(),
            service: "service".into(),
            state: "state".into(),
            success_states: vec!["FIN".into(), "CON".into()],
            well_known_services: vec![
                "http".into(),
                "https".into(),
                "dns".into(),
                "ssh".into(),
                "smtp".into(),
                "ftp".into(),
            ],
            protocol_classes: vec!["tcp".into(), "udp".into()],
        }
    }
}

/// Column indices resolved against a schema.
struct Columns {
    duration: usize,
    src_bytes: usize,
    dst_bytes: usize,
    src_packets: usize,
    dst_packets: usize,
    protocol: usize,
    service: usize,
    state: usize,
}

impl GraphFeatureConfig {
    fn resolve(&self, schema: &SchemaSpec) -> Result<Columns> {
        if self.protocol_classes.len() != 2 {
            return Err(Error::Config(format!(
                "graph features need exactly two named protocol classes, got {}",
                self.protocol_classes.len()
            )));
        }
        let cont = |name: &str| -> Result<usize> {
            schema
                .continuous_names()
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| {
                    Error::Config(format!("graph feature column '{name}' is not continuous"))
                })
        };
        let cat = |name: &str| -> Result<usize> {
            schema
                .categorical_names()
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| {
                    Error::Config(format!("graph feature column '{name}' is not categorical"))
                })
        };
        Ok(Columns {
            duration: cont(&self.duration)?,
            src_bytes: cont(&self.src_bytes)?,
            dst_bytes: cont(&self.dst_bytes)?,
            src_packets: cont(&self.src_packets)?,
            dst_packets: cont(&self.dst_packets)?,
            protocol: cat(&self.protocol)?,
            service: cat(&self.service)?,
            state: cat(&self.state)?,
        })
    }
}

/// One aggregated directed edge: every flow between the same endpoints over
/// the same service collapses here.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub service: String,
    pub attrs: [f64; EDGE_ATTR_DIM],
}

/// Snapshot graph of one window. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    /// Entity ids, canonically sorted; edge endpoints index this list.
    pub nodes: Vec<String>,
    /// Row-major |V| x 25 node statistics.
    pub x: Vec<f64>,
    /// Aggregated edges sorted by (src, dst, service).
    pub edges: Vec<Edge>,
    /// Row-major |V| x |V| 0/1 connectivity with a zero diagonal.
    pub adjacency: Vec<f64>,
    /// Sorted catalog of services seen in the window; edge service codes
    /// index it.
    pub service_catalog: Vec<String>,
    /// Sorted catalog of connection states; edge state codes index it.
    pub state_catalog: Vec<String>,
}

impl TrafficGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.as_str().cmp(id)).ok()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.x[i * NODE_FEATURE_DIM..(i + 1) * NODE_FEATURE_DIM]
    }

    pub fn adjacency_at(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.node_count() + j]
    }

    /// Text export: `NODES` (id then 25 features), `EDGES` (src, dst, then
    /// 10 attributes), `ADJ` (row-major 0/1 rows), all tab-separated with
    /// a count on each section header.
    pub fn to_text(&self) -> Result<String> {
        for id in &self.nodes {
            if id.contains('\t') || id.contains('\n') {
                return Err(Error::Format(format!(
                    "entity id {id:?} contains characters the graph export cannot carry"
                )));
            }
        }
        let n = self.node_count();
        let mut out = String::new();
        out.push_str(&format!("NODES {n}\n"));
        for (i, id) in self.nodes.iter().enumerate() {
            out.push_str(id);
            for v in self.feature_row(i) {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("EDGES {}\n", self.edges.len()));
        for e in &self.edges {
            out.push_str(&format!("{}\t{}", self.nodes[e.src], self.nodes[e.dst]));
            for v in &e.attrs {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("ADJ {n}\n"));
        for i in 0..n {
            let row: Vec<String> = (0..n)
                .map(|j| format!("{}", self.adjacency[i * n + j] as u8))
                .collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        Ok(out)
    }
}

// ── Construction ────────────────────────────────────────────────────────

/// Total order on records making every aggregation pass canonical: two
/// windows with the same multiset of records aggregate in the same order.
fn canonical_cmp(a: &FlowRecord, b: &FlowRecord) -> std::cmp::Ordering {
    a.timestamp
        .total_cmp(&b.timestamp)
        .then_with(|| a.src.cmp(&b.src))
        .then_with(|| a.dst.cmp(&b.dst))
        .then_with(|| a.label.cmp(&b.label))
        .then_with(|| {
            for (x, y) in a.continuous.iter().zip(&b.continuous) {
                let ord = x.total_cmp(y);
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        })
        .then_with(|| a.categorical.cmp(&b.categorical))
}

fn num(r: &FlowRecord, col: usize) -> f64 {
    let v = r.continuous[col];
    if v.is_nan() {
        0.0
    } else {
        v
    }
}

fn cat<'a>(r: &'a FlowRecord, col: usize) -> &'a str {
    r.categorical[col].as_deref().unwrap_or("")
}

/// Builds the snapshot graph for one window of flow records.
pub fn build_graph(
    window: &[FlowRecord],
    schema: &SchemaSpec,
    config: &GraphFeatureConfig,
) -> Result<TrafficGraph> {
    if window.is_empty() {
        return Err(Error::Data("cannot build a graph from an empty window".into()));
    }
    for (i, r) in window.iter().enumerate() {
        if r.src.is_empty() || r.dst.is_empty() {
            return Err(Error::Data(format!(
                "record {i}: empty endpoint entity, cannot place it in the graph"
            )));
        }
    }
    let cols = config.resolve(schema)?;

    // Canonical record order drives every later summation.
    let mut records: Vec<&FlowRecord> = window.iter().collect();
    records.sort_by(|a, b| canonical_cmp(a, b));

    let node_set: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| [r.src.as_str(), r.dst.as_str()])
        .collect();
    let nodes: Vec<String> = node_set.iter().map(|s| s.to_string()).collect();
    let index = |id: &str| nodes.binary_search_by(|n| n.as_str().cmp(id)).unwrap();

    let service_catalog: Vec<String> = records
        .iter()
        .map(|r| cat(r, cols.service).to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let state_catalog: Vec<String> = records
        .iter()
        .map(|r| cat(r, cols.state).to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let code = |catalog: &[String], v: &str| {
        catalog.iter().position(|c| c == v).expect("cataloged") as f64
    };
    let proto_code = |v: &str| {
        config
            .protocol_classes
            .iter()
            .position(|c| c == v)
            .unwrap_or(config.protocol_classes.len()) as f64
    };
    let is_success =
        |r: &FlowRecord| config.success_states.iter().any(|s| s == cat(r, cols.state));

    // Group flows into aggregated edges; BTreeMap fixes the edge order.
    let mut groups: BTreeMap<(usize, usize, String), Vec<&FlowRecord>> = BTreeMap::new();
    for r in &records {
        groups
            .entry((index(&r.src), index(&r.dst), cat(r, cols.service).to_string()))
            .or_default()
            .push(r);
    }
    let n = nodes.len();
    let mut adjacency = vec![0.0; n * n];
    let mut edges = Vec::with_capacity(groups.len());
    for ((src, dst, service), flows) in groups {
        if src != dst {
            adjacency[src * n + dst] = 1.0;
        }
        let first = flows[0];
        let successes = flows.iter().filter(|r| is_success(r)).count();
        let sum = |col: usize| flows.iter().map(|r| num(r, col)).sum::<f64>();
        let attrs = [
            sum(cols.duration),
            proto_code(cat(first, cols.protocol)),
            code(&service_catalog, &service),
            sum(cols.src_packets),
            sum(cols.dst_packets),
            sum(cols.src_bytes),
            sum(cols.dst_bytes),
            code(&state_catalog, cat(first, cols.state)),
            flows.len() as f64,
            f64::from(2 * successes >= flows.len()),
        ];
        edges.push(Edge {
            src,
            dst,
            service,
            attrs,
        });
    }

    let mut x = vec![0.0; n * NODE_FEATURE_DIM];
    for (i, id) in nodes.iter().enumerate() {
        let row = node_feature_row(id, &records, &edges, &nodes, &cols, config);
        x[i * NODE_FEATURE_DIM..(i + 1) * NODE_FEATURE_DIM].copy_from_slice(&row);
    }

    Ok(TrafficGraph {
        nodes,
        x,
        edges,
        adjacency,
        service_catalog,
        state_catalog,
    })
}

/// The 25 statistics for one entity of a window. Errors when the entity
/// does not appear in the window at all.
pub fn node_features(
    entity: &str,
    window: &[FlowRecord],
    schema: &SchemaSpec,
    config: &GraphFeatureConfig,
) -> Result<[f64; NODE_FEATURE_DIM]> {
    let graph = build_graph(window, schema, config)?;
    let i = graph
        .node_index(entity)
        .ok_or_else(|| Error::Data(format!("entity '{entity}' does not appear in the window")))?;
    let mut row = [0.0; NODE_FEATURE_DIM];
    row.copy_from_slice(graph.feature_row(i));
    Ok(row)
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn mean_or_zero(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean gap between consecutive events; the record list is already
/// time-sorted by the canonical order.
fn interarrival_mean(timestamps: &[f64]) -> f64 {
    if timestamps.len() < 2 {
        return 0.0;
    }
    let gaps: Vec<f64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    mean_or_zero(&gaps)
}

fn node_feature_row(
    id: &str,
    records: &[&FlowRecord],
    edges: &[Edge],
    nodes: &[String],
    cols: &Columns,
    config: &GraphFeatureConfig,
) -> [f64; NODE_FEATURE_DIM] {
    let out: Vec<&&FlowRecord> = records.iter().filter(|r| r.src == id).collect();
    let inc: Vec<&&FlowRecord> = records.iter().filter(|r| r.dst == id).collect();
    // Incident set: each flow once, even a self-flow.
    let touching: Vec<&&FlowRecord> = records
        .iter()
        .filter(|r| r.src == id || r.dst == id)
        .collect();

    let me = nodes.binary_search_by(|n| n.as_str().cmp(id)).unwrap();
    let out_degree = edges.iter().filter(|e| e.src == me).count();
    let in_degree = edges.iter().filter(|e| e.dst == me).count();
    let out_peers: BTreeSet<usize> = edges.iter().filter(|e| e.src == me).map(|e| e.dst).collect();
    let in_peers: BTreeSet<usize> = edges.iter().filter(|e| e.dst == me).map(|e| e.src).collect();

    let volume = |r: &FlowRecord| num(r, cols.src_bytes) + num(r, cols.dst_bytes);
    let packets = |r: &FlowRecord| num(r, cols.src_packets) + num(r, cols.dst_packets);
    let out_bytes: f64 = out.iter().map(|r| volume(r)).sum();
    let in_bytes: f64 = inc.iter().map(|r| volume(r)).sum();
    let out_packets: f64 = out.iter().map(|r| packets(r)).sum();
    let in_packets: f64 = inc.iter().map(|r| packets(r)).sum();

    let out_durations: Vec<f64> = out.iter().map(|r| num(r, cols.duration)).collect();
    let in_durations: Vec<f64> = inc.iter().map(|r| num(r, cols.duration)).collect();
    let out_dur_mean = mean_or_zero(&out_durations);
    let in_dur_mean = mean_or_zero(&in_durations);

    let out_ts: Vec<f64> = out.iter().map(|r| r.timestamp).collect();
    let in_ts: Vec<f64> = inc.iter().map(|r| r.timestamp).collect();

    let total = touching.len() as f64;
    let frac = |pred: &dyn Fn(&FlowRecord) -> bool| {
        touching.iter().filter(|r| pred(r)).count() as f64 / total
    };
    let class0 = config.protocol_classes[0].as_str();
    let class1 = config.protocol_classes[1].as_str();
    let frac_c0 = frac(&|r| cat(r, cols.protocol) == class0);
    let frac_c1 = frac(&|r| cat(r, cols.protocol) == class1);
    let frac_well_known = frac(&|r| {
        config
            .well_known_services
            .iter()
            .any(|s| s == cat(r, cols.service))
    });
    let failure_frac = frac(&|r| {
        !config
            .success_states
            .iter()
            .any(|s| s == cat(r, cols.state))
    });

    let ts_min = touching
        .iter()
        .map(|r| r.timestamp)
        .fold(f64::INFINITY, f64::min);
    let ts_max = touching
        .iter()
        .map(|r| r.timestamp)
        .fold(f64::NEG_INFINITY, f64::max);
    let active_span = if touching.is_empty() { 0.0 } else { ts_max - ts_min };

    let services: BTreeSet<&str> = touching.iter().map(|r| cat(r, cols.service)).collect();

    [
        out_degree as f64,
        in_degree as f64,
        out_peers.len() as f64,
        in_peers.len() as f64,
        out.len() as f64,
        inc.len() as f64,
        out_bytes,
        in_bytes,
        out_packets,
        in_packets,
        out_dur_mean,
        population_std(&out_durations, out_dur_mean),
        in_dur_mean,
        population_std(&in_durations, in_dur_mean),
        interarrival_mean(&out_ts),
        interarrival_mean(&in_ts),
        frac_c0,
        frac_c1,
        1.0 - frac_c0 - frac_c1,
        frac_well_known,
        failure_frac,
        if out_packets == 0.0 { 0.0 } else { out_bytes / out_packets },
        if in_packets == 0.0 { 0.0 } else { in_bytes / in_packets },
        active_span,
        services.len() as f64,
    ]
}

// ── Normalization ───────────────────────────────────────────────────────

/// Â = D̃^{-1/2} (A + I) D̃^{-1/2}, the propagation operator of the graph
/// convolution. Node order matches the graph that produced A.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub n: usize,
    /// Row-major n x n values.
    pub values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Normalizes a 0/1 adjacency. With `symmetrize` set (the default used for
/// propagation), A is first replaced by max(A, Aᵀ) so the operator is
/// symmetric; self-connections are always added before degree scaling.
pub fn normalize_adjacency(
    adjacency: &[f64],
    n: usize,
    symmetrize: bool,
) -> Result<NormalizedAdjacency> {
    if adjacency.len() != n * n {
        return Err(Error::Data(format!(
            "adjacency of {} entries is not {n}x{n}",
            adjacency.len()
        )));
    }
    if let Some(v) = adjacency.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::Data(format!(
            "adjacency entries must be 0 or 1, found {v}"
        )));
    }
    let mut tilde = adjacency.to_vec();
    if symmetrize {
        for i in 0..n {
            for j in 0..n {
                let m = tilde[i * n + j].max(tilde[j * n + i]);
                tilde[i * n + j] = m;
                tilde[j * n + i] = m;
            }
        }
    }
    for i in 0..n {
        tilde[i * n + i] = 1.0;
    }
    let degrees: Vec<f64> = (0..n)
        .map(|i| tilde[i * n..(i + 1) * n].iter().sum::<f64>())
        .collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut values = tilde;
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(NormalizedAdjacency { n, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> SchemaSpec {
        SchemaSpec::parse(
            "ts timestamp\n\
             src src_entity\n\
             dst dst_entity\n\
             proto categorical\n\
             service categorical\n\
             state categorical\n\
             duration continuous\n\
             sbytes continuous\n\
             dbytes continuous\n\
             spkts continuous\n\
             dpkts continuous\n\
             label label\n",
        )
        .unwrap()
    }

    #[allow(clippy::too_many_arguments)]
    fn flow(
        ts: f64,
        src: &str,
        dst: &str,
        proto: &str,
        service: &str,
        state: &str,
        duration: f64,
        sbytes: f64,
        dbytes: f64,
        spkts: f64,
        dpkts: f64,
    ) -> FlowRecord {
        FlowRecord {
            timestamp: ts,
            src: src.into(),
            dst: dst.into(),
            label: "normal".into(),
            continuous: vec![duration, sbytes, dbytes, spkts, dpkts],
            categorical: vec![
                Some(proto.into()),
                Some(service.into()),
                Some(state.into()),
            ],
        }
    }

    fn simple(ts: f64, src: &str, dst: &str) -> FlowRecord {
        flow(ts, src, dst, "tcp", "http", "FIN", 1.0, 100.0, 50.0, 4.0, 2.0)
    }

    #[test]
    fn single_flow_gives_two_nodes_one_edge() {
        let g = build_graph(
            &[simple(1.0, "a", "b")],
            &schema(),
            &GraphFeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(g.nodes, vec!["a", "b"]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.adjacency, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn reciprocal_flows_give_symmetric_adjacency() {
        let g = build_graph(
            &[simple(1.0, "a", "b"), simple(2.0, "b", "a")],
            &schema(),
            &GraphFeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.adjacency, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn flows_aggregate_per_src_dst_service() {
        let window = vec![
            flow(1.0, "a", "b", "tcp", "http", "FIN", 1.0, 10.0, 5.0, 2.0, 1.0),
            flow(2.0, "a", "b", "tcp", "http", "REJ", 2.0, 20.0, 6.0, 3.0, 1.0),
            flow(3.0, "a", "b", "udp", "dns", "CON", 0.5, 7.0, 3.0, 1.0, 1.0),
        ];
        let g = build_graph(&window, &schema(), &GraphFeatureConfig::default()).unwrap();
        assert_eq!(g.edges.len(), 2);
        // Edges sort by service within (src, dst): dns before http.
        let dns = &g.edges[0];
        let http = &g.edges[1];
        assert_eq!(dns.service, "dns");
        assert_eq!(http.attrs[0], 3.0); // summed duration
        assert_eq!(http.attrs[5], 30.0); // summed src->dst bytes
        assert_eq!(http.attrs[8], 2.0); // flow count
        assert_eq!(http.attrs[9], 1.0); // half succeeded
        assert_eq!(dns.attrs[9], 1.0);
        // Adjacency stays binary despite multiplicity.
        assert_eq!(g.adjacency, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn self_flow_keeps_zero_diagonal_but_appears_as_edge() {
        let g = build_graph(
            &[simple(1.0, "a", "a")],
            &schema(),
            &GraphFeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(g.nodes, vec!["a"]);
        assert_eq!(g.adjacency, vec![0.0]);
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn empty_endpoint_is_rejected_with_record_index() {
        let mut bad = simple(1.0, "a", "b");
        bad.dst = String::new();
        let err = build_graph(
            &[simple(0.5, "a", "b"), bad],
            &schema(),
            &GraphFeatureConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("record 1"));
    }

    #[test]
    fn empty_window_is_rejected() {
        assert!(build_graph(&[], &schema(), &GraphFeatureConfig::default()).is_err());
    }

    #[test]
    fn unknown_feature_column_is_a_config_error() {
        let cfg = GraphFeatureConfig {
            duration: "nope".into(),
            ..GraphFeatureConfig::default()
        };
        let err = build_graph(&[simple(1.0, "a", "b")], &schema(), &cfg).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn node_features_match_trivial_example() {
        // One outgoing flow of 150 total bytes: everything on the out side.
        let g = build_graph(
            &[simple(1.0, "a", "b")],
            &schema(),
            &GraphFeatureConfig::default(),
        )
        .unwrap();
        let a = g.feature_row(0);
        let idx = |n: &str| NODE_FEATURE_NAMES.iter().position(|x| *x == n).unwrap();
        assert_eq!(a[idx("out_degree")], 1.0);
        assert_eq!(a[idx("in_degree")], 0.0);
        assert_eq!(a[idx("out_bytes")], 150.0);
        assert_eq!(a[idx("in_bytes")], 0.0);
        assert_eq!(a[idx("out_flows")], 1.0);
        let b = g.feature_row(1);
        assert_eq!(b[idx("out_degree")], 0.0);
        assert_eq!(b[idx("in_degree")], 1.0);
        assert_eq!(b[idx("in_bytes")], 150.0);
    }

    #[test]
    fn node_features_match_brute_force_on_fixture() {
        // 20 flows over 5 entities, deterministic mix of services/states.
        let entities = ["a", "b", "c", "d", "e"];
        let services = ["http", "dns", "ssh", "обмен"];
        let states = ["FIN", "REJ", "CON"];
        let protos = ["tcp", "udp", "icmp"];
        let mut window = Vec::new();
        for i in 0..20u32 {
            let f = i as f64;
            window.push(flow(
                f * 3.0,
                entities[(i % 5) as usize],
                entities[((i * 3 + 1) % 5) as usize],
                protos[(i % 3) as usize],
                services[(i % 4) as usize],
                states[(i % 3) as usize],
                0.25 * f,
                10.0 * f,
                5.0 * f,
                2.0 * f,
                f,
            ));
        }
        let cfg = GraphFeatureConfig::default();
        let g = build_graph(&window, &schema(), &cfg).unwrap();
        assert_eq!(g.node_count(), 5);
        let idx = |n: &str| NODE_FEATURE_NAMES.iter().position(|x| *x == n).unwrap();
        for (vi, v) in g.nodes.iter().enumerate() {
            let row = g.feature_row(vi);
            // Independent per-statistic recomputation, straight off the
            // window definition.
            let outgoing: Vec<&FlowRecord> = window.iter().filter(|r| &r.src == v).collect();
            let incoming: Vec<&FlowRecord> = window.iter().filter(|r| &r.dst == v).collect();
            let volume = |r: &FlowRecord| r.continuous[1] + r.continuous[2];
            assert_eq!(row[idx("out_flows")], outgoing.len() as f64);
            assert_eq!(row[idx("in_flows")], incoming.len() as f64);
            let out_bytes: f64 = outgoing.iter().map(|r| volume(r)).sum();
            let in_bytes: f64 = incoming.iter().map(|r| volume(r)).sum();
            assert!((row[idx("out_bytes")] - out_bytes).abs() < 1e-9);
            assert!((row[idx("in_bytes")] - in_bytes).abs() < 1e-9);
            let out_edges: BTreeSet<(String, String)> = outgoing
                .iter()
                .map(|r| (r.dst.clone(), r.categorical[1].clone().unwrap()))
                .collect();
            assert_eq!(row[idx("out_degree")], out_edges.len() as f64);
            let peers: BTreeSet<&String> = outgoing.iter().map(|r| &r.dst).collect();
            assert_eq!(row[idx("out_peers")], peers.len() as f64);
            let touching: Vec<&FlowRecord> = window
                .iter()
                .filter(|r| &r.src == v || &r.dst == v)
                .collect();
            let tcp = touching
                .iter()
                .filter(|r| r.categorical[0].as_deref() == Some("tcp"))
                .count();
            assert!(
                (row[idx("frac_tcp")] - tcp as f64 / touching.len() as f64).abs() < 1e-12
            );
            let fails = touching
                .iter()
                .filter(|r| {
                    let s = r.categorical[2].as_deref().unwrap();
                    s != "FIN" && s != "CON"
                })
                .count();
            assert!(
                (row[idx("failure_frac")] - fails as f64 / touching.len() as f64).abs() < 1e-12
            );
            let mut ts: Vec<f64> = touching.iter().map(|r| r.timestamp).collect();
            ts.sort_by(f64::total_cmp);
            assert_eq!(row[idx("active_span")], ts.last().unwrap() - ts[0]);
            let svc: BTreeSet<&str> = touching
                .iter()
                .map(|r| r.categorical[1].as_deref().unwrap())
                .collect();
            assert_eq!(row[idx("unique_services")], svc.len() as f64);
            // Every statistic is finite and degrees are whole numbers.
            for (k, &val) in row.iter().enumerate() {
                assert!(val.is_finite(), "feature {k} of node {v}");
            }
            for k in 0..6 {
                assert_eq!(row[k], row[k].trunc());
            }
        }
    }

    #[test]
    fn shuffling_the_window_yields_an_identical_graph() {
        let mut window = Vec::new();
        for i in 0..30u32 {
            let f = i as f64;
            window.push(flow(
                f,
                ["a", "b", "c"][(i % 3) as usize],
                ["b", "c", "d"][((i * 2) % 3) as usize],
                ["tcp", "udp"][(i % 2) as usize],
                ["http", "dns"][(i % 2) as usize],
                ["FIN", "REJ"][(i % 2) as usize],
                f * 0.1,
                f,
                f * 2.0,
                f * 3.0,
                f * 4.0,
            ));
        }
        let cfg = GraphFeatureConfig::default();
        let reference = build_graph(&window, &schema(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            window.shuffle(&mut rng);
            let shuffled = build_graph(&window, &schema(), &cfg).unwrap();
            assert_eq!(shuffled, reference);
        }
    }

    #[test]
    fn node_features_op_rejects_absent_entity() {
        let err = node_features(
            "zz",
            &[simple(1.0, "a", "b")],
            &schema(),
            &GraphFeatureConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn isolated_node_normalizes_to_identity() {
        let norm = normalize_adjacency(&[0.0], 1, true).unwrap();
        assert_eq!(norm.values, vec![1.0]);
    }

    #[test]
    fn two_fully_connected_nodes_normalize_to_half() {
        let a = vec![0.0, 1.0, 1.0, 0.0];
        let norm = normalize_adjacency(&a, 2, true).unwrap();
        for &v in &norm.values {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn three_node_path_matches_hand_computation() {
        // a-b-c: degrees with self-loops are 2, 3, 2.
        let a = vec![
            0.0, 1.0, 0.0, //
            1.0, 0.0, 1.0, //
            0.0, 1.0, 0.0,
        ];
        let norm = normalize_adjacency(&a, 3, true).unwrap();
        let s6 = 1.0 / 6.0f64.sqrt();
        assert!((norm.at(0, 1) - s6).abs() < 1e-15);
        assert!((norm.at(1, 0) - s6).abs() < 1e-15);
        assert!((norm.at(1, 2) - s6).abs() < 1e-15);
        assert!((norm.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((norm.at(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((norm.at(2, 2) - 0.5).abs() < 1e-15);
        assert_eq!(norm.at(0, 2), 0.0);
    }

    #[test]
    fn entrywise_definition_holds_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = 2 + (rand::Rng::random_range(&mut rng, 0..8usize));
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if i != j && rand::Rng::random::<f64>(&mut rng) < 0.4 {
                        a[i * n + j] = 1.0;
                    }
                }
            }
            let norm = normalize_adjacency(&a, n, true).unwrap();
            // Rebuild Ã and degrees independently.
            let mut tilde = a.clone();
            for i in 0..n {
                for j in 0..n {
                    let m = tilde[i * n + j].max(tilde[j * n + i]);
                    tilde[i * n + j] = m;
                    tilde[j * n + i] = m;
                }
                tilde[i * n + i] = 1.0;
            }
            let deg: Vec<f64> = (0..n)
                .map(|i| tilde[i * n..(i + 1) * n].iter().sum())
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let expected = tilde[i * n + j] / (deg[i] * deg[j]).sqrt();
                    assert!((norm.at(i, j) - expected).abs() < 1e-15);
                    assert!((0.0..=1.0).contains(&norm.at(i, j)));
                    assert_eq!(norm.at(i, j), norm.at(j, i));
                }
            }
        }
    }

    #[test]
    fn directed_normalization_preserves_asymmetry_when_requested() {
        let a = vec![0.0, 1.0, 0.0, 0.0];
        let norm = normalize_adjacency(&a, 2, false).unwrap();
        assert!(norm.at(0, 1) > 0.0);
        assert_eq!(norm.at(1, 0), 0.0);
    }

    #[test]
    fn permutation_equivariance_of_normalization() {
        // normalize(P A Pᵀ) = P normalize(A) Pᵀ for a permutation P.
        let n = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j && rand::Rng::random::<f64>(&mut rng) < 0.5 {
                    a[i * n + j] = 1.0;
                }
            }
        }
        let perm = [3usize, 0, 4, 1, 2];
        // (P M Pᵀ)[perm[i]][perm[j]] = M[i][j].
        let permute = |m: &[f64]| {
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[perm[i] * n + perm[j]] = m[i * n + j];
                }
            }
            out
        };
        let lhs = normalize_adjacency(&permute(&a), n, true).unwrap().values;
        let rhs = permute(&normalize_adjacency(&a, n, true).unwrap().values);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn malformed_adjacency_is_rejected() {
        assert!(normalize_adjacency(&[0.0, 1.0, 0.0], 2, true).is_err());
        assert!(normalize_adjacency(&[0.0, 0.5, 0.5, 0.0], 2, true).is_err());
    }

    #[test]
    fn export_round_trips_key_sections() {
        let g = build_graph(
            &[simple(1.0, "a", "b"), simple(2.0, "b", "a")],
            &schema(),
            &GraphFeatureConfig::default(),
        )
        .unwrap();
        let text = g.to_text().unwrap();
        assert!(text.starts_with("NODES 2\n"));
        assert!(text.contains("\nEDGES 2\n"));
        assert!(text.contains("\nADJ 2\n"));
        let adj_block: Vec<&str> = text.split("ADJ 2\n").nth(1).unwrap().lines().collect();
        assert_eq!(adj_block, vec!["0\t1", "1\t0"]);
    }

    #[test]
    fn export_rejects_tab_in_entity_id() {
        let mut r = simple(1.0, "a", "b");
        r.src = "bad\tid".into();
        let g = build_graph(&[r], &schema(), &GraphFeatureConfig::default()).unwrap();
        assert!(g.to_text().is_err());
    }
}
