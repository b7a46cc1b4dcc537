//! Synthetic flow-corpus generator: Poisson background traffic with
//! log-normal volumes among a host population, plus four planted attack
//! archetypes (volumetric flood, sequential port sweep, bulk
//! exfiltration, fixed-period beaconing), each labeled.
//!
//! The output uses the same schema grammar and CSV shape the ingest
//! stage consumes, with column names matching the graph builder's
//! defaults, so generated corpora run through the whole pipeline without
//! remapping.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::error::{Error, Result};
use crate::ingest::FlowRecord;
use crate::schema::SchemaSpec;

/// Schema for generated corpora, in the grammar `ingest` parses.
pub const GENERATED_SCHEMA: &str = "\
ts timestamp
src src_entity
dst dst_entity
proto categorical
service categorical
state categorical
duration continuous
sbytes continuous
dbytes continuous
spkts continuous
dpkts continuous
dport continuous
rate continuous
smeansz continuous
label label
";

pub const CLASS_NAMES: [&str; 5] = [
    "normal",
    "ddos",
    "port_scan",
    "exfiltration",
    "backdoor_beacon",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Ddos,
    PortScan,
    Exfiltration,
    BackdoorBeacon,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::Ddos,
        AttackKind::PortScan,
        AttackKind::Exfiltration,
        AttackKind::BackdoorBeacon,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttackKind::Ddos => "ddos",
            AttackKind::PortScan => "port_scan",
            AttackKind::Exfiltration => "exfiltration",
            AttackKind::BackdoorBeacon => "backdoor_beacon",
        }
    }

    pub fn parse(s: &str) -> Result<AttackKind> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = AttackKind::ALL.iter().map(|k| k.label()).collect();
                Error::Config(format!(
                    "unknown attack kind '{s}', expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Seconds from scenario start.
    pub start: f64,
    pub duration: f64,
    /// Flow-rate multiplier relative to the background rate.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Total scenario length in seconds.
    pub duration: f64,
    /// Background flows per second.
    pub background_rate: f64,
    /// Number of regular hosts.
    pub entities: usize,
    pub attacks: Vec<AttackSpec>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            duration: 600.0,
            background_rate: 20.0,
            entities: 24,
            attacks: Vec::new(),
            seed: 42,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "scenario duration {} must be positive",
                self.duration
            )));
        }
        if !(self.background_rate > 0.0 && self.background_rate.is_finite()) {
            return Err(Error::Config(format!(
                "background rate {} must be positive",
                self.background_rate
            )));
        }
        if self.entities < 2 {
            return Err(Error::Config(format!(
                "{} entities cannot exchange traffic, need at least 2",
                self.entities
            )));
        }
        for (i, a) in self.attacks.iter().enumerate() {
            if !(a.start >= 0.0 && a.duration > 0.0 && a.start + a.duration <= self.duration) {
                return Err(Error::Config(format!(
                    "attack {i} ({}) spans {}..{} outside the scenario's 0..{}",
                    a.kind,
                    a.start,
                    a.start + a.duration,
                    self.duration
                )));
            }
            if !(a.intensity > 0.0 && a.intensity.is_finite()) {
                return Err(Error::Config(format!(
                    "attack {i} ({}) has invalid intensity {}",
                    a.kind, a.intensity
                )));
            }
        }
        Ok(())
    }
}

/// Generator output: labeled records in time order plus bookkeeping.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub records: Vec<FlowRecord>,
    /// Label -> record count, as emitted.
    pub label_counts: BTreeMap<String, usize>,
    pub log: Vec<String>,
}

impl GeneratedCorpus {
    pub fn schema(&self) -> Result<SchemaSpec> {
        SchemaSpec::parse(GENERATED_SCHEMA)
    }
}

// ── Record assembly ──────────────────────────────────────────────────────

/// Continuous columns in `GENERATED_SCHEMA` order.
struct FlowShape {
    duration: f64,
    sbytes: f64,
    dbytes: f64,
    spkts: f64,
    dpkts: f64,
    dport: f64,
}

/// Snaps a measurement to a microsecond-style grid. Capture tools report
/// at fixed precision, and the grid keeps a seeded corpus bit-identical
/// however the math library rounds its last digit.
fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn record(
    timestamp: f64,
    src: String,
    dst: String,
    proto: &str,
    service: &str,
    state: &str,
    shape: FlowShape,
    label: &str,
) -> FlowRecord {
    debug_assert!(src != dst, "flows never loop back to their source");
    // Derived columns: rate depends linearly on packets/duration and
    // smeansz on bytes/packets, giving the collinearity pruning stage
    // something real to find.
    let duration = quantize(shape.duration);
    let rate = quantize((shape.spkts + shape.dpkts) / duration.max(1e-3));
    let smeansz = quantize(shape.sbytes / shape.spkts.max(1.0));
    FlowRecord {
        timestamp: quantize(timestamp),
        src,
        dst,
        label: label.to_string(),
        continuous: vec![
            duration,
            shape.sbytes,
            shape.dbytes,
            shape.spkts,
            shape.dpkts,
            shape.dport,
            rate,
            smeansz,
        ],
        categorical: vec![
            Some(proto.to_string()),
            Some(service.to_string()),
            Some(state.to_string()),
        ],
    }
}

fn host_name(i: usize) -> String {
    format!("h{i:03}")
}

/// Picks two distinct hosts.
fn host_pair(rng: &mut ChaCha8Rng, entities: usize) -> (String, String) {
    let a = rng.random_range(0..entities);
    let b = (a + 1 + rng.random_range(0..entities - 1)) % entities;
    (host_name(a), host_name(b))
}

const SERVICES: [(&str, &str, f64, f64); 6] = [
    // (service, proto, port, weight)
    ("http", "tcp", 80.0, 0.30),
    ("https", "tcp", 443.0, 0.25),
    ("dns", "udp", 53.0, 0.20),
    ("ssh", "tcp", 22.0, 0.10),
    ("smtp", "tcp", 25.0, 0.05),
    ("-", "tcp", 0.0, 0.10),
];

fn background_flow(rng: &mut ChaCha8Rng, t: f64, entities: usize) -> FlowRecord {
    let (src, dst) = host_pair(rng, entities);
    let mut pick = rng.random::<f64>();
    let mut choice = SERVICES[SERVICES.len() - 1];
    for s in SERVICES {
        if pick < s.3 {
            choice = s;
            break;
        }
        pick -= s.3;
    }
    let (service, mut proto, port, _) = choice;
    if service == "-" && rng.random::<f64>() < 0.5 {
        proto = "udp";
    }
    let dport = if port > 0.0 {
        port
    } else {
        rng.random_range(1024..65535) as f64
    };
    let state = fate_state(rng);
    let (duration, sbytes, dbytes, spkts, dpkts) = fate_shape(rng, state);
    record(
        t,
        src,
        dst,
        proto,
        service,
        state,
        FlowShape {
            duration,
            sbytes,
            dbytes,
            spkts,
            dpkts,
            dport,
        },
        "normal",
    )
}

/// Draws a connection fate with the background mix: most exchanges
/// complete, a few stay open or get rejected.
fn fate_state(rng: &mut ChaCha8Rng) -> &'static str {
    if rng.random::<f64>() < 0.92 {
        "FIN"
    } else if rng.random::<f64>() < 0.5 {
        "CON"
    } else {
        "REJ"
    }
}

/// Shapes a flow by its connection fate: completed exchanges carry real
/// payloads, still-open ones tend small, rejected ones never got data
/// back. Attack generators reuse these draws so no single flow's shape
/// gives away whether it belongs to an attack.
fn fate_shape(rng: &mut ChaCha8Rng, state: &str) -> (f64, f64, f64, f64, f64) {
    let (duration, sbytes, dbytes) = match state {
        "FIN" => {
            let duration: f64 = LogNormal::new(-1.0, 1.0).unwrap().sample(rng);
            let sbytes: f64 = LogNormal::new(6.5, 1.2).unwrap().sample(rng);
            let sbytes = sbytes.round().max(40.0);
            let dbytes = (sbytes * rng.random_range(0.3..3.0)).round().max(40.0);
            (duration, sbytes, dbytes)
        }
        "CON" => {
            let duration: f64 = LogNormal::new(-3.0, 1.0).unwrap().sample(rng);
            let sbytes: f64 = LogNormal::new(5.0, 1.0).unwrap().sample(rng);
            let dbytes: f64 = LogNormal::new(5.3, 1.0).unwrap().sample(rng);
            (duration, sbytes.round().max(40.0), dbytes.round().max(40.0))
        }
        _ => {
            let duration: f64 = LogNormal::new(-4.0, 0.8).unwrap().sample(rng);
            let sbytes = 40.0 + rng.random_range(0..80) as f64;
            (duration, sbytes, 0.0)
        }
    };
    let spkts = (sbytes / 700.0).ceil().max(1.0) + rng.random_range(0..3) as f64;
    let dpkts = if state == "REJ" {
        0.0
    } else {
        (dbytes / 700.0).ceil().max(1.0) + rng.random_range(0..3) as f64
    };
    (duration, sbytes, dbytes, spkts, dpkts)
}

// ── Attack generators ────────────────────────────────────────────────────

/// Attack target resolved ahead of generation, so overlapping attacks on
/// the same (kind, target) can be detected and merged.
#[derive(Debug, Clone)]
struct PlannedAttack {
    kind: AttackKind,
    start: f64,
    end: f64,
    intensity: f64,
    /// Primary endpoint: flood/scan/exfil destination or beacon source.
    target: usize,
    /// Secondary endpoint where the archetype needs a fixed peer.
    peer: usize,
}

fn plan_attacks(spec: &ScenarioSpec, rng: &mut ChaCha8Rng, log: &mut Vec<String>) -> Vec<PlannedAttack> {
    let mut planned: Vec<PlannedAttack> = Vec::new();
    for a in &spec.attacks {
        let target = rng.random_range(0..spec.entities);
        let peer = (target + 1 + rng.random_range(0..spec.entities - 1)) % spec.entities;
        planned.push(PlannedAttack {
            kind: a.kind,
            start: a.start,
            end: a.start + a.duration,
            intensity: a.intensity,
            target,
            peer,
        });
    }
    // Merge overlapping intervals that landed on the same (kind, target).
    let mut merged: Vec<PlannedAttack> = Vec::new();
    for p in planned {
        let overlap = merged.iter_mut().find(|m| {
            m.kind == p.kind && m.target == p.target && p.start < m.end && m.start < p.end
        });
        match overlap {
            Some(m) => {
                log.push(format!(
                    "merged overlapping {} attacks on {}: {}..{} and {}..{}",
                    p.kind,
                    host_name(m.target),
                    m.start,
                    m.end,
                    p.start,
                    p.end
                ));
                m.start = m.start.min(p.start);
                m.end = m.end.max(p.end);
                m.intensity = m.intensity.max(p.intensity);
            }
            None => merged.push(p),
        }
    }
    merged
}

fn generate_attack(
    attack: &PlannedAttack,
    spec: &ScenarioSpec,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<FlowRecord>,
) {
    let label = attack.kind.label();
    let dst = host_name(attack.target);
    match attack.kind {
        AttackKind::Ddos => {
            // Request flood: many sources, mostly a bot population, issue
            // complete-looking exchanges against one destination. Each
            // flow is drawn from the background http profile, fate mix
            // included, so only the many-sources-one-target pattern and
            // the arrival rate give the flood away.
            let rate = attack.intensity * spec.background_rate;
            let exp = Exp::new(rate).unwrap();
            let bots = 40;
            let mut t = attack.start + exp.sample(rng);
            while t < attack.end {
                let src = if rng.random::<f64>() < 0.9 {
                    format!("bot{:03}", rng.random_range(0..bots))
                } else {
                    let s = rng.random_range(0..spec.entities);
                    if host_name(s) == dst {
                        host_name((s + 1) % spec.entities)
                    } else {
                        host_name(s)
                    }
                };
                let state = fate_state(rng);
                let (duration, sbytes, dbytes, spkts, dpkts) = fate_shape(rng, state);
                out.push(record(
                    t,
                    src,
                    dst.clone(),
                    "tcp",
                    "http",
                    state,
                    FlowShape {
                        duration,
                        sbytes,
                        dbytes,
                        spkts,
                        dpkts,
                        dport: 80.0,
                    },
                    label,
                ));
                t += exp.sample(rng);
            }
        }
        AttackKind::PortScan => {
            // One source sweeps a destination's ports in ascending order
            // with short, rejected probes.
            let src = host_name(attack.peer);
            let rate = attack.intensity * spec.background_rate;
            let exp = Exp::new(rate).unwrap();
            let mut t = attack.start + exp.sample(rng);
            let mut port = 1.0;
            while t < attack.end {
                // Probes share the rejected-flow shape; the sweep shows up
                // in the port sequence, not in any single probe.
                let (duration, sbytes, dbytes, spkts, dpkts) = fate_shape(rng, "REJ");
                out.push(record(
                    t,
                    src.clone(),
                    dst.clone(),
                    "tcp",
                    "-",
                    "REJ",
                    FlowShape {
                        duration,
                        sbytes,
                        dbytes,
                        spkts,
                        dpkts,
                        dport: port,
                    },
                    label,
                ));
                port += 1.0;
                t += exp.sample(rng);
            }
        }
        AttackKind::Exfiltration => {
            // Sustained bulk upload from one compromised host.
            let src = host_name(attack.peer);
            let rate = (attack.intensity * spec.background_rate).max(0.2);
            let exp = Exp::new(rate).unwrap();
            let volume: LogNormal<f64> = LogNormal::new(12.0, 0.4).unwrap();
            let mut t = attack.start + exp.sample(rng);
            while t < attack.end {
                let sbytes = volume.sample(rng).round();
                let spkts = (sbytes / 1200.0).ceil();
                out.push(record(
                    t,
                    src.clone(),
                    dst.clone(),
                    "tcp",
                    "https",
                    "FIN",
                    FlowShape {
                        duration: 2.0 + rng.random::<f64>() * 8.0,
                        sbytes,
                        dbytes: 1500.0 + rng.random_range(0..1500) as f64,
                        spkts,
                        dpkts: 10.0 + rng.random_range(0..20) as f64,
                        dport: 443.0,
                    },
                    label,
                ));
                t += exp.sample(rng);
            }
        }
        AttackKind::BackdoorBeacon => {
            // The implant phones home on a fixed period. Each check-in is
            // shaped like an ordinary small still-open web flow; the
            // regularity and the fixed peer are the whole signature.
            let src = host_name(attack.peer);
            let period = 1.0 / (attack.intensity * spec.background_rate).max(1e-3);
            let payload: LogNormal<f64> = LogNormal::new(5.0, 0.35).unwrap();
            let reply: LogNormal<f64> = LogNormal::new(5.3, 0.35).unwrap();
            let mut t = attack.start;
            while t < attack.end {
                let sbytes = payload.sample(rng).round().max(40.0);
                let dbytes = reply.sample(rng).round().max(40.0);
                out.push(record(
                    t,
                    src.clone(),
                    dst.clone(),
                    "tcp",
                    "http",
                    "CON",
                    FlowShape {
                        duration: 0.04 + rng.random::<f64>() * 0.03,
                        sbytes,
                        dbytes,
                        spkts: (sbytes / 700.0).ceil().max(1.0) + 1.0,
                        dpkts: (dbytes / 700.0).ceil().max(1.0) + 1.0,
                        dport: 80.0,
                    },
                    label,
                ));
                t += period;
            }
        }
    }
}

// ── Entry point ──────────────────────────────────────────────────────────

/// Generates the full labeled corpus in timestamp order. Bit-identical
/// for identical specs.
pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut log = Vec::new();
    let mut records = Vec::new();

    // Background Poisson process over the whole timeline.
    let exp = Exp::new(spec.background_rate).expect("validated rate");
    let mut t = exp.sample(&mut rng);
    while t < spec.duration {
        records.push(background_flow(&mut rng, t, spec.entities));
        t += exp.sample(&mut rng);
    }
    let background = records.len();
    log.push(format!("background: {background} flows"));

    for attack in plan_attacks(spec, &mut rng, &mut log) {
        let before = records.len();
        generate_attack(&attack, spec, &mut rng, &mut records);
        log.push(format!(
            "{} on {}: {} flows in {:.1}..{:.1}",
            attack.kind,
            host_name(attack.target),
            records.len() - before,
            attack.start,
            attack.end
        ));
    }

    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let mut label_counts = BTreeMap::new();
    for r in &records {
        *label_counts.entry(r.label.clone()).or_insert(0) += 1;
    }
    Ok(GeneratedCorpus {
        records,
        label_counts,
        log,
    })
}
