//! One-round broadcast simulation.
//!
//! Model: every vertex sees only its own neighborhood and shared public
//! randomness, posts a single message, and a referee must decide
//! connectivity from the messages alone.  The scheme interface keeps
//! encoders honest about locality — `encode` receives nothing but the
//! vertex, its neighbor list, n and the seed.

use crate::dsu::Dsu;
use crate::referee::{self, RefereeError};
use crate::sketch::{SketchConfig, SketchError, VertexSketch};
use crate::hashing;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("graph parse error at line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("bad graph: {0}")]
    BadGraph(String),
    #[error("message from vertex {vertex} is {bits} bits, over the {cap}-bit cap")]
    MessageCap { vertex: u32, bits: u64, cap: u64 },
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Referee(#[from] RefereeError),
}

/// Simple undirected graph on vertices 1..=n with sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: u32,
    adj: Vec<Vec<u32>>,
}

impl Graph {
    pub fn from_edges(n: u32, edges: &[(u32, u32)]) -> Result<Self, SimError> {
        let mut adj = vec![Vec::new(); n as usize];
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(SimError::BadGraph(format!("self-loop at {u}")));
            }
            if u == 0 || v == 0 || u > n || v > n {
                return Err(SimError::BadGraph(format!("edge ({u},{v}) out of 1..={n}")));
            }
            let key = if u < v { (u, v) } else { (v, u) };
            if !seen.insert(key) {
                return Err(SimError::BadGraph(format!("duplicate edge ({u},{v})")));
            }
            adj[u as usize - 1].push(v);
            adj[v as usize - 1].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Graph { n, adj })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adj[v as usize - 1]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.neighbors(v).len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    /// Edges as (min, max) pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 1..=self.n {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Text format: first non-comment line "n m", then m lines "u v" with
    /// 1-based endpoints and u < v.  '#' starts a comment; blank lines are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut header: Option<(u32, usize)> = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut it = body.split_whitespace();
            let parse_u32 = |tok: Option<&str>, what: &str| -> Result<u32, SimError> {
                tok.ok_or_else(|| SimError::Parse { line, what: format!("missing {what}") })?
                    .parse::<u32>()
                    .map_err(|_| SimError::Parse { line, what: format!("bad {what}") })
            };
            if header.is_none() {
                let n = parse_u32(it.next(), "vertex count")?;
                let m = parse_u32(it.next(), "edge count")? as usize;
                if it.next().is_some() {
                    return Err(SimError::Parse { line, what: "trailing tokens in header".into() });
                }
                header = Some((n, m));
            } else {
                let u = parse_u32(it.next(), "endpoint")?;
                let v = parse_u32(it.next(), "endpoint")?;
                if it.next().is_some() {
                    return Err(SimError::Parse { line, what: "trailing tokens in edge".into() });
                }
                if u >= v {
                    return Err(SimError::Parse { line, what: format!("need u < v, got {u} {v}") });
                }
                edges.push((u, v));
            }
        }
        let (n, m) = header.ok_or(SimError::Parse { line: 0, what: "empty file".into() })?;
        if edges.len() != m {
            return Err(SimError::BadGraph(format!(
                "header says {m} edges, file has {}",
                edges.len()
            )));
        }
        Graph::from_edges(n, &edges)
    }

    pub fn write(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.edge_count());
        for (u, v) in self.edges() {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }
}

/// Seeded graph families used by the test batteries and size sweeps.
pub mod families {
    use super::*;

    /// G(n, p): each pair independently an edge.
    pub fn er(n: u32, p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha12Rng::seed_from_u64(hashing::derive_seed(seed, "er", &[n as u64]));
        let mut edges = Vec::new();
        for u in 1..=n {
            for v in (u + 1)..=n {
                if rng.gen::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edges(n, &edges).expect("generated edges are valid")
    }

    /// The usual connectivity-threshold density 2 ln n / n.
    pub fn er_above_threshold(n: u32, seed: u64) -> Graph {
        er(n, 2.0 * (n as f64).ln() / n as f64, seed)
    }

    pub fn star(n: u32) -> Graph {
        let edges: Vec<_> = (2..=n).map(|v| (1, v)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    pub fn path(n: u32) -> Graph {
        let edges: Vec<_> = (1..n).map(|v| (v, v + 1)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    /// Two disjoint cliques — connected verdicts here are always wrong.
    pub fn two_cliques(a: u32, b: u32) -> Graph {
        let mut edges = Vec::new();
        for u in 1..=a {
            for v in (u + 1)..=a {
                edges.push((u, v));
            }
        }
        for u in (a + 1)..=(a + b) {
            for v in (u + 1)..=(a + b) {
                edges.push((u, v));
            }
        }
        Graph::from_edges(a + b, &edges).unwrap()
    }
}

/// Ground truth by union-find sweep over the actual edges.
pub fn ground_truth_connected(g: &Graph) -> bool {
    ground_truth_dsu(g).components() == 1
}

/// Canonical partition labels (smallest vertex per component).
pub fn ground_truth_partition(g: &Graph) -> Vec<u32> {
    ground_truth_dsu(g).partition_labels()
}

fn ground_truth_dsu(g: &Graph) -> Dsu {
    let mut dsu = Dsu::new(g.n());
    for (u, v) in g.edges() {
        dsu.union(u, v);
    }
    dsu
}

/// One posted message: opaque bytes plus the bit length the scheme accounts
/// for (payload bits may be finer grained than the byte container).
#[derive(Clone, Debug)]
pub struct Message {
    pub bytes: Vec<u8>,
    pub bits: u64,
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub connected: bool,
    pub forest: Option<Vec<(u32, u32)>>,
    pub partition: Option<Vec<u32>>,
}

/// A one-round broadcast scheme.  Encoding is local by construction; the
/// referee side sees all messages plus (n, seed) and nothing else.
pub trait Scheme: Sync {
    fn name(&self) -> String;
    fn encode(&self, vertex: u32, neighbors: &[u32], n: u32, seed: u64) -> Result<Message, SimError>;
    fn decide(&self, messages: &[Message], n: u32, seed: u64) -> Result<Decision, SimError>;
}

/// Fingerprint sizing for the sketch scheme.
#[derive(Clone, Copy, Debug)]
pub enum FpPolicy {
    Fixed(u8),
    /// factor * ceil(log2 n), clamped to cap.  Keeps the per-level
    /// false-accept probability at 1/poly(n) instead of a constant.
    LogScaled { factor: u8, cap: u8 },
}

/// The linear-sketch broadcast scheme: each vertex posts its serialized
/// sketch, the referee merges and runs spanning-forest rounds.
#[derive(Clone, Copy, Debug)]
pub struct AgmScheme {
    pub reps_factor: u16,
    pub fp: FpPolicy,
    /// Keep only the first k repetitions of each sketch (and run only k
    /// referee rounds).  Ablation hook for size/accuracy stress tests.
    pub truncate_reps: Option<u16>,
}

impl Default for AgmScheme {
    fn default() -> Self {
        AgmScheme { reps_factor: 4, fp: FpPolicy::Fixed(32), truncate_reps: None }
    }
}

impl AgmScheme {
    pub fn log_fp() -> Self {
        AgmScheme { fp: FpPolicy::LogScaled { factor: 4, cap: 64 }, ..Default::default() }
    }

    pub fn config_for(&self, n: u32, seed: u64) -> SketchConfig {
        let mut c = SketchConfig::for_graph(n, seed);
        c.reps = (c.reps / 4).max(1) * self.reps_factor.max(1);
        if let Some(k) = self.truncate_reps {
            c.reps = c.reps.min(k).max(1);
        }
        c.fp_bits = match self.fp {
            FpPolicy::Fixed(f) => f,
            FpPolicy::LogScaled { factor, cap } => {
                let ceil_l2 = if n <= 2 { 1 } else { 32 - (n - 1).leading_zeros() };
                ((factor as u32 * ceil_l2).min(cap as u32).max(1)) as u8
            }
        };
        c
    }
}

impl Scheme for AgmScheme {
    fn name(&self) -> String {
        let fp = match self.fp {
            FpPolicy::Fixed(f) => format!("fp{f}"),
            FpPolicy::LogScaled { factor, cap } => format!("fplog{factor}c{cap}"),
        };
        match self.truncate_reps {
            Some(k) => format!("agm-{fp}-r{}x-trunc{k}", self.reps_factor),
            None => format!("agm-{fp}-r{}x", self.reps_factor),
        }
    }

    fn encode(&self, vertex: u32, neighbors: &[u32], n: u32, seed: u64) -> Result<Message, SimError> {
        let config = self.config_for(n, seed);
        let sk = VertexSketch::for_vertex(vertex, neighbors, &config)?;
        Ok(Message { bytes: sk.serialize(), bits: config.payload_bits() })
    }

    fn decide(&self, messages: &[Message], n: u32, seed: u64) -> Result<Decision, SimError> {
        let sketches: Vec<VertexSketch> = messages
            .iter()
            .map(|m| VertexSketch::deserialize(&m.bytes, seed))
            .collect::<Result<_, _>>()?;
        let _ = n;
        let out = referee::decode_spanning_forest(&sketches)?;
        Ok(Decision {
            connected: out.connected(),
            forest: Some(out.forest),
            partition: Some(out.partition),
        })
    }
}

/// Aggregate message accounting for one trial.  The average is kept exact
/// as (total, players); the f64 view is for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MessageStats {
    pub total_bits: u64,
    pub max_bits: u64,
    pub players: u32,
}

impl MessageStats {
    pub fn avg_bits(&self) -> f64 {
        self.total_bits as f64 / self.players as f64
    }
}

pub const DEFAULT_MESSAGE_CAP_BITS: u64 = 1 << 20;

#[derive(Clone, Debug)]
pub struct RoundReport {
    pub verdict: bool,
    pub truth: bool,
    pub partition: Option<Vec<u32>>,
    pub forest: Option<Vec<(u32, u32)>>,
    pub stats: MessageStats,
}

/// Run one full round: encode every vertex locally, enforce the message
/// cap, decode, and compare against the union-find ground truth.
pub fn run_one_round(
    g: &Graph,
    scheme: &dyn Scheme,
    seed: u64,
    cap_bits: u64,
) -> Result<RoundReport, SimError> {
    let n = g.n();
    let mut messages = Vec::with_capacity(n as usize);
    let mut total_bits = 0u64;
    let mut max_bits = 0u64;
    for v in 1..=n {
        let msg = scheme.encode(v, g.neighbors(v), n, seed)?;
        if msg.bits > cap_bits {
            return Err(SimError::MessageCap { vertex: v, bits: msg.bits, cap: cap_bits });
        }
        total_bits += msg.bits;
        max_bits = max_bits.max(msg.bits);
        messages.push(msg);
    }
    let decision = scheme.decide(&messages, n, seed)?;
    Ok(RoundReport {
        verdict: decision.connected,
        truth: ground_truth_connected(g),
        partition: decision.partition,
        forest: decision.forest,
        stats: MessageStats { total_bits, max_bits, players: n },
    })
}

/// Per-n summary of a size sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n: u32,
    pub trials: u32,
    pub mean_avg_bits: f64,
    pub success_rate: f64,
    pub wall_ms: u64,
}

/// Sweep the scheme across sizes on seeded near-threshold random graphs.
/// Per-trial seeds derive from (seed, n, trial), so rows are reproducible
/// independent of ordering or thread count.
pub fn sweep_sizes(
    ns: &[u32],
    trials: u32,
    scheme: &dyn Scheme,
    seed: u64,
) -> Result<Vec<SweepRow>, SimError> {
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let start = std::time::Instant::now();
        let mut bits_total = 0u64;
        let mut players_total = 0u64;
        let mut successes = 0u32;
        for t in 0..trials {
            let gseed = hashing::derive_seed(seed, "sweep-g", &[n as u64, t as u64]);
            let tseed = hashing::derive_seed(seed, "sweep-s", &[n as u64, t as u64]);
            let g = families::er_above_threshold(n, gseed);
            let rep = run_one_round(&g, scheme, tseed, DEFAULT_MESSAGE_CAP_BITS)?;
            bits_total += rep.stats.total_bits;
            players_total += rep.stats.players as u64;
            if rep.verdict == rep.truth {
                successes += 1;
            }
        }
        rows.push(SweepRow {
            n,
            trials,
            mean_avg_bits: bits_total as f64 / players_total as f64,
            success_rate: successes as f64 / trials as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_roundtrips_through_text() {
        let g = Graph::from_edges(5, &[(1, 2), (2, 5), (3, 4)]).unwrap();
        let text = g.write();
        assert_eq!(text, "5 3\n1 2\n2 5\n3 4\n");
        assert_eq!(Graph::parse(&text).unwrap(), g);
    }

    #[test]
    fn parser_reports_line_numbers() {
        let err = Graph::parse("3 1\n2 1\n").unwrap_err();
        match err {
            SimError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Graph::parse("").is_err());
        assert!(Graph::parse("2 2\n1 2\n").is_err()); // count mismatch
        let commented = "# generated\n\n3 2 # header\n1 2\n2 3\n";
        assert_eq!(Graph::parse(commented).unwrap().edge_count(), 2);
    }

    #[test]
    fn from_edges_rejects_junk() {
        assert!(Graph::from_edges(3, &[(1, 1)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 4)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 2), (2, 1)]).is_err());
    }

    #[test]
    fn ground_truth_on_known_graphs() {
        assert!(ground_truth_connected(&families::star(9)));
        assert!(ground_truth_connected(&families::path(30)));
        assert!(!ground_truth_connected(&families::two_cliques(4, 4)));
        let p = ground_truth_partition(&families::two_cliques(3, 2));
        assert_eq!(p, vec![1, 1, 1, 4, 4]);
    }

    #[test]
    fn agm_round_on_small_graphs() {
        let scheme = AgmScheme::default();
        for (g, want) in [
            (families::path(32), true),
            (families::star(32), true),
            (families::two_cliques(16, 16), false),
        ] {
            let rep = run_one_round(&g, &scheme, 99, DEFAULT_MESSAGE_CAP_BITS).unwrap();
            assert_eq!(rep.truth, want);
            assert_eq!(rep.verdict, want, "wrong verdict on {}", scheme.name());
            assert_eq!(rep.partition.unwrap(), ground_truth_partition(&g));
        }
    }

    #[test]
    fn message_bits_match_the_accounting_formula() {
        let scheme = AgmScheme::default();
        let g = families::path(64);
        let rep = run_one_round(&g, &scheme, 1, DEFAULT_MESSAGE_CAP_BITS).unwrap();
        // n=64: 24 reps, 14 levels, 96 bits per cell.
        assert_eq!(rep.stats.max_bits, 24 * 14 * 96);
        assert_eq!(rep.stats.total_bits, 64 * 24 * 14 * 96);
        assert_eq!(rep.stats.players, 64);
        assert_eq!(rep.stats.avg_bits(), 24.0 * 14.0 * 96.0);
    }

    #[test]
    fn encoding_is_local() {
        // Mutating edges far from vertex 1 must leave its message alone.
        let scheme = AgmScheme::default();
        let near = Graph::from_edges(6, &[(1, 2), (3, 4), (4, 5)]).unwrap();
        let far = Graph::from_edges(6, &[(1, 2), (3, 4), (4, 6), (5, 6)]).unwrap();
        let a = scheme.encode(1, near.neighbors(1), 6, 7).unwrap();
        let b = scheme.encode(1, far.neighbors(1), 6, 7).unwrap();
        assert_eq!(a.bytes, b.bytes);
        assert_eq!(a.bits, b.bits);
    }

    #[test]
    fn cap_violation_is_an_error() {
        let g = families::path(64);
        let err = run_one_round(&g, &AgmScheme::default(), 1, 100).unwrap_err();
        assert!(matches!(err, SimError::MessageCap { cap: 100, .. }));
    }

    #[test]
    fn truncated_scheme_shrinks_messages() {
        let full = AgmScheme::default();
        let cut = AgmScheme { truncate_reps: Some(2), ..Default::default() };
        let g = families::path(64);
        let a = run_one_round(&g, &full, 1, DEFAULT_MESSAGE_CAP_BITS).unwrap();
        let b = run_one_round(&g, &cut, 1, DEFAULT_MESSAGE_CAP_BITS).unwrap();
        assert!(b.stats.max_bits < a.stats.max_bits);
    }

    #[test]
    fn sweep_is_deterministic_in_everything_but_wall_time() {
        let scheme = AgmScheme::default();
        let a = sweep_sizes(&[16, 32], 3, &scheme, 5).unwrap();
        let b = sweep_sizes(&[16, 32], 3, &scheme, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.n, x.trials), (y.n, y.trials));
            assert_eq!(x.mean_avg_bits, y.mean_avg_bits);
            assert_eq!(x.success_rate, y.success_rate);
        }
    }
}
