//! Hard connectivity instances: role-structured blocks chained into a
//! graph whose connectivity equals an XOR of per-block bits.
//!
//! A block is a gadget graph with four terminals s1, s2, t1, t2.  It
//! always splits into exactly two components, pairing s1 with either t1
//! (bit 0) or t2 (bit 1), and s2 with the other.  Chaining sqrt(n) blocks
//! cyclically (t1 of block i to s1 of block i+1, t2 to s2) makes the whole
//! graph connected exactly when the XOR of the bits is 1 — so a
//! connectivity verdict on the chain is a verdict on the XOR.
//!
//! Inside a block, each "core" vertex carries a membership puzzle (a
//! `UrdecInstance`): its pendant group leaks the revealed part T, and its
//! port edges lead to t1 or t2 according to the instance's promised side.
//! `embed_urdec_block` splits the construction so one player's view covers
//! exactly one core neighborhood — the channel through which one-way
//! protocols act on graphs.
//!
//! Vertex layout inside a block of `block_n` vertices: ids 1..=half are
//! the positive half, half+1..=2*half their mirror copies (the gadget
//! subgraph is duplicated edge for edge), and the last four ids are
//! s1, s2, t1, t2.

use crate::dsu::Dsu;
use crate::hashing;
use crate::sim::Graph;
use crate::ur::{self, Side, UrdecInstance, UrdecParams, UrError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HardError {
    #[error("bad block scale: {0}")]
    BadScale(String),
    #[error("embedding does not fit: {0}")]
    EmbedCapacity(String),
    #[error("bad instance size: {0}")]
    BadN(String),
    #[error(transparent)]
    Ur(#[from] UrError),
}

/// Sizing knobs for one block.  The asymptotic reading sets every field
/// from n (see [`BlockScale::asymptotic`]); real runs use the desk tiers,
/// which keep the same shape at sizes where the asymptotic formulas
/// degenerate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockScale {
    /// Vertices per block, 2 * half + 4 of them.
    pub block_n: u32,
    /// Number of core/mate pairs (the matched middle sets).
    pub m_count: u32,
    /// Size of each port set (the two bridges to the terminals).
    pub r_size: u32,
    /// Universe of the per-core membership puzzle.
    pub u: u64,
    /// Error target of the per-core puzzle distribution.
    pub delta: f64,
}

impl BlockScale {
    /// The textbook parameterization: block sqrt(n), m_count n^(1/4),
    /// ports and universe n^(1/8), delta 4 n^(-1/32).  Note delta < 1
    /// first happens past n = 2^64, so within word-sized n this never
    /// validates — it exists to document the intended scaling and to
    /// produce honest error messages, not for desk use.
    pub fn asymptotic(n: u64) -> BlockScale {
        let nf = n as f64;
        BlockScale {
            block_n: nf.sqrt().round() as u32,
            m_count: nf.powf(0.25).round() as u32,
            r_size: nf.powf(0.125).round() as u32,
            u: nf.powf(0.125).round() as u64,
            delta: 4.0 * nf.powf(-1.0 / 32.0),
        }
    }

    /// Practical tiers for block sizes down to 24 vertices.  Larger blocks
    /// get a richer puzzle (U = 64 with a two-step reveal schedule);
    /// smaller ones fall back to U = 8 with an empty reveal.
    pub fn desk(block_n: u32) -> Result<BlockScale, HardError> {
        if block_n < 24 || block_n % 2 != 0 {
            return Err(HardError::BadScale(format!(
                "desk tiers need an even block size of at least 24, got {block_n}"
            )));
        }
        let half = (block_n - 4) / 2;
        let delta = 2f64.powi(-256);
        let scale = if half >= 28 {
            BlockScale { block_n, m_count: 4, r_size: 4, u: 64, delta }
        } else {
            BlockScale { block_n, m_count: 3, r_size: 2, u: 8, delta }
        };
        scale.validate()?;
        Ok(scale)
    }

    /// A scale sized so `embed_urdec_block` always fits: ports hold a full
    /// worst-case partition part (r_size = U).
    pub fn desk_embed() -> BlockScale {
        BlockScale { block_n: 64, m_count: 4, r_size: 8, u: 8, delta: 2f64.powi(-256) }
    }

    /// Embedding scale with the richer U = 64 puzzle (non-empty reveals),
    /// for tests that need T to vary.
    pub fn desk_embed_deep() -> BlockScale {
        BlockScale { block_n: 288, m_count: 2, r_size: 64, u: 64, delta: 2f64.powi(-256) }
    }

    pub fn half(&self) -> u32 {
        (self.block_n - 4) / 2
    }

    fn key(&self) -> (u32, u32, u32, u64, u64) {
        (self.block_n, self.m_count, self.r_size, self.u, self.delta.to_bits())
    }

    /// Check the scale is usable and return the puzzle parameters.  The
    /// capacity bound reserves, per core: itself, its mate, and a worst
    /// case reveal group, plus the two ports, all within the positive half.
    pub fn validate(&self) -> Result<UrdecParams, HardError> {
        if self.block_n < 8 || self.block_n % 2 != 0 {
            return Err(HardError::BadScale(format!(
                "block size must be even and at least 8, got {}",
                self.block_n
            )));
        }
        if self.m_count == 0 {
            return Err(HardError::BadScale("need at least one core pair".into()));
        }
        let params = ur::urdec_params(self.u, self.delta)?;
        if (self.r_size as u64) < params.m {
            return Err(HardError::BadScale(format!(
                "ports of size {} cannot hold up to {} side edges",
                self.r_size, params.m
            )));
        }
        let t_max = *params.t.last().unwrap_or(&0);
        let need = 2 * self.m_count as u64 + 2 * self.r_size as u64 + self.m_count as u64 * t_max;
        if need > self.half() as u64 {
            return Err(HardError::BadScale(format!(
                "role sets need {need} of the {} positive vertices",
                self.half()
            )));
        }
        Ok(params)
    }
}

/// What a vertex does inside its block.  Mirror copies reuse the role of
/// their positive original; which half a vertex is in follows from its id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Core vertex j: carries puzzle j, wired to its mate, pendants, and
    /// one port.
    Core(u32),
    /// The matched partner of core j; one mate also anchors s1.
    Mate(u32),
    /// Pendant group of core j (one vertex per revealed element).
    Pendant(u32),
    /// Port bridging to t1 (on the positive side).
    Port1,
    /// Port bridging to t2 (on the positive side).
    Port2,
    S1,
    S2,
    T1,
    T2,
    /// Unused capacity, wired to t1.
    Filler,
}

impl Role {
    pub fn token(&self) -> String {
        match self {
            Role::Core(j) => format!("core{j}"),
            Role::Mate(j) => format!("mate{j}"),
            Role::Pendant(j) => format!("pend{j}"),
            Role::Port1 => "port1".into(),
            Role::Port2 => "port2".into(),
            Role::S1 => "s1".into(),
            Role::S2 => "s2".into(),
            Role::T1 => "t1".into(),
            Role::T2 => "t2".into(),
            Role::Filler => "fill".into(),
        }
    }
}

/// Which generator produced a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockProcedure {
    /// The full role-structured gadget.
    Direct,
    /// Bipartite halves whose source degrees mimic the core degree law;
    /// terminals wired directly.
    MimicCore,
    /// Quartered halves whose source degrees mimic the port degree law.
    MimicPort,
}

impl BlockProcedure {
    pub fn token(&self) -> &'static str {
        match self {
            BlockProcedure::Direct => "direct",
            BlockProcedure::MimicCore => "mimic-core",
            BlockProcedure::MimicPort => "mimic-port",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockInstance {
    pub scale: BlockScale,
    /// Total vertices; local ids are 1..=n.
    pub n: u32,
    /// Sorted (min, max) pairs, local ids.
    pub edges: Vec<(u32, u32)>,
    /// roles[v] for v in 1..=n; index 0 is padding.
    pub roles: Vec<Role>,
    /// Ids of the core vertices, ascending; index is the puzzle index j.
    pub core: Vec<u32>,
    /// mate[j] is matched to core[j].
    pub mate: Vec<u32>,
    /// The per-core puzzles (empty for mimic procedures).
    pub embedded: Vec<UrdecInstance>,
    /// Index of the core pair whose mate anchors s1.
    pub jstar: Option<u32>,
    /// 0 when s1 and t1 share a component, else 1.
    pub b: u8,
    pub procedure: BlockProcedure,
}

impl BlockInstance {
    pub fn half(&self) -> u32 {
        (self.n - 4) / 2
    }

    /// The mirror copy of a non-terminal vertex.
    pub fn mirror(&self, v: u32) -> u32 {
        let half = self.half();
        debug_assert!(v <= 2 * half);
        if v <= half {
            v + half
        } else {
            v - half
        }
    }

    pub fn s1(&self) -> u32 {
        self.n - 3
    }
    pub fn s2(&self) -> u32 {
        self.n - 2
    }
    pub fn t1(&self) -> u32 {
        self.n - 1
    }
    pub fn t2(&self) -> u32 {
        self.n
    }

    pub fn degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.n as usize + 1];
        for &(a, b) in &self.edges {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        deg
    }

    fn dsu(&self) -> Dsu {
        let mut d = Dsu::new(self.n);
        for &(a, b) in &self.edges {
            d.union(a, b);
        }
        d
    }
}

/// The block's bit, read off the graph: 0 when s1 reaches t1.
pub fn block_case(blk: &BlockInstance) -> u8 {
    let mut d = blk.dsu();
    if d.same(blk.s1(), blk.t1()) {
        0
    } else {
        1
    }
}

/// Exhaustive structural check: two components, terminals separated, the
/// stored bit consistent, and (for direct blocks) mirror symmetry plus
/// role-set sizes.  Returns a description of the first violation.
pub fn check_block_invariants(blk: &BlockInstance) -> Result<(), String> {
    let mut d = blk.dsu();
    if d.components() != 2 {
        return Err(format!("{} components, expected 2", d.components()));
    }
    if d.same(blk.s1(), blk.s2()) {
        return Err("s1 and s2 share a component".into());
    }
    if d.same(blk.t1(), blk.t2()) {
        return Err("t1 and t2 share a component".into());
    }
    if !(d.same(blk.s1(), blk.t1()) || d.same(blk.s1(), blk.t2())) {
        return Err("s1 reaches neither terminal".into());
    }
    if blk.b != block_case(blk) {
        return Err(format!("stored b = {} but graph says {}", blk.b, block_case(blk)));
    }
    if blk.procedure == BlockProcedure::Direct {
        let half = blk.half();
        let pos: BTreeSet<(u32, u32)> = blk
            .edges
            .iter()
            .filter(|&&(a, b)| a <= half && b <= half)
            .map(|&(a, b)| (a + half, b + half))
            .collect();
        let neg: BTreeSet<(u32, u32)> = blk
            .edges
            .iter()
            .filter(|&&(a, b)| a > half && b > half && a <= 2 * half && b <= 2 * half)
            .copied()
            .collect();
        if pos != neg {
            return Err("negative half is not a mirror copy of the positive half".into());
        }
        let count = |want: fn(&Role) -> bool| {
            blk.roles[1..=half as usize].iter().filter(|r| want(r)).count() as u32
        };
        if count(|r| matches!(r, Role::Core(_))) != blk.scale.m_count
            || count(|r| matches!(r, Role::Mate(_))) != blk.scale.m_count
            || count(|r| matches!(r, Role::Port1)) != blk.scale.r_size
            || count(|r| matches!(r, Role::Port2)) != blk.scale.r_size
        {
            return Err("role-set sizes disagree with the scale".into());
        }
        for (j, inst) in blk.embedded.iter().enumerate() {
            let pend = blk.roles[1..=half as usize]
                .iter()
                .filter(|r| matches!(r, Role::Pendant(k) if *k == j as u32))
                .count();
            if pend != inst.t.len() {
                return Err(format!(
                    "pendant group {j} has {pend} vertices for {} revealed elements",
                    inst.t.len()
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Construction helpers.

struct EdgeSet {
    n: u32,
    set: BTreeSet<(u32, u32)>,
}

impl EdgeSet {
    fn new(n: u32) -> Self {
        EdgeSet { n, set: BTreeSet::new() }
    }

    fn add(&mut self, a: u32, b: u32) {
        debug_assert!(a != b && a >= 1 && b >= 1 && a <= self.n && b <= self.n);
        let fresh = self.set.insert((a.min(b), a.max(b)));
        debug_assert!(fresh, "edge ({a},{b}) wired twice");
    }

    fn into_vec(self) -> Vec<(u32, u32)> {
        self.set.into_iter().collect()
    }
}

/// Remove k random ids from the (ascending) pool, returned in random
/// draw order.
fn draw(free: &mut Vec<u32>, k: usize, rng: &mut ChaCha12Rng) -> Vec<u32> {
    assert!(k <= free.len(), "pool exhausted: want {k} of {}", free.len());
    let idx = rand::seq::index::sample(rng, free.len(), k).into_vec();
    let out: Vec<u32> = idx.iter().map(|&i| free[i]).collect();
    let mut by_pos = idx;
    by_pos.sort_unstable_by(|a, b| b.cmp(a));
    for i in by_pos {
        free.remove(i);
    }
    out
}

struct BlockBuilder {
    scale: BlockScale,
    n: u32,
    half: u32,
    edges: EdgeSet,
    roles: Vec<Role>,
}

impl BlockBuilder {
    fn new(scale: BlockScale) -> Self {
        let n = scale.block_n;
        let half = scale.half();
        let mut roles = vec![Role::Filler; n as usize + 1];
        roles[n as usize - 3] = Role::S1;
        roles[n as usize - 2] = Role::S2;
        roles[n as usize - 1] = Role::T1;
        roles[n as usize] = Role::T2;
        BlockBuilder { scale, n, half, edges: EdgeSet::new(n), roles }
    }

    fn s1(&self) -> u32 {
        self.n - 3
    }
    fn s2(&self) -> u32 {
        self.n - 2
    }
    fn t1(&self) -> u32 {
        self.n - 1
    }
    fn t2(&self) -> u32 {
        self.n
    }

    /// Duplicate every positive-positive edge onto the mirror ids and copy
    /// roles across.
    fn mirror_positive_half(&mut self) {
        let half = self.half;
        let pos: Vec<(u32, u32)> = self
            .edges
            .set
            .iter()
            .filter(|&&(a, b)| a <= half && b <= half)
            .copied()
            .collect();
        for (a, b) in pos {
            self.edges.add(a + half, b + half);
        }
        for v in 1..=half {
            self.roles[(v + half) as usize] = self.roles[v as usize];
        }
    }

    /// Terminal wiring of the role-structured gadget: ports cross over on
    /// the mirror side, the s pair anchors at a mate and its copy, and
    /// leftovers go to t1.
    fn wire_terminals(&mut self, port1: &[u32], port2: &[u32], fillers: &[u32], s_anchor: u32) {
        let (s1, s2, t1, t2) = (self.s1(), self.s2(), self.t1(), self.t2());
        let half = self.half;
        self.edges.add(s1, s_anchor);
        self.edges.add(s2, s_anchor + half);
        for &v in port1 {
            self.edges.add(t1, v);
            self.edges.add(t2, v + half);
        }
        for &v in port2 {
            self.edges.add(t2, v);
            self.edges.add(t1, v + half);
        }
        for &v in fillers {
            self.edges.add(t1, v);
            self.edges.add(t1, v + half);
        }
    }

    fn finish(
        self,
        core: Vec<u32>,
        mate: Vec<u32>,
        embedded: Vec<UrdecInstance>,
        jstar: Option<u32>,
        procedure: BlockProcedure,
    ) -> BlockInstance {
        let mut blk = BlockInstance {
            scale: self.scale,
            n: self.n,
            edges: self.edges.into_vec(),
            roles: self.roles,
            core,
            mate,
            embedded,
            jstar,
            b: 0,
            procedure,
        };
        blk.b = block_case(&blk);
        debug_assert_eq!(check_block_invariants(&blk), Ok(()));
        blk
    }
}

/// One role-structured block: cores matched to mates, each core wired to a
/// fresh pendant group (one vertex per revealed element of its puzzle) and
/// to its promised port, everything mirrored, terminals attached.
pub fn sample_block(scale: BlockScale, seed: u64) -> Result<BlockInstance, HardError> {
    let params = scale.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(hashing::derive_seed(seed, "block", &[]));
    let q = scale.m_count as usize;
    let p = scale.r_size as usize;
    let mut b = BlockBuilder::new(scale);
    let mut free: Vec<u32> = (1..=b.half).collect();

    let mut core = draw(&mut free, q, &mut rng);
    core.sort_unstable();
    let mut mate = draw(&mut free, q, &mut rng);
    mate.shuffle(&mut rng); // random pairing against the sorted cores
    let mut port1 = draw(&mut free, p, &mut rng);
    port1.sort_unstable();
    let mut port2 = draw(&mut free, p, &mut rng);
    port2.sort_unstable();
    for j in 0..q {
        b.roles[core[j] as usize] = Role::Core(j as u32);
        b.roles[mate[j] as usize] = Role::Mate(j as u32);
    }
    for &v in &port1 {
        b.roles[v as usize] = Role::Port1;
    }
    for &v in &port2 {
        b.roles[v as usize] = Role::Port2;
    }

    let mut embedded = Vec::with_capacity(q);
    for j in 0..q {
        b.edges.add(core[j], mate[j]);
        let inst = ur::sample_urdec(&params, hashing::derive_seed(seed, "block-set", &[j as u64]));
        let mut pend = draw(&mut free, inst.t.len(), &mut rng);
        pend.sort_unstable();
        for &w in &pend {
            b.roles[w as usize] = Role::Pendant(j as u32);
            b.edges.add(core[j], w);
        }
        let d = inst.s.len() - inst.t.len();
        let pool = if inst.side == Side::P1 { &port1 } else { &port2 };
        for i in rand::seq::index::sample(&mut rng, p, d) {
            b.edges.add(core[j], pool[i]);
        }
        embedded.push(inst);
    }
    let jstar = rng.gen_range(0..q);

    b.mirror_positive_half();
    b.wire_terminals(&port1, &port2, &free, mate[jstar]);
    let blk = b.finish(core, mate, embedded, Some(jstar as u32), BlockProcedure::Direct);
    debug_assert_eq!(blk.b, (blk.embedded[jstar].side == Side::P2) as u8);
    Ok(blk)
}

// ---------------------------------------------------------------------------
// Degree-mimicking procedures.

/// Empirical degree laws of core and port vertices, estimated per scale by
/// Monte-Carlo draws of the direct generator.  The mimic procedures sample
/// from these.
#[derive(Clone, Debug)]
pub struct DegreeTables {
    /// (degree, count), ascending degree.
    pub core: Vec<(u32, u32)>,
    pub port: Vec<(u32, u32)>,
    pub draws: u32,
}

pub const DEGREE_TABLE_DRAWS: u32 = 10_000;

impl DegreeTables {
    pub fn estimate(scale: BlockScale, draws: u32, seed: u64) -> Result<DegreeTables, HardError> {
        let mut core_h: BTreeMap<u32, u32> = BTreeMap::new();
        let mut port_h: BTreeMap<u32, u32> = BTreeMap::new();
        for i in 0..draws {
            let blk = sample_block(scale, hashing::derive_seed(seed, "deg-draw", &[i as u64]))?;
            let deg = blk.degrees();
            let half = blk.half();
            for v in 1..=half {
                match blk.roles[v as usize] {
                    Role::Core(_) => *core_h.entry(deg[v as usize]).or_insert(0) += 1,
                    Role::Port1 | Role::Port2 => *port_h.entry(deg[v as usize]).or_insert(0) += 1,
                    _ => {}
                }
            }
        }
        Ok(DegreeTables {
            core: core_h.into_iter().collect(),
            port: port_h.into_iter().collect(),
            draws,
        })
    }

    fn sample_from(table: &[(u32, u32)], rng: &mut ChaCha12Rng) -> u32 {
        let total: u64 = table.iter().map(|&(_, c)| c as u64).sum();
        let mut at = rng.gen_range(0..total);
        for &(d, c) in table {
            if at < c as u64 {
                return d;
            }
            at -= c as u64;
        }
        unreachable!("cumulative walk exhausted the table")
    }

    pub fn sample_core(&self, rng: &mut ChaCha12Rng) -> u32 {
        Self::sample_from(&self.core, rng)
    }

    pub fn sample_port(&self, rng: &mut ChaCha12Rng) -> u32 {
        Self::sample_from(&self.port, rng)
    }

    /// Line-oriented dump, one table per line.
    pub fn write(&self) -> String {
        let line = |t: &[(u32, u32)]| {
            t.iter().map(|(d, c)| format!("{d}:{c}")).collect::<Vec<_>>().join(" ")
        };
        format!("draws {}\ncore {}\nport {}\n", self.draws, line(&self.core), line(&self.port))
    }
}

/// Per-scale table cache: the estimate is seeded from the scale alone, so
/// every process sees the same tables without a file exchange.
pub fn degree_tables(scale: BlockScale) -> Result<Arc<DegreeTables>, HardError> {
    static CACHE: OnceLock<Mutex<HashMap<(u32, u32, u32, u64, u64), Arc<DegreeTables>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = scale.key();
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return Ok(t.clone());
    }
    let seed = hashing::derive_seed(
        0xdeb7_ab1e_0123_4567,
        "degree-table",
        &[key.0 as u64, key.1 as u64, key.2 as u64, key.3, key.4],
    );
    let tables = Arc::new(DegreeTables::estimate(scale, DEGREE_TABLE_DRAWS, seed)?);
    Ok(cache.lock().unwrap().entry(key).or_insert(tables).clone())
}

/// Floor/ceil split positions for `parts` near-equal parts, larger first.
fn split_sizes(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let rem = total % parts;
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

fn mimic_core_block(
    scale: BlockScale,
    tables: &DegreeTables,
    rng: &mut ChaCha12Rng,
) -> BlockInstance {
    let mut b = BlockBuilder::new(scale);
    let bit: u8 = rng.gen_range(0..2);
    let mut pool: Vec<u32> = (1..=b.half).collect();
    pool.shuffle(rng);
    let sizes = split_sizes(pool.len(), 2);
    let (src, sink) = pool.split_at(sizes[0]);
    for &v in src {
        let d = (tables.sample_core(rng) as usize).min(sink.len());
        debug_assert!(d >= 1, "core degrees include the matching edge");
        for i in rand::seq::index::sample(rng, sink.len(), d) {
            b.edges.add(v, sink[i]);
        }
    }
    let (t1, t2) = (b.t1(), b.t2());
    b.mirror_positive_half();
    // Sinks feed t1 on both halves — the copy keeps t-edges literal.
    for &w in sink {
        b.edges.add(t1, w);
        b.edges.add(t1, w + b.half);
    }
    if bit == 0 {
        b.edges.add(b.s1(), t1);
        b.edges.add(b.s2(), t2);
    } else {
        b.edges.add(b.s1(), t2);
        b.edges.add(b.s2(), t1);
    }
    b.finish(Vec::new(), Vec::new(), Vec::new(), None, BlockProcedure::MimicCore)
}

fn mimic_port_block(
    scale: BlockScale,
    tables: &DegreeTables,
    rng: &mut ChaCha12Rng,
) -> BlockInstance {
    let mut b = BlockBuilder::new(scale);
    let bit: u8 = rng.gen_range(0..2);
    let mut pool: Vec<u32> = (1..=b.half).collect();
    pool.shuffle(rng);
    let sizes = split_sizes(pool.len(), 4);
    let mut rest = &pool[..];
    let mut quads: Vec<&[u32]> = Vec::with_capacity(4);
    for s in sizes {
        let (head, tail) = rest.split_at(s);
        quads.push(head);
        rest = tail;
    }
    let (t1, t2) = (b.t1(), b.t2());
    for (src, sink) in [(quads[0], quads[1]), (quads[2], quads[3])] {
        for &v in src {
            let d = tables.sample_port(rng) as usize;
            debug_assert!(d >= 1, "port degrees include the terminal edge");
            for i in rand::seq::index::sample(rng, sink.len(), (d - 1).min(sink.len())) {
                b.edges.add(v, sink[i]);
            }
        }
    }
    b.mirror_positive_half();
    // Terminal wiring is literal on both halves: the first quarter pair
    // hangs off t1, the second off t2.
    for (vs, t) in [(quads[0], t1), (quads[1], t1), (quads[2], t2), (quads[3], t2)] {
        for &v in vs {
            b.edges.add(t, v);
            b.edges.add(t, v + b.half);
        }
    }
    if bit == 0 {
        b.edges.add(b.s1(), t1);
        b.edges.add(b.s2(), t2);
    } else {
        b.edges.add(b.s1(), t2);
        b.edges.add(b.s2(), t1);
    }
    b.finish(Vec::new(), Vec::new(), Vec::new(), None, BlockProcedure::MimicPort)
}

/// The averaged block distribution: one of three generators, uniformly —
/// the direct gadget, or one of two degree-mimicking fillers that make
/// typical neighborhoods look like core (resp. port) neighborhoods.
pub fn sample_block_bar(scale: BlockScale, seed: u64) -> Result<BlockInstance, HardError> {
    scale.validate()?;
    let tables = degree_tables(scale)?;
    let mut rng = ChaCha12Rng::seed_from_u64(hashing::derive_seed(seed, "block-bar", &[]));
    match rng.gen_range(0..3u32) {
        0 => sample_block(scale, hashing::derive_seed(seed, "bar-direct", &[])),
        1 => Ok(mimic_core_block(scale, &tables, &mut rng)),
        _ => Ok(mimic_port_block(scale, &tables, &mut rng)),
    }
}

// ---------------------------------------------------------------------------
// The embedding split.

/// What the set-holding player can see: one core neighborhood (its puzzle
/// image plus the mate), on both halves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AliceView {
    pub vertex: u32,
    pub mirror_vertex: u32,
    pub neighbors: Vec<u32>,
    pub mirror_neighbors: Vec<u32>,
}

/// Everything except that neighborhood.
#[derive(Clone, Debug)]
pub struct BobView {
    pub edges: Vec<(u32, u32)>,
    pub roles: Vec<Role>,
    pub core: Vec<u32>,
    pub mate: Vec<u32>,
    pub jstar: u32,
}

/// Build a block around a given puzzle instance so that the instance's
/// set side determines the block bit, and the construction splits into a
/// shared part (sets, matching, the injection, j*), a part needing only S
/// (one core's edges), and a part needing only (T, P1, P2) (everything
/// else).  Returns the block plus the two views.
pub fn embed_urdec_block(
    inst: &UrdecInstance,
    scale: BlockScale,
    seed: u64,
) -> Result<(BlockInstance, AliceView, BobView), HardError> {
    let params = scale.validate()?;
    if inst.u != scale.u || inst.delta.to_bits() != scale.delta.to_bits() {
        return Err(HardError::BadScale(format!(
            "instance drawn at (U = {}, delta = {:e}) but the scale wants (U = {}, delta = {:e})",
            inst.u, inst.delta, scale.u, scale.delta
        )));
    }
    inst.validate()?;
    let q = scale.m_count as usize;
    let p = scale.r_size as usize;
    let half = scale.half();
    if inst.u + 2 * q as u64 > half as u64 {
        return Err(HardError::EmbedCapacity(format!(
            "universe image of {} plus {} matched pairs exceeds {half} positive vertices",
            inst.u,
            2 * q
        )));
    }
    if inst.p1.len() > p || inst.p2.len() > p {
        return Err(HardError::EmbedCapacity(format!(
            "partition parts of sizes {} and {} exceed ports of size {p}",
            inst.p1.len(),
            inst.p2.len()
        )));
    }

    let mut shared = ChaCha12Rng::seed_from_u64(hashing::derive_seed(seed, "embed-shared", &[]));
    let mut bob = ChaCha12Rng::seed_from_u64(hashing::derive_seed(seed, "embed-bob", &[]));
    let mut b = BlockBuilder::new(scale);
    let mut free: Vec<u32> = (1..=half).collect();

    // Shared objects: role ids, the matching, j*, and the injection.
    let mut core = draw(&mut free, q, &mut shared);
    core.sort_unstable();
    let mut mate = draw(&mut free, q, &mut shared);
    mate.shuffle(&mut shared);
    let jstar = shared.gen_range(0..q);
    let f = draw(&mut free, inst.u as usize, &mut shared); // f[x-1] hosts element x
    for j in 0..q {
        b.roles[core[j] as usize] = Role::Core(j as u32);
        b.roles[mate[j] as usize] = Role::Mate(j as u32);
        b.edges.add(core[j], mate[j]);
    }

    // Bob's side: place T's image as the pendant group of j*, fill the
    // ports around the partition images, then sample every other core's
    // gadget.
    for &x in &inst.t {
        let w = f[x as usize - 1];
        b.roles[w as usize] = Role::Pendant(jstar as u32);
    }
    let mut port1: Vec<u32> = inst.p1.iter().map(|&x| f[x as usize - 1]).collect();
    port1.extend(draw(&mut free, p - inst.p1.len(), &mut bob));
    port1.sort_unstable();
    let mut port2: Vec<u32> = inst.p2.iter().map(|&x| f[x as usize - 1]).collect();
    port2.extend(draw(&mut free, p - inst.p2.len(), &mut bob));
    port2.sort_unstable();
    for &v in &port1 {
        b.roles[v as usize] = Role::Port1;
    }
    for &v in &port2 {
        b.roles[v as usize] = Role::Port2;
    }

    let mut embedded = vec![inst.clone(); q];
    for j in 0..q {
        if j == jstar {
            continue;
        }
        let other = ur::sample_urdec(&params, hashing::derive_seed(seed, "embed-set", &[j as u64]));
        let mut pend = draw(&mut free, other.t.len(), &mut bob);
        pend.sort_unstable();
        for &w in &pend {
            b.roles[w as usize] = Role::Pendant(j as u32);
            b.edges.add(core[j], w);
        }
        let d = other.s.len() - other.t.len();
        let pool = if other.side == Side::P1 { &port1 } else { &port2 };
        for i in rand::seq::index::sample(&mut bob, p, d) {
            b.edges.add(core[j], pool[i]);
        }
        embedded[j] = other;
    }

    // Alice's side: the j* core neighbors exactly the image of S (which
    // covers its pendant group and its side's port).
    for &x in &inst.s {
        b.edges.add(core[jstar], f[x as usize - 1]);
    }

    b.mirror_positive_half();
    b.wire_terminals(&port1, &port2, &free, mate[jstar]);
    let blk = b.finish(core, mate, embedded, Some(jstar as u32), BlockProcedure::Direct);
    debug_assert_eq!(blk.b, (inst.side == Side::P2) as u8);

    let mut neighbors: Vec<u32> = inst.s.iter().map(|&x| f[x as usize - 1]).collect();
    neighbors.push(blk.mate[jstar]);
    neighbors.sort_unstable();
    let alice = AliceView {
        vertex: blk.core[jstar],
        mirror_vertex: blk.core[jstar] + half,
        mirror_neighbors: neighbors.iter().map(|&v| v + half).collect(),
        neighbors,
    };
    let av = blk.core[jstar];
    let avm = av + half;
    let bob_view = BobView {
        edges: blk
            .edges
            .iter()
            .filter(|&&(x, y)| x != av && y != av && x != avm && y != avm)
            .copied()
            .collect(),
        roles: blk.roles.clone(),
        core: blk.core.clone(),
        mate: blk.mate.clone(),
        jstar: jstar as u32,
    };
    Ok((blk, alice, bob_view))
}

// ---------------------------------------------------------------------------
// The chained instance.

#[derive(Clone, Debug)]
pub struct ConnInstance {
    pub n: u32,
    pub scale: BlockScale,
    pub blocks: Vec<BlockInstance>,
    pub b_vector: Vec<u8>,
    /// Ground truth: XOR of the bits is 1.
    pub connected: bool,
}

impl ConnInstance {
    /// Global ids: block i (0-based) occupies i*block_n + 1 ..= (i+1)*block_n.
    pub fn to_graph(&self) -> Graph {
        let bn = self.scale.block_n;
        let k = self.blocks.len() as u32;
        let global = |i: u32, v: u32| i * bn + v;
        let mut edges = Vec::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            for &(a, c) in &blk.edges {
                edges.push((global(i as u32, a), global(i as u32, c)));
            }
        }
        for i in 0..k {
            let j = (i + 1) % k;
            let blk = &self.blocks[i as usize];
            let nxt = &self.blocks[j as usize];
            edges.push((global(i, blk.t1()), global(j, nxt.s1())));
            edges.push((global(i, blk.t2()), global(j, nxt.s2())));
        }
        Graph::from_edges(self.n, &edges).expect("block construction yields a simple graph")
    }

    /// Line-oriented metadata: the chain header, the bit vector, then per
    /// block one summary line (procedure, bit, anchor index, a digest of
    /// its puzzle instances) and one positional role line.
    pub fn write_sidecar(&self) -> String {
        let mut out = format!(
            "conn n {} blocks {} block-n {} connected {}\n",
            self.n,
            self.blocks.len(),
            self.scale.block_n,
            u8::from(self.connected)
        );
        let bits: Vec<String> = self.b_vector.iter().map(|b| b.to_string()).collect();
        out.push_str(&format!("b {}\n", bits.join(" ")));
        for (i, blk) in self.blocks.iter().enumerate() {
            let digest = if blk.embedded.is_empty() {
                "-".to_string()
            } else {
                let text: String = blk.embedded.iter().map(|e| e.write()).collect();
                format!("{:016x}", digest_text(&text))
            };
            let jstar = blk.jstar.map_or("-".to_string(), |j| j.to_string());
            out.push_str(&format!(
                "block {i} proc {} b {} jstar {} sets {digest}\n",
                blk.procedure.token(),
                blk.b,
                jstar
            ));
            let roles: Vec<String> =
                (1..=blk.n).map(|v| blk.roles[v as usize].token()).collect();
            out.push_str(&format!("roles {}\n", roles.join(" ")));
        }
        out
    }
}

fn digest_text(text: &str) -> u64 {
    let mut words: Vec<u64> = text
        .as_bytes()
        .chunks(8)
        .map(|c| {
            let mut buf = [0u8; 8];
            buf[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(buf)
        })
        .collect();
    words.push(text.len() as u64);
    hashing::digest64(words)
}

/// The per-block seed inside a chain — exposed so callers can regenerate
/// one block and observe that the others cannot change.
pub fn conn_block_seed(seed: u64, i: u32) -> u64 {
    hashing::derive_seed(seed, "conn-block", &[i as u64])
}

/// Chain of sqrt(n) blocks of sqrt(n) vertices at the desk scale for that
/// block size.
pub fn sample_conn(n: u32, seed: u64) -> Result<ConnInstance, HardError> {
    let k = (n as f64).sqrt().round() as u32;
    if k * k != n {
        return Err(HardError::BadN(format!("n = {n} is not a perfect square")));
    }
    sample_conn_with(n, BlockScale::desk(k)?, seed)
}

pub fn sample_conn_with(n: u32, scale: BlockScale, seed: u64) -> Result<ConnInstance, HardError> {
    let k = scale.block_n;
    if k * k != n {
        return Err(HardError::BadN(format!(
            "n = {n} does not split into {k} blocks of {k} vertices"
        )));
    }
    let blocks: Vec<BlockInstance> = (0..k)
        .map(|i| sample_block_bar(scale, conn_block_seed(seed, i)))
        .collect::<Result<_, _>>()?;
    let b_vector: Vec<u8> = blocks.iter().map(|b| b.b).collect();
    let connected = b_vector.iter().fold(0u8, |acc, b| acc ^ b) == 1;
    let inst = ConnInstance { n, scale, blocks, b_vector, connected };
    #[cfg(debug_assertions)]
    {
        let g = inst.to_graph();
        let mut d = Dsu::new(n);
        for (u, v) in g.edges() {
            d.union(u, v);
        }
        debug_assert_eq!(d.components() == 1, inst.connected, "XOR rule disagrees with union-find");
    }
    Ok(inst)
}
