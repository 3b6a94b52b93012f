//! Linear (XOR-mergeable) connectivity sketches.
//!
//! A vertex sketch is an R x L grid of cells, R independent repetitions by L
//! geometric subsampling levels.  An edge incident to the vertex lands in
//! repetition r at levels 0..=g, where g is a keyed-hash level with
//! Pr[g >= i] = 2^-i (so level i keeps each edge with probability 2^-i, and
//! the level sets are nested).  Each cell accumulates the XOR of packed edge
//! labels together with the XOR of their keyed fingerprints.
//!
//! XOR makes the sketch linear: merging two vertex sketches cancels the
//! edges internal to the pair and leaves exactly the cut edges.  A cell that
//! holds exactly one surviving edge is recognized because its fingerprint
//! matches its label; that edge can then be read back out.  This is the
//! whole trick that lets a referee run spanning-forest rounds from one-shot
//! messages.

use crate::hashing;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SketchError {
    #[error("self-loop at vertex {0}")]
    SelfLoop(u32),
    #[error("vertex {v} out of range 1..={n}")]
    VertexOutOfRange { v: u32, n: u32 },
    #[error("sketch configs differ; refusing to merge")]
    ConfigMismatch,
    #[error("repetition {rep} out of range 0..{reps}")]
    RepOutOfRange { rep: u16, reps: u16 },
    #[error("bad config: {0}")]
    BadConfig(&'static str),
    #[error("malformed sketch bytes: {0}")]
    Malformed(String),
}

/// Pack an undirected edge {u, v} into one word: min endpoint in the high
/// 32 bits, max endpoint in the low 32.  Vertices are 1-based, so a packed
/// label is never 0; zero is the empty-cell sentinel.
pub fn canonical_edge_label(u: u32, v: u32, n: u32) -> Result<u64, SketchError> {
    if u == v {
        return Err(SketchError::SelfLoop(u));
    }
    for w in [u, v] {
        if w == 0 || w > n {
            return Err(SketchError::VertexOutOfRange { v: w, n });
        }
    }
    let (lo, hi) = if u < v { (u, v) } else { (v, u) };
    Ok(((lo as u64) << 32) | hi as u64)
}

/// Inverse of `canonical_edge_label`; `None` if the word is not a valid
/// label for an n-vertex graph.
pub fn decode_edge_label(label: u64, n: u32) -> Option<(u32, u32)> {
    let min = (label >> 32) as u32;
    let max = (label & 0xffff_ffff) as u32;
    if min >= 1 && min < max && max <= n {
        Some((min, max))
    } else {
        None
    }
}

/// Sketch shape and randomness.  Two sketches are mergeable iff their
/// configs are identical, seed included.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SketchConfig {
    pub n: u32,
    pub levels: u16,
    pub reps: u16,
    pub fp_bits: u8,
    pub seed: u64,
}

fn ceil_log2(x: u128) -> u32 {
    if x <= 1 {
        0
    } else {
        128 - (x - 1).leading_zeros()
    }
}

impl SketchConfig {
    /// Default shape for an n-vertex graph: ceil(log2(n^2)) + 2 levels,
    /// 4 * ceil(log2 n) repetitions, 32-bit fingerprints.
    pub fn for_graph(n: u32, seed: u64) -> Self {
        let nn = (n as u128) * (n as u128);
        SketchConfig {
            n,
            levels: (ceil_log2(nn) + 2) as u16,
            reps: (4 * ceil_log2(n as u128).max(1)) as u16,
            fp_bits: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SketchError> {
        if self.n < 2 {
            return Err(SketchError::BadConfig("need at least 2 vertices"));
        }
        if self.levels == 0 || self.reps == 0 {
            return Err(SketchError::BadConfig("levels and reps must be positive"));
        }
        if self.fp_bits == 0 || self.fp_bits > 64 {
            return Err(SketchError::BadConfig("fingerprint width must be 1..=64"));
        }
        Ok(())
    }

    #[inline]
    fn level_key(&self, rep: u16) -> u64 {
        hashing::derive_seed(self.seed, "lvl", &[rep as u64])
    }

    #[inline]
    fn fp_key(&self, rep: u16) -> u64 {
        hashing::derive_seed(self.seed, "fp", &[rep as u64])
    }

    /// Payload size of one serialized sketch in bits: reps * levels *
    /// (64 label bits + fp_bits).  The 9-byte header is not counted.
    pub fn payload_bits(&self) -> u64 {
        self.reps as u64 * self.levels as u64 * (64 + self.fp_bits as u64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cell {
    pub label: u64,
    pub fp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexSketch {
    config: SketchConfig,
    /// Repetition-major: cell (rep, level) lives at rep * levels + level.
    cells: Vec<Cell>,
}

/// Outcome of a one-sparse extraction attempt on one repetition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extraction {
    /// The repetition held a recoverable edge.
    Edge(u32, u32),
    /// Every cell of the repetition is zero.
    Empty,
    /// Nonzero cells, but no level passed the one-sparse test.
    Ambiguous,
}

impl VertexSketch {
    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Sketch of an explicit edge multiset.  Duplicate edges cancel in
    /// pairs, which is exactly the algebra the cut argument needs.
    pub fn of_edges(edges: &[(u32, u32)], config: &SketchConfig) -> Result<Self, SketchError> {
        config.validate()?;
        let levels = config.levels as usize;
        let mut cells = vec![Cell::default(); config.reps as usize * levels];
        // Per-repetition keys depend only on the config, so derive them once
        // here instead of once per edge.  Each edge lands in the single cell
        // of its exact level; one suffix fold per repetition afterwards
        // turns that into the nested "survives levels 0..=g" layout.
        let keys: Vec<(u64, u64)> =
            (0..config.reps).map(|rep| (config.level_key(rep), config.fp_key(rep))).collect();
        for &(u, v) in edges {
            let label = canonical_edge_label(u, v, config.n)?;
            for (rep, &(level_key, fp_key)) in keys.iter().enumerate() {
                let g = hashing::level_of(level_key, label, config.levels - 1);
                let fp = hashing::fingerprint(fp_key, label, config.fp_bits);
                let cell = &mut cells[rep * levels + g as usize];
                cell.label ^= label;
                cell.fp ^= fp;
            }
        }
        for rep in 0..config.reps as usize {
            let row = &mut cells[rep * levels..(rep + 1) * levels];
            for i in (0..levels - 1).rev() {
                let upper = row[i + 1];
                row[i].label ^= upper.label;
                row[i].fp ^= upper.fp;
            }
        }
        Ok(VertexSketch { config: *config, cells })
    }

    /// Sketch of vertex v given its neighbor list.
    pub fn for_vertex(v: u32, neighbors: &[u32], config: &SketchConfig) -> Result<Self, SketchError> {
        let edges: Vec<(u32, u32)> = neighbors.iter().map(|&w| (v, w)).collect();
        Self::of_edges(&edges, config)
    }

    /// Cellwise XOR.  Associative, commutative, and self-inverse, so any
    /// set of vertex sketches can be folded in any order.
    pub fn merge(&self, other: &Self) -> Result<Self, SketchError> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &Self) -> Result<(), SketchError> {
        if self.config != other.config {
            return Err(SketchError::ConfigMismatch);
        }
        for (c, o) in self.cells.iter_mut().zip(&other.cells) {
            c.label ^= o.label;
            c.fp ^= o.fp;
        }
        Ok(())
    }

    /// Scan one repetition for a recoverable edge.  A level passes iff its
    /// label is nonzero, the fingerprint of the label matches the cell, and
    /// the label decodes to in-range endpoints; the first passing level
    /// wins.  `Empty` only when every cell of the repetition is zero.
    pub fn try_extract(&self, rep: u16) -> Result<Extraction, SketchError> {
        if rep >= self.config.reps {
            return Err(SketchError::RepOutOfRange { rep, reps: self.config.reps });
        }
        let base = rep as usize * self.config.levels as usize;
        let row = &self.cells[base..base + self.config.levels as usize];
        if row.iter().all(|c| c.label == 0 && c.fp == 0) {
            return Ok(Extraction::Empty);
        }
        let fp_key = self.config.fp_key(rep);
        for cell in row {
            if cell.label == 0 {
                continue;
            }
            if hashing::fingerprint(fp_key, cell.label, self.config.fp_bits) != cell.fp {
                continue;
            }
            if let Some((u, v)) = decode_edge_label(cell.label, self.config.n) {
                return Ok(Extraction::Edge(u, v));
            }
        }
        Ok(Extraction::Ambiguous)
    }

    /// Wire format: little-endian header (n: u32, levels: u16, reps: u16,
    /// fp_bits: u8), then cells repetition-major, each as 8 label bytes
    /// plus ceil(fp_bits/8) fingerprint bytes.
    pub fn serialize(&self) -> Vec<u8> {
        let fpb = (self.config.fp_bits as usize + 7) / 8;
        let mut out = Vec::with_capacity(9 + self.cells.len() * (8 + fpb));
        out.extend_from_slice(&self.config.n.to_le_bytes());
        out.extend_from_slice(&self.config.levels.to_le_bytes());
        out.extend_from_slice(&self.config.reps.to_le_bytes());
        out.push(self.config.fp_bits);
        for cell in &self.cells {
            out.extend_from_slice(&cell.label.to_le_bytes());
            out.extend_from_slice(&cell.fp.to_le_bytes()[..fpb]);
        }
        out
    }

    /// Inverse of `serialize`.  The seed is not part of the wire format;
    /// the receiver supplies the shared one.
    pub fn deserialize(bytes: &[u8], seed: u64) -> Result<Self, SketchError> {
        if bytes.len() < 9 {
            return Err(SketchError::Malformed("short header".into()));
        }
        let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let levels = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        let reps = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
        let fp_bits = bytes[8];
        let config = SketchConfig { n, levels, reps, fp_bits, seed };
        config.validate().map_err(|e| SketchError::Malformed(e.to_string()))?;
        let fpb = (fp_bits as usize + 7) / 8;
        let want = 9 + reps as usize * levels as usize * (8 + fpb);
        if bytes.len() != want {
            return Err(SketchError::Malformed(format!(
                "expected {want} bytes for {reps}x{levels} cells, got {}",
                bytes.len()
            )));
        }
        let mut cells = Vec::with_capacity(reps as usize * levels as usize);
        let mut at = 9;
        let fp_mask = if fp_bits == 64 { u64::MAX } else { (1u64 << fp_bits) - 1 };
        for _ in 0..reps as usize * levels as usize {
            let label = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            let mut fp_bytes = [0u8; 8];
            fp_bytes[..fpb].copy_from_slice(&bytes[at + 8..at + 8 + fpb]);
            let fp = u64::from_le_bytes(fp_bytes);
            if fp & !fp_mask != 0 {
                return Err(SketchError::Malformed("fingerprint wider than declared".into()));
            }
            cells.push(Cell { label, fp });
            at += 8 + fpb;
        }
        Ok(VertexSketch { config, cells })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u32) -> SketchConfig {
        SketchConfig::for_graph(n, 0xc0ffee)
    }

    #[test]
    fn default_shape_matches_formulas() {
        let c = cfg(1024);
        assert_eq!(c.levels, 22); // ceil(log2 1024^2) + 2
        assert_eq!(c.reps, 40); // 4 * log2 1024
        assert_eq!(c.fp_bits, 32);
        assert_eq!(c.payload_bits(), 40 * 22 * 96);
        let c64 = cfg(64);
        assert_eq!((c64.levels, c64.reps), (14, 24));
    }

    #[test]
    fn labels_are_distinct_symmetric_and_nonzero() {
        // Enumeration oracle: all pairs of a 100-vertex graph.
        let n = 100;
        let mut seen = std::collections::HashSet::new();
        for u in 1..=n {
            for v in (u + 1)..=n {
                let l = canonical_edge_label(u, v, n).unwrap();
                assert_eq!(l, canonical_edge_label(v, u, n).unwrap());
                assert_ne!(l, 0);
                assert_eq!(decode_edge_label(l, n), Some((u, v)));
                seen.insert(l);
            }
        }
        assert_eq!(seen.len(), 4950);
    }

    #[test]
    fn label_rejects_bad_input() {
        assert_eq!(canonical_edge_label(3, 3, 10), Err(SketchError::SelfLoop(3)));
        assert!(matches!(
            canonical_edge_label(0, 2, 10),
            Err(SketchError::VertexOutOfRange { v: 0, .. })
        ));
        assert!(matches!(
            canonical_edge_label(2, 11, 10),
            Err(SketchError::VertexOutOfRange { v: 11, .. })
        ));
        // Decoding garbage fails rather than inventing endpoints.
        assert_eq!(decode_edge_label(0, 10), None);
        assert_eq!(decode_edge_label((5u64 << 32) | 3, 10), None); // min > max
        assert_eq!(decode_edge_label((2u64 << 32) | 12, 10), None); // out of range
    }

    #[test]
    fn single_edge_always_extracts() {
        let c = cfg(16);
        let sk = VertexSketch::of_edges(&[(7, 3)], &c).unwrap();
        for rep in 0..c.reps {
            assert_eq!(sk.try_extract(rep).unwrap(), Extraction::Edge(3, 7));
        }
    }

    #[test]
    fn empty_sketch_reports_empty() {
        let c = cfg(16);
        let sk = VertexSketch::for_vertex(5, &[], &c).unwrap();
        for rep in 0..c.reps {
            assert_eq!(sk.try_extract(rep).unwrap(), Extraction::Empty);
        }
    }

    #[test]
    fn path_merge_cancels_internal_edge() {
        // Path 1-2-3: merging the sketches of {1,2} leaves only cut edge
        // (2,3), and the merge equals the directly computed cut sketch.
        let c = cfg(3);
        let s1 = VertexSketch::for_vertex(1, &[2], &c).unwrap();
        let s2 = VertexSketch::for_vertex(2, &[1, 3], &c).unwrap();
        let merged = s1.merge(&s2).unwrap();
        let cut = VertexSketch::of_edges(&[(2, 3)], &c).unwrap();
        assert_eq!(merged, cut);
        assert_eq!(merged.try_extract(0).unwrap(), Extraction::Edge(2, 3));
    }

    #[test]
    fn merge_is_self_inverse() {
        let c = cfg(8);
        let s = VertexSketch::for_vertex(1, &[2, 5, 8], &c).unwrap();
        let zero = s.merge(&s).unwrap();
        for rep in 0..c.reps {
            assert_eq!(zero.try_extract(rep).unwrap(), Extraction::Empty);
        }
    }

    #[test]
    fn merge_rejects_mismatched_configs() {
        let a = VertexSketch::for_vertex(1, &[2], &cfg(8)).unwrap();
        let mut other = cfg(8);
        other.seed ^= 1;
        let b = VertexSketch::for_vertex(1, &[2], &other).unwrap();
        assert_eq!(a.merge(&b), Err(SketchError::ConfigMismatch));
    }

    #[test]
    fn vertex_sketch_rejects_self_loop_and_range() {
        let c = cfg(8);
        assert_eq!(
            VertexSketch::for_vertex(3, &[3], &c),
            Err(SketchError::SelfLoop(3))
        );
        assert!(VertexSketch::for_vertex(3, &[9], &c).is_err());
        assert!(VertexSketch::for_vertex(9, &[1], &c).is_err());
    }

    #[test]
    fn extract_rejects_rep_out_of_range() {
        let c = cfg(8);
        let s = VertexSketch::for_vertex(1, &[2], &c).unwrap();
        assert!(matches!(
            s.try_extract(c.reps),
            Err(SketchError::RepOutOfRange { .. })
        ));
    }

    #[test]
    fn roundtrip_serialization() {
        let c = cfg(100);
        let s = VertexSketch::for_vertex(17, &[1, 2, 50, 99], &c).unwrap();
        let bytes = s.serialize();
        assert_eq!(bytes.len(), 9 + c.reps as usize * c.levels as usize * 12);
        let back = VertexSketch::deserialize(&bytes, c.seed).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn deserialize_rejects_malformed() {
        let c = cfg(100);
        let s = VertexSketch::for_vertex(17, &[1], &c).unwrap();
        let mut bytes = s.serialize();
        bytes.pop();
        assert!(VertexSketch::deserialize(&bytes, c.seed).is_err());
        assert!(VertexSketch::deserialize(&[1, 2, 3], c.seed).is_err());
    }

    #[test]
    fn two_edge_cut_rarely_fools_the_fingerprint() {
        // Cut of exactly 3 edges per trial, full fingerprint width: every
        // extraction must return one of the true cut edges or nothing.
        let trials = 100_000;
        let mut false_accepts = 0u64;
        for t in 0..trials {
            let c = SketchConfig {
                n: 64,
                levels: 14,
                reps: 2,
                fp_bits: 32,
                seed: hashing::derive_seed(0xdead, "fa", &[t]),
            };
            let edges = [(1, 2), (1, 3), (2, 4)];
            let sk = VertexSketch::of_edges(&edges, &c).unwrap();
            for rep in 0..c.reps {
                if let Extraction::Edge(u, v) = sk.try_extract(rep).unwrap() {
                    if !edges.contains(&(u, v)) {
                        false_accepts += 1;
                    }
                }
            }
        }
        assert_eq!(false_accepts, 0);
    }

    #[test]
    fn endpoints_assign_identical_levels() {
        // Shared randomness: an edge's cells depend only on its label, so
        // both endpoints sketch it identically.
        for t in 0..200u64 {
            let c = SketchConfig {
                n: 500,
                levels: 12,
                reps: 4,
                fp_bits: 32,
                seed: hashing::derive_seed(0xbeef, "sym", &[t]),
            };
            let u = (t as u32 * 37) % 500 + 1;
            let v = (t as u32 * 101 + 7) % 500 + 1;
            if u == v {
                continue;
            }
            let from_u = VertexSketch::for_vertex(u, &[v], &c).unwrap();
            let from_v = VertexSketch::for_vertex(v, &[u], &c).unwrap();
            assert_eq!(from_u.cells(), from_v.cells());
        }
    }

    /// A d-edge cut for the calibration and soundness runs: d distinct
    /// random edges on n vertices (the sketch only ever sees the multiset).
    fn random_cut(n: u32, d: usize, rng: &mut impl rand::Rng) -> Vec<(u32, u32)> {
        let mut edges = std::collections::BTreeSet::new();
        while edges.len() < d {
            let u = rng.gen_range(1..=n);
            let v = rng.gen_range(1..=n);
            if u != v {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        edges.into_iter().collect()
    }

    #[test]
    fn extraction_rate_stays_above_the_calibrated_floor() {
        // Per-repetition success = a unique maximum among d iid geometric
        // levels: 1 at d = 1, 2/3 at d = 2, then ~0.72.  A calibration run
        // (4000 trials per d) measured 0.67..0.74 for d >= 2; the floor
        // below leaves ~10 sigma of room at 2000 trials.
        use rand::SeedableRng;
        let n = 128;
        for d in [1usize, 2, 3, 4, 8, 16, 32, 64] {
            let trials = 2000u32;
            let mut hits = 0u32;
            for t in 0..trials {
                let seed = hashing::derive_seed(7, "calib", &[d as u64, t as u64]);
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
                let edges = random_cut(n, d, &mut rng);
                let c = SketchConfig { n, levels: 16, reps: 1, fp_bits: 32, seed };
                let sk = VertexSketch::of_edges(&edges, &c).unwrap();
                if let Extraction::Edge(u, v) = sk.try_extract(0).unwrap() {
                    if edges.binary_search(&(u, v)).is_ok() {
                        hits += 1;
                    }
                }
            }
            if d == 1 {
                assert_eq!(hits, trials, "a single edge is always one-sparse");
            } else {
                let rate = hits as f64 / trials as f64;
                assert!(rate >= 0.6, "cut size {d}: rate {rate} under the 0.6 floor");
            }
        }
    }

    #[test]
    fn extracted_edges_are_genuine_cut_edges() {
        // Soundness over 10^5 mixed-size cuts: at f = 32 the expected
        // number of fingerprint-forged edges is levels * 2^-32 per trial,
        // about 4e-4 in total here.
        use rand::SeedableRng;
        let mut wrong = 0u64;
        for t in 0..100_000u64 {
            let seed = hashing::derive_seed(11, "sound", &[t]);
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let d = 2 + (t % 31) as usize;
            let edges = random_cut(96, d, &mut rng);
            let c = SketchConfig { n: 96, levels: 15, reps: 1, fp_bits: 32, seed };
            let sk = VertexSketch::of_edges(&edges, &c).unwrap();
            if let Extraction::Edge(u, v) = sk.try_extract(0).unwrap() {
                if edges.binary_search(&(u, v)).is_err() {
                    wrong += 1;
                }
            }
        }
        assert!(wrong <= 2, "{wrong} forged extractions in 1e5 trials");
    }
}
