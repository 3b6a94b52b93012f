//! One-way universal-relation decision protocols.
//!
//! Setting: a universe [U] with U = m^3 viewed as m blocks of size B = m^2.
//! Alice holds S (one element per block), Bob holds T, a proper subset of
//! S, plus a two-part partition (P1, P2) of [U] \ T with the promise that
//! S \ T lies wholly inside one part.  Alice sends one message; Bob must
//! name that part.
//!
//! The module has two halves that deliberately do not depend on each other:
//!
//! * the instance distribution — `urdec_params` builds the round schedule
//!   t_r (how much of S Bob already knows at "round" r) and `sample_urdec`
//!   draws instances from it;
//! * the protocol — `ur_alice` sends XOR-of-codes levels like the graph
//!   sketch, `ur_bob_search` subtracts T and recovers an element of S \ T,
//!   `ur_bob_decide` answers with the part containing it.

use crate::hashing;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UrError {
    #[error("universe {0} is not a perfect cube")]
    NotACube(u64),
    #[error("delta {0} outside (0, 1)")]
    BadDelta(f64),
    #[error("degenerate schedule: R = {0} rounds (need at least 1); delta is too large for this universe")]
    DegenerateR(i64),
    #[error("schedule invalid: {0}")]
    ScheduleInvalid(String),
    #[error("element {0} outside universe 1..={1}")]
    BadElement(u64, u64),
    #[error("malformed instance text: {0}")]
    Malformed(String),
}

/// Which part of the partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    P1,
    P2,
}

/// Distribution parameters: universe split, bias rate alpha, round count R
/// and the reveal schedule t_0 < t_1 < ... < t_{R-1}.
#[derive(Clone, Debug)]
pub struct UrdecParams {
    pub u: u64,
    pub m: u64,
    pub b: u64,
    pub delta: f64,
    pub alpha: f64,
    pub rounds: u32,
    /// t[r] = how many elements of S are revealed as T at round r.
    pub t: Vec<u64>,
    /// Whether delta sits inside the analytic window
    /// (exp(-U^{1/4}), 1/log2^4 U).  Outside it the construction still
    /// runs; callers may want to warn.
    pub in_window: bool,
}

fn exact_cube_root(u: u64) -> Option<u64> {
    let m = (u as f64).cbrt().round() as u64;
    for c in m.saturating_sub(1)..=m + 1 {
        if c.checked_mul(c).and_then(|s| s.checked_mul(c)) == Some(u) {
            return Some(c);
        }
    }
    None
}

/// Schedule formula t_r = ceil(m (1 - (1-alpha)^r) + 2r), exposed for any
/// r so the table values can be cross-checked by hand.
pub fn schedule_value(m: u64, alpha: f64, r: u32) -> u64 {
    (m as f64 * (1.0 - (1.0 - alpha).powi(r as i32)) + 2.0 * r as f64).ceil() as u64
}

/// Build and validate the parameter set for universe U and error target
/// delta: alpha = 16 / log2(1/delta), R = floor(log2(m) / (16 alpha)).
pub fn urdec_params(u: u64, delta: f64) -> Result<UrdecParams, UrError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(UrError::BadDelta(delta));
    }
    let m = exact_cube_root(u).ok_or(UrError::NotACube(u))?;
    let log2_inv_delta = -delta.log2();
    let alpha = 16.0 / log2_inv_delta;
    let log2_m = (m as f64).log2();
    let rounds_f = (1.0 / (16.0 * alpha)) * log2_m;
    let rounds = rounds_f.floor() as i64;
    if rounds < 1 {
        return Err(UrError::DegenerateR(rounds));
    }
    let rounds = rounds as u32;
    let t: Vec<u64> = (0..rounds).map(|r| schedule_value(m, alpha, r)).collect();
    if t[0] != 0 {
        return Err(UrError::ScheduleInvalid(format!("t_0 = {}, expected 0", t[0])));
    }
    for r in 1..t.len() {
        if t[r] <= t[r - 1] {
            return Err(UrError::ScheduleInvalid(format!(
                "t_{r} = {} does not exceed t_{} = {}",
                t[r],
                r - 1,
                t[r - 1]
            )));
        }
    }
    if let Some(&last) = t.last() {
        if last >= m {
            return Err(UrError::ScheduleInvalid(format!(
                "t_{} = {last} reaches m = {m}; T would swallow S",
                t.len() - 1
            )));
        }
    }
    let u_f = u as f64;
    let in_window = delta > (-u_f.powf(0.25)).exp() && delta < 1.0 / u_f.log2().powi(4);
    Ok(UrdecParams { u, m, b: m * m, delta, alpha, rounds, t, in_window })
}

/// One drawn instance.  Elements are 1-based; block j (0-based) covers
/// j*B+1 ..= (j+1)*B.
#[derive(Clone, Debug, PartialEq)]
pub struct UrdecInstance {
    pub u: u64,
    pub m: u64,
    pub b: u64,
    pub delta: f64,
    pub r_index: u32,
    /// Alice's set, sorted: exactly one element per block.
    pub s: Vec<u64>,
    /// Revealed subset of S, size t[r_index], sorted.
    pub t: Vec<u64>,
    /// The partition parts, sorted; together they cover [U] \ T.
    pub p1: Vec<u64>,
    pub p2: Vec<u64>,
    /// The part promised to contain all of S \ T.
    pub side: Side,
}

impl UrdecInstance {
    pub fn s_minus_t(&self) -> Vec<u64> {
        self.s.iter().copied().filter(|x| self.t.binary_search(x).is_err()).collect()
    }

    /// Check the structural invariants; used by tests and after parsing.
    pub fn validate(&self) -> Result<(), UrError> {
        let check = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(UrError::Malformed(what.to_string()))
            }
        };
        check("S size", self.s.len() as u64 == self.m)?;
        for (j, &x) in self.s.iter().enumerate() {
            let lo = j as u64 * self.b + 1;
            check("one element per block", (lo..lo + self.b).contains(&x))?;
        }
        check("T proper subset of S", self.t.len() < self.s.len())?;
        check(
            "T inside S",
            self.t.iter().all(|x| self.s.binary_search(x).is_ok()),
        )?;
        check(
            "partition covers [U] \\ T",
            self.p1.len() + self.p2.len() + self.t.len() == self.u as usize,
        )?;
        let mut all: Vec<u64> = self.p1.iter().chain(&self.p2).chain(&self.t).copied().collect();
        all.sort_unstable();
        check("partition parts disjoint and complete", all == (1..=self.u).collect::<Vec<_>>())?;
        let home = match self.side {
            Side::P1 => &self.p1,
            Side::P2 => &self.p2,
        };
        check(
            "S \\ T on the promised side",
            self.s_minus_t().iter().all(|x| home.binary_search(x).is_ok()),
        )?;
        Ok(())
    }

    /// A variant instance with the same S but T rotated to a different
    /// subset of S (size preserved, partition rebuilt so the promise still
    /// holds).  None when T is empty — there is nothing to move.  Used to
    /// probe which views depend on Bob's data only.
    pub fn with_rotated_t(&self, k: usize) -> Option<UrdecInstance> {
        let tl = self.t.len();
        if tl == 0 {
            return None;
        }
        let m = self.s.len();
        let mut t: Vec<u64> = (0..tl).map(|i| self.s[(k + i) % m]).collect();
        t.sort_unstable();
        let in_s: std::collections::HashSet<u64> = self.s.iter().copied().collect();
        let in_t: std::collections::HashSet<u64> = t.iter().copied().collect();
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        for x in 1..=self.u {
            if in_t.contains(&x) {
                continue;
            }
            let to_p1 = if in_s.contains(&x) {
                self.side == Side::P1
            } else {
                self.p1.binary_search(&x).is_ok()
            };
            if to_p1 {
                p1.push(x);
            } else {
                p2.push(x);
            }
        }
        let inst = UrdecInstance { t, p1, p2, ..self.clone() };
        debug_assert!(inst.validate().is_ok());
        Some(inst)
    }

    /// Text form: "U m delta r" then S, T, P1 as sorted id lists (P2 is
    /// the complement).  Delta prints in scientific notation and
    /// round-trips exactly.
    pub fn write(&self) -> String {
        let line = |xs: &[u64]| {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        format!(
            "{} {} {:e} {}\n{}\n{}\n{}\n",
            self.u,
            self.m,
            self.delta,
            self.r_index,
            line(&self.s),
            line(&self.t),
            line(&self.p1)
        )
    }

    pub fn parse(text: &str) -> Result<Self, UrError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 4 {
            return Err(UrError::Malformed(format!("expected 4 lines, got {}", lines.len())));
        }
        let head: Vec<&str> = lines[0].split_whitespace().collect();
        if head.len() != 4 {
            return Err(UrError::Malformed("header needs: U m delta r".into()));
        }
        let u: u64 = head[0].parse().map_err(|_| UrError::Malformed("bad U".into()))?;
        let m: u64 = head[1].parse().map_err(|_| UrError::Malformed("bad m".into()))?;
        let delta: f64 = head[2].parse().map_err(|_| UrError::Malformed("bad delta".into()))?;
        let r_index: u32 = head[3].parse().map_err(|_| UrError::Malformed("bad r".into()))?;
        let ids = |line: &str, what: &str| -> Result<Vec<u64>, UrError> {
            line.split_whitespace()
                .map(|tok| tok.parse::<u64>().map_err(|_| UrError::Malformed(format!("bad id in {what}"))))
                .collect()
        };
        let s = ids(lines[1], "S")?;
        let t = ids(lines[2], "T")?;
        let p1 = ids(lines[3], "P1")?;
        let in_t: std::collections::HashSet<u64> = t.iter().copied().collect();
        let in_p1: std::collections::HashSet<u64> = p1.iter().copied().collect();
        let p2: Vec<u64> =
            (1..=u).filter(|x| !in_t.contains(x) && !in_p1.contains(x)).collect();
        let s_free: Vec<u64> = s.iter().copied().filter(|x| !in_t.contains(x)).collect();
        let side = if s_free.iter().all(|x| in_p1.contains(x)) {
            Side::P1
        } else if s_free.iter().all(|x| !in_p1.contains(x)) {
            Side::P2
        } else {
            return Err(UrError::Malformed("S \\ T split across both parts".into()));
        };
        let inst = UrdecInstance { u, m, b: m * m, delta, r_index, s, t, p1, p2, side };
        inst.validate()?;
        Ok(inst)
    }
}

/// Draw one instance: S one-per-block uniform, r uniform over rounds, T a
/// uniform t_r-subset of S, side a fair coin, all of S \ T on that side,
/// every other element placed independently.
pub fn sample_urdec(params: &UrdecParams, seed: u64) -> UrdecInstance {
    let mut rng = ChaCha12Rng::seed_from_u64(hashing::derive_seed(seed, "urdec", &[]));
    let m = params.m;
    let b = params.b;
    let mut s: Vec<u64> = (0..m).map(|j| j * b + 1 + rng.gen_range(0..b)).collect();
    s.sort_unstable();
    let r_index = rng.gen_range(0..params.rounds);
    let t_size = params.t[r_index as usize] as usize;
    let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, m as usize, t_size).into_vec();
    idx.sort_unstable();
    let t: Vec<u64> = idx.iter().map(|&i| s[i]).collect();
    let side = if rng.gen::<bool>() { Side::P1 } else { Side::P2 };
    let in_s: std::collections::HashSet<u64> = s.iter().copied().collect();
    let in_t: std::collections::HashSet<u64> = t.iter().copied().collect();
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    for x in 1..=params.u {
        if in_t.contains(&x) {
            continue;
        }
        if in_s.contains(&x) {
            match side {
                Side::P1 => p1.push(x),
                Side::P2 => p2.push(x),
            }
        } else if rng.gen::<bool>() {
            p1.push(x);
        } else {
            p2.push(x);
        }
    }
    let inst = UrdecInstance { u: params.u, m, b, delta: params.delta, r_index, s, t, p1, p2, side };
    debug_assert!(inst.validate().is_ok());
    inst
}

// ---------------------------------------------------------------------------
// The XOR-level protocol.

fn ceil_log2_u64(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Message shape for a universe/accuracy pair: reps = 4 ceil(log2 1/delta)
/// repetitions of levels 0..=ceil(log2 U), each cell holding a
/// ceil(log2 U)-bit XOR of element codes plus an fp_bits fingerprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UrShape {
    pub u: u64,
    pub reps: u32,
    pub levels: u32,
    pub code_bits: u32,
    pub fp_bits: u8,
}

impl UrShape {
    pub fn new(u: u64, delta: f64, fp_bits: u8) -> Self {
        let reps = (4.0 * (-delta.log2()).ceil()).max(1.0) as u32;
        let code_bits = ceil_log2_u64(u).max(1);
        UrShape { u, reps, levels: ceil_log2_u64(u) + 1, code_bits, fp_bits }
    }

    pub fn message_bits(&self) -> u64 {
        self.reps as u64 * self.levels as u64 * (self.code_bits as u64 + self.fp_bits as u64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UrCell {
    pub code: u64,
    pub fp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UrMessage {
    pub shape: UrShape,
    /// Repetition-major, levels within.
    pub cells: Vec<UrCell>,
}

fn ur_level_key(seed: u64, rep: u32) -> u64 {
    hashing::derive_seed(seed, "lvl", &[rep as u64])
}

fn ur_fp_key(seed: u64, rep: u32) -> u64 {
    hashing::derive_seed(seed, "fp", &[rep as u64])
}

fn xor_element(msg: &mut UrMessage, seed: u64, x: u64) {
    let shape = msg.shape;
    for rep in 0..shape.reps {
        let g = hashing::level_of(ur_level_key(seed, rep), x, (shape.levels - 1) as u16) as u32;
        let fp = hashing::fingerprint(ur_fp_key(seed, rep), x, shape.fp_bits);
        let base = (rep * shape.levels) as usize;
        for cell in &mut msg.cells[base..=base + g as usize] {
            cell.code ^= x - 1; // codes are 0-based so they fit code_bits
            cell.fp ^= fp;
        }
    }
}

/// Alice's one-way message for set S.  S = [] gives the all-zero payload.
pub fn ur_alice(s: &[u64], shape: UrShape, seed: u64) -> Result<UrMessage, UrError> {
    let mut msg = UrMessage {
        shape,
        cells: vec![UrCell::default(); (shape.reps * shape.levels) as usize],
    };
    for &x in s {
        if x == 0 || x > shape.u {
            return Err(UrError::BadElement(x, shape.u));
        }
        xor_element(&mut msg, seed, x);
    }
    Ok(msg)
}

/// Bob's recovery: XOR T out of the message and scan repetitions for a
/// level that holds exactly one surviving element.  Returns an element of
/// S \ T with probability >= 1 - delta over seeds, or None.
pub fn ur_bob_search(msg: &UrMessage, t: &[u64], seed: u64) -> Result<Option<u64>, UrError> {
    let mut work = msg.clone();
    for &x in t {
        if x == 0 || x > msg.shape.u {
            return Err(UrError::BadElement(x, msg.shape.u));
        }
        xor_element(&mut work, seed, x);
    }
    let shape = work.shape;
    for rep in 0..shape.reps {
        let fp_key = ur_fp_key(seed, rep);
        let base = (rep * shape.levels) as usize;
        for cell in &work.cells[base..base + shape.levels as usize] {
            let x = cell.code + 1;
            if x > shape.u {
                continue;
            }
            if hashing::fingerprint(fp_key, x, shape.fp_bits) != cell.fp {
                continue;
            }
            if t.contains(&x) {
                // T was subtracted; a T element here is a collision artifact.
                continue;
            }
            return Ok(Some(x));
        }
    }
    Ok(None)
}

/// Decide which part holds S \ T: recover an element, answer by
/// membership.  An unrecoverable or out-of-part element defaults to P1.
pub fn ur_bob_decide(
    msg: &UrMessage,
    t: &[u64],
    p1: &[u64],
    p2: &[u64],
    seed: u64,
) -> Result<Side, UrError> {
    match ur_bob_search(msg, t, seed)? {
        Some(x) if p2.binary_search(&x).is_ok() => Ok(Side::P2),
        Some(x) if p1.binary_search(&x).is_ok() => Ok(Side::P1),
        _ => Ok(Side::P1),
    }
}

// ---------------------------------------------------------------------------
// Bit-exact message packing.

struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { bytes: Vec::new(), bits: 0 }
    }

    fn push(&mut self, value: u64, width: u32) {
        for i in 0..width {
            let bit = (value >> i) & 1;
            let at = (self.bits % 8) as u8;
            if at == 0 {
                self.bytes.push(0);
            }
            *self.bytes.last_mut().unwrap() |= (bit as u8) << at;
            self.bits += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    at: u64,
}

impl<'a> BitReader<'a> {
    fn pull(&mut self, width: u32) -> Option<u64> {
        let mut v = 0u64;
        for i in 0..width {
            let byte = *self.bytes.get((self.at / 8) as usize)?;
            let bit = (byte >> (self.at % 8)) & 1;
            v |= (bit as u64) << i;
            self.at += 1;
        }
        Some(v)
    }
}

impl UrMessage {
    /// Pack cells repetition-major at exactly message_bits() bits, zero
    /// padded to a whole byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BitWriter::new();
        for cell in &self.cells {
            w.push(cell.code, self.shape.code_bits);
            w.push(cell.fp, self.shape.fp_bits as u32);
        }
        debug_assert_eq!(w.bits, self.shape.message_bits());
        w.bytes
    }

    pub fn from_bytes(bytes: &[u8], shape: UrShape) -> Result<Self, UrError> {
        if bytes.len() as u64 != (shape.message_bits() + 7) / 8 {
            return Err(UrError::Malformed(format!(
                "message is {} bytes, shape wants {}",
                bytes.len(),
                (shape.message_bits() + 7) / 8
            )));
        }
        let mut r = BitReader { bytes, at: 0 };
        let mut cells = Vec::with_capacity((shape.reps * shape.levels) as usize);
        for _ in 0..shape.reps * shape.levels {
            let code = r.pull(shape.code_bits).ok_or_else(|| UrError::Malformed("short".into()))?;
            let fp = r.pull(shape.fp_bits as u32).ok_or_else(|| UrError::Malformed("short".into()))?;
            cells.push(UrCell { code, fp });
        }
        Ok(UrMessage { shape, cells })
    }
}

// ---------------------------------------------------------------------------
// Protocol plumbing.

/// How a protocol's Bob forms an answer; lets exact analysis pick the right
/// evaluation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecideStyle {
    /// Bob recovers a claimed element of S \ T and answers by membership,
    /// defaulting to P1.
    Locator,
    /// Bob ignores everything and answers a fixed side.
    Fixed(Side),
    /// Bob votes over the set collection consistent with the message.
    Majority,
}

/// A deterministic one-way protocol; all randomness is fixed at
/// construction.
pub trait OneWayProtocol: Sync {
    fn name(&self) -> String;
    fn alice(&self, s: &[u64]) -> Vec<u8>;
    /// Exact accounted bit length (may be finer than 8 * bytes).
    fn alice_bits(&self, s: &[u64]) -> u64 {
        (self.alice(s).len() * 8) as u64
    }
    fn decide_style(&self) -> DecideStyle {
        DecideStyle::Locator
    }
    /// For locator protocols: the claimed element of S \ T, if any.
    fn bob_search(&self, _msg: &[u8], _t: &[u64]) -> Option<u64> {
        None
    }
    fn bob_decide(&self, msg: &[u8], t: &[u64], p1: &[u64], p2: &[u64]) -> Side {
        match self.decide_style() {
            DecideStyle::Fixed(side) => side,
            _ => match self.bob_search(msg, t) {
                Some(x) if p2.binary_search(&x).is_ok() => Side::P2,
                Some(x) if p1.binary_search(&x).is_ok() => Side::P1,
                _ => Side::P1,
            },
        }
    }
}

/// The XOR-level sketch as a one-way protocol, optionally truncated to a
/// repetition budget for size/accuracy ablations.
#[derive(Clone, Debug)]
pub struct UrProtocol {
    pub shape: UrShape,
    pub seed: u64,
}

impl UrProtocol {
    pub fn new(u: u64, delta: f64, seed: u64) -> Self {
        UrProtocol { shape: UrShape::new(u, delta, 32), seed }
    }

    /// Keep only the first `reps` repetitions.
    pub fn truncated(u: u64, delta: f64, seed: u64, reps: u32) -> Self {
        let mut shape = UrShape::new(u, delta, 32);
        shape.reps = shape.reps.min(reps).max(1);
        UrProtocol { shape, seed }
    }
}

impl OneWayProtocol for UrProtocol {
    fn name(&self) -> String {
        format!("ur-sketch-r{}", self.shape.reps)
    }

    fn alice(&self, s: &[u64]) -> Vec<u8> {
        ur_alice(s, self.shape, self.seed).expect("in-range elements").to_bytes()
    }

    fn alice_bits(&self, _s: &[u64]) -> u64 {
        self.shape.message_bits()
    }

    fn bob_search(&self, msg: &[u8], t: &[u64]) -> Option<u64> {
        let parsed = UrMessage::from_bytes(msg, self.shape).ok()?;
        ur_bob_search(&parsed, t, self.seed).ok()?
    }
}
