//! Brute-force laboratory for one-way protocols over block-structured set
//! families.
//!
//! Everything here works at desk scale: the universe [U] is split into m
//! blocks of B elements, a "set" holds exactly one element per block, and
//! B^m is small enough to enumerate.  On top of that we provide message-class
//! enumeration, exact and Monte-Carlo conditional error, the pairwise
//! intersection inequality, and the class-shrinking random process that
//! alternates extraction rounds with random-block mixing.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::hashing::{derive_seed, digest64};
use crate::ur::{DecideStyle, OneWayProtocol, Side, UrProtocol, UrdecParams};

/// Largest family we are willing to enumerate (all B^m one-per-block sets).
pub const SET_ENUM_CAP: u64 = 1 << 24;

/// Largest number of free partition bits the exact error computation will
/// sweep (2^bits partition states).
pub const EXACT_PARTITION_BITS_CAP: u32 = 24;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("family of {states} sets exceeds the enumeration cap of {cap}")]
    EnumerationCap { states: u128, cap: u64 },
    #[error("exact conditional error needs {bits} partition bits, cap is {cap}")]
    InfeasibleExact { bits: u32, cap: u32 },
    #[error("no runs satisfied the conditioning event")]
    NoConditioningEvents,
    #[error("{0}")]
    BadConfig(String),
}

// ---------------------------------------------------------------------------
// set indexing
//
// A one-per-block set is stored as a single index: block j contributes its
// code c_j (0..B) with radix weight B^j.  Element identities are 1-based:
// block j covers j*B + 1 ..= (j+1)*B.

fn universe_dims(params: &UrdecParams) -> Result<(u32, u32), LabError> {
    let (m, b) = (params.m, params.b);
    let states = (b as u128).pow(m as u32);
    if states > SET_ENUM_CAP as u128 {
        return Err(LabError::EnumerationCap { states, cap: SET_ENUM_CAP });
    }
    Ok((m as u32, b as u32))
}

fn family_size(m: u32, b: u32) -> u64 {
    (b as u64).pow(m)
}

/// Code of `idx` in block `j`.
pub fn set_code(idx: u32, j: u32, b: u32) -> u32 {
    (idx / b.pow(j)) % b
}

/// All m codes of the set, block 0 first.
pub fn set_codes(idx: u32, m: u32, b: u32) -> Vec<u32> {
    (0..m).map(|j| set_code(idx, j, b)).collect()
}

/// The set as sorted element identities.
pub fn set_elements(idx: u32, m: u32, b: u32) -> Vec<u64> {
    (0..m).map(|j| element_of(j, set_code(idx, j, b), b)).collect()
}

pub fn element_of(block: u32, code: u32, b: u32) -> u64 {
    block as u64 * b as u64 + code as u64 + 1
}

pub fn element_block(e: u64, b: u32) -> u32 {
    ((e - 1) / b as u64) as u32
}

pub fn element_code(e: u64, b: u32) -> u32 {
    ((e - 1) % b as u64) as u32
}

pub fn set_contains(idx: u32, b: u32, e: u64) -> bool {
    set_code(idx, element_block(e, b), b) == element_code(e, b)
}

/// Sort key putting block 0 in the most significant position, so ascending
/// keys match lexicographic order on the element lists.
fn lex_key(idx: u32, m: u32, b: u32) -> u64 {
    let mut key = 0u64;
    for j in 0..m {
        key = key * b as u64 + set_code(idx, j, b) as u64;
    }
    key
}

/// Blocks not covered by the anchor, ascending.
fn free_of(anchor: &[u64], m: u32, b: u32) -> Vec<u32> {
    let covered: HashSet<u32> = anchor.iter().map(|&e| element_block(e, b)).collect();
    (0..m).filter(|j| !covered.contains(j)).collect()
}

fn check_anchor(anchor: &[u64], m: u32, b: u32) -> Result<(), String> {
    let mut seen = HashSet::new();
    for &e in anchor {
        if e == 0 || e > m as u64 * b as u64 {
            return Err(format!("anchor element {e} outside the universe"));
        }
        if !seen.insert(element_block(e, b)) {
            return Err(format!("anchor hits block {} twice", element_block(e, b)));
        }
    }
    if anchor.windows(2).any(|w| w[0] >= w[1]) {
        return Err("anchor not sorted".into());
    }
    Ok(())
}

/// A family of one-per-block sets together with the anchor T they all
/// contain.  Members are kept in lexicographic order of their element lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetCollection {
    pub m: u32,
    pub b: u32,
    pub members: Vec<u32>,
    pub anchor: Vec<u64>,
}

impl SetCollection {
    pub fn new(m: u32, b: u32, mut members: Vec<u32>, anchor: Vec<u64>) -> Result<Self, LabError> {
        members.sort_unstable_by_key(|&s| lex_key(s, m, b));
        members.dedup();
        let coll = SetCollection { m, b, members, anchor };
        coll.check().map_err(LabError::BadConfig)?;
        Ok(coll)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn free_blocks(&self) -> Vec<u32> {
        free_of(&self.anchor, self.m, self.b)
    }

    pub fn contains_member(&self, idx: u32) -> bool {
        self.members
            .binary_search_by_key(&lex_key(idx, self.m, self.b), |&s| lex_key(s, self.m, self.b))
            .is_ok()
    }

    pub fn check(&self) -> Result<(), String> {
        check_anchor(&self.anchor, self.m, self.b)?;
        let total = family_size(self.m, self.b);
        for &s in &self.members {
            if s as u64 >= total {
                return Err(format!("member {s} outside the family"));
            }
            for &e in &self.anchor {
                if !set_contains(s, self.b, e) {
                    return Err(format!("member {s} misses anchor element {e}"));
                }
            }
        }
        for w in self.members.windows(2) {
            if lex_key(w[0], self.m, self.b) >= lex_key(w[1], self.m, self.b) {
                return Err("members not in lex order".into());
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// pairwise intersections

/// Histogram over ordered member pairs (diagonal included) of
/// |(S1 ∩ S2) \ T|; entry k counts pairs agreeing on exactly k free blocks.
///
/// Computed by grouping on each subset W of free blocks (sets agreeing at
/// least on W) and inclusion-exclusion down to exact agreement, so the cost
/// is 2^f passes instead of a quadratic pair scan.
pub fn pair_intersection_histogram(coll: &SetCollection) -> Vec<u64> {
    let free = coll.free_blocks();
    histogram_for(&coll.members, &free, coll.b)
}

fn histogram_for(members: &[u32], free: &[u32], b: u32) -> Vec<u64> {
    let f = free.len();
    let mut at_least = vec![0i128; 1 << f];
    for w in 0..1usize << f {
        let mut groups: HashMap<u64, u64> = HashMap::new();
        for &s in members {
            let mut key = 0u64;
            for (i, &j) in free.iter().enumerate() {
                if w >> i & 1 == 1 {
                    key |= (set_code(s, j, b) as u64 + 1) << (8 * i);
                }
            }
            *groups.entry(key).or_insert(0) += 1;
        }
        at_least[w] = groups.values().map(|&c| (c as i128) * c as i128).sum();
    }
    let mut hist = vec![0u64; f + 1];
    for w in 0..1usize << f {
        let mut exact = 0i128;
        for v in 0..1usize << f {
            if v & w == w {
                let extra = (v ^ w).count_ones();
                exact += if extra % 2 == 0 { at_least[v] } else { -at_least[v] };
            }
        }
        debug_assert!(exact >= 0);
        hist[w.count_ones() as usize] += exact as u64;
    }
    hist
}

/// Outcome of the intersection inequality
/// sum over ordered pairs of (2^{|(S1∩S2)\T|} - 1) >= |S|^2 / 4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntersectionCheck {
    pub lhs: u128,
    pub holds: bool,
    /// Every k >= 1 whose pair count alone clears the selection threshold
    /// |pairs at k| >= |S|^2 / (4 * 2^{2k}).
    pub witness_k: Vec<u32>,
}

pub fn check_intersection_lemma(coll: &SetCollection) -> IntersectionCheck {
    let hist = pair_intersection_histogram(coll);
    let n = coll.len() as u128;
    let lhs: u128 = hist
        .iter()
        .enumerate()
        .map(|(k, &c)| c as u128 * ((1u128 << k) - 1))
        .sum();
    let holds = 4 * lhs >= n * n;
    let witness_k = (1..hist.len())
        .filter(|&k| (hist[k] as u128) << (2 * k + 2) >= n * n)
        .map(|k| k as u32)
        .collect();
    IntersectionCheck { lhs, holds, witness_k }
}

// ---------------------------------------------------------------------------
// message classes

fn enumerate_family(
    protocol: &dyn OneWayProtocol,
    m: u32,
    b: u32,
    good: Option<&dyn Fn(u32) -> bool>,
) -> Vec<(Vec<u8>, Vec<u32>)> {
    let mut classes: HashMap<Vec<u8>, Vec<u32>> = HashMap::new();
    for idx in 0..family_size(m, b) as u32 {
        if let Some(filter) = good {
            if !filter(idx) {
                continue;
            }
        }
        let msg = protocol.alice(&set_elements(idx, m, b));
        classes.entry(msg).or_default().push(idx);
    }
    let mut out: Vec<(Vec<u8>, Vec<u32>)> = classes.into_iter().collect();
    out.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    out
}

/// Group the whole family (optionally filtered) by Alice's message; classes
/// come back largest first, ties broken by message bytes.
pub fn message_classes(
    protocol: &dyn OneWayProtocol,
    params: &UrdecParams,
    good: Option<&dyn Fn(u32) -> bool>,
) -> Result<Vec<(Vec<u8>, SetCollection)>, LabError> {
    let (m, b) = universe_dims(params)?;
    enumerate_family(protocol, m, b, good)
        .into_iter()
        .map(|(msg, members)| Ok((msg, SetCollection::new(m, b, members, Vec::new())?)))
        .collect()
}

/// All sets on which Alice would send exactly `message`.
pub fn consistent_sets(
    protocol: &dyn OneWayProtocol,
    message: &[u8],
    params: &UrdecParams,
) -> Result<SetCollection, LabError> {
    let (m, b) = universe_dims(params)?;
    let members = (0..family_size(m, b) as u32)
        .filter(|&idx| protocol.alice(&set_elements(idx, m, b)) == message)
        .collect();
    SetCollection::new(m, b, members, Vec::new())
}

// ---------------------------------------------------------------------------
// conditional error
//
// The generative model being measured: partition each block's non-anchor
// elements into two labelled halves by fair coins, draw a member S uniformly,
// draw a side coin, and give the side part exactly the halves containing
// S \ T (anchored blocks contribute a coin-picked half).  Bob sees
// (message, T, P1, P2) and must name the side holding S \ T.

#[derive(Clone, Copy, Debug)]
pub enum ErrorMode {
    Exact,
    MonteCarlo { samples: u64, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct CondError {
    pub value: f64,
    /// Exact numerator/denominator when computed exactly.
    pub fraction: Option<(u128, u128)>,
    pub std_err: Option<f64>,
    pub samples: u64,
}

pub fn conditional_error(
    protocol: &dyn OneWayProtocol,
    coll: &SetCollection,
    mode: ErrorMode,
) -> Result<CondError, LabError> {
    if coll.is_empty() {
        return Err(LabError::BadConfig("empty collection".into()));
    }
    if coll.free_blocks().is_empty() {
        return Err(LabError::BadConfig("anchor covers every block".into()));
    }
    debug_assert!(coll.check().is_ok());
    match mode {
        ErrorMode::Exact => {
            let (num, den) = match protocol.decide_style() {
                DecideStyle::Fixed(_) => (1, 2),
                DecideStyle::Locator => exact_locator(protocol, coll),
                DecideStyle::Majority => exact_majority(protocol, coll)?,
            };
            Ok(CondError {
                value: num as f64 / den as f64,
                fraction: Some((num, den)),
                std_err: None,
                samples: 0,
            })
        }
        ErrorMode::MonteCarlo { samples, seed } => monte_carlo(protocol, coll, samples, seed),
    }
}

fn class_message(protocol: &dyn OneWayProtocol, coll: &SetCollection) -> Vec<u8> {
    let pi = protocol.alice(&set_elements(coll.members[0], coll.m, coll.b));
    debug_assert!(coll
        .members
        .iter()
        .all(|&s| protocol.alice(&set_elements(s, coll.m, coll.b)) == pi));
    pi
}

/// A locator bob commits to one claimed element x of S \ T.  If x really is
/// in S \ T it always lands on the true side; otherwise its side is a fair
/// coin, so the error is exactly  |{S : x not in S \ T}| / (2 |S|).
fn exact_locator(protocol: &dyn OneWayProtocol, coll: &SetCollection) -> (u128, u128) {
    let pi = class_message(protocol, coll);
    let claimed = protocol.bob_search(&pi, &coll.anchor);
    let misses = match claimed {
        Some(x) if coll.anchor.binary_search(&x).is_err() => coll
            .members
            .iter()
            .filter(|&&s| !set_contains(s, coll.b, x))
            .count(),
        _ => coll.len(),
    };
    (misses as u128, 2 * coll.len() as u128)
}

/// A majority bob votes over the message class (all consistent sets that
/// contain T), which may be a superset of the measured collection.  Only the
/// halves assigned to codes that occur in the class matter, and one code per
/// free block can be pinned by symmetry, so the exact average runs over
/// 2^(D - f) partition states instead of 2^(U - |T|).
fn exact_majority(
    protocol: &dyn OneWayProtocol,
    coll: &SetCollection,
) -> Result<(u128, u128), LabError> {
    let (m, b) = (coll.m, coll.b);
    let free = coll.free_blocks();
    let f = free.len();
    let full = (1usize << f) - 1;
    let pi = class_message(protocol, coll);

    // the voting pool: message class restricted to sets containing the anchor
    let pool: Vec<u32> = (0..family_size(m, b) as u32)
        .filter(|&idx| coll.anchor.iter().all(|&e| set_contains(idx, b, e)))
        .filter(|&idx| protocol.alice(&set_elements(idx, m, b)) == pi)
        .collect();
    let flagged: HashSet<u32> = coll.members.iter().copied().collect();
    debug_assert!(coll.members.iter().all(|s| pool.contains(s)));

    // distinct codes per free block, first one pinned to side 0
    let mut bit_owner: Vec<(usize, u32)> = Vec::new(); // (free position, code)
    for (i, &j) in free.iter().enumerate() {
        let mut codes: Vec<u32> = pool.iter().map(|&s| set_code(s, j, b)).collect();
        codes.sort_unstable();
        codes.dedup();
        for &c in codes.iter().skip(1) {
            bit_owner.push((i, c));
        }
    }
    let bits = bit_owner.len() as u32;
    if bits > EXACT_PARTITION_BITS_CAP {
        return Err(LabError::InfeasibleExact { bits, cap: EXACT_PARTITION_BITS_CAP });
    }

    // per partition bit: which pool entries move when it flips
    let movers: Vec<Vec<u32>> = bit_owner
        .iter()
        .map(|&(i, c)| {
            (0..pool.len() as u32)
                .filter(|&p| set_code(pool[p as usize], free[i], b) == c)
                .collect()
        })
        .collect();

    let mut pattern = vec![0u8; pool.len()];
    let mut cnt_c = vec![0u64; 1 << f];
    let mut cnt_s = vec![0u64; 1 << f];
    cnt_c[0] = pool.len() as u64;
    cnt_s[0] = coll.len() as u64;
    let in_s: Vec<bool> = pool.iter().map(|s| flagged.contains(s)).collect();

    let mut acc: u128 = 0;
    let states: u64 = 1 << bits;
    for g in 0..states {
        if g > 0 {
            let bit = g.trailing_zeros() as usize;
            let flip = 1u8 << bit_owner[bit].0;
            for &p in &movers[bit] {
                let old = pattern[p as usize] as usize;
                let new = old ^ flip as usize;
                cnt_c[old] -= 1;
                cnt_c[new] += 1;
                if in_s[p as usize] {
                    cnt_s[old] -= 1;
                    cnt_s[new] += 1;
                }
                pattern[p as usize] ^= flip;
            }
        }
        // assembly a: P1 takes side-bit a_j of each free block; bob answers
        // P1 on a tie, and the posterior weight of the losing side is the
        // measured collection's count there.
        for a in 0..=full {
            let wrong = if cnt_c[a] >= cnt_c[a ^ full] { cnt_s[a ^ full] } else { cnt_s[a] };
            acc += wrong as u128;
        }
    }
    Ok((acc, states as u128 * 2 * coll.len() as u128))
}

fn monte_carlo(
    protocol: &dyn OneWayProtocol,
    coll: &SetCollection,
    samples: u64,
    seed: u64,
) -> Result<CondError, LabError> {
    if samples == 0 {
        return Err(LabError::BadConfig("zero samples".into()));
    }
    let pi = class_message(protocol, coll);
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "cond-error-mc", &[]));
    let mut wrong = 0u64;
    for _ in 0..samples {
        let member = coll.members[rng.gen_range(0..coll.len())];
        let (p1, p2, side) = sample_partition(coll, member, &mut rng);
        if protocol.bob_decide(&pi, &coll.anchor, &p1, &p2) != side {
            wrong += 1;
        }
    }
    let value = wrong as f64 / samples as f64;
    Ok(CondError {
        value,
        fraction: None,
        std_err: Some((value * (1.0 - value) / samples as f64).sqrt()),
        samples,
    })
}

fn sample_partition(
    coll: &SetCollection,
    member: u32,
    rng: &mut ChaCha12Rng,
) -> (Vec<u64>, Vec<u64>, Side) {
    let (m, b) = (coll.m, coll.b);
    let side = if rng.gen::<bool>() { Side::P1 } else { Side::P2 };
    let mut with_s = Vec::new();
    let mut other = Vec::new();
    for j in 0..m {
        let anchored = coll.anchor.iter().any(|&e| element_block(e, b) == j);
        let s_code = set_code(member, j, b);
        let mut halves = [Vec::new(), Vec::new()];
        let mut s_half = 0usize;
        for c in 0..b {
            let e = element_of(j, c, b);
            if coll.anchor.binary_search(&e).is_ok() {
                continue;
            }
            let h = rng.gen::<bool>() as usize;
            if c == s_code && !anchored {
                s_half = h;
            }
            halves[h].push(e);
        }
        let to_s = if anchored { rng.gen::<bool>() as usize } else { s_half };
        with_s.append(&mut halves[to_s]);
        other.append(&mut halves[1 - to_s]);
    }
    with_s.sort_unstable();
    other.sort_unstable();
    match side {
        Side::P1 => (with_s, other, side),
        Side::P2 => (other, with_s, side),
    }
}

// ---------------------------------------------------------------------------
// the shrinking random process
//
// Round i over the collection S_i with anchor T_i:
//   1. find the smallest k_i >= 1 whose exact-agreement pair count clears
//      |S_i|^2 / (4 * 2^{2 k_i}); no such k means FAILED;
//   2. take the lexicographically first S* and dT subset of S* \ T_i (size
//      k_i) with |{S : (S* ∩ S) \ T_i = dT}| >= |S_i| / (4 * 2^{2k} * m^k);
//   3. if the revelation budget is not exhausted, draw the scheduled number
//      of fresh random blocks, pick dT' (one element per drawn block) with
//      the largest surviving count (ties lexicographic), and keep every set
//      containing T_i ∪ dT ∪ dT'; otherwise keep the dT class and stop.
// Only the block draw consumes randomness; everything else is deterministic.

#[derive(Clone, Debug)]
struct RoundPick {
    k: u32,
    s_star: u32,
    delta_t: Vec<u64>,
    class: Vec<u32>,
}

fn masks_by_popcount_lex(f: usize, k: usize) -> Vec<usize> {
    let mut masks: Vec<usize> = (0..1usize << f).filter(|m| m.count_ones() as usize == k).collect();
    masks.sort_by_key(|&m| (0..f).filter(|i| m >> i & 1 == 1).collect::<Vec<_>>());
    masks
}

fn round_pick(members: &[u32], anchor: &[u64], m: u32, b: u32) -> Option<RoundPick> {
    let n = members.len() as u128;
    if n == 0 {
        return None;
    }
    let free = free_of(anchor, m, b);
    let f = free.len();
    if f == 0 {
        return None;
    }
    let hist = histogram_for(members, &free, b);
    let k = (1..=f).find(|&k| (hist[k] as u128) << (2 * k + 2) >= n * n)?;
    let mk = (m as u128).pow(k as u32);
    for &s_star in members {
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); 1 << f];
        for &s in members {
            let mut mask = 0usize;
            for (i, &j) in free.iter().enumerate() {
                if set_code(s, j, b) == set_code(s_star, j, b) {
                    mask |= 1 << i;
                }
            }
            buckets[mask].push(s);
        }
        for mask in masks_by_popcount_lex(f, k) {
            let cnt = buckets[mask].len() as u128;
            if (cnt << (2 * k + 2)) * mk >= n {
                let delta_t = (0..f)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| element_of(free[i], set_code(s_star, free[i], b), b))
                    .collect();
                return Some(RoundPick {
                    k: k as u32,
                    s_star,
                    delta_t,
                    class: std::mem::take(&mut buckets[mask]),
                });
            }
        }
    }
    None
}

/// Pick one element per drawn block maximizing the number of surviving class
/// members (ties by lexicographic element tuple); returns the picked elements
/// and the survivors.
fn pick_delta_t_prime(class: &[u32], drawn: &[u32], b: u32) -> (Vec<u64>, Vec<u32>) {
    if drawn.is_empty() {
        return (Vec::new(), class.to_vec());
    }
    let project = |s: u32| -> u64 {
        drawn.iter().fold(0u64, |key, &j| key << 8 | set_code(s, j, b) as u64)
    };
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for &s in class {
        *counts.entry(project(s)).or_insert(0) += 1;
    }
    let (&best, _) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("nonempty class");
    let mut elems: Vec<u64> = Vec::new();
    let mut key = best;
    for &j in drawn.iter().rev() {
        elems.push(element_of(j, (key & 0xff) as u32, b));
        key >>= 8;
    }
    elems.reverse();
    let survivors = class.iter().copied().filter(|&s| project(s) == best).collect();
    (elems, survivors)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessRound {
    pub k: u32,
    pub s_star: u32,
    pub delta_t: Vec<u64>,
    /// Blocks drawn for the mixing step (empty on the final round).
    pub blocks: Vec<u32>,
    pub delta_t_prime: Vec<u64>,
    pub size_before: u64,
    pub size_after: u64,
    pub r_before: u32,
    pub r_after: u32,
    pub t_before: u64,
    pub t_after: u64,
}

#[derive(Clone, Debug)]
pub struct ProcessATrace {
    pub m: u32,
    pub b: u32,
    pub rounds_cap: u32,
    pub schedule: Vec<u64>,
    pub rounds: Vec<ProcessRound>,
    /// Collection state before each round, plus the final state on success.
    pub snapshots: Vec<SetCollection>,
    pub failed: bool,
}

impl ProcessATrace {
    pub fn final_collection(&self) -> &SetCollection {
        self.snapshots.last().expect("at least the initial snapshot")
    }
}

/// Everything about a process run that does not depend on the seed: the
/// maximizing message class and the (deterministic) first-round selection.
pub struct ProcessContext<'a> {
    pub protocol: &'a dyn OneWayProtocol,
    pub params: UrdecParams,
    pub message: Vec<u8>,
    pub initial: SetCollection,
    round0: Option<RoundPick>,
}

impl<'a> ProcessContext<'a> {
    pub fn new(
        protocol: &'a dyn OneWayProtocol,
        params: &UrdecParams,
        good: Option<&dyn Fn(u32) -> bool>,
    ) -> Result<Self, LabError> {
        let (m, b) = universe_dims(params)?;
        let mut classes = enumerate_family(protocol, m, b, good);
        if classes.is_empty() {
            return Err(LabError::BadConfig("no sets pass the filter".into()));
        }
        let (message, members) = classes.swap_remove(0);
        let initial = SetCollection::new(m, b, members, Vec::new())?;
        let round0 = round_pick(&initial.members, &[], m, b);
        Ok(ProcessContext { protocol, params: params.clone(), message, initial, round0 })
    }
}

pub fn run_process_a(
    protocol: &dyn OneWayProtocol,
    params: &UrdecParams,
    seed: u64,
    good: Option<&dyn Fn(u32) -> bool>,
) -> Result<ProcessATrace, LabError> {
    let ctx = ProcessContext::new(protocol, params, good)?;
    Ok(run_process_with(&ctx, seed))
}

pub fn run_process_with(ctx: &ProcessContext<'_>, seed: u64) -> ProcessATrace {
    let params = &ctx.params;
    let (m, b) = (ctx.initial.m, ctx.initial.b);
    let cap = params.rounds;
    let mut members = ctx.initial.members.clone();
    let mut anchor: Vec<u64> = Vec::new();
    let mut rounds: Vec<ProcessRound> = Vec::new();
    let mut snapshots: Vec<SetCollection> = Vec::new();
    let mut r: u32 = 0;
    let mut failed = false;
    let mut done = false;

    while !done {
        snapshots.push(SetCollection { m, b, members: members.clone(), anchor: anchor.clone() });
        let i = rounds.len();
        let pick = if i == 0 { ctx.round0.clone() } else { round_pick(&members, &anchor, m, b) };
        let Some(pick) = pick else {
            failed = true;
            break;
        };
        let r_next = r + pick.k;
        let size_before = members.len() as u64;
        let t_before = anchor.len() as u64;

        let (drawn, delta_t_prime, survivors) = if r_next < cap {
            let gap = params.t[r_next as usize] - params.t[r as usize] - pick.k as u64;
            let dt_blocks: HashSet<u32> =
                pick.delta_t.iter().map(|&e| element_block(e, b)).collect();
            let avail: Vec<u32> = free_of(&anchor, m, b)
                .into_iter()
                .filter(|j| !dt_blocks.contains(j))
                .collect();
            let mut rng =
                ChaCha12Rng::seed_from_u64(derive_seed(seed, "process-blocks", &[i as u64]));
            let mut drawn: Vec<u32> = index::sample(&mut rng, avail.len(), gap as usize)
                .into_iter()
                .map(|x| avail[x])
                .collect();
            drawn.sort_unstable();
            let (dtp, survivors) = pick_delta_t_prime(&pick.class, &drawn, b);
            (drawn, dtp, survivors)
        } else {
            done = true;
            (Vec::new(), Vec::new(), pick.class.clone())
        };

        anchor.extend(pick.delta_t.iter());
        anchor.extend(delta_t_prime.iter());
        anchor.sort_unstable();
        rounds.push(ProcessRound {
            k: pick.k,
            s_star: pick.s_star,
            delta_t: pick.delta_t,
            blocks: drawn,
            delta_t_prime,
            size_before,
            size_after: survivors.len() as u64,
            r_before: r,
            r_after: r_next,
            t_before,
            t_after: anchor.len() as u64,
        });
        members = survivors;
        r = r_next;
    }
    if !failed {
        snapshots.push(SetCollection { m, b, members, anchor });
    }
    let trace = ProcessATrace {
        m,
        b,
        rounds_cap: cap,
        schedule: params.t.clone(),
        rounds,
        snapshots,
        failed,
    };
    debug_assert!(verify_trace(&trace).is_ok(), "{:?}", verify_trace(&trace));
    trace
}

/// One line per round, `i k_i r_i t_{r_i} |S_i| |S_{i+1}|`, then a trailer.
pub fn write_trace(trace: &ProcessATrace) -> String {
    let mut out = String::new();
    for (i, rd) in trace.rounds.iter().enumerate() {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            i, rd.k, rd.r_before, rd.t_before, rd.size_before, rd.size_after
        ));
    }
    if trace.failed {
        out.push_str("FAILED\n");
    } else {
        out.push_str(&format!("DONE I={}\n", trace.rounds.len()));
    }
    out
}

/// Re-check every recorded invariant by exact integer arithmetic: snapshot
/// sizes and nesting, revelation accounting against the schedule, and the
/// per-round survival threshold
/// |S_{i+1}| >= |S_i| / (4 * 2^{2k} * m^k * B^{gap}).
pub fn verify_trace(trace: &ProcessATrace) -> Result<(), String> {
    let expect_snaps = trace.rounds.len() + 1 - trace.failed as usize;
    if trace.snapshots.len() != expect_snaps {
        return Err(format!("{} snapshots for {} rounds", trace.snapshots.len(), trace.rounds.len()));
    }
    for snap in &trace.snapshots {
        snap.check()?;
    }
    let (m, b) = (trace.m as u128, trace.b as u128);
    for (i, rd) in trace.rounds.iter().enumerate() {
        if rd.r_after != rd.r_before + rd.k {
            return Err(format!("round {i}: r jumps {} -> {}", rd.r_before, rd.r_after));
        }
        if rd.delta_t.len() != rd.k as usize {
            return Err(format!("round {i}: |dT| != k"));
        }
        let final_round = rd.r_after >= trace.rounds_cap;
        let gap = if final_round {
            if !rd.blocks.is_empty() {
                return Err(format!("round {i}: final round drew blocks"));
            }
            0
        } else {
            let scheduled = trace.schedule[rd.r_after as usize] - trace.schedule[rd.r_before as usize];
            if rd.blocks.len() as u64 + rd.k as u64 != scheduled {
                return Err(format!("round {i}: drew {} blocks, schedule wants {}", rd.blocks.len(), scheduled));
            }
            if rd.t_after != trace.schedule[rd.r_after as usize] {
                return Err(format!("round {i}: |T| = {} off schedule", rd.t_after));
            }
            rd.blocks.len() as u64
        };
        if rd.t_after != rd.t_before + rd.k as u64 + gap {
            return Err(format!("round {i}: anchor growth mismatch"));
        }
        if rd.delta_t_prime.len() as u64 != gap {
            return Err(format!("round {i}: |dT'| != block draw"));
        }
        let snap = &trace.snapshots[i];
        if snap.len() as u64 != rd.size_before || snap.anchor.len() as u64 != rd.t_before {
            return Err(format!("round {i}: snapshot disagrees with record"));
        }
        if let Some(next) = trace.snapshots.get(i + 1) {
            if next.len() as u64 != rd.size_after || next.anchor.len() as u64 != rd.t_after {
                return Err(format!("round {i}: next snapshot disagrees with record"));
            }
            let prev: HashSet<u32> = snap.members.iter().copied().collect();
            if !next.members.iter().all(|s| prev.contains(s)) {
                return Err(format!("round {i}: members not nested"));
            }
            let prev_t: HashSet<u64> = snap.anchor.iter().copied().collect();
            if !next.anchor.iter().filter(|e| prev_t.contains(e)).eq(snap.anchor.iter()) {
                return Err(format!("round {i}: anchors not nested"));
            }
        }
        // survival threshold, cross-multiplied
        let factor = 4u128 * (1u128 << (2 * rd.k)) * m.pow(rd.k) * b.pow(gap as u32);
        if (rd.size_after as u128) * factor < rd.size_before as u128 {
            return Err(format!("round {i}: survival threshold violated"));
        }
    }
    Ok(())
}

/// The closed-form lower bound |S_I| >= |S_0| (B/16m)^R B^{-|T_I|}, checked
/// by exact integers.  Only meaningful when B >= 4m and the run completed;
/// returns None otherwise.
pub fn closed_form_holds(trace: &ProcessATrace) -> Option<bool> {
    if trace.failed || (trace.b as u64) < 4 * trace.m as u64 {
        return None;
    }
    let n0 = trace.snapshots.first()?.len() as u128;
    let last = trace.final_collection();
    let (m, b) = (trace.m as u128, trace.b as u128);
    let r = trace.rounds_cap;
    let lhs = last.len() as u128 * (16 * m).pow(r) * b.pow(last.anchor.len() as u32);
    Some(lhs >= n0 * b.pow(r))
}

// ---------------------------------------------------------------------------
// singleton anchor probability

#[derive(Clone, Debug)]
pub struct SingletonEstimate {
    pub runs: u64,
    /// Runs where the conditioning event held (k prefix matched and the
    /// chosen set survived to round i).
    pub included: u64,
    pub hits: u64,
    pub estimate: f64,
    pub std_err: f64,
    /// The analytic ceiling 2^{6/alpha} / C(m, t_{r_i}).
    pub bound: f64,
}

/// Estimate Pr[T_i = T | S in S_i, k_0..k_{i-1}] over seeded process runs.
pub fn estimate_singleton_prob(
    protocol: &dyn OneWayProtocol,
    params: &UrdecParams,
    k_prefix: &[u32],
    s_index: u32,
    t_target: &[u64],
    runs: u64,
    seed: u64,
) -> Result<SingletonEstimate, LabError> {
    let ctx = ProcessContext::new(protocol, params, None)?;
    let (m, b) = (ctx.initial.m, ctx.initial.b);
    check_anchor(t_target, m, b).map_err(LabError::BadConfig)?;
    if s_index as u64 >= family_size(m, b) {
        return Err(LabError::BadConfig(format!("set {s_index} outside the family")));
    }
    let i = k_prefix.len();
    let r_i: u32 = k_prefix.iter().sum();
    if r_i as usize >= params.t.len() {
        return Err(LabError::BadConfig("k prefix walks past the schedule".into()));
    }
    let mut included = 0u64;
    let mut hits = 0u64;
    for u in 0..runs {
        let trace = run_process_with(&ctx, derive_seed(seed, "singleton-run", &[u]));
        if trace.rounds.len() < i {
            continue;
        }
        if (0..i).any(|j| trace.rounds[j].k != k_prefix[j]) {
            continue;
        }
        let snap = &trace.snapshots[i];
        if !snap.contains_member(s_index) {
            continue;
        }
        included += 1;
        if snap.anchor == t_target {
            hits += 1;
        }
    }
    if included == 0 {
        return Err(LabError::NoConditioningEvents);
    }
    let estimate = hits as f64 / included as f64;
    let bound = (6.0 / params.alpha).exp2() / binomial(m as u64, params.t[r_i as usize]) as f64;
    Ok(SingletonEstimate {
        runs,
        included,
        hits,
        estimate,
        std_err: (estimate * (1.0 - estimate) / included as f64).sqrt(),
        bound,
    })
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

// ---------------------------------------------------------------------------
// the protocol battery

/// Sends nothing; Bob answers a fixed side.
pub struct ConstantMessage;

impl OneWayProtocol for ConstantMessage {
    fn name(&self) -> String {
        "constant".into()
    }

    fn alice(&self, _s: &[u64]) -> Vec<u8> {
        Vec::new()
    }

    fn alice_bits(&self, _s: &[u64]) -> u64 {
        0
    }

    fn decide_style(&self) -> DecideStyle {
        DecideStyle::Fixed(Side::P1)
    }
}

/// Sends S verbatim (two bytes per element); Bob reads an element of S \ T
/// straight off the message.
pub struct FullDisclosure;

impl OneWayProtocol for FullDisclosure {
    fn name(&self) -> String {
        "identity".into()
    }

    fn alice(&self, s: &[u64]) -> Vec<u8> {
        s.iter()
            .flat_map(|&e| {
                debug_assert!(e <= u16::MAX as u64);
                (e as u16).to_le_bytes()
            })
            .collect()
    }

    fn bob_search(&self, msg: &[u8], t: &[u64]) -> Option<u64> {
        msg.chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u64)
            .find(|e| t.binary_search(e).is_err())
    }
}

/// Sends only the element living in block 0.
pub struct FirstBlockCode;

impl OneWayProtocol for FirstBlockCode {
    fn name(&self) -> String {
        "first-block".into()
    }

    fn alice(&self, s: &[u64]) -> Vec<u8> {
        (s[0] as u16).to_le_bytes().to_vec()
    }

    fn bob_search(&self, msg: &[u8], t: &[u64]) -> Option<u64> {
        let e = u16::from_le_bytes([msg[0], msg[1]]) as u64;
        if t.binary_search(&e).is_ok() {
            None
        } else {
            Some(e)
        }
    }
}

/// Hashes the whole set into a few buckets; Bob votes by majority over the
/// sets hashing the same way.
pub struct HashedVote {
    pub m: u32,
    pub b: u32,
    pub buckets: u32,
    pub seed: u64,
}

impl OneWayProtocol for HashedVote {
    fn name(&self) -> String {
        format!("hashed-vote-{}", self.buckets)
    }

    fn alice(&self, s: &[u64]) -> Vec<u8> {
        let h = digest64(std::iter::once(self.seed).chain(s.iter().copied()));
        vec![(h % self.buckets as u64) as u8]
    }

    fn alice_bits(&self, _s: &[u64]) -> u64 {
        (32 - (self.buckets - 1).leading_zeros()) as u64
    }

    fn decide_style(&self) -> DecideStyle {
        DecideStyle::Majority
    }

    fn bob_decide(&self, msg: &[u8], t: &[u64], p1: &[u64], p2: &[u64]) -> Side {
        let (mut a1, mut a2) = (0u64, 0u64);
        for idx in 0..family_size(self.m, self.b) as u32 {
            if !t.iter().all(|&e| set_contains(idx, self.b, e)) {
                continue;
            }
            let elems = set_elements(idx, self.m, self.b);
            if self.alice(&elems) != msg {
                continue;
            }
            let rest: Vec<u64> =
                elems.into_iter().filter(|e| t.binary_search(e).is_err()).collect();
            if rest.iter().all(|e| p1.binary_search(e).is_ok()) {
                a1 += 1;
            } else if rest.iter().all(|e| p2.binary_search(e).is_ok()) {
                a2 += 1;
            }
        }
        if a2 > a1 {
            Side::P2
        } else {
            Side::P1
        }
    }
}

/// The stock protocols every survey runs over: no information, full
/// information, one block, a truncated real sketch, and a hash vote.
pub fn battery(params: &UrdecParams, seed: u64) -> Vec<Box<dyn OneWayProtocol>> {
    vec![
        Box::new(ConstantMessage),
        Box::new(FullDisclosure),
        Box::new(FirstBlockCode),
        Box::new(UrProtocol::truncated(
            params.u,
            params.delta,
            derive_seed(seed, "battery-sketch", &[]),
            1,
        )),
        Box::new(HashedVote {
            m: params.m as u32,
            b: params.b as u32,
            buckets: 8,
            seed: derive_seed(seed, "battery-vote", &[]),
        }),
    ]
}

// ---------------------------------------------------------------------------
// survey: exact error vs. the intersection inequality

#[derive(Clone, Debug)]
pub struct LemmaSurveyRow {
    pub protocol: String,
    /// "class" for a message class at T = empty, "round<i>" for a process
    /// snapshot.
    pub source: String,
    pub members: u64,
    pub t_size: u64,
    pub error_num: u128,
    pub error_den: u128,
    pub lhs: u128,
    pub holds: bool,
    /// Exactly err <= 1/4.
    pub low_error: bool,
    /// The implication being validated: low error forces the inequality.
    pub consistent: bool,
}

/// Exact conditional error and the intersection inequality for every message
/// class of every battery protocol, plus the collections visited by seeded
/// process runs.
pub fn lemma33_survey(
    params: &UrdecParams,
    seed: u64,
    process_seeds: u64,
) -> Result<Vec<LemmaSurveyRow>, LabError> {
    let mut rows = Vec::new();
    for protocol in battery(params, seed) {
        let protocol = protocol.as_ref();
        for (_, coll) in message_classes(protocol, params, None)? {
            rows.push(survey_row(protocol, &coll, "class")?);
        }
        for s in 0..process_seeds {
            let trace =
                run_process_a(protocol, params, derive_seed(seed, "survey-run", &[s]), None)?;
            for (i, snap) in trace.snapshots.iter().enumerate().skip(1) {
                if snap.is_empty() || snap.free_blocks().is_empty() {
                    continue;
                }
                rows.push(survey_row(protocol, snap, &format!("round{i}"))?);
            }
        }
    }
    Ok(rows)
}

fn survey_row(
    protocol: &dyn OneWayProtocol,
    coll: &SetCollection,
    source: &str,
) -> Result<LemmaSurveyRow, LabError> {
    let err = conditional_error(protocol, coll, ErrorMode::Exact)?;
    let (num, den) = err.fraction.expect("exact mode");
    let check = check_intersection_lemma(coll);
    let low_error = 4 * num <= den;
    Ok(LemmaSurveyRow {
        protocol: protocol.name(),
        source: source.into(),
        members: coll.len() as u64,
        t_size: coll.anchor.len() as u64,
        error_num: num,
        error_den: den,
        lhs: check.lhs,
        holds: check.holds,
        low_error,
        consistent: !low_error || check.holds,
    })
}
