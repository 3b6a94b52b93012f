//! C ABI over the sketchlab core: graphs, vertex sketches, the one-round
//! connectivity scheme, and the reveal-schedule calculator.
//!
//! Conventions:
//! - Handles (`slab_graph`, `slab_sketch`) are opaque; constructors return
//!   null on failure and the matching `*_free` accepts null.
//! - Fallible calls return `slab_status`; anything other than `SLAB_OK`
//!   leaves a message readable through `slab_last_error`.
//! - The header shipped at `include/sketchlab.h` is maintained by hand and
//!   checked against the exported symbols by this crate's tests.

// Type and variant names follow the C header, not Rust convention.
#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sketchlab::sim::{
    families, ground_truth_connected, run_one_round, AgmScheme, Graph, SimError,
};
use sketchlab::sketch::{Extraction, SketchConfig, VertexSketch};
use sketchlab::{hard, ur};

/// Result of a fallible call.  Matches the CLI exit codes where they
/// overlap: 2 for bad input, 3 for a blown cap.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum slab_status {
    SLAB_OK = 0,
    SLAB_NULL_ARG = 1,
    SLAB_BAD_CONFIG = 2,
    SLAB_CAP_EXCEEDED = 3,
}

use slab_status::*;

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: impl std::fmt::Display) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.to_string().as_bytes());
    });
}

fn fail(status: slab_status, msg: impl std::fmt::Display) -> slab_status {
    set_error(msg);
    status
}

fn status_of_sim(e: SimError) -> slab_status {
    let s = match e {
        SimError::MessageCap { .. } => SLAB_CAP_EXCEEDED,
        _ => SLAB_BAD_CONFIG,
    };
    fail(s, e)
}

/// Run `f`, converting a panic into SLAB_BAD_CONFIG instead of unwinding
/// across the ABI boundary.
fn guarded(f: impl FnOnce() -> slab_status) -> slab_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SLAB_BAD_CONFIG, "internal panic"),
    }
}

fn guarded_ptr<T>(f: impl FnOnce() -> Option<T>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Some(v)) => Box::into_raw(Box::new(v)),
        Ok(None) => std::ptr::null_mut(),
        Err(_) => {
            set_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

/// Copy the message from the last failed call on this thread into `buf`
/// (NUL-terminated, truncated to fit).  Returns the full message length in
/// bytes, 0 if no call has failed.  `buf` may be null when `cap` is 0.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn slab_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = e.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

// ---------------------------------------------------------------------------
// graphs

/// Undirected graph on vertices 1..=n. Opaque.
pub struct slab_graph(Graph);

/// Parse the text graph format ("n m" header, one "u v" edge per line,
/// `#` comments).  Returns null on malformed input.
///
/// # Safety
/// `text` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn slab_graph_parse(text: *const c_char) -> *mut slab_graph {
    if text.is_null() {
        set_error("null text");
        return std::ptr::null_mut();
    }
    let text = CStr::from_ptr(text);
    guarded_ptr(|| {
        let text = match text.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("text is not UTF-8");
                return None;
            }
        };
        match Graph::parse(text) {
            Ok(g) => Some(slab_graph(g)),
            Err(e) => {
                set_error(e);
                None
            }
        }
    })
}

/// Build a graph from a flat endpoint array `[u1, v1, u2, v2, ...]` of
/// `edge_count` pairs.  Vertices are 1-based; self-loops are rejected and
/// duplicate edges collapse.
///
/// # Safety
/// `endpoints` must point to `2 * edge_count` readable u32 values (may be
/// null only when `edge_count` is 0).
#[no_mangle]
pub unsafe extern "C" fn slab_graph_from_edges(
    n: u32,
    endpoints: *const u32,
    edge_count: usize,
) -> *mut slab_graph {
    if endpoints.is_null() && edge_count > 0 {
        set_error("null endpoints");
        return std::ptr::null_mut();
    }
    let flat: &[u32] = if edge_count == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(endpoints, 2 * edge_count)
    };
    guarded_ptr(|| {
        let edges: Vec<(u32, u32)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        match Graph::from_edges(n, &edges) {
            Ok(g) => Some(slab_graph(g)),
            Err(e) => {
                set_error(e);
                None
            }
        }
    })
}

/// # Safety
/// `g` must be a pointer returned by a graph constructor (or null) and not
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn slab_graph_free(g: *mut slab_graph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Vertex count; 0 for null.
///
/// # Safety
/// `g` must be a live graph handle or null.
#[no_mangle]
pub unsafe extern "C" fn slab_graph_n(g: *const slab_graph) -> u32 {
    g.as_ref().map_or(0, |g| g.0.n())
}

/// Edge count; 0 for null.
///
/// # Safety
/// `g` must be a live graph handle or null.
#[no_mangle]
pub unsafe extern "C" fn slab_graph_edge_count(g: *const slab_graph) -> usize {
    g.as_ref().map_or(0, |g| g.0.edge_count())
}

/// 1 if connected, 0 if not, -1 for null.
///
/// # Safety
/// `g` must be a live graph handle or null.
#[no_mangle]
pub unsafe extern "C" fn slab_graph_connected(g: *const slab_graph) -> i32 {
    match g.as_ref() {
        Some(g) => ground_truth_connected(&g.0) as i32,
        None => -1,
    }
}

/// Erdős–Rényi graph at edge probability 2 ln n / n.
#[no_mangle]
pub extern "C" fn slab_gen_er(n: u32, seed: u64) -> *mut slab_graph {
    guarded_ptr(|| {
        if n < 2 {
            set_error("need at least 2 vertices");
            return None;
        }
        Some(slab_graph(families::er_above_threshold(n, seed)))
    })
}

/// Block-chain instance on n vertices (n must be a perfect square).  When
/// `connected_out` is non-null it receives the stored ground truth.
///
/// # Safety
/// `connected_out` must be null or point to a writable i32.
#[no_mangle]
pub unsafe extern "C" fn slab_gen_conn(
    n: u32,
    seed: u64,
    connected_out: *mut i32,
) -> *mut slab_graph {
    guarded_ptr(|| match hard::sample_conn(n, seed) {
        Ok(inst) => {
            if !connected_out.is_null() {
                *connected_out = inst.connected as i32;
            }
            Some(slab_graph(inst.to_graph()))
        }
        Err(e) => {
            set_error(e);
            None
        }
    })
}

// ---------------------------------------------------------------------------
// one-round scheme

/// Verdict and message accounting of one simulated round.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct slab_report {
    /// 1 = scheme says connected.
    pub verdict: i32,
    /// 1 = graph actually connected.
    pub truth: i32,
    /// Mean per-vertex message size in bits.
    pub avg_bits: f64,
    /// Largest per-vertex message in bits.
    pub max_bits: u64,
}

/// Run the one-round protocol: every vertex sends its sketch, the referee
/// decides.  `scheme` 0 keeps 32-bit fingerprints, 1 scales them with n.
/// Messages over `cap_bits` abort with SLAB_CAP_EXCEEDED.
///
/// # Safety
/// `g` must be a live graph handle; `out` must point to a writable
/// `slab_report`.
#[no_mangle]
pub unsafe extern "C" fn slab_run_one_round(
    g: *const slab_graph,
    scheme: i32,
    seed: u64,
    cap_bits: u64,
    out: *mut slab_report,
) -> slab_status {
    let Some(g) = g.as_ref() else {
        return fail(SLAB_NULL_ARG, "null graph");
    };
    if out.is_null() {
        return fail(SLAB_NULL_ARG, "null report");
    }
    let scheme = match scheme {
        0 => AgmScheme::default(),
        1 => AgmScheme::log_fp(),
        k => return fail(SLAB_BAD_CONFIG, format!("unknown scheme {k}")),
    };
    guarded(|| match run_one_round(&g.0, &scheme, seed, cap_bits) {
        Ok(r) => {
            *out = slab_report {
                verdict: r.verdict as i32,
                truth: r.truth as i32,
                avg_bits: r.stats.avg_bits(),
                max_bits: r.stats.max_bits,
            };
            SLAB_OK
        }
        Err(e) => status_of_sim(e),
    })
}

// ---------------------------------------------------------------------------
// vertex sketches

/// Linear sketch of one vertex's incident edges. Opaque.
pub struct slab_sketch(VertexSketch);

/// Default sketch shape for an n-vertex graph.  Any output pointer may be
/// null to skip that field.
///
/// # Safety
/// Non-null output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn slab_sketch_dims(
    n: u32,
    levels: *mut u32,
    reps: *mut u32,
    fp_bits: *mut u32,
    payload_bits: *mut u64,
) -> slab_status {
    let config = SketchConfig::for_graph(n, 0);
    if let Err(e) = config.validate() {
        return fail(SLAB_BAD_CONFIG, e);
    }
    if !levels.is_null() {
        *levels = config.levels as u32;
    }
    if !reps.is_null() {
        *reps = config.reps as u32;
    }
    if !fp_bits.is_null() {
        *fp_bits = config.fp_bits as u32;
    }
    if !payload_bits.is_null() {
        *payload_bits = config.payload_bits();
    }
    SLAB_OK
}

/// Sketch of `vertex`'s incident edges under the default shape for the
/// graph.  Sketches from the same graph and seed XOR-merge.
///
/// # Safety
/// `g` must be a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn slab_sketch_for_vertex(
    g: *const slab_graph,
    vertex: u32,
    seed: u64,
) -> *mut slab_sketch {
    let Some(g) = g.as_ref() else {
        set_error("null graph");
        return std::ptr::null_mut();
    };
    guarded_ptr(|| {
        if vertex < 1 || vertex > g.0.n() {
            set_error(format!("vertex {vertex} outside 1..={}", g.0.n()));
            return None;
        }
        let config = SketchConfig::for_graph(g.0.n(), seed);
        match VertexSketch::for_vertex(vertex, g.0.neighbors(vertex), &config) {
            Ok(s) => Some(slab_sketch(s)),
            Err(e) => {
                set_error(e);
                None
            }
        }
    })
}

/// # Safety
/// `s` must be a pointer returned by a sketch constructor (or null) and not
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn slab_sketch_free(s: *mut slab_sketch) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// XOR `src` into `dst` in place.  Fails unless both sketches share the
/// same shape and seed.
///
/// # Safety
/// `dst` and `src` must be live sketch handles.
#[no_mangle]
pub unsafe extern "C" fn slab_sketch_merge(
    dst: *mut slab_sketch,
    src: *const slab_sketch,
) -> slab_status {
    let (Some(dst), Some(src)) = (dst.as_mut(), src.as_ref()) else {
        return fail(SLAB_NULL_ARG, "null sketch");
    };
    guarded(|| match dst.0.merge_in(&src.0) {
        Ok(()) => SLAB_OK,
        Err(e) => fail(SLAB_BAD_CONFIG, e),
    })
}

/// Try to pull one edge out of repetition `rep`.  Returns 1 and fills
/// `u_out`/`v_out` on success, 0 when the repetition is empty, -1 when no
/// level passes the one-sparse test, -2 on bad arguments.
///
/// # Safety
/// `s` must be a live sketch handle; `u_out` and `v_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slab_sketch_extract(
    s: *const slab_sketch,
    rep: u16,
    u_out: *mut u32,
    v_out: *mut u32,
) -> i32 {
    let Some(s) = s.as_ref() else {
        set_error("null sketch");
        return -2;
    };
    if u_out.is_null() || v_out.is_null() {
        set_error("null output");
        return -2;
    }
    match s.0.try_extract(rep) {
        Ok(Extraction::Edge(u, v)) => {
            *u_out = u;
            *v_out = v;
            1
        }
        Ok(Extraction::Empty) => 0,
        Ok(Extraction::Ambiguous) => -1,
        Err(e) => {
            set_error(e);
            -2
        }
    }
}

/// Serialize into `buf`.  `written` receives the full size in bytes; when
/// that exceeds `cap` nothing is copied and the call still returns SLAB_OK,
/// so a null `buf` with `cap == 0` sizes the buffer.
///
/// # Safety
/// `buf` must point to `cap` writable bytes (or be null with `cap == 0`);
/// `written` must be writable if non-null.
#[no_mangle]
pub unsafe extern "C" fn slab_sketch_serialize(
    s: *const slab_sketch,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> slab_status {
    let Some(s) = s.as_ref() else {
        return fail(SLAB_NULL_ARG, "null sketch");
    };
    let bytes = s.0.serialize();
    if !written.is_null() {
        *written = bytes.len();
    }
    if !buf.is_null() && cap >= bytes.len() {
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    }
    SLAB_OK
}

/// Rebuild a sketch from `slab_sketch_serialize` output.  The seed is not
/// part of the wire format and must be supplied again.
///
/// # Safety
/// `bytes` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn slab_sketch_deserialize(
    bytes: *const u8,
    len: usize,
    seed: u64,
) -> *mut slab_sketch {
    if bytes.is_null() {
        set_error("null bytes");
        return std::ptr::null_mut();
    }
    let bytes = std::slice::from_raw_parts(bytes, len);
    guarded_ptr(|| match VertexSketch::deserialize(bytes, seed) {
        Ok(s) => Some(slab_sketch(s)),
        Err(e) => {
            set_error(e);
            None
        }
    })
}

// ---------------------------------------------------------------------------
// reveal schedule

/// Compute the reveal schedule for a `universe`-element puzzle at error
/// budget `delta`.  `t_buf` receives up to `t_cap` schedule entries and
/// `t_len` the true count; `m`, `b`, `rounds` may be null.
///
/// # Safety
/// Non-null output pointers must be writable; `t_buf` must hold `t_cap`
/// u32 values.
#[no_mangle]
pub unsafe extern "C" fn slab_urdec_schedule(
    universe: u64,
    delta: f64,
    m: *mut u32,
    b: *mut u32,
    rounds: *mut u32,
    t_buf: *mut u32,
    t_cap: usize,
    t_len: *mut usize,
) -> slab_status {
    guarded(|| match ur::urdec_params(universe, delta) {
        Ok(p) => {
            if !m.is_null() {
                *m = p.m as u32;
            }
            if !b.is_null() {
                *b = p.b as u32;
            }
            if !rounds.is_null() {
                *rounds = p.rounds;
            }
            if !t_len.is_null() {
                *t_len = p.t.len();
            }
            if !t_buf.is_null() {
                for (i, &t) in p.t.iter().take(t_cap).enumerate() {
                    *t_buf.add(i) = t as u32;
                }
            }
            SLAB_OK
        }
        Err(e) => fail(SLAB_BAD_CONFIG, e),
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    /// Every exported symbol, kept in one place so the header-sync test and
    /// the ABI tests read the same list.
    const EXPORTS: &[&str] = &[
        "slab_last_error",
        "slab_graph_parse",
        "slab_graph_from_edges",
        "slab_graph_free",
        "slab_graph_n",
        "slab_graph_edge_count",
        "slab_graph_connected",
        "slab_gen_er",
        "slab_gen_conn",
        "slab_run_one_round",
        "slab_sketch_dims",
        "slab_sketch_for_vertex",
        "slab_sketch_free",
        "slab_sketch_merge",
        "slab_sketch_extract",
        "slab_sketch_serialize",
        "slab_sketch_deserialize",
        "slab_urdec_schedule",
    ];

    #[test]
    fn header_declares_every_export_and_nothing_else() {
        let header = include_str!("../include/sketchlab.h");
        for name in EXPORTS {
            assert!(
                header.contains(&format!("{name}(")),
                "missing from header: {name}"
            );
        }
        // Anything that looks like a slab_ function in the header must be a
        // real export (typedef names don't take an open paren).
        for token in header.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
            if token.starts_with("slab_") && header.contains(&format!("{token}(")) {
                let known = EXPORTS.contains(&token)
                    || ["slab_status", "slab_report", "slab_graph", "slab_sketch"]
                        .contains(&token);
                assert!(known, "header declares unknown symbol {token}");
            }
        }
    }

    #[test]
    fn graph_round_trip_through_the_abi() {
        let text = CString::new("4 3\n1 2\n2 3\n3 4\n").unwrap();
        unsafe {
            let g = slab_graph_parse(text.as_ptr());
            assert!(!g.is_null());
            assert_eq!(slab_graph_n(g), 4);
            assert_eq!(slab_graph_edge_count(g), 3);
            assert_eq!(slab_graph_connected(g), 1);
            let mut report = slab_report { verdict: 0, truth: 0, avg_bits: 0.0, max_bits: 0 };
            let st = slab_run_one_round(g, 0, 7, 1 << 20, &mut report);
            assert_eq!(st, SLAB_OK);
            assert_eq!(report.verdict, 1);
            assert_eq!(report.truth, 1);
            assert!(report.avg_bits > 0.0);
            slab_graph_free(g);
        }
    }

    #[test]
    fn bad_parse_reports_through_last_error() {
        let text = CString::new("4 1\n1 9\n").unwrap();
        unsafe {
            let g = slab_graph_parse(text.as_ptr());
            assert!(g.is_null());
            let mut buf = [0i8; 256];
            let len = slab_last_error(buf.as_mut_ptr(), buf.len());
            assert!(len > 0);
            let msg = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
            assert!(msg.contains('9'), "unhelpful message: {msg}");
        }
    }

    #[test]
    fn sketches_merge_and_cancel_like_the_library() {
        // Sketch every vertex of a path and XOR them all: interior edges
        // appear twice and cancel, so the merged sketch must be empty.
        unsafe {
            let endpoints: Vec<u32> = vec![1, 2, 2, 3, 3, 4];
            let g = slab_graph_from_edges(4, endpoints.as_ptr(), 3);
            assert!(!g.is_null());
            let total = slab_sketch_for_vertex(g, 1, 99);
            assert!(!total.is_null());
            for v in 2..=4 {
                let s = slab_sketch_for_vertex(g, v, 99);
                assert!(!s.is_null());
                assert_eq!(slab_sketch_merge(total, s), SLAB_OK);
                slab_sketch_free(s);
            }
            let (mut u, mut v) = (0u32, 0u32);
            for rep in 0..4 {
                assert_eq!(slab_sketch_extract(total, rep, &mut u, &mut v), 0);
            }
            slab_sketch_free(total);
            slab_graph_free(g);
        }
    }

    #[test]
    fn serialize_then_deserialize_preserves_extraction() {
        unsafe {
            let endpoints: Vec<u32> = vec![1, 2];
            let g = slab_graph_from_edges(2, endpoints.as_ptr(), 1);
            let s = slab_sketch_for_vertex(g, 1, 5);
            let mut need = 0usize;
            assert_eq!(
                slab_sketch_serialize(s, std::ptr::null_mut(), 0, &mut need),
                SLAB_OK
            );
            assert!(need > 0);
            let mut buf = vec![0u8; need];
            assert_eq!(
                slab_sketch_serialize(s, buf.as_mut_ptr(), buf.len(), &mut need),
                SLAB_OK
            );
            let back = slab_sketch_deserialize(buf.as_ptr(), buf.len(), 5);
            assert!(!back.is_null());
            let (mut u, mut v) = (0u32, 0u32);
            assert_eq!(slab_sketch_extract(back, 0, &mut u, &mut v), 1);
            assert_eq!((u, v), (1, 2));
            slab_sketch_free(back);
            slab_sketch_free(s);
            slab_graph_free(g);
        }
    }

    #[test]
    fn cap_violation_maps_to_the_cap_status() {
        unsafe {
            let g = slab_gen_er(64, 3);
            let mut report = slab_report { verdict: 0, truth: 0, avg_bits: 0.0, max_bits: 0 };
            assert_eq!(
                slab_run_one_round(g, 0, 3, 100, &mut report),
                SLAB_CAP_EXCEEDED
            );
            slab_graph_free(g);
        }
    }

    #[test]
    fn schedule_math_matches_the_library() {
        unsafe {
            let (mut m, mut b, mut rounds, mut t_len) = (0u32, 0u32, 0u32, 0usize);
            let mut t = [0u32; 8];
            let st = slab_urdec_schedule(
                4096,
                2f64.powi(-256),
                &mut m,
                &mut b,
                &mut rounds,
                t.as_mut_ptr(),
                t.len(),
                &mut t_len,
            );
            assert_eq!(st, SLAB_OK);
            assert_eq!((m, b, rounds), (16, 256, 4));
            assert_eq!(&t[..t_len], &[0, 3, 6, 9]);
            // too-large delta: no rounds fit
            assert_eq!(
                slab_urdec_schedule(
                    4096,
                    0.5,
                    std::ptr::null_mut(),
                    std::ptr::null_mut(),
                    std::ptr::null_mut(),
                    std::ptr::null_mut(),
                    0,
                    std::ptr::null_mut(),
                ),
                SLAB_BAD_CONFIG
            );
        }
    }

    #[test]
    fn conn_generator_reports_stored_truth() {
        unsafe {
            for seed in 0..8 {
                let mut stored = -1i32;
                let g = slab_gen_conn(1024, seed, &mut stored);
                assert!(!g.is_null());
                assert_eq!(slab_graph_connected(g), stored);
                slab_graph_free(g);
            }
            // not a perfect square
            assert!(slab_gen_conn(1000, 0, std::ptr::null_mut()).is_null());
        }
    }
}
