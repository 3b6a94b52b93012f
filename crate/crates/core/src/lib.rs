//! sketchlab: linear graph sketches, a one-round broadcast connectivity
//! protocol, and the machinery for probing how small such messages can be.
//!
//! The crate has three layers:
//!
//! * `sketch` + `referee`: XOR-mergeable vertex sketches and the
//!   spanning-forest decoder that consumes them.
//! * `sim`: the one-round broadcast model — every vertex speaks once from
//!   its local neighborhood, a referee decides connectivity.
//! * `ur`, `hard`, `lab`: universal-relation protocols, the layered hard
//!   instance distributions built from them, and a brute-force laboratory
//!   for the counting arguments behind the lower-bound construction.

pub mod dsu;
pub mod hashing;
pub mod hard;
pub mod lab;
pub mod referee;
pub mod sim;
pub mod sketch;
pub mod ur;
