//! Spanning-forest decoding from merged vertex sketches.
//!
//! The referee plays sequential Boruvka rounds against the sketch algebra:
//! in round j every current component tries to extract one incident cut
//! edge from repetition j of its merged sketch.  Using a fresh repetition
//! per round matters — once sketches from an earlier round have been
//! conditioned on, their cells are no longer uniform, so each round spends
//! one untouched repetition.

use crate::dsu::Dsu;
use crate::sketch::{Extraction, SketchError, VertexSketch};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefereeError {
    #[error("no sketches given")]
    Empty,
    #[error("sketch count {got} does not match config n = {want}")]
    CountMismatch { got: usize, want: u32 },
    #[error("sketches carry differing configs")]
    MixedConfigs,
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

/// Merge state over the course of decoding: a union-find over vertices, the
/// merged sketch per component root, and the forest edges accepted so far.
pub struct ComponentState {
    pub dsu: Dsu,
    /// Keyed by component root.  BTreeMap so rounds visit components in
    /// ascending root order, which keeps decoding deterministic.
    pub sketches: BTreeMap<u32, VertexSketch>,
    pub forest: Vec<(u32, u32)>,
}

impl ComponentState {
    /// One component per vertex; sketches[i] belongs to vertex i+1.
    pub fn new(sketches: &[VertexSketch]) -> Result<Self, RefereeError> {
        let first = sketches.first().ok_or(RefereeError::Empty)?;
        let n = first.config().n;
        if sketches.len() != n as usize {
            return Err(RefereeError::CountMismatch { got: sketches.len(), want: n });
        }
        if sketches.iter().any(|s| s.config() != first.config()) {
            return Err(RefereeError::MixedConfigs);
        }
        let map = sketches
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32 + 1, s.clone()))
            .collect();
        Ok(ComponentState { dsu: Dsu::new(n), sketches: map, forest: Vec::new() })
    }

    /// Try to apply an extracted edge.  Returns true if it merged two
    /// components; edges internal to a component are stale and skipped.
    fn apply_edge(&mut self, u: u32, v: u32) -> Result<bool, RefereeError> {
        let (ru, rv) = (self.dsu.find(u), self.dsu.find(v));
        if ru == rv {
            return Ok(false);
        }
        let a = self.sketches.remove(&ru).expect("root has a sketch");
        let mut b = self.sketches.remove(&rv).expect("root has a sketch");
        b.merge_in(&a)?;
        self.dsu.union(ru, rv);
        let new_root = self.dsu.find(ru);
        self.sketches.insert(new_root, b);
        self.forest.push((u, v));
        Ok(true)
    }
}

#[derive(Clone, Debug)]
pub struct DecodeOutcome {
    /// Forest edges in acceptance order; a spanning forest of the accepted
    /// merges (a subset of G's edges up to fingerprint false positives).
    pub forest: Vec<(u32, u32)>,
    /// Per-vertex component label: smallest vertex id in the decoded
    /// component.
    pub partition: Vec<u32>,
    pub components: u32,
    pub rounds_used: u16,
}

impl DecodeOutcome {
    pub fn connected(&self) -> bool {
        self.components == 1
    }
}

/// Run the full decode: one Boruvka round per sketch repetition, stopping
/// early once a single component remains.
pub fn decode_spanning_forest(sketches: &[VertexSketch]) -> Result<DecodeOutcome, RefereeError> {
    let mut state = ComponentState::new(sketches)?;
    let reps = sketches[0].config().reps;
    let mut rounds_used = 0;
    for round in 0..reps {
        if state.sketches.len() == 1 {
            break;
        }
        rounds_used = round + 1;
        let roots: Vec<u32> = state.sketches.keys().copied().collect();
        let before = state.sketches.len();
        for root in roots {
            // A component merged earlier this round may have retired this
            // root; its sketch already lives under the surviving root.
            if state.dsu.find(root) != root {
                continue;
            }
            let sketch = state.sketches.get(&root).expect("live root");
            match sketch.try_extract(round)? {
                Extraction::Edge(u, v) => {
                    state.apply_edge(u, v)?;
                }
                Extraction::Empty | Extraction::Ambiguous => {}
            }
        }
        debug_assert!(state.sketches.len() <= before, "components must not split");
    }
    let components = state.sketches.len() as u32;
    debug_assert_eq!(components, state.dsu.components());
    Ok(DecodeOutcome {
        forest: state.forest,
        partition: state.dsu.partition_labels(),
        components,
        rounds_used,
    })
}

/// Connectivity verdict alone.
pub fn decide_connected(sketches: &[VertexSketch]) -> Result<bool, RefereeError> {
    Ok(decode_spanning_forest(sketches)?.connected())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::SketchConfig;

    fn sketch_all(adj: &[Vec<u32>], seed: u64) -> Vec<VertexSketch> {
        let n = adj.len() as u32;
        let c = SketchConfig::for_graph(n, seed);
        adj.iter()
            .enumerate()
            .map(|(i, nb)| VertexSketch::for_vertex(i as u32 + 1, nb, &c).unwrap())
            .collect()
    }

    fn adj_from_edges(n: u32, edges: &[(u32, u32)]) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); n as usize];
        for &(u, v) in edges {
            adj[u as usize - 1].push(v);
            adj[v as usize - 1].push(u);
        }
        adj
    }

    #[test]
    fn decodes_a_path() {
        let adj = adj_from_edges(8, &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8)]);
        let out = decode_spanning_forest(&sketch_all(&adj, 11)).unwrap();
        assert!(out.connected());
        assert_eq!(out.forest.len(), 7);
        assert_eq!(out.partition, vec![1; 8]);
    }

    #[test]
    fn keeps_disconnected_parts_apart() {
        // Two triangles, no bridge.  Over-merging would need a fingerprint
        // collision, which a fixed seed either hits or it does not; this
        // one does not.
        let adj = adj_from_edges(6, &[(1, 2), (2, 3), (1, 3), (4, 5), (5, 6), (4, 6)]);
        let out = decode_spanning_forest(&sketch_all(&adj, 17)).unwrap();
        assert_eq!(out.components, 2);
        assert!(!out.connected());
        assert_eq!(out.partition, vec![1, 1, 1, 4, 4, 4]);
    }

    #[test]
    fn isolated_vertices_stay_isolated() {
        let adj = adj_from_edges(4, &[(2, 3)]);
        let out = decode_spanning_forest(&sketch_all(&adj, 3)).unwrap();
        assert_eq!(out.components, 3);
        assert_eq!(out.partition, vec![1, 2, 2, 4]);
    }

    #[test]
    fn forest_edges_are_graph_edges() {
        let edges = [(1, 2), (2, 3), (3, 4), (1, 4), (4, 5)];
        let adj = adj_from_edges(5, &edges);
        let out = decode_spanning_forest(&sketch_all(&adj, 23)).unwrap();
        assert!(out.connected());
        for (u, v) in out.forest {
            let e = if u < v { (u, v) } else { (v, u) };
            assert!(edges.contains(&e), "forest edge {e:?} not in graph");
        }
    }

    #[test]
    fn rejects_count_mismatch() {
        let adj = adj_from_edges(4, &[(1, 2)]);
        let mut sk = sketch_all(&adj, 5);
        sk.pop();
        assert!(matches!(
            decode_spanning_forest(&sk),
            Err(RefereeError::CountMismatch { .. })
        ));
    }

    #[test]
    fn rejects_mixed_seeds() {
        let adj = adj_from_edges(3, &[(1, 2), (2, 3)]);
        let mut sk = sketch_all(&adj, 5);
        sk[2] = sketch_all(&adj, 6)[2].clone();
        assert!(matches!(decode_spanning_forest(&sk), Err(RefereeError::MixedConfigs)));
    }
}
