//! Union-find with path halving and union by size.
//!
//! Shared by the referee (component tracking), the ground-truth oracles and
//! the instance generators.  Vertices are 1-based to match the graph file
//! format; index 0 is simply never used.

#[derive(Clone, Debug)]
pub struct Dsu {
    parent: Vec<u32>,
    size: Vec<u32>,
    components: u32,
}

impl Dsu {
    /// A DSU over vertices 1..=n, each initially its own component.
    pub fn new(n: u32) -> Self {
        Dsu {
            parent: (0..=n).collect(),
            size: vec![1; n as usize + 1],
            components: n,
        }
    }

    pub fn find(&mut self, mut v: u32) -> u32 {
        while self.parent[v as usize] != v {
            let gp = self.parent[self.parent[v as usize] as usize];
            self.parent[v as usize] = gp;
            v = gp;
        }
        v
    }

    /// Merge the components of a and b; returns false if already joined.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.components -= 1;
        true
    }

    pub fn same(&mut self, a: u32, b: u32) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn components(&self) -> u32 {
        self.components
    }

    /// Canonical partition label per vertex: the smallest vertex id in its
    /// component.  Two partitions are equal iff these vectors are equal.
    pub fn partition_labels(&mut self) -> Vec<u32> {
        let n = self.parent.len() - 1;
        let mut min_of_root = vec![u32::MAX; n + 1];
        for v in 1..=n as u32 {
            let r = self.find(v) as usize;
            if v < min_of_root[r] {
                min_of_root[r] = v;
            }
        }
        (1..=n as u32)
            .map(|v| {
                let r = self.find(v) as usize;
                min_of_root[r]
            })
            .collect::<Vec<_>>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_tracks_component_count() {
        let mut d = Dsu::new(5);
        assert_eq!(d.components(), 5);
        assert!(d.union(1, 2));
        assert!(d.union(2, 3));
        assert!(!d.union(1, 3));
        assert_eq!(d.components(), 3);
        assert!(d.same(1, 3));
        assert!(!d.same(1, 4));
    }

    #[test]
    fn partition_labels_are_min_ids() {
        let mut d = Dsu::new(6);
        d.union(4, 6);
        d.union(2, 1);
        assert_eq!(d.partition_labels(), vec![1, 1, 3, 4, 5, 4]);
    }
}
