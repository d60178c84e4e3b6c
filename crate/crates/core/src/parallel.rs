//! Grouping of variables whose rows are parallel.
//!
//! A pair with score at most `2 * delta` links its two variables; groups are
//! the connected components of that graph (union-find), so the output is
//! always a partition of the linked variables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::ScoreTable;

#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Disjoint groups of variable indices.
///
/// Members are sorted within each group and groups are ordered by their
/// smallest member; `universe` is the sorted union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub universe: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    /// Canonicalizes and validates the given groups.
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut groups: Vec<Vec<usize>> = groups
            .into_iter()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::EmptyGroup(k));
            }
        }
        groups.sort_by_key(|g| g[0]);
        let mut universe: Vec<usize> = groups.iter().flatten().copied().collect();
        universe.sort_unstable();
        if universe.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("groups must be pairwise disjoint".into()));
        }
        Ok(Self { universe, groups })
    }

    pub fn empty() -> Self {
        Self { universe: Vec::new(), groups: Vec::new() }
    }

    pub fn g(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Group id of variable `i`, if covered.
    pub fn group_of(&self, i: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.binary_search(&i).is_ok())
    }

    /// Membership label per variable in `0..p`, `None` outside the universe.
    pub fn labels(&self, p: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; p];
        for (k, g) in self.groups.iter().enumerate() {
            for &i in g {
                if i < p {
                    out[i] = Some(k);
                }
            }
        }
        out
    }

    /// Relabels indices through `map` (old index -> new index).
    pub fn remap(&self, map: &[usize]) -> Result<Self> {
        Self::new(self.groups.iter().map(|g| g.iter().map(|&i| map[i]).collect()).collect())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data serializes")
    }
}

/// Connected components of `{(i, j) : S(i, j) <= 2 delta}` with at least two members.
pub fn find_parallel(scores: &ScoreTable, delta: f64) -> GroupPartition {
    let p = scores.p();
    let threshold = 2.0 * delta;
    let mut uf = UnionFind::new(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if scores.get(i, j) <= threshold {
                uf.union(i, j);
            }
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); p];
    for i in 0..p {
        let r = uf.find(i);
        by_root[r].push(i);
    }
    let groups: Vec<Vec<usize>> = by_root.into_iter().filter(|g| g.len() >= 2).collect();
    GroupPartition::new(groups).expect("union-find components are disjoint and nonempty")
}

/// `|H(delta)|` for each threshold; nondecreasing when `deltas` ascends.
pub fn partition_sizes_monotone_check(scores: &ScoreTable, deltas: &[f64]) -> Vec<usize> {
    deltas.iter().map(|&d| find_parallel(scores, d).universe.len()).collect()
}
