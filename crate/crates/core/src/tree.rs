//! Finite balls of the Cayley tree in the rooted convention: the root has
//! `d + 1` children, every other vertex has `d`.
//!
//! Vertices are numbered breadth-first with children in creation order. The
//! layer at depth `radius + 1` is stored as a boundary shell; it carries only
//! boundary-condition spins and no further children.

use std::collections::VecDeque;
use std::ops::{ControlFlow, Range};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::for_each_connected_set;

/// Upper limit on the number of sets a subtree enumeration may produce.
pub const SUBTREE_BUDGET: u64 = 10_000_000;

#[derive(Serialize, Deserialize)]
struct BallRepr {
    degree: usize,
    radius: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BallRepr", into = "BallRepr")]
pub struct TreeBall {
    degree: usize,
    radius: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    /// `layer_start[k]` is the first index at depth `k`; one extra entry marks the end.
    layer_start: Vec<usize>,
    interior_adj: Vec<Vec<usize>>,
}

impl TryFrom<BallRepr> for TreeBall {
    type Error = Error;
    fn try_from(r: BallRepr) -> Result<Self> {
        TreeBall::new(r.degree, r.radius)
    }
}

impl From<TreeBall> for BallRepr {
    fn from(b: TreeBall) -> Self {
        BallRepr { degree: b.degree, radius: b.radius }
    }
}

impl TreeBall {
    pub fn new(degree: usize, radius: usize) -> Result<Self> {
        if degree < 2 {
            return invalid(format!("tree degree must be at least 2, got {degree}"));
        }
        let mut mid = 1usize;
        let mut total = 1usize;
        for k in 1..=radius + 1 {
            mid = if k == 1 { degree + 1 } else { mid.checked_mul(degree).ok_or_else(too_big)? };
            total = total.checked_add(mid).ok_or_else(too_big)?;
        }
        if total > 50_000_000 {
            return Err(too_big());
        }

        let mut parent = vec![None];
        let mut depth = vec![0];
        let mut children: Vec<Vec<usize>> = vec![Vec::new()];
        let mut layer_start = vec![0, 1];
        for k in 1..=radius + 1 {
            let (lo, hi) = (layer_start[k - 1], layer_start[k]);
            for v in lo..hi {
                let n_children = if v == 0 { degree + 1 } else { degree };
                for _ in 0..n_children {
                    let w = parent.len();
                    parent.push(Some(v));
                    depth.push(k);
                    children.push(Vec::new());
                    children[v].push(w);
                }
            }
            layer_start.push(parent.len());
        }
        let mut ball = TreeBall { degree, radius, parent, children, depth, layer_start, interior_adj: Vec::new() };
        ball.interior_adj = ball.build_interior_adj();
        Ok(ball)
    }

    fn build_interior_adj(&self) -> Vec<Vec<usize>> {
        (0..self.n_interior())
            .map(|v| self.neighbors(v).filter(|&w| self.is_interior(w)).collect())
            .collect()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn n_interior(&self) -> usize {
        self.layer_start[self.radius + 1]
    }

    pub fn n_total(&self) -> usize {
        self.parent.len()
    }

    pub fn interior(&self) -> Range<usize> {
        0..self.n_interior()
    }

    pub fn shell(&self) -> Range<usize> {
        self.n_interior()..self.n_total()
    }

    pub fn is_interior(&self, v: usize) -> bool {
        v < self.n_interior()
    }

    /// Vertices at depth `k` (the shell when `k == radius + 1`).
    pub fn layer(&self, k: usize) -> Range<usize> {
        if k > self.radius + 1 {
            return 0..0;
        }
        self.layer_start[k]..self.layer_start[k + 1]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent[v].into_iter().chain(self.children[v].iter().copied())
    }

    /// Neighbours of an interior vertex that are themselves interior.
    pub fn interior_neighbors(&self, v: usize) -> &[usize] {
        &self.interior_adj[v]
    }

    pub(crate) fn interior_adjacency(&self) -> &[Vec<usize>] {
        &self.interior_adj
    }

    /// Every edge of the ball as `(parent, child)`; each has an interior endpoint.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.n_total()).map(move |v| (self.parent[v].expect("non-root vertex"), v))
    }

    /// Interior vertices whose depth lies in `(r, outer]`.
    pub fn annulus(&self, r: usize, outer: usize) -> Result<Vec<usize>> {
        if r >= outer {
            return invalid(format!("annulus needs r < R, got r={r}, R={outer}"));
        }
        if outer > self.radius {
            return invalid(format!("annulus outer radius {outer} exceeds ball radius {}", self.radius));
        }
        Ok((self.layer_start[r + 1]..self.layer_start[outer + 1]).collect())
    }

    fn ancestors_with_depth(&self, mut v: usize, target: usize) -> usize {
        while self.depth[v] > target {
            v = self.parent[v].expect("depth > 0 has a parent");
        }
        v
    }

    pub fn lowest_common_ancestor(&self, u: usize, v: usize) -> usize {
        let target = self.depth[u].min(self.depth[v]);
        let (mut a, mut b) = (self.ancestors_with_depth(u, target), self.ancestors_with_depth(v, target));
        while a != b {
            a = self.parent[a].expect("distinct vertices below root");
            b = self.parent[b].expect("distinct vertices below root");
        }
        a
    }

    pub fn distance(&self, u: usize, v: usize) -> usize {
        let l = self.lowest_common_ancestor(u, v);
        self.depth[u] + self.depth[v] - 2 * self.depth[l]
    }

    /// The unique path from `u` to `v`, both endpoints included.
    pub fn path(&self, u: usize, v: usize) -> Vec<usize> {
        let l = self.lowest_common_ancestor(u, v);
        let mut up = vec![u];
        let mut x = u;
        while x != l {
            x = self.parent[x].expect("below lca");
            up.push(x);
        }
        let mut down = Vec::new();
        let mut y = v;
        while y != l {
            down.push(y);
            y = self.parent[y].expect("below lca");
        }
        up.extend(down.into_iter().rev());
        up
    }

    /// Graph distances from `v` to every vertex of the ball (shell included).
    pub fn distances_from(&self, v: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_total()];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(x) = queue.pop_front() {
            for y in self.neighbors(x) {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// All connected sets of interior vertices with exactly `size` vertices containing `v`.
    /// Each set is returned sorted.
    pub fn enumerate_rooted_subtrees(&self, v: usize, size: usize) -> Result<Vec<Vec<usize>>> {
        if size == 0 {
            return invalid("subtree size must be at least 1");
        }
        if !self.is_interior(v) {
            return invalid(format!("vertex {v} is not interior"));
        }
        let mut out = Vec::new();
        let mut seen = 0u64;
        let flow = for_each_connected_set(&self.interior_adj, v, &[], size, |set| {
            seen += 1;
            if seen > SUBTREE_BUDGET {
                return ControlFlow::Break(());
            }
            if set.len() == size {
                let mut s = set.to_vec();
                s.sort_unstable();
                out.push(s);
            }
            ControlFlow::Continue(())
        });
        if flow.is_break() {
            return Err(Error::BudgetExceeded { what: format!("subtrees of size {size}"), budget: SUBTREE_BUDGET });
        }
        Ok(out)
    }

    /// The entropy bound `(d+1)^(2(l-1))` on the number of rooted subtrees with `l` vertices.
    pub fn subtree_entropy_bound(degree: usize, size: usize) -> f64 {
        ((degree + 1) as f64).powi(2 * (size as i32 - 1))
    }
}

fn too_big() -> Error {
    Error::InvalidParameter("tree ball too large to materialise".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_counts() {
        let b = TreeBall::new(2, 1).unwrap();
        assert_eq!(b.n_interior(), 4);
        assert_eq!(b.shell().len(), 6);
        let b = TreeBall::new(4, 2).unwrap();
        assert_eq!(b.n_interior(), 26);
        let b = TreeBall::new(2, 0).unwrap();
        assert_eq!(b.n_interior(), 1);
        assert_eq!(b.shell().len(), 3);
    }

    #[test]
    fn rejects_small_degree() {
        assert!(TreeBall::new(1, 3).is_err());
        assert!(TreeBall::new(0, 0).is_err());
    }

    #[test]
    fn structure_invariants() {
        for (d, r) in [(2, 3), (3, 2), (5, 1)] {
            let b = TreeBall::new(d, r).unwrap();
            assert_eq!(b.children(0).len(), d + 1);
            for v in b.interior() {
                if v != 0 {
                    assert_eq!(b.children(v).len(), d);
                }
                assert_eq!(b.neighbors(v).count(), d + 1);
                for &w in b.children(v) {
                    assert_eq!(b.parent(w), Some(v));
                    assert_eq!(b.depth(w), b.depth(v) + 1);
                }
            }
            for k in 1..=r + 1 {
                assert_eq!(b.layer(k).len(), (d + 1) * d.pow(k as u32 - 1));
            }
            assert_eq!(b.edges().count(), b.n_total() - 1);
        }
    }

    #[test]
    fn deterministic_indexing() {
        assert_eq!(TreeBall::new(3, 3).unwrap(), TreeBall::new(3, 3).unwrap());
        // inner layers are indexed identically across radii
        let small = TreeBall::new(3, 2).unwrap();
        let big = TreeBall::new(3, 4).unwrap();
        for v in 0..small.n_total() {
            assert_eq!(small.parent(v), big.parent(v));
        }
    }

    #[test]
    fn annuli() {
        let b = TreeBall::new(2, 3).unwrap();
        assert_eq!(b.annulus(1, 2).unwrap().len(), 6);
        assert_eq!(b.annulus(0, 3).unwrap().len(), b.n_interior() - 1);
        assert!(b.annulus(2, 2).is_err());
        let b = TreeBall::new(4, 3).unwrap();
        assert_eq!(b.annulus(1, 3).unwrap().len(), 100);
    }

    #[test]
    fn paths_and_distances() {
        let b = TreeBall::new(2, 3).unwrap();
        let dist = b.distances_from(5);
        for u in 0..b.n_total() {
            assert_eq!(b.distance(5, u), dist[u]);
            let p = b.path(5, u);
            assert_eq!(p.len(), dist[u] + 1);
            assert_eq!(p[0], 5);
            assert_eq!(*p.last().unwrap(), u);
            for w in p.windows(2) {
                assert_eq!(b.distance(w[0], w[1]), 1);
            }
        }
    }

    #[test]
    fn small_subtree_counts() {
        let b = TreeBall::new(3, 2).unwrap();
        assert_eq!(b.enumerate_rooted_subtrees(0, 1).unwrap(), vec![vec![0]]);
        assert_eq!(b.enumerate_rooted_subtrees(0, 2).unwrap().len(), 4);
        let b = TreeBall::new(2, 2).unwrap();
        let sets = b.enumerate_rooted_subtrees(0, 3).unwrap();
        assert_eq!(sets.len(), 9);
        assert!(sets.len() as f64 <= TreeBall::subtree_entropy_bound(2, 3));
    }
}
