//! Duplicate-free enumeration of connected vertex sets in an adjacency-list graph.
//!
//! Sets are grown from a start vertex by repeatedly adding a frontier vertex;
//! once a frontier vertex has been skipped in favour of a later one it is
//! excluded from that branch, so every connected set containing the start is
//! produced exactly once.

use std::ops::ControlFlow;

const FREE: u8 = 0;
const IN: u8 = 1;
const FRONTIER: u8 = 2;
const EXCLUDED: u8 = 3;

/// Visits every connected set that contains `start`, avoids `blocked`, and has
/// at most `max_size` vertices. The slice passed to `visit` lists the set in
/// insertion order (start first).
pub fn for_each_connected_set<V>(
    adj: &[Vec<usize>],
    start: usize,
    blocked: &[usize],
    max_size: usize,
    mut visit: V,
) -> ControlFlow<()>
where
    V: FnMut(&[usize]) -> ControlFlow<()>,
{
    if max_size == 0 || blocked.contains(&start) {
        return ControlFlow::Continue(());
    }
    let mut mark = vec![FREE; adj.len()];
    for &b in blocked {
        mark[b] = EXCLUDED;
    }
    mark[start] = IN;
    let mut frontier = Vec::new();
    for &w in &adj[start] {
        if mark[w] == FREE {
            mark[w] = FRONTIER;
            frontier.push(w);
        }
    }
    let mut set = vec![start];
    extend(adj, &mut set, &frontier, &mut mark, max_size, &mut visit)
}

fn extend<V>(
    adj: &[Vec<usize>],
    set: &mut Vec<usize>,
    frontier: &[usize],
    mark: &mut [u8],
    max_size: usize,
    visit: &mut V,
) -> ControlFlow<()>
where
    V: FnMut(&[usize]) -> ControlFlow<()>,
{
    visit(set)?;
    if set.len() == max_size {
        return ControlFlow::Continue(());
    }
    let mut skipped = Vec::with_capacity(frontier.len());
    let mut flow = ControlFlow::Continue(());
    for (i, &u) in frontier.iter().enumerate() {
        set.push(u);
        mark[u] = IN;
        let mut next: Vec<usize> = frontier[i + 1..].to_vec();
        let mut added = Vec::new();
        for &w in &adj[u] {
            if mark[w] == FREE {
                mark[w] = FRONTIER;
                next.push(w);
                added.push(w);
            }
        }
        flow = extend(adj, set, &next, mark, max_size, visit);
        for w in added {
            mark[w] = FREE;
        }
        set.pop();
        mark[u] = EXCLUDED;
        skipped.push(u);
        if flow.is_break() {
            break;
        }
    }
    for u in skipped {
        mark[u] = FRONTIER;
    }
    flow
}
