//! Session graph: a click sequence as a typed directed graph, plus shortest
//! typed paths between node pairs.
//!
//! Construction rules for a session `[v_1, ..., v_l]`:
//! * one node per distinct item, numbered in first-occurrence order;
//! * each adjacency of distinct items `(a, b)` adds a forward edge `a→b`
//!   (next-click) and a backward edge `b→a` (previous-click);
//! * when both orders `(a, b)` and `(b, a)` occur adjacently somewhere in the
//!   session, the pair is upgraded to a mutual edge in both directions;
//! * every node carries one self-loop;
//! * duplicate adjacencies collapse: at most one typed edge per ordered pair.
//!
//! Shortest paths run breadth-first over the directed non-self edges from the
//! lower-numbered node of each pair. Neighbors expand in ascending node-index
//! order, and among equal-length paths the lexicographically smallest
//! node-index sequence wins, which makes the result deterministic.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Edge labels of the session graph. The integer codes are stable and index
/// the edge-type embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    /// `a→b` because `b` was clicked right after `a` (and never the reverse).
    Next = 0,
    /// `b→a` counterpart of a next-click edge.
    Prev = 1,
    /// Both click orders occur adjacently; both directions carry this label.
    Mutual = 2,
    /// Self-loop, one per node.
    SelfLoop = 3,
}

impl EdgeType {
    pub const COUNT: usize = 4;

    pub fn code(self) -> usize {
        self as usize
    }
}

/// Typed directed graph of one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionGraph {
    /// Item id per node, in first-occurrence order.
    nodes: Vec<usize>,
    /// Node index of every session position; maps the graph back to the
    /// original sequence.
    position_to_node: Vec<usize>,
    /// Non-self out-edges per node, sorted by destination.
    out: Vec<Vec<(usize, EdgeType)>>,
}

impl SessionGraph {
    /// Number of distinct items (nodes).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Item ids in node order.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Session length.
    pub fn session_len(&self) -> usize {
        self.position_to_node.len()
    }

    /// Node index of each original session position, in order. Gathering
    /// node vectors by this mapping reverts the graph to the sequence.
    pub fn position_to_node(&self) -> &[usize] {
        &self.position_to_node
    }

    /// Type of the directed edge `src→dst`, if present (self-loops included).
    pub fn edge_type(&self, src: usize, dst: usize) -> Option<EdgeType> {
        if src == dst {
            return (src < self.nodes.len()).then_some(EdgeType::SelfLoop);
        }
        self.out
            .get(src)?
            .binary_search_by_key(&dst, |e| e.0)
            .ok()
            .map(|k| self.out[src][k].1)
    }

    /// Non-self out-edges of `node`, ascending by destination.
    pub fn neighbors(&self, node: usize) -> &[(usize, EdgeType)] {
        &self.out[node]
    }

    /// Every typed edge including self-loops, sorted by (src, dst).
    pub fn typed_edges(&self) -> Vec<(usize, usize, EdgeType)> {
        let mut edges = Vec::new();
        for (src, outs) in self.out.iter().enumerate() {
            edges.push((src, src, EdgeType::SelfLoop));
            for &(dst, ty) in outs {
                edges.push((src, dst, ty));
            }
        }
        edges.sort_unstable_by_key(|&(s, d, _)| (s, d));
        edges
    }
}

/// Build the typed graph of a session of item ids.
pub fn build_graph(session: &[usize]) -> Result<SessionGraph> {
    if session.is_empty() {
        return Err(Error::Contract("a session must contain at least one item".into()));
    }
    let mut nodes = Vec::new();
    let mut node_of = HashMap::new();
    let mut position_to_node = Vec::with_capacity(session.len());
    for &item in session {
        let idx = *node_of.entry(item).or_insert_with(|| {
            nodes.push(item);
            nodes.len() - 1
        });
        position_to_node.push(idx);
    }

    // Distinct ordered adjacencies, deduplicated.
    let mut adjacent = std::collections::BTreeSet::new();
    for w in position_to_node.windows(2) {
        if w[0] != w[1] {
            adjacent.insert((w[0], w[1]));
        }
    }

    let mut out: Vec<Vec<(usize, EdgeType)>> = vec![Vec::new(); nodes.len()];
    for &(a, b) in &adjacent {
        if adjacent.contains(&(b, a)) {
            // The reverse pass adds (b, a, Mutual).
            out[a].push((b, EdgeType::Mutual));
        } else {
            out[a].push((b, EdgeType::Next));
            out[b].push((a, EdgeType::Prev));
        }
    }
    for edges in &mut out {
        edges.sort_unstable_by_key(|e| e.0);
    }

    Ok(SessionGraph { nodes, position_to_node, out })
}

/// Shortest typed path of one unordered node pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationPath {
    /// Canonical source: the lower node index of the pair.
    pub source: usize,
    pub target: usize,
    /// True graph distance in edges (self-pairs use the self-loop, length 1).
    pub length: usize,
    /// Edge labels along the path. When the path is longer than the cap this
    /// keeps only the last `cap` labels, the ones nearest the target.
    pub edge_types: Vec<EdgeType>,
}

/// Shortest typed paths for every unordered node pair, diagonal included.
#[derive(Debug, Clone)]
pub struct RelationPaths {
    m: usize,
    table: Vec<RelationPath>,
}

impl RelationPaths {
    fn tri_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.m);
        i * self.m - i * (i + 1) / 2 + j
    }

    /// Path of the unordered pair `{i, j}` (argument order is irrelevant).
    pub fn get(&self, i: usize, j: usize) -> &RelationPath {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        &self.table[self.tri_index(i, j)]
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn pair_count(&self) -> usize {
        self.table.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationPath> {
        self.table.iter()
    }
}

/// Compute shortest typed paths between all node pairs of `graph`.
///
/// `cap` bounds the number of edge labels kept per path (the suffix nearest
/// the target survives); the reported `length` is always the full distance.
pub fn shortest_paths(graph: &SessionGraph, cap: usize) -> Result<RelationPaths> {
    if cap == 0 {
        return Err(Error::Contract("path truncation cap must be at least 1".into()));
    }
    let m = graph.node_count();
    let mut table = Vec::with_capacity(m * (m + 1) / 2);
    for source in 0..m {
        let (dist, parent) = bfs(graph, source);
        for target in source..m {
            if source == target {
                table.push(RelationPath {
                    source,
                    target,
                    length: 1,
                    edge_types: vec![EdgeType::SelfLoop],
                });
                continue;
            }
            let Some(length) = dist[target] else {
                return Err(Error::Internal(format!(
                    "node {target} unreachable from node {source}; session graphs must be \
                     strongly connected"
                )));
            };
            // Walk parents back to the source to recover the node sequence.
            let mut rev_nodes = vec![target];
            let mut cur = target;
            while cur != source {
                cur = parent[cur];
                rev_nodes.push(cur);
            }
            let mut edge_types = Vec::with_capacity(length);
            for k in (1..rev_nodes.len()).rev() {
                let (u, v) = (rev_nodes[k], rev_nodes[k - 1]);
                let ty = graph.edge_type(u, v).ok_or_else(|| {
                    Error::Internal(format!("missing edge {u}→{v} on a reconstructed path"))
                })?;
                edge_types.push(ty);
            }
            debug_assert_eq!(edge_types.len(), length);
            if edge_types.len() > cap {
                edge_types.drain(..edge_types.len() - cap);
            }
            table.push(RelationPath { source, target, length, edge_types });
        }
    }
    Ok(RelationPaths { m, table })
}

/// Breadth-first distances and parents from `source` over non-self edges.
/// Neighbors expand in ascending node order; the first visit of a node fixes
/// its parent, which yields the lexicographically smallest node sequence
/// among equal-length paths.
fn bfs(graph: &SessionGraph, source: usize) -> (Vec<Option<usize>>, Vec<usize>) {
    let m = graph.node_count();
    let mut dist = vec![None; m];
    let mut parent = vec![usize::MAX; m];
    let mut queue = std::collections::VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have distances");
        for &(v, _) in graph.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    (dist, parent)
}
