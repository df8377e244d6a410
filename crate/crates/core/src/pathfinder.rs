//! Least-impedance cranking paths.
//!
//! Edges carry `|1 / Y_ij|`, the magnitude of the series impedance, for
//! branches. Breakers and zero-impedance links get [`SWITCH_WEIGHT`] so that
//! switching depth only breaks ties between electrically equal routes. The
//! search starts at the device to pick up and stops at the nearest energized
//! node; equal-cost alternatives resolve to the lexicographically smallest
//! node-id sequence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::model::{Link, Network};

/// Weight of breakers and zero-impedance links.
pub const SWITCH_WEIGHT: f64 = 1e-6;
const TIE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("no available path from `{0}` to the energized area")]
    NoPath(String),
    #[error("no energized node to connect to")]
    NothingEnergized,
    #[error("path element `{0}` is not available")]
    Unavailable(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub link: Link,
    pub weight: f64,
}

/// Weighted switch-level graph over available elements.
#[derive(Clone, Debug)]
pub struct CrankingGraph {
    adj: Vec<Vec<Edge>>,
    /// Position of each node in ascending id order.
    rank: Vec<u32>,
    names: Vec<String>,
}

impl CrankingGraph {
    /// Available breakers and branches whose ends both satisfy `allow`.
    pub fn new(network: &Network, allow: impl Fn(usize) -> bool) -> Self {
        Self::build(network, allow, false)
    }

    /// Breakers and zero-impedance links only: moves inside substations.
    pub fn switches_only(network: &Network, allow: impl Fn(usize) -> bool) -> Self {
        Self::build(network, allow, true)
    }

    fn build(network: &Network, allow: impl Fn(usize) -> bool, switches_only: bool) -> Self {
        let n = network.nodes.len();
        let mut edges = Vec::new();
        for link in network.links() {
            if !network.link_available(link) {
                continue;
            }
            let (a, b) = network.link_ends(link);
            if !allow(a) || !allow(b) {
                continue;
            }
            let weight = match link {
                Link::Breaker(_) => SWITCH_WEIGHT,
                Link::Branch(i) if network.branches[i].zero_impedance => SWITCH_WEIGHT,
                Link::Branch(_) if switches_only => continue,
                Link::Branch(i) => network.branches[i].impedance_magnitude(),
            };
            edges.push((a, b, link, weight));
        }
        let names: Vec<String> = network.nodes.iter().map(|n| n.id.clone()).collect();
        Self::from_edges(names, n, edges)
    }

    /// Graph from raw `(a, b, link, weight)` edges; `names` fix the tie order.
    pub fn from_edges(names: Vec<String>, n: usize, edges: Vec<(usize, usize, Link, f64)>) -> Self {
        assert_eq!(names.len(), n);
        let mut adj = vec![Vec::new(); n];
        for (a, b, link, weight) in edges {
            debug_assert!(weight >= 0.0);
            adj[a].push(Edge {
                to: b,
                link,
                weight,
            });
            adj[b].push(Edge {
                to: a,
                link,
                weight,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| names[a].cmp(&names[b]));
        let mut rank = vec![0u32; n];
        for (r, &v) in order.iter().enumerate() {
            rank[v] = r as u32;
        }
        for list in &mut adj {
            list.sort_by(|x, y| {
                x.to.cmp(&y.to)
                    .then(x.weight.total_cmp(&y.weight))
                    .then(x.link.cmp(&y.link))
            });
        }
        CrankingGraph { adj, rank, names }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edges(&self, node: usize) -> &[Edge] {
        &self.adj[node]
    }
}

/// Energized-first node sequence ending at the target.
#[derive(Clone, Debug, PartialEq)]
pub struct CrankingPath {
    pub nodes: Vec<usize>,
    /// `links[k]` joins `nodes[k]` and `nodes[k + 1]`.
    pub links: Vec<Link>,
    pub total_cost: f64,
}

impl CrankingPath {
    pub fn source(&self) -> usize {
        self.nodes[0]
    }

    pub fn target(&self) -> usize {
        *self.nodes.last().unwrap()
    }
}

#[derive(PartialEq)]
struct Queued {
    cost: f64,
    rank: u32,
    node: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, rank)
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path from `target` to the nearest node flagged in `energized`.
pub fn cranking_path(
    graph: &CrankingGraph,
    target: usize,
    energized: &[bool],
) -> Result<CrankingPath, PathError> {
    if !energized.iter().any(|&e| e) {
        return Err(PathError::NothingEnergized);
    }
    if energized[target] {
        return Ok(CrankingPath {
            nodes: vec![target],
            links: vec![],
            total_cost: 0.0,
        });
    }
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n];
    // rank sequence from the target, compared lexicographically on ties
    let mut seq: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut pred: Vec<Option<(usize, Link)>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[target] = 0.0;
    seq[target] = vec![graph.rank[target]];
    heap.push(Queued {
        cost: 0.0,
        rank: graph.rank[target],
        node: target,
    });
    let mut best: Option<usize> = None;
    while let Some(Queued { cost, node, .. }) = heap.pop() {
        if done[node] || cost > dist[node] {
            continue;
        }
        if let Some(b) = best {
            if cost > dist[b] + TIE {
                break;
            }
        }
        done[node] = true;
        if energized[node] {
            let better = match best {
                None => true,
                Some(b) => dist[node] < dist[b] - TIE || seq[node] < seq[b],
            };
            if better {
                best = Some(node);
            }
            // energized nodes end a path; do not route through them
            continue;
        }
        for e in graph.edges(node) {
            if done[e.to] {
                continue;
            }
            let c = cost + e.weight;
            let replace = if c < dist[e.to] - TIE {
                true
            } else if (c - dist[e.to]).abs() <= TIE {
                let mut cand = seq[node].clone();
                cand.push(graph.rank[e.to]);
                cand < seq[e.to]
            } else {
                false
            };
            if replace {
                dist[e.to] = c;
                let mut s = seq[node].clone();
                s.push(graph.rank[e.to]);
                seq[e.to] = s;
                pred[e.to] = Some((node, e.link));
                heap.push(Queued {
                    cost: c,
                    rank: graph.rank[e.to],
                    node: e.to,
                });
            }
        }
    }
    let Some(end) = best else {
        return Err(PathError::NoPath(graph.names[target].clone()));
    };
    let mut nodes = vec![end];
    let mut links = Vec::new();
    let mut cur = end;
    while let Some((p, link)) = pred[cur] {
        links.push(link);
        nodes.push(p);
        cur = p;
    }
    debug_assert_eq!(cur, target);
    Ok(CrankingPath {
        nodes,
        links,
        total_cost: dist[end],
    })
}

/// Cost of the cranking path, or infinity when unreachable.
pub fn electrical_distance(graph: &CrankingGraph, node: usize, energized: &[bool]) -> f64 {
    cranking_path(graph, node, energized).map_or(f64::INFINITY, |p| p.total_cost)
}

/// Elements of `path` still open, energized end first.
pub fn expand_to_breakers(network: &Network, path: &CrankingPath) -> Result<Vec<Link>, PathError> {
    let mut out = Vec::new();
    for &link in &path.links {
        if !network.link_available(link) {
            return Err(PathError::Unavailable(network.link_id(link).to_string()));
        }
        if !network.link_closed(link) {
            out.push(link);
        }
    }
    Ok(out)
}
