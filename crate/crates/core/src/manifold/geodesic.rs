use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::graph::NeighborGraph;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
struct State {
    dist: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(graph: &NeighborGraph, sources: &[usize]) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.n()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(State { dist: 0.0, node: s });
    }
    while let Some(State { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in graph.edges(node) {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(State { dist: nd, node: next });
            }
        }
    }
    dist
}

/// Shortest-path distances from `src` to every node.
pub fn geodesic_from(graph: &NeighborGraph, src: usize) -> Result<Vec<f64>> {
    if src >= graph.n() {
        return Err(Error::Config(format!("source index {src} out of range for {} nodes", graph.n())));
    }
    Ok(dijkstra(graph, &[src]))
}

/// Distance from every node to the nearest member of `sources`.
pub fn geodesic_to_set(graph: &NeighborGraph, sources: &[usize]) -> Result<Vec<f64>> {
    if sources.is_empty() {
        return Err(Error::Config("geodesic_to_set needs at least one source".into()));
    }
    if let Some(&bad) = sources.iter().find(|&&s| s >= graph.n()) {
        return Err(Error::Config(format!("source index {bad} out of range for {} nodes", graph.n())));
    }
    Ok(dijkstra(graph, sources))
}
