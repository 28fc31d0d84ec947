//! Room graph with travel times, plus the timing constants used to estimate
//! action durations.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::atom::{Millis, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub sensing_tick_ms: Millis,
    pub heartbeat_ms: Millis,
    pub observe_ms: Millis,
    pub interaction_ms: Millis,
    /// Nominal weight of backend-internal steps (lease bookkeeping).
    pub bookkeeping_ms: Millis,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            sensing_tick_ms: 1_000,
            heartbeat_ms: 2_000,
            observe_ms: 5_000,
            interaction_ms: 10_000,
            bookkeeping_ms: 1_000,
        }
    }
}

/// Optional drawing hint for the console map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SiteMap {
    /// Undirected adjacency: room -> neighbour -> travel time.
    adjacency: BTreeMap<Symbol, BTreeMap<Symbol, Millis>>,
    layout: BTreeMap<Symbol, Layout>,
    pub timing: Timing,
}

impl SiteMap {
    pub fn new(timing: Timing) -> Self {
        SiteMap {
            timing,
            ..Default::default()
        }
    }

    pub fn add_room(&mut self, room: &str) {
        self.adjacency.entry(room.to_string()).or_default();
    }

    pub fn add_edge(&mut self, a: &str, b: &str, travel_ms: Millis) {
        self.adjacency
            .entry(a.to_string())
            .or_default()
            .insert(b.to_string(), travel_ms);
        self.adjacency
            .entry(b.to_string())
            .or_default()
            .insert(a.to_string(), travel_ms);
    }

    pub fn set_layout(&mut self, room: &str, layout: Layout) {
        self.layout.insert(room.to_string(), layout);
    }

    pub fn layout(&self, room: &str) -> Option<Layout> {
        self.layout.get(room).copied()
    }

    pub fn rooms(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn has_room(&self, room: &str) -> bool {
        self.adjacency.contains_key(room)
    }

    pub fn neighbours(&self, room: &str) -> impl Iterator<Item = (&str, Millis)> {
        self.adjacency
            .get(room)
            .into_iter()
            .flat_map(|n| n.iter().map(|(r, t)| (r.as_str(), *t)))
    }

    /// Shortest path from `from` to `to` as `(room, arrival offset)` pairs,
    /// excluding the start room. `None` when unreachable.
    pub fn path(&self, from: &str, to: &str) -> Option<Vec<(Symbol, Millis)>> {
        if !self.has_room(from) || !self.has_room(to) {
            return None;
        }
        if from == to {
            return Some(Vec::new());
        }
        let mut dist: BTreeMap<&str, Millis> = BTreeMap::new();
        let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(from, 0);
        heap.push(Reverse((0, from)));
        while let Some(Reverse((d, room))) = heap.pop() {
            if d > dist[room] {
                continue;
            }
            if room == to {
                break;
            }
            for (next, w) in self.neighbours(room) {
                let nd = d + w;
                if dist.get(next).is_none_or(|&cur| nd < cur) {
                    dist.insert(next, nd);
                    prev.insert(next, room);
                    heap.push(Reverse((nd, next)));
                }
            }
        }
        dist.get(to)?;
        let mut hops = Vec::new();
        let mut cur = to;
        while cur != from {
            hops.push((cur.to_string(), dist[cur]));
            cur = prev[cur];
        }
        hops.reverse();
        Some(hops)
    }

    pub fn travel_ms(&self, from: &str, to: &str) -> Option<Millis> {
        self.path(from, to)
            .map(|p| p.last().map_or(0, |(_, t)| *t))
    }

    pub fn is_connected(&self) -> bool {
        let Some(first) = self.rooms().next() else {
            return true;
        };
        self.rooms().all(|r| self.path(first, r).is_some())
    }
}
