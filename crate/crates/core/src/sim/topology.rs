//! Static mesh topology and shortest-hop routing tree.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use super::config::{BaseSpec, NodeSpec};
use crate::wire::BASE_STATION_ADDR;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("nodes unreachable from the base station: {0:?}")]
    PartitionedNetwork(Vec<u16>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub base: BaseSpec,
    pub nodes: Vec<NodeSpec>,
}

/// Parent of every node on its way to the base station.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Routes {
    pub parent_of: BTreeMap<u16, u16>,
    pub hops: BTreeMap<u16, u32>,
}

impl Routes {
    /// Node addresses from `origin` up to and including the base station.
    pub fn path_to_base(&self, origin: u16) -> Vec<u16> {
        let mut path = vec![origin];
        let mut cur = origin;
        while let Some(&p) = self.parent_of.get(&cur) {
            path.push(p);
            cur = p;
        }
        path
    }
}

impl Topology {
    pub fn new(base: BaseSpec, nodes: Vec<NodeSpec>) -> Self {
        Topology { base, nodes }
    }

    fn position(&self, id: u16) -> Option<([f64; 2], f64)> {
        if id == BASE_STATION_ADDR {
            return Some((self.base.position, self.base.radio_range_m));
        }
        self.nodes.iter().find(|n| n.id == id).map(|n| (n.position, n.radio_range_m))
    }

    /// Two radios hear each other when each lies within the other's range.
    pub fn adjacent(&self, a: u16, b: u16) -> bool {
        if a == b {
            return false;
        }
        match (self.position(a), self.position(b)) {
            (Some((pa, ra)), Some((pb, rb))) => {
                let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                d <= ra.min(rb)
            }
            _ => false,
        }
    }

    /// All addresses including the base, ascending.
    fn addresses(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.nodes.iter().map(|n| n.id).collect();
        ids.push(BASE_STATION_ADDR);
        ids.sort_unstable();
        ids
    }

    /// Shortest-hop tree rooted at the base. Among equally short options the
    /// lowest parent address wins.
    pub fn build_routes(&self) -> Result<Routes, RouteError> {
        let ids = self.addresses();
        let mut hops: BTreeMap<u16, u32> = BTreeMap::new();
        hops.insert(BASE_STATION_ADDR, 0);
        let mut queue = VecDeque::from([BASE_STATION_ADDR]);
        while let Some(cur) = queue.pop_front() {
            let h = hops[&cur];
            for &n in &ids {
                if !hops.contains_key(&n) && self.adjacent(cur, n) {
                    hops.insert(n, h + 1);
                    queue.push_back(n);
                }
            }
        }

        let unreachable: Vec<u16> = ids.iter().copied().filter(|id| !hops.contains_key(id)).collect();
        if !unreachable.is_empty() {
            return Err(RouteError::PartitionedNetwork(unreachable));
        }

        let mut parent_of = BTreeMap::new();
        for &id in ids.iter().filter(|&&id| id != BASE_STATION_ADDR) {
            let want = hops[&id] - 1;
            let parent = ids
                .iter()
                .copied()
                .find(|&p| hops[&p] == want && self.adjacent(id, p))
                .expect("breadth-first search guarantees a parent one hop closer");
            parent_of.insert(id, parent);
        }
        hops.remove(&BASE_STATION_ADDR);
        Ok(Routes { parent_of, hops })
    }
}
